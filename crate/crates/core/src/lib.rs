//! Transient behaviour of random-access MAC protocols with finite buffers.
//!
//! The crate has three layers:
//!
//! * [`models`]: steady-state fixed-point models of Aloha and DCF, and the
//!   saturated service-rate curve `mu(n)` derived from them.
//! * [`stability`] and [`backlog`]: the stability test and the reduced
//!   birth-death chain on the number of backlogged stations.
//! * [`coupled`] and [`dcf`]: Monte Carlo simulators, one on coupled queues
//!   driven by `mu(n)` and one slot by slot at the MAC level.
//!
//! [`stats`] fits and compares distributions of the resulting escape times.

pub mod backlog;
pub mod coupled;
pub mod dcf;
pub mod models;
pub mod rng;
pub mod stability;
pub mod stats;
