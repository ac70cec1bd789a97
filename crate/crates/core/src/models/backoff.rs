use super::ModelError;

/// Mean number of backoff slots drawn per transmission attempt under binary
/// exponential backoff with `m` doubling stages and unlimited retries.
///
/// The textbook closed form `((1 - p - p(2p)^m) / (1 - 2p)) W/2 - 1/2` is
/// singular at `p = 1/2`. It is evaluated here through the equivalent
/// polynomial `(1 - p) * sum_{i<m} (2p)^i + (2p)^m`, which is exact for
/// every `p` and reduces to `(2 + m)/2` at the singular point.
pub fn expected_backoff_slots(p: f64, cw_min: u32, backoff_stages: u32) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::CollisionProbabilityOutOfRange(p));
    }
    let q = 2.0 * p;
    let mut geometric = 0.0;
    let mut power = 1.0;
    for _ in 0..backoff_stages {
        geometric += power;
        power *= q;
    }
    let factor = (1.0 - p) * geometric + power;
    Ok(factor * f64::from(cw_min) / 2.0 - 0.5)
}

/// How a backoff slot observed by a tagged station is occupied by the other
/// `n - 1` stations, each attempting with probability `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotProbabilities {
    pub success: f64,
    pub empty: f64,
    pub collision: f64,
}

impl SlotProbabilities {
    pub fn new(tau: f64, contenders: usize) -> Self {
        let others = contenders.saturating_sub(1);
        if others == 0 {
            return Self {
                success: 0.0,
                empty: 1.0,
                collision: 0.0,
            };
        }
        let idle = 1.0 - tau;
        let empty = idle.powi(others as i32);
        let success = others as f64 * tau * idle.powi(others as i32 - 1);
        Self {
            success,
            empty,
            collision: 1.0 - (success + empty),
        }
    }

    /// Mean duration of a backoff slot.
    pub fn mean_slot(&self, empty_slot: f64, success: f64, collision: f64) -> f64 {
        self.success * success + self.collision * collision + self.empty * empty_slot
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rational_form(p: f64, w: u32, m: u32) -> f64 {
        (1.0 - p - p * (2.0 * p).powi(m as i32)) / (1.0 - 2.0 * p) * f64::from(w) / 2.0 - 0.5
    }

    #[test]
    fn zero_collision_probability() {
        assert_eq!(expected_backoff_slots(0.0, 32, 5).unwrap(), 15.5);
        assert_eq!(expected_backoff_slots(0.0, 8, 3).unwrap(), 3.5);
    }

    #[test]
    fn singular_point_takes_limit() {
        assert!((expected_backoff_slots(0.5, 32, 5).unwrap() - 55.5).abs() < 1e-12);
        let lo = expected_backoff_slots(0.5 - 1e-8, 32, 5).unwrap();
        let hi = expected_backoff_slots(0.5 + 1e-8, 32, 5).unwrap();
        assert!(lo <= 55.5 && 55.5 <= hi);
        assert!(hi - lo < 1e-5);
        // The rational form, evaluated a safe distance away, agrees with the limit.
        let near = rational_form(0.5 + 1e-6, 32, 5);
        assert!((near - 55.5).abs() < 1e-3);
    }

    #[test]
    fn agrees_with_rational_form_away_from_singularity() {
        for &(w, m) in &[(32u32, 5u32), (8, 3), (16, 0), (1, 7)] {
            for i in 0..99 {
                let p = i as f64 / 100.0;
                if (p - 0.5).abs() < 0.02 {
                    continue;
                }
                let a = expected_backoff_slots(p, w, m).unwrap();
                let b = rational_form(p, w, m);
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "p={p} w={w} m={m}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_certain_collision() {
        assert!(expected_backoff_slots(1.0, 32, 5).is_err());
        assert!(expected_backoff_slots(-0.1, 32, 5).is_err());
        assert!(expected_backoff_slots(f64::NAN, 32, 5).is_err());
    }

    #[test]
    fn slot_probabilities_partition() {
        for &n in &[1usize, 2, 10, 50] {
            for &tau in &[0.0, 1e-5, 0.03, 0.5, 0.999] {
                let s = SlotProbabilities::new(tau, n);
                assert_eq!(s.success + s.empty + s.collision, 1.0);
                assert!(s.collision >= -1e-15);
            }
        }
        let alone = SlotProbabilities::new(0.3, 1);
        assert_eq!((alone.success, alone.empty, alone.collision), (0.0, 1.0, 0.0));
    }
}
