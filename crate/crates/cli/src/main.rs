//! `mactrans`: runs transient-analysis scenarios described in TOML files.

mod error;
mod output;
mod runner;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "mactrans", version, about = "Transient analysis of saturating MAC networks")]
struct Cli {
    /// Worker threads for replications (defaults to all cores).
    #[arg(long, global = true, env = "MACTRANS_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Overrides `output_dir` from the scenario file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
    /// List the scenarios in a directory.
    ListScenarios {
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
}

fn run(path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let s = scenario::load(path)?;
    let root = out.unwrap_or_else(|| s.raw.output_dir.clone());
    let result = OutputDir::create(&root).and_then(|mut dir| {
        runner::run(&s, &mut dir)?;
        dir.finish(&s)
    });
    match result {
        Ok(manifest) => {
            log::info!("done, manifest at {}", manifest.display());
            Ok(())
        }
        Err(e) => {
            output::mark_failed(&root, &e);
            Err(e)
        }
    }
}

fn validate(path: &Path) -> Result<(), CliError> {
    let s = scenario::load(path)?;
    println!(
        "{}: ok ({}, {} configuration(s) x {} point(s))",
        path.display(),
        s.raw.method.label(),
        s.variants.len(),
        s.points.len()
    );
    Ok(())
}

fn list_scenarios(dir: &Path) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut first_error = None;
    for p in paths {
        let file = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match scenario::load(&p) {
            Ok(s) => println!("{file}\t{}\t{}\t{}", s.raw.name, s.raw.method.label(), s.raw.description),
            Err(e) => {
                // TOML errors span several lines; keep the location and the reason.
                let text = e.to_string();
                let mut lines = text.lines().filter(|l| !l.trim().is_empty());
                let head = lines.next().unwrap_or_default();
                let reason = lines.next_back().map(|l| format!(": {l}")).unwrap_or_default();
                println!("{file}\tINVALID\t{head}{reason}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Run { scenario, out } => run(&scenario, out),
        Command::Validate { scenario } => validate(&scenario),
        Command::ListScenarios { dir } => list_scenarios(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
