//! The `lag` command line: training plus the sampling experiments, with a
//! library surface so every subcommand can be driven from tests.

pub mod args;
pub mod experiments;
pub mod train;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lag_core::diffcore::gradcheck::full_suite;
use lag_core::diffcore::gradcheck::primitive_catalog;
use lag_core::imaging::write_image;
use lag_core::trainer::{load_checkpoint, TrainState};

use args::{Cli, Command, DiversityArgs, GradcheckArgs};

/// Precision of training and inference in the CLI.
pub type Real = f32;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const NUMERICAL: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lag_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} gradient check(s) exceeded tolerance")]
    GradcheckFailed { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use lag_core::Error as E;
        match self {
            CliError::Core(E::Io { .. } | E::Format { .. }) => exit::IO,
            CliError::Core(e) if e.is_numerical() => exit::NUMERICAL,
            CliError::Core(_) | CliError::Usage(_) => exit::VALIDATION,
            CliError::GradcheckFailed { .. } => exit::NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn load_model(path: &Path) -> CliResult<TrainState<Real>> {
    Ok(load_checkpoint(path)?)
}

/// Gradient-suite report: one line per check, then a verdict line.
pub fn gradcheck_report(args: &GradcheckArgs) -> CliResult<(String, usize)> {
    let corrupt = match &args.corrupt {
        None => None,
        Some(name) => Some(
            primitive_catalog()
                .iter()
                .map(|k| k.name())
                .find(|n| n == name)
                .ok_or_else(|| CliError::Usage(format!("unknown primitive {name:?}")))?,
        ),
    };
    let results = full_suite(args.seed, args.composites, corrupt)?;
    let mut out = String::new();
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        let _ = writeln!(out, "{:<28} {:>10.3e}  (tol {:.0e})  {verdict}", r.name, r.max_rel_err, r.tolerance);
    }
    let _ = writeln!(out, "{} checks, {failed} failed", results.len());
    Ok((out, failed))
}

/// Diversity table `factor\tmedian_diversity`, plus per-input scores
/// keyed by factor.
pub fn diversity_report(args: &DiversityArgs) -> CliResult<(String, Vec<(String, Vec<f64>)>)> {
    let mut per_factor = Vec::new();
    for spec in &args.models {
        let (factor, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--model expects FACTOR=PATH, got {spec:?}")))?;
        let path = Path::new(path);
        if !path.exists() {
            return Err(CliError::Usage(format!("no checkpoint for factor {factor}: {}", path.display())));
        }
        let state = load_model(path)?;
        let x = experiments::gather_inputs(&state, &args.inputs)?;
        per_factor.push((factor.to_string(), experiments::diversity_scores(&state, &x, args.k, args.seed)?));
    }
    let mut table = String::from("factor\tmedian_diversity\n");
    for (f, scores) in &per_factor {
        let _ = writeln!(table, "{f}\t{:.6e}", experiments::median(scores));
    }
    Ok((table, per_factor))
}

/// Execute one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = train::resolve_config(a.config.as_deref(), &a.overrides)?;
            let verbose = a.verbose;
            let summary = train::run_training(cfg, a.resume.as_deref(), |m| {
                if verbose {
                    println!("{}", m.log_line());
                }
            })?;
            println!("trained to step {}; checkpoint {}", summary.steps, summary.final_checkpoint.display());
        }
        Command::Sample(a) => {
            let state = load_model(&a.checkpoint)?;
            let x = experiments::gather_inputs(&state, &a.inputs)?;
            write_image(&a.out, &experiments::sample_grid(&state, &x, a.k, a.seed)?)?;
        }
        Command::Mirror(a) => {
            let state = load_model(&a.checkpoint)?;
            let x = experiments::gather_inputs(&state, &a.inputs)?;
            write_image(&a.out, &experiments::mirror_grid(&state, &x, a.steps)?)?;
        }
        Command::Noise(a) => {
            let state = load_model(&a.checkpoint)?;
            let x = experiments::gather_inputs(&state, &a.inputs)?;
            write_image(&a.out, &experiments::noise_grid(&state, &x, &a.amplitudes, a.seed)?)?;
        }
        Command::Diversity(a) => {
            let (table, per_factor) = diversity_report(&a)?;
            print!("{table}");
            if let Some(path) = &a.details {
                let mut s = String::from("factor\tinput\tdiversity\n");
                for (f, scores) in &per_factor {
                    for (i, v) in scores.iter().enumerate() {
                        let _ = writeln!(s, "{f}\t{i}\t{v:.6e}");
                    }
                }
                fs::write(path, s).map_err(|e| lag_core::Error::Io { path: path.clone(), source: e })?;
            }
        }
        Command::Gradcheck(a) => {
            let (report, failed) = gradcheck_report(&a)?;
            print!("{report}");
            if failed > 0 {
                return Err(CliError::GradcheckFailed { failed });
            }
        }
    }
    Ok(())
}
