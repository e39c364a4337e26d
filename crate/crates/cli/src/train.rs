use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use lag_core::imaging::{write_image, ImageBatch};
use lag_core::trainer::{load_checkpoint, load_training_data, save_checkpoint, train_on, Metrics, TrainConfig, TrainState};
use lag_core::{Error, Result};

use crate::experiments::sample_grid;
use crate::Real;

/// File names inside `out_dir`.
pub const METRICS_FILE: &str = "metrics.tsv";
pub const FINAL_CHECKPOINT: &str = "final.lagc";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("step-{step:08}.lagc"))
}

/// Read the config file (if any) and apply `key=value` overrides in order.
pub fn resolve_config(file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        cfg.apply_text(&text)?;
    }
    for kv in overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

/// Keep only metrics lines for steps before `step`, so a resumed run
/// rewrites exactly the lines an uninterrupted run would have written.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut kept = String::new();
    for line in reader.lines() {
        let line = line.map_err(io_err(path))?;
        let s: u64 = line.split('\t').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
        if s < step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(io_err(path))
}

/// What a finished run reports.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub last: Option<Metrics>,
    pub final_checkpoint: PathBuf,
}

/// Run training to `cfg.total_steps`, optionally resuming from a
/// checkpoint. When resuming, the network and schedule settings come from
/// the checkpoint; `total_steps`, `out_dir` and the output intervals come
/// from `cfg`.
pub fn run_training(
    cfg: TrainConfig,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&Metrics),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut state: TrainState<Real> = match resume {
        Some(path) => {
            let mut s = load_checkpoint(path)?;
            s.cfg.total_steps = cfg.total_steps;
            s.cfg.out_dir = cfg.out_dir.clone();
            s.cfg.checkpoint_every = cfg.checkpoint_every;
            s.cfg.sample_every = cfg.sample_every;
            s.cfg.validate()?;
            s
        }
        None => TrainState::new(cfg)?,
    };
    let out = state.cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let data = load_training_data::<Real>(&state.cfg)?;
    let preview = ImageBatch::stack(&data[..data.len().min(4)])?;

    let log_path = out.join(METRICS_FILE);
    if resume.is_some() {
        truncate_metrics(&log_path, state.step)?;
    } else {
        File::create(&log_path).map_err(io_err(&log_path))?;
    }
    let mut log = OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;

    let mut last = None;
    while state.step < state.cfg.total_steps {
        let m = train_on(&mut state, &data).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} (training step {})", state.step)),
            other => other,
        })?;
        writeln!(log, "{}", m.log_line()).map_err(io_err(&log_path))?;
        on_step(&m);
        last = Some(m);
        let done = state.step;
        if state.cfg.checkpoint_every > 0 && done % state.cfg.checkpoint_every == 0 {
            save_checkpoint(&state, checkpoint_path(&out, done))?;
        }
        if state.cfg.sample_every > 0 && done % state.cfg.sample_every == 0 {
            let grid = sample_grid(&state, &preview, 4, state.cfg.seed)?;
            write_image(out.join(format!("samples-{done:08}.ppm")), &grid)?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&state, &final_checkpoint)?;
    Ok(TrainSummary { steps: state.step, last, final_checkpoint })
}
