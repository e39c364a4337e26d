use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::imaging::{DownscaleMethod, COLOR_RESOLUTION};
use crate::losses::LossWeights;
use crate::nets::{NetConfig, ScheduleConfig};

/// Every training knob. Text form is flat `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub y_size: usize,
    pub x_size: usize,
    pub width: usize,
    pub blocks: usize,
    pub latent_n: usize,
    pub latent_p: usize,
    pub channels: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gp_weight: f64,
    pub center_weight: f64,
    pub color_resolution: f64,
    pub batch: usize,
    pub critic_steps: usize,
    pub fade_steps: u64,
    pub hold_steps: u64,
    pub total_steps: u64,
    pub seed: u64,
    pub downscale: DownscaleMethod,
    pub progressive: bool,
    pub toy: bool,
    pub toy_count: usize,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
    pub sample_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            y_size: 4,
            x_size: 32,
            width: 32,
            blocks: 4,
            latent_n: 16,
            latent_p: 64,
            channels: 3,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            gp_weight: 10.0,
            center_weight: 1.0,
            color_resolution: COLOR_RESOLUTION,
            batch: 16,
            critic_steps: 1,
            fade_steps: 2000,
            hold_steps: 2000,
            total_steps: 12000,
            seed: 1,
            downscale: DownscaleMethod::AveragePool,
            progressive: true,
            toy: true,
            toy_count: 256,
            dataset: None,
            out_dir: PathBuf::from("runs/lag"),
            checkpoint_every: 1000,
            sample_every: 1000,
        }
    }
}

/// Accepted keys with a one-line description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("y_size", "side of the low-resolution input y"),
    ("x_size", "side of the high-resolution output; x_size/y_size a power of two"),
    ("width", "conv channel width of both networks"),
    ("blocks", "residual blocks per network"),
    ("latent_n", "dimension of the latent z"),
    ("latent_p", "dimension of the critic's perceptual latent space"),
    ("channels", "image channels, 1 or 3"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam denominator epsilon"),
    ("gp_weight", "weight of the gradient penalty in the critic loss"),
    ("center_weight", "weight of the center loss in the generator loss"),
    ("color_resolution", "quantization step r on the [-1, 1] scale"),
    ("batch", "images per step"),
    ("critic_steps", "critic updates per generator update"),
    ("fade_steps", "steps over which a new stage fades in"),
    ("hold_steps", "steps a stage is held after fading in"),
    ("total_steps", "training steps"),
    ("seed", "seed for initialisation, data order, z and rho draws"),
    ("downscale", "average-pool or bicubic"),
    ("progressive", "true to grow stage by stage, false for single-stage training"),
    ("toy", "true to train on generated toy faces"),
    ("toy_count", "number of toy images"),
    ("dataset", "directory of .ppm/.pgm images when toy = false"),
    ("out_dir", "directory for checkpoints, metrics and sample grids"),
    ("checkpoint_every", "steps between checkpoints (0 disables periodic checkpoints)"),
    ("sample_every", "steps between sample grids (0 disables)"),
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    /// Set one key from its text value; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "y_size" => self.y_size = parse(key, v)?,
            "x_size" => self.x_size = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "latent_n" => self.latent_n = parse(key, v)?,
            "latent_p" => self.latent_p = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "gp_weight" => self.gp_weight = parse(key, v)?,
            "center_weight" => self.center_weight = parse(key, v)?,
            "color_resolution" => self.color_resolution = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "critic_steps" => self.critic_steps = parse(key, v)?,
            "fade_steps" => self.fade_steps = parse(key, v)?,
            "hold_steps" => self.hold_steps = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "downscale" => self.downscale = v.parse()?,
            "progressive" => self.progressive = parse_bool(key, v)?,
            "toy" => self.toy = parse_bool(key, v)?,
            "toy_count" => self.toy_count = parse(key, v)?,
            "dataset" => self.dataset = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "sample_every" => self.sample_every = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines (`#` starts a comment) on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Canonical text form; `from_text(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dataset = self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let fields: Vec<(&str, String)> = vec![
            ("y_size", self.y_size.to_string()),
            ("x_size", self.x_size.to_string()),
            ("width", self.width.to_string()),
            ("blocks", self.blocks.to_string()),
            ("latent_n", self.latent_n.to_string()),
            ("latent_p", self.latent_p.to_string()),
            ("channels", self.channels.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("eps", format!("{:?}", self.eps)),
            ("gp_weight", format!("{:?}", self.gp_weight)),
            ("center_weight", format!("{:?}", self.center_weight)),
            ("color_resolution", format!("{:?}", self.color_resolution)),
            ("batch", self.batch.to_string()),
            ("critic_steps", self.critic_steps.to_string()),
            ("fade_steps", self.fade_steps.to_string()),
            ("hold_steps", self.hold_steps.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("downscale", self.downscale.to_string()),
            ("progressive", self.progressive.to_string()),
            ("toy", self.toy.to_string()),
            ("toy_count", self.toy_count.to_string()),
            ("dataset", dataset),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("sample_every", self.sample_every.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            width: self.width,
            blocks: self.blocks,
            latent_n: self.latent_n,
            latent_p: self.latent_p,
            y_size: self.y_size,
            x_size: self.x_size,
            channels: self.channels,
            slope: 0.2,
        }
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        Ok(ScheduleConfig {
            stages: self.net().stages()?,
            fade_steps: self.fade_steps,
            hold_steps: self.hold_steps,
            progressive: self.progressive,
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { gp_weight: self.gp_weight, center_weight: self.center_weight }
    }

    /// Check every invariant, including that a progressive run is long
    /// enough to reach its final stage.
    pub fn validate(&self) -> Result<()> {
        self.net().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad(format!("Adam hyperparameters out of range: lr={} beta1={} beta2={} eps={}", self.lr, self.beta1, self.beta2, self.eps));
        }
        if !(self.gp_weight >= 0.0) || !(self.center_weight >= 0.0) || !(self.color_resolution > 0.0) {
            return bad("loss weights must be non-negative and color_resolution positive".into());
        }
        if self.batch == 0 || self.critic_steps == 0 {
            return bad("batch and critic_steps must be positive".into());
        }
        if self.progressive {
            let stages = self.net().stages()? as u64;
            let need = stages * (self.fade_steps + self.hold_steps);
            if self.total_steps < need {
                return bad(format!("total_steps {} < stages * (fade + hold) = {need}", self.total_steps));
            }
        }
        if self.toy {
            if self.toy_count == 0 {
                return bad("toy_count must be positive".into());
            }
            if self.x_size < 16 {
                return bad("toy images need x_size >= 16".into());
            }
        } else if self.dataset.is_none() {
            return bad("dataset path required when toy = false".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let text = TrainConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let documented: Vec<&str> = CONFIG_KEYS.iter().map(|k| k.0).collect();
        assert_eq!(keys, documented);
    }

    #[test]
    fn parse_with_comments_and_rejects_unknown() {
        let cfg = TrainConfig::from_text("# toy run\nbatch = 4 # small\n\nlr=0.001\n").unwrap();
        assert_eq!(cfg.batch, 4);
        assert_eq!(cfg.lr, 0.001);
        assert!(TrainConfig::from_text("batchsize = 4").is_err());
        assert!(TrainConfig::from_text("batch 4").is_err());
        assert!(TrainConfig::from_text("batch = four").is_err());
    }

    #[test]
    fn validation() {
        let short = TrainConfig { total_steps: 100, ..TrainConfig::default() };
        assert!(short.validate().is_err());
        let single = TrainConfig { total_steps: 100, progressive: false, ..TrainConfig::default() };
        single.validate().unwrap();
        let no_data = TrainConfig { toy: false, ..TrainConfig::default() };
        assert!(matches!(no_data.validate(), Err(Error::Config(_))));
        let bad_scale = TrainConfig { x_size: 48, ..TrainConfig::default() };
        assert!(bad_scale.validate().is_err());
    }
}
