//! Flat `key = value` run configuration.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored.
//! Unknown and repeated keys are errors. Missing keys keep their defaults.
//! Training defaults are desk-scale; the published schedule is 200 epochs
//! of batch 16 with 4 s chunks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dllrnn_core::framing::{FrameSpec, SAMPLE_RATE};
use dllrnn_core::model::ModelConfig;
use dllrnn_core::sim::SimRanges;
use dllrnn_core::train::{Schedule, DEFAULT_CLIP, DEFAULT_LR};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub channels: usize,
    pub hidden: usize,
    pub spatial: usize,
    pub blocks: usize,
    pub frame_in: usize,
    pub frame_out: usize,
    pub hop: usize,

    pub lr: f64,
    pub clip: f64,
    pub batch: usize,
    pub chunk_s: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps in total; 0 means no limit.
    pub max_steps: u64,
    pub seed: u64,

    pub sim_count: usize,
    pub sim_seconds: f64,
    pub sim_length: (f64, f64),
    pub sim_width: (f64, f64),
    pub sim_height: (f64, f64),
    pub sim_absorption: (f64, f64),
    pub sim_snr_db: (f64, f64),
    pub sim_noise_sources: (usize, usize),
    pub sim_radius: f64,
    pub sim_margin: f64,
    pub sim_order: u32,
    /// Directory of 16 kHz speech WAVs; unset means synthetic speech.
    pub sim_speech_dir: Option<PathBuf>,
    /// Directory of 16 kHz noise WAVs; unset means synthetic noise.
    pub sim_noise_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let sim = SimRanges::default();
        Self {
            channels: model.channels,
            hidden: model.hidden,
            spatial: model.spatial,
            blocks: model.blocks,
            frame_in: model.frame.input,
            frame_out: model.frame.output,
            hop: model.frame.hop,
            lr: DEFAULT_LR,
            clip: DEFAULT_CLIP,
            batch: 4,
            chunk_s: 1.0,
            epochs: 20,
            max_steps: 0,
            seed: 0,
            sim_count: 16,
            sim_seconds: 2.0,
            sim_length: sim.length,
            sim_width: sim.width,
            sim_height: sim.height,
            sim_absorption: sim.absorption,
            sim_snr_db: sim.snr_db,
            sim_noise_sources: sim.noise_sources,
            sim_radius: sim.radius,
            sim_margin: sim.margin,
            sim_order: sim.order,
            sim_speech_dir: None,
            sim_noise_dir: None,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> anyhow::Result<V> {
    v.parse().map_err(|_| anyhow::anyhow!("`{key}`: cannot parse `{v}`"))
}

fn parse_f64(key: &str, v: &str) -> anyhow::Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        bail!("`{key}`: `{v}` is not finite");
    }
    Ok(x)
}

impl RunConfig {
    pub fn model(&self) -> anyhow::Result<ModelConfig> {
        let cfg = ModelConfig {
            channels: self.channels,
            hidden: self.hidden,
            spatial: self.spatial,
            blocks: self.blocks,
            frame: FrameSpec {
                input: self.frame_in,
                output: self.frame_out,
                hop: self.hop,
            },
        };
        cfg.validate().map_err(ConfigError::from_core)?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> anyhow::Result<Schedule> {
        let chunk = (self.chunk_s * SAMPLE_RATE as f64).round();
        if chunk.is_nan() || chunk < 1.0 {
            return Err(ConfigError::new(format!("`chunk_s` = {} gives an empty chunk", self.chunk_s)).into());
        }
        let s = Schedule {
            epochs: self.epochs,
            batch_size: self.batch,
            chunk: chunk as usize,
            lr: self.lr,
            clip: self.clip,
            seed: self.seed,
        };
        s.validate().map_err(ConfigError::from_core)?;
        Ok(s)
    }

    pub fn sim_ranges(&self) -> anyhow::Result<SimRanges> {
        let r = SimRanges {
            length: self.sim_length,
            width: self.sim_width,
            height: self.sim_height,
            absorption: self.sim_absorption,
            snr_db: self.sim_snr_db,
            noise_sources: self.sim_noise_sources,
            mics: self.channels,
            radius: self.sim_radius,
            margin: self.sim_margin,
            order: self.sim_order,
        };
        r.validate().map_err(ConfigError::from_core)?;
        if self.sim_seconds.is_nan() || self.sim_seconds <= 0.0 {
            return Err(ConfigError::new("`sim_seconds` must be positive").into());
        }
        Ok(r)
    }

    pub fn sim_samples(&self) -> usize {
        (self.sim_seconds * SAMPLE_RATE as f64).round() as usize
    }

    /// Every key with its current value, in canonical order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("channels", self.channels.to_string());
        kv("hidden", self.hidden.to_string());
        kv("spatial", self.spatial.to_string());
        kv("blocks", self.blocks.to_string());
        kv("frame_in", self.frame_in.to_string());
        kv("frame_out", self.frame_out.to_string());
        kv("hop", self.hop.to_string());
        kv("lr", self.lr.to_string());
        kv("clip", self.clip.to_string());
        kv("batch", self.batch.to_string());
        kv("chunk_s", self.chunk_s.to_string());
        kv("epochs", self.epochs.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("seed", self.seed.to_string());
        kv("sim_count", self.sim_count.to_string());
        kv("sim_seconds", self.sim_seconds.to_string());
        for (k, (lo, hi)) in [
            ("sim_length", self.sim_length),
            ("sim_width", self.sim_width),
            ("sim_height", self.sim_height),
            ("sim_absorption", self.sim_absorption),
            ("sim_snr_db", self.sim_snr_db),
        ] {
            kv(&format!("{k}_min"), lo.to_string());
            kv(&format!("{k}_max"), hi.to_string());
        }
        kv("sim_noise_sources_min", self.sim_noise_sources.0.to_string());
        kv("sim_noise_sources_max", self.sim_noise_sources.1.to_string());
        kv("sim_radius", self.sim_radius.to_string());
        kv("sim_margin", self.sim_margin.to_string());
        kv("sim_order", self.sim_order.to_string());
        let dir = |d: &Option<PathBuf>| d.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv("sim_speech_dir", dir(&self.sim_speech_dir));
        kv("sim_noise_dir", dir(&self.sim_noise_dir));
        s
    }

    fn set(&mut self, key: &str, v: &str) -> anyhow::Result<()> {
        match key {
            "channels" => self.channels = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "spatial" => self.spatial = parse_num(key, v)?,
            "blocks" => self.blocks = parse_num(key, v)?,
            "frame_in" => self.frame_in = parse_num(key, v)?,
            "frame_out" => self.frame_out = parse_num(key, v)?,
            "hop" => self.hop = parse_num(key, v)?,
            "lr" => self.lr = parse_f64(key, v)?,
            "clip" => self.clip = parse_f64(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "chunk_s" => self.chunk_s = parse_f64(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "sim_count" => self.sim_count = parse_num(key, v)?,
            "sim_seconds" => self.sim_seconds = parse_f64(key, v)?,
            "sim_length_min" => self.sim_length.0 = parse_f64(key, v)?,
            "sim_length_max" => self.sim_length.1 = parse_f64(key, v)?,
            "sim_width_min" => self.sim_width.0 = parse_f64(key, v)?,
            "sim_width_max" => self.sim_width.1 = parse_f64(key, v)?,
            "sim_height_min" => self.sim_height.0 = parse_f64(key, v)?,
            "sim_height_max" => self.sim_height.1 = parse_f64(key, v)?,
            "sim_absorption_min" => self.sim_absorption.0 = parse_f64(key, v)?,
            "sim_absorption_max" => self.sim_absorption.1 = parse_f64(key, v)?,
            "sim_snr_db_min" => self.sim_snr_db.0 = parse_f64(key, v)?,
            "sim_snr_db_max" => self.sim_snr_db.1 = parse_f64(key, v)?,
            "sim_noise_sources_min" => self.sim_noise_sources.0 = parse_num(key, v)?,
            "sim_noise_sources_max" => self.sim_noise_sources.1 = parse_num(key, v)?,
            "sim_radius" => self.sim_radius = parse_f64(key, v)?,
            "sim_margin" => self.sim_margin = parse_f64(key, v)?,
            "sim_order" => self.sim_order = parse_num(key, v)?,
            "sim_speech_dir" => self.sim_speech_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "sim_noise_dir" => self.sim_noise_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: String| ConfigError::new(format!("line {}: {e}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(at(format!("key `{k}` given twice")));
            }
            cfg.set(k, v).map_err(|e| at(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Reads a config file. Relative source directories resolve against
    /// the file's own directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| ConfigError::new(format!("{e:#}")))?;
        let mut cfg = Self::parse(&text).map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for dir in [&mut cfg.sim_speech_dir, &mut cfg.sim_noise_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }
}

/// Configuration or usage problem; the CLI exits with status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }

    pub(crate) fn from_core(e: dllrnn_core::Error) -> anyhow::Error {
        match e {
            dllrnn_core::Error::Config(msg) => ConfigError::new(msg),
            other => ConfigError::new(other.to_string()),
        }
        .into()
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}
