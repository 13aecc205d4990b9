//! Subcommand implementations. Each returns its report text or artifacts;
//! printing and exit codes are left to the binary.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dllrnn_core::checkpoint::{load_model, load_opt_state, save_model, save_opt_state};
use dllrnn_core::eval::{evaluate_manifest, EvalReport, Identity, Oracle};
use dllrnn_core::framing::{variance_scale, Waveform, SAMPLE_RATE};
use dllrnn_core::manifest::{resolve, Manifest, ManifestRecord};
use dllrnn_core::model::{count_flops, count_params, Model, ModelConfig};
use dllrnn_core::rng::derive_seed;
use dllrnn_core::sim::{generate_example_with, SourceBank, SyntheticSources, WavSources};
use dllrnn_core::train::{StepRecord, TrainExample, Trainer};
use dllrnn_core::wav::{read_wav, write_wav};

use crate::config::{ConfigError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const OPT_STATE_FILE: &str = "opt_state.bin";
pub const BEST_FILE: &str = "best.bin";
pub const BEST_LOSS_FILE: &str = "best_loss.txt";
pub const LOG_FILE: &str = "train.log";

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .map_err(|e| ConfigError::new(format!("--out {}: cannot create directory: {e}", out.display())).into())
}

fn to_f32(w: &Waveform<f64>) -> Waveform<f32> {
    w.cast()
}

/// Writes `sim_count` examples and `manifest.txt` into `out`.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let ranges = cfg.sim_ranges()?;
    let samples = cfg.sim_samples();
    create_dir(out)?;
    let mut manifest = Manifest::default();
    let bank: Box<dyn SourceBank> = match &cfg.sim_speech_dir {
        Some(dir) => Box::new(WavSources::from_dirs(dir, cfg.sim_noise_dir.as_deref())?),
        None if cfg.sim_noise_dir.is_some() => {
            return Err(ConfigError::new("`sim_noise_dir` needs `sim_speech_dir`").into());
        }
        None => Box::new(SyntheticSources),
    };
    for i in 0..cfg.sim_count {
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let g = generate_example_with(&ranges, samples, seed, bank.as_ref())
            .with_context(|| format!("simulating example {i}"))?;
        let id = format!("ex{i:05}");
        let mixture = PathBuf::from(format!("{id}_mix.wav"));
        let direct = PathBuf::from(format!("{id}_direct.wav"));
        write_wav(out.join(&mixture), &to_f32(&g.example.mixture), SAMPLE_RATE)?;
        write_wav(out.join(&direct), &to_f32(&g.example.s_direct), SAMPLE_RATE)?;
        manifest.records.push(ManifestRecord {
            id,
            mixture,
            direct,
            room: g.draw.room.dims,
            absorption: g.draw.room.absorption,
            snr_db: g.example.snr_db,
            noise_sources: g.example.noise_sources,
            seed,
        });
    }
    manifest.save(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn read_16k(path: &Path) -> Result<Waveform<f32>> {
    let audio = read_wav(path)?;
    if audio.sample_rate != SAMPLE_RATE {
        return Err(dllrnn_core::Error::Dimension(format!(
            "{}: sample rate {} Hz, {SAMPLE_RATE} Hz required",
            path.display(),
            audio.sample_rate
        ))
        .into());
    }
    Ok(audio.waveform)
}

/// Mixture/first-mic-target pairs listed in a manifest.
pub fn load_training_set(manifest_path: &Path, channels: usize) -> Result<Vec<TrainExample<f32>>> {
    let manifest = Manifest::load(manifest_path)?;
    let mut data = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let mix_path = resolve(manifest_path, &rec.mixture);
        let mixture = read_16k(&mix_path)?;
        if mixture.num_channels() != channels {
            return Err(ConfigError::new(format!(
                "config has channels = {channels} but {} has {} channels",
                mix_path.display(),
                mixture.num_channels()
            ))
            .into());
        }
        let direct = read_16k(&resolve(manifest_path, &rec.direct))?;
        let target = direct.channel(0).to_vec();
        data.push(TrainExample::new(mixture, target).with_context(|| format!("example `{}`", rec.id))?);
    }
    if data.is_empty() {
        return Err(ConfigError::new(format!("{} lists no examples", manifest_path.display())).into());
    }
    Ok(data)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub last_loss: Option<f64>,
}

/// Trains on `manifest`, writing checkpoints and `train.log` into `out`.
///
/// With `resume`, continues from the checkpoint and optimizer state in
/// `out`. Checkpoints are written after every epoch and when training
/// stops; `best.bin` tracks the lowest epoch-mean loss.
pub fn train(cfg: &RunConfig, manifest: &Path, out: &Path, resume: bool, echo: &mut dyn Write) -> Result<TrainSummary> {
    let model_cfg = cfg.model()?;
    let schedule = cfg.schedule()?;
    let data = load_training_set(manifest, model_cfg.channels)?;
    create_dir(out)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let opt_path = out.join(OPT_STATE_FILE);
    let best_loss_path = out.join(BEST_LOSS_FILE);
    let mut trainer = if resume {
        let model = load_model(&ck_path)?;
        if *model.config() != model_cfg {
            return Err(ConfigError::new(format!(
                "config describes {model_cfg:?} but {} holds {:?}",
                ck_path.display(),
                model.config()
            ))
            .into());
        }
        let st = load_opt_state(&opt_path, &model, schedule.lr)?;
        Trainer::resume(model, st.opt, st.epoch, st.batch, schedule)
    } else {
        Trainer::new(Model::init(model_cfg, cfg.seed)?, schedule)?
    };
    let mut best = match fs::read_to_string(&best_loss_path) {
        Ok(s) if resume => s.trim().parse::<f64>().unwrap_or(f64::INFINITY),
        _ => f64::INFINITY,
    };
    let log_path = out.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let limit = if cfg.max_steps == 0 { u64::MAX } else { cfg.max_steps };
    let mut last_loss = None;
    let mut io_err: Option<std::io::Error> = None;
    let mut on_step = |r: &StepRecord| {
        last_loss = Some(r.loss);
        let line = r.to_line();
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
        // a closed stdout (e.g. piped into `head`) must not stop training
        let _ = writeln!(echo, "{line}");
    };
    while (trainer.epoch as usize) < trainer.schedule.epochs && trainer.opt.step < limit {
        let done = trainer.run_epoch_until(&data, limit, &mut on_step)?;
        save_model(&ck_path, &trainer.model)?;
        save_opt_state(&opt_path, &trainer.model, &trainer.opt, trainer.epoch, trainer.batch)?;
        if let Some(mean) = done {
            if mean < best {
                best = mean;
                save_model(out.join(BEST_FILE), &trainer.model)?;
                fs::write(&best_loss_path, format!("{best:e}\n"))?;
            }
        }
    }
    if let Some(e) = io_err {
        return Err(e).context("writing training log");
    }
    Ok(TrainSummary {
        steps: trainer.opt.step,
        epochs: trainer.epoch,
        last_loss,
    })
}

/// Enhances `input` with `checkpoint`, writing a mono 16 kHz float WAV.
pub fn enhance(checkpoint: &Path, input: &Path, output: &Path, streaming: bool) -> Result<()> {
    let model = load_model(checkpoint)?;
    let y = read_16k(input)?;
    if y.num_channels() != model.config().channels {
        return Err(dllrnn_core::Error::Dimension(format!(
            "{} has {} channels, {} expects {}",
            input.display(),
            y.num_channels(),
            checkpoint.display(),
            model.config().channels
        ))
        .into());
    }
    let out = if streaming {
        let scale = variance_scale(&y)?;
        let hop = model.config().frame.hop;
        let mut s = model.streaming(scale);
        let mut out = Vec::with_capacity(y.len());
        let mut start = 0;
        while start < y.len() {
            let end = (start + hop).min(y.len());
            let parts: Vec<&[f32]> = y.channels().iter().map(|c| &c[start..end]).collect();
            out.extend(s.push(&parts)?);
            start = end;
        }
        out.extend(s.finish()?);
        out
    } else {
        model.enhance(&y)?
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(dllrnn_core::Error::Numerical("enhanced output is not finite".into()).into());
    }
    write_wav(output, &Waveform::mono(out)?, SAMPLE_RATE)?;
    Ok(())
}

pub const DEFAULT_COUNT_MODELS: [&str; 6] = ["64-1-8", "64-8-8", "64-8-4", "32-8-8", "128-8-8", "256-8-8"];

/// Parameter and FLOP table; channels and framing come from `base`.
pub fn count(models: &[String], base: &RunConfig) -> Result<String> {
    let template = base.model()?;
    let names: Vec<String> = if models.is_empty() {
        DEFAULT_COUNT_MODELS.iter().map(|s| s.to_string()).collect()
    } else {
        models.to_vec()
    };
    let mut s = String::new();
    s.push_str("# params: every weight, bias, norm gain/bias and PReLU slope\n");
    s.push_str("# gflops: 2 x multiply-accumulates of the encoder, spatial convolutions, LSTM,\n");
    s.push_str("#   post-LSTM linear and decoder, one frame per hop, per second of audio\n");
    s.push_str("model\tchannels\tparams\tparams_M\tgflops_per_s\n");
    for name in &names {
        let parsed: ModelConfig = name.parse().map_err(ConfigError::from_core)?;
        let cfg = ModelConfig {
            channels: template.channels,
            frame: template.frame,
            ..parsed
        };
        let p = count_params(&cfg);
        let g = count_flops(&cfg, 1.0) / 1e9;
        s.push_str(&format!(
            "{}\t{}\t{p}\t{:.3}\t{g:.3}\n",
            cfg.name(),
            cfg.channels,
            p as f64 / 1e6
        ));
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub enum EnhancerChoice {
    Checkpoint(PathBuf),
    Identity,
    Oracle,
}

pub fn evaluate(manifest: &Path, choice: &EnhancerChoice) -> Result<EvalReport> {
    if !manifest.exists() {
        bail!(dllrnn_core::Error::Io {
            path: manifest.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    let report = match choice {
        EnhancerChoice::Checkpoint(p) => evaluate_manifest(manifest, &load_model(p)?)?,
        EnhancerChoice::Identity => evaluate_manifest(manifest, &Identity)?,
        EnhancerChoice::Oracle => evaluate_manifest(manifest, &Oracle)?,
    };
    Ok(report)
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
