use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dllrnn_cli::commands::{self, EnhancerChoice};
use dllrnn_cli::config::{ConfigError, RunConfig};
use dllrnn_cli::{exit_code, EXIT_DATA, EXIT_USAGE};

/// Low-latency multichannel speech enhancement.
#[derive(Parser)]
#[command(name = "dllrnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out(&self) -> Result<&PathBuf> {
        self.out
            .as_ref()
            .ok_or_else(|| ConfigError::new("--out is required").into())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    /// Copies the first mixture channel.
    Identity,
    /// Copies the target.
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of multichannel mixtures into the --out directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `sim_count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on a manifest; checkpoints and log go to the --out directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest written by `simulate`.
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from the checkpoint and optimizer state in --out.
        #[arg(long)]
        resume: bool,
        /// Overrides `max_steps`.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Enhance a multichannel WAV into the mono --out WAV.
    Enhance {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// 16 kHz WAV with one channel per model input.
        #[arg(long)]
        input: PathBuf,
        /// Process hop by hop through the streaming path.
        #[arg(long)]
        streaming: bool,
    },
    /// Print parameter counts and GFLOPs for model names like 64-8-8.
    Count {
        #[command(flatten)]
        common: Common,
        /// Names such as 64-8-8 or D-LL-RNN-64-8-8; defaults to the published six.
        models: Vec<String>,
    },
    /// SI-SDR of enhanced and unprocessed audio over a manifest.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest written by `simulate`.
        #[arg(long)]
        manifest: PathBuf,
        /// Model checkpoint to score.
        #[arg(long, conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Reference enhancer to score instead of a checkpoint.
        #[arg(long)]
        baseline: Option<Baseline>,
    },
}

fn run(cli: Cli) -> Result<i32> {
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    match cli.command {
        Command::Simulate { common, count } => {
            let mut cfg = common.run_config()?;
            if let Some(c) = count {
                cfg.sim_count = c;
            }
            let out = common.out()?;
            let m = commands::simulate(&cfg, out)?;
            writeln!(stdout, "wrote {} examples to {}", m.records.len(), out.display())?;
        }
        Command::Train {
            common,
            manifest,
            resume,
            max_steps,
        } => {
            let mut cfg = common.run_config()?;
            if let Some(s) = max_steps {
                cfg.max_steps = s;
            }
            let s = commands::train(&cfg, &manifest, common.out()?, resume, &mut stdout)?;
            writeln!(stdout, "finished at step {} after {} epochs", s.steps, s.epochs)?;
        }
        Command::Enhance {
            common,
            checkpoint,
            input,
            streaming,
        } => {
            commands::enhance(&checkpoint, &input, common.out()?, streaming)?;
        }
        Command::Count { common, models } => {
            let table = commands::count(&models, &common.run_config()?)?;
            stdout.write_all(table.as_bytes())?;
            if let Some(p) = &common.out {
                commands::write_text(p, &table)?;
            }
        }
        Command::Evaluate {
            common,
            manifest,
            checkpoint,
            baseline,
        } => {
            let choice = match (checkpoint, baseline) {
                (Some(p), None) => EnhancerChoice::Checkpoint(p),
                (None, Some(Baseline::Identity)) => EnhancerChoice::Identity,
                (None, Some(Baseline::Oracle)) => EnhancerChoice::Oracle,
                _ => return Err(ConfigError::new("give either --checkpoint or --baseline").into()),
            };
            let report = commands::evaluate(&manifest, &choice)?;
            let text = report.to_text();
            stdout.write_all(text.as_bytes())?;
            if let Some(p) = &common.out {
                commands::write_text(p, &text)?;
            }
            if !report.failures.is_empty() {
                eprintln!("{} example(s) failed", report.failures.len());
                return Ok(EXIT_DATA);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        // downstream reader went away, e.g. `dllrnn count | head -1`
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
