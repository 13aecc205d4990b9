//! SI-SDR evaluation over a manifest, referenced to the first-mic direct path.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::framing::{Waveform, SAMPLE_RATE};
use crate::loss::si_sdr;
use crate::manifest::{resolve, Manifest};
use crate::model::Model;
use crate::wav::read_wav;

/// Anything that maps a multichannel mixture to a single-channel estimate.
/// `target` is offered for oracle baselines and must be ignored otherwise.
pub trait Enhancer {
    fn enhance(&self, mixture: &Waveform<f32>, target: &[f32]) -> Result<Vec<f32>>;
}

impl Enhancer for Model<f32> {
    fn enhance(&self, mixture: &Waveform<f32>, _target: &[f32]) -> Result<Vec<f32>> {
        Model::enhance(self, mixture)
    }
}

/// Returns the first mixture channel unchanged.
pub struct Identity;

impl Enhancer for Identity {
    fn enhance(&self, mixture: &Waveform<f32>, _target: &[f32]) -> Result<Vec<f32>> {
        Ok(mixture.channel(0).to_vec())
    }
}

/// Returns the target itself.
pub struct Oracle;

impl Enhancer for Oracle {
    fn enhance(&self, _mixture: &Waveform<f32>, target: &[f32]) -> Result<Vec<f32>> {
        Ok(target.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScore {
    pub id: String,
    pub unprocessed_db: f64,
    pub enhanced_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFailure {
    pub id: String,
    pub path: Option<PathBuf>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<ExampleScore>,
    pub failures: Vec<ExampleFailure>,
}

impl EvalReport {
    pub fn mean_unprocessed(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.unprocessed_db))
    }

    pub fn mean_enhanced(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.enhanced_db))
    }

    /// Tab-separated table followed by a mean line and one line per failure.
    pub fn to_text(&self) -> String {
        let mut s = String::from("id\tunprocessed_db\tenhanced_db\timprovement_db\n");
        for e in &self.scores {
            s.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\n",
                e.id,
                e.unprocessed_db,
                e.enhanced_db,
                e.enhanced_db - e.unprocessed_db
            ));
        }
        if let (Some(u), Some(e)) = (self.mean_unprocessed(), self.mean_enhanced()) {
            s.push_str(&format!("mean\t{u:.4}\t{e:.4}\t{:.4}\n", e - u));
        }
        for f in &self.failures {
            match &f.path {
                Some(p) => s.push_str(&format!("failed\t{}\t{}\t{}\n", f.id, p.display(), f.message)),
                None => s.push_str(&format!("failed\t{}\t-\t{}\n", f.id, f.message)),
            }
        }
        s
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores one pair; `target` is the first-mic direct path.
pub fn score_example(
    enhancer: &dyn Enhancer,
    id: &str,
    mixture: &Waveform<f32>,
    target: &[f32],
) -> Result<ExampleScore> {
    if target.len() != mixture.len() {
        return Err(Error::dim(format!(
            "target has {} samples, mixture has {}",
            target.len(),
            mixture.len()
        )));
    }
    let unprocessed_db = si_sdr(mixture.channel(0), target)?;
    let estimate = enhancer.enhance(mixture, target)?;
    Ok(ExampleScore {
        id: id.to_string(),
        unprocessed_db,
        enhanced_db: si_sdr(&estimate, target)?,
    })
}

fn load_16k(path: &Path) -> Result<Waveform<f32>> {
    let a = read_wav(path)?;
    if a.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE}",
            a.sample_rate
        )));
    }
    Ok(a.waveform)
}

/// Evaluates every record; unreadable or inconsistent examples are recorded
/// as failures and skipped.
pub fn evaluate_manifest(manifest_path: &Path, enhancer: &dyn Enhancer) -> Result<EvalReport> {
    let manifest = Manifest::load(manifest_path)?;
    let mut report = EvalReport::default();
    for rec in &manifest.records {
        let mut fail = |path: Option<PathBuf>, e: Error| {
            report.failures.push(ExampleFailure {
                id: rec.id.clone(),
                path,
                message: e.to_string(),
            })
        };
        let mix_path = resolve(manifest_path, &rec.mixture);
        let dir_path = resolve(manifest_path, &rec.direct);
        let mixture = load_16k(&mix_path).map_err(|e| (mix_path.clone(), e));
        let direct = load_16k(&dir_path).map_err(|e| (dir_path.clone(), e));
        let (mixture, direct) = match (mixture, direct) {
            (Ok(m), Ok(d)) => (m, d),
            (m, d) => {
                for (p, e) in [m.err(), d.err()].into_iter().flatten() {
                    fail(Some(p), e);
                }
                continue;
            }
        };
        match score_example(enhancer, &rec.id, &mixture, direct.channel(0)) {
            Ok(s) => report.scores.push(s),
            Err(e) => fail(None, e),
        }
    }
    Ok(report)
}
