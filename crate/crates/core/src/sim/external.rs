//! Source material read from WAV files instead of generated.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mixture::SourceBank;
use super::sources;
use crate::error::{Error, Result};
use crate::framing::SAMPLE_RATE;
use crate::wav::read_wav;

/// Speech (and optionally noise) clips loaded from directories of 16 kHz
/// WAV files. Each draw picks a clip and a start offset, looping the clip
/// to the requested length. Multichannel files contribute channel 0.
#[derive(Clone, Debug)]
pub struct WavSources {
    speech: Vec<Vec<f64>>,
    /// Empty means synthetic noise.
    noise: Vec<Vec<f64>>,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    // directory order is platform dependent
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

fn load_clips(dir: &Path) -> Result<Vec<Vec<f64>>> {
    wav_files(dir)?
        .iter()
        .map(|path| {
            let audio = read_wav(path)?;
            if audio.sample_rate != SAMPLE_RATE {
                return Err(Error::dim(format!(
                    "{}: sample rate {} Hz, {SAMPLE_RATE} Hz required",
                    path.display(),
                    audio.sample_rate
                )));
            }
            let clip: Vec<f64> = audio.waveform.channel(0).iter().map(|&v| v as f64).collect();
            if clip.iter().all(|&v| v == 0.0) {
                return Err(Error::Degenerate(format!("{} is silent", path.display())));
            }
            Ok(clip)
        })
        .collect()
}

impl WavSources {
    pub fn new(speech: Vec<Vec<f64>>, noise: Vec<Vec<f64>>) -> Result<Self> {
        if speech.is_empty() {
            return Err(Error::Empty("no speech clips".into()));
        }
        if speech.iter().chain(&noise).any(|c| c.is_empty()) {
            return Err(Error::Empty("empty source clip".into()));
        }
        Ok(Self { speech, noise })
    }

    /// Loads every `.wav` in `speech_dir`, and in `noise_dir` when given.
    pub fn from_dirs(speech_dir: &Path, noise_dir: Option<&Path>) -> Result<Self> {
        let noise = match noise_dir {
            Some(d) => load_clips(d)?,
            None => Vec::new(),
        };
        Self::new(load_clips(speech_dir)?, noise)
    }
}

fn draw_segment(rng: &mut ChaCha8Rng, clips: &[Vec<f64>], n: usize) -> Vec<f64> {
    let clip = &clips[rng.gen_range(0..clips.len())];
    let start = rng.gen_range(0..clip.len());
    clip.iter().cycle().skip(start).take(n).copied().collect()
}

impl SourceBank for WavSources {
    fn speech(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        Ok(draw_segment(rng, &self.speech, n))
    }

    fn noise(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        if self.noise.is_empty() {
            Ok(sources::random_noise(rng, n, SAMPLE_RATE as f64))
        } else {
            Ok(draw_segment(rng, &self.noise, n))
        }
    }
}
