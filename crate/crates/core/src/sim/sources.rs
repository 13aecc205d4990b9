//! Seeded synthetic source signals standing in for a speech/noise corpus.

use std::f64::consts::PI;

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    /// Pink noise under a slow random amplitude envelope.
    Fluctuating,
    /// Sum of several unrelated speech-like voices.
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Fluctuating,
        NoiseKind::Babble,
    ];
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Voiced, syllable-paced harmonic signal with formant-like resonances and
/// occasional fricative bursts; unit RMS.
pub fn speech_like<R: Rng>(rng: &mut R, n: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let base_f0 = rng.gen_range(90.0..230.0);
    let mut i = 0usize;
    // leading silence up to 100 ms, at most a quarter of the signal
    i += rng.gen_range(0..((0.1 * fs) as usize).min(n / 4) + 1);
    let mut phase = 0.0f64;
    while i < n {
        let syl = rng.gen_range((0.08 * fs) as usize..(0.3 * fs) as usize);
        let gap = rng.gen_range((0.02 * fs) as usize..(0.15 * fs) as usize);
        let f0_start = base_f0 * rng.gen_range(0.85..1.15);
        let f0_end = base_f0 * rng.gen_range(0.85..1.15);
        let formants = [
            rng.gen_range(300.0..900.0),
            rng.gen_range(900.0..2400.0),
            rng.gen_range(2400.0..3500.0),
        ];
        let level = rng.gen_range(0.4..1.0);
        let fricative = rng.gen_bool(0.25);
        for k in 0..syl.min(n - i) {
            let p = k as f64 / syl as f64;
            let env = (PI * p).sin().powf(0.7) * level;
            let s = if fricative {
                rng.gen_range(-1.0..1.0) * 0.3
            } else {
                let f0 = f0_start + (f0_end - f0_start) * p;
                phase += 2.0 * PI * f0 / fs;
                let mut v = 0.0;
                let harmonics = (4000.0 / f0) as usize;
                for h in 1..=harmonics {
                    let fh = f0 * h as f64;
                    let gain: f64 = formants
                        .iter()
                        .map(|&fc| 1.0 / (1.0 + ((fh - fc) / 120.0).powi(2)))
                        .sum::<f64>()
                        + 0.05;
                    v += gain * (phase * h as f64).sin() / h as f64;
                }
                v
            };
            out[i + k] = env * s;
        }
        i += syl + gap;
    }
    normalize_rms(out)
}

fn pink<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Paul Kellet's economy pink filter
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Noise of the given kind, unit RMS.
pub fn noise<R: Rng>(rng: &mut R, kind: NoiseKind, n: usize, fs: f64) -> Vec<f64> {
    let x = match kind {
        NoiseKind::White => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        NoiseKind::Pink => pink(rng, n),
        NoiseKind::Fluctuating => {
            let rate = rng.gen_range(0.5..4.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            pink(rng, n)
                .into_iter()
                .enumerate()
                .map(|(i, v)| v * (1.2 + (2.0 * PI * rate * i as f64 / fs + phase).sin()))
                .collect()
        }
        NoiseKind::Babble => {
            let voices = rng.gen_range(3..7);
            let mut acc = vec![0.0; n];
            for _ in 0..voices {
                for (a, v) in acc.iter_mut().zip(speech_like(rng, n, fs)) {
                    *a += v;
                }
            }
            acc
        }
    };
    normalize_rms(x)
}

pub fn random_noise<R: Rng>(rng: &mut R, n: usize, fs: f64) -> Vec<f64> {
    let kind = NoiseKind::ALL[rng.gen_range(0..NoiseKind::ALL.len())];
    noise(rng, kind, n, fs)
}
