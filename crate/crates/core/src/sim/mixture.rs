use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::convolve_truncated;
use super::rir::{circular_array, simulate_rir, Point, RoomSpec};
use super::sources;
use crate::error::{Error, Result};
use crate::framing::{Waveform, SAMPLE_RATE};
use crate::rng::substream;

/// Sampling ranges for one simulated example.
#[derive(Clone, Debug, PartialEq)]
pub struct SimRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub absorption: (f64, f64),
    pub snr_db: (f64, f64),
    pub noise_sources: (usize, usize),
    pub mics: usize,
    pub radius: f64,
    /// Minimum distance from any wall for sources and microphones.
    pub margin: f64,
    pub order: u32,
}

impl Default for SimRanges {
    fn default() -> Self {
        Self {
            length: (3.0, 10.0),
            width: (3.0, 10.0),
            height: (2.0, 5.0),
            absorption: (0.1, 0.4),
            snr_db: (-10.0, 10.0),
            noise_sources: (1, 10),
            mics: 8,
            radius: 0.10,
            margin: 0.10,
            order: 6,
        }
    }
}

impl SimRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid")))
            }
        };
        ordered("length", self.length)?;
        ordered("width", self.width)?;
        ordered("height", self.height)?;
        ordered("absorption", self.absorption)?;
        ordered("snr_db", self.snr_db)?;
        let min_side = self.length.0.min(self.width.0);
        if 2.0 * (self.margin + self.radius) >= min_side || 2.0 * self.margin >= self.height.0 {
            return Err(Error::Config("room too small for the array and wall margin".into()));
        }
        if self.absorption.0 < 0.0 || self.absorption.1 >= 1.0 {
            return Err(Error::Config("absorption must lie in [0, 1)".into()));
        }
        let (lo, hi) = self.noise_sources;
        if lo == 0 || lo > hi || hi > 10 {
            return Err(Error::Config(format!(
                "noise source count range [{lo}, {hi}] must lie within [1, 10]"
            )));
        }
        if self.mics == 0 || self.radius <= 0.0 {
            return Err(Error::Config(
                "array needs at least one mic and a positive radius".into(),
            ));
        }
        Ok(())
    }
}

/// Geometry of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomDraw {
    pub room: RoomSpec,
    pub array_center: Point,
    pub mics: Vec<Point>,
    pub speech: Point,
    pub noises: Vec<Point>,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn point_in<R: Rng>(rng: &mut R, dims: &[f64; 3], margin: [f64; 3]) -> Point {
    std::array::from_fn(|d| uniform(rng, (margin[d], dims[d] - margin[d])))
}

/// Draws room size, absorption, array placement and source positions.
pub fn draw_room<R: Rng>(ranges: &SimRanges, rng: &mut R, seed: u64) -> RoomDraw {
    let dims = [
        uniform(rng, ranges.length),
        uniform(rng, ranges.width),
        uniform(rng, ranges.height),
    ];
    let mut room = RoomSpec::new(dims, uniform(rng, ranges.absorption));
    room.seed = seed;
    let edge = ranges.margin + ranges.radius;
    let array_center = point_in(rng, &dims, [edge, edge, ranges.margin]);
    let mics = circular_array(&array_center, ranges.radius, ranges.mics);
    let m = [ranges.margin; 3];
    let speech = point_in(rng, &dims, m);
    let (lo, hi) = ranges.noise_sources;
    let count = rng.gen_range(lo..=hi);
    let noises = (0..count).map(|_| point_in(rng, &dims, m)).collect();
    RoomDraw {
        room,
        array_center,
        mics,
        speech,
        noises,
    }
}

/// Direct-path speech, its reverberation, noise, and their sum, per mic.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub s_direct: Waveform<f64>,
    pub s_reverb: Waveform<f64>,
    pub noise: Waveform<f64>,
    pub mixture: Waveform<f64>,
    pub snr_db: f64,
    pub noise_sources: usize,
}

fn energy(w: &Waveform<f64>) -> f64 {
    w.channels().iter().flatten().map(|v| v * v).sum()
}

/// Propagates `speech` and `noises` through the room to every microphone
/// and scales the noise so that the channel-summed direct-path to noise
/// energy ratio equals `snr_db`.
///
/// The direct component uses reflection-free responses; reverberation is
/// the full-order response minus the direct one.
pub fn spatialize_mixture(
    draw: &RoomDraw,
    speech: &[f64],
    noises: &[Vec<f64>],
    snr_db: f64,
    order: u32,
) -> Result<MixtureExample> {
    let n = speech.len();
    if n == 0 {
        return Err(Error::Empty("speech signal is empty".into()));
    }
    if noises.is_empty() || noises.len() > 10 || noises.len() != draw.noises.len() {
        return Err(Error::Config(format!(
            "need between 1 and 10 noise signals matching {} positions, got {}",
            draw.noises.len(),
            noises.len()
        )));
    }
    if speech.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("speech signal is silent".into()));
    }
    for (j, nz) in noises.iter().enumerate() {
        if nz.len() < n {
            return Err(Error::dim(format!(
                "noise {j} has {} samples, speech has {n}",
                nz.len()
            )));
        }
        if nz[..n].iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!("noise signal {j} is silent")));
        }
    }
    let room = &draw.room;
    let mut direct = Vec::with_capacity(draw.mics.len());
    let mut reverb = Vec::with_capacity(draw.mics.len());
    let mut noise = Vec::with_capacity(draw.mics.len());
    for mic in &draw.mics {
        let full = convolve_truncated(speech, &simulate_rir(room, &draw.speech, mic, order)?);
        let dir = convolve_truncated(speech, &simulate_rir(room, &draw.speech, mic, 0)?);
        reverb.push(full.iter().zip(&dir).map(|(f, d)| f - d).collect::<Vec<_>>());
        direct.push(dir);
        let mut acc = vec![0.0; n];
        for (pos, sig) in draw.noises.iter().zip(noises) {
            let h = simulate_rir(room, pos, mic, order)?;
            for (a, v) in acc.iter_mut().zip(convolve_truncated(&sig[..n], &h)) {
                *a += v;
            }
        }
        noise.push(acc);
    }
    let s_direct = Waveform::new(direct)?;
    let s_reverb = Waveform::new(reverb)?;
    let raw_noise = Waveform::new(noise)?;
    let (e_speech, e_noise) = (energy(&s_direct), energy(&raw_noise));
    if e_speech <= 0.0 {
        return Err(Error::Degenerate("direct-path speech has zero energy".into()));
    }
    if e_noise <= 0.0 {
        return Err(Error::Degenerate("propagated noise has zero energy".into()));
    }
    let gain = (e_speech / (e_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise = raw_noise.scaled(gain);
    let mixture = Waveform::new(
        s_direct
            .channels()
            .iter()
            .zip(s_reverb.channels())
            .zip(noise.channels())
            .map(|((d, r), v)| d.iter().zip(r).zip(v).map(|((d, r), v)| d + r + v).collect())
            .collect(),
    )?;
    Ok(MixtureExample {
        s_direct,
        s_reverb,
        noise,
        mixture,
        snr_db,
        noise_sources: noises.len(),
    })
}

/// `10 log10(Σ_c |s_direct[c]|² / Σ_c |noise[c]|²)`; reverberation is excluded.
pub fn achieved_snr(ex: &MixtureExample) -> Result<f64> {
    let e_noise = energy(&ex.noise);
    if e_noise <= 0.0 {
        return Err(Error::Degenerate("example has zero noise energy".into()));
    }
    Ok(10.0 * (energy(&ex.s_direct) / e_noise).log10())
}

/// Source material for simulation.
pub trait SourceBank {
    fn speech(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>>;
    fn noise(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>>;
}

/// Seeded synthetic speech-like and noise signals.
pub struct SyntheticSources;

impl SourceBank for SyntheticSources {
    fn speech(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        Ok(sources::speech_like(rng, n, SAMPLE_RATE as f64))
    }

    fn noise(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        Ok(sources::random_noise(rng, n, SAMPLE_RATE as f64))
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedExample {
    pub seed: u64,
    pub draw: RoomDraw,
    pub example: MixtureExample,
}

/// One complete example from `seed` with synthetic sources.
pub fn generate_example(ranges: &SimRanges, samples: usize, seed: u64) -> Result<GeneratedExample> {
    generate_example_with(ranges, samples, seed, &SyntheticSources)
}

pub fn generate_example_with(
    ranges: &SimRanges,
    samples: usize,
    seed: u64,
    bank: &dyn SourceBank,
) -> Result<GeneratedExample> {
    ranges.validate()?;
    let mut rng = substream(seed, &[0]);
    let draw = draw_room(ranges, &mut rng, seed);
    let snr_db = uniform(&mut rng, ranges.snr_db);
    let mut src_rng = substream(seed, &[1]);
    let speech = bank.speech(&mut src_rng, samples)?;
    let noises = (0..draw.noises.len())
        .map(|_| bank.noise(&mut src_rng, samples))
        .collect::<Result<Vec<_>>>()?;
    let example = spatialize_mixture(&draw, &speech, &noises, snr_db, ranges.order)?;
    Ok(GeneratedExample { seed, draw, example })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rir::distance;
    use rand::SeedableRng;

    fn small() -> SimRanges {
        SimRanges {
            order: 2,
            ..SimRanges::default()
        }
    }

    #[test]
    fn draws_respect_ranges() {
        let ranges = SimRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let d = draw_room(&ranges, &mut rng, 0);
            assert!((3.0..=10.0).contains(&d.room.dims[0]));
            assert!((3.0..=10.0).contains(&d.room.dims[1]));
            assert!((2.0..=5.0).contains(&d.room.dims[2]));
            assert!((0.1..=0.4).contains(&d.room.absorption));
            assert!((1..=10).contains(&d.noises.len()));
            assert_eq!(d.mics.len(), 8);
            for p in d.mics.iter().chain([&d.speech]).chain(&d.noises) {
                assert!(d.room.contains(p, 0.1 - 1e-12));
            }
            for m in &d.mics {
                assert!((distance(m, &d.array_center) - 0.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn snr_additivity_and_determinism() {
        let ranges = small();
        let a = generate_example(&ranges, 4000, 11).unwrap();
        let b = generate_example(&ranges, 4000, 11).unwrap();
        assert_eq!(a.example, b.example);
        let ex = &a.example;
        assert!((achieved_snr(ex).unwrap() - ex.snr_db).abs() < 1e-6);
        for c in 0..8 {
            for i in 0..4000 {
                let sum = ex.s_direct.channel(c)[i] + ex.s_reverb.channel(c)[i] + ex.noise.channel(c)[i];
                assert!((ex.mixture.channel(c)[i] - sum).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_db_with_unit_energies_needs_no_scaling() {
        let room = RoomSpec::new([4.0, 4.0, 3.0], 0.3);
        let draw = RoomDraw {
            array_center: [2.0, 2.0, 1.5],
            mics: vec![[2.0, 2.0, 1.5]],
            speech: [1.0, 1.0, 1.5],
            noises: vec![[1.0, 1.0, 1.5]],
            room,
        };
        // same position, same signal: propagated energies are equal
        let mut s = vec![0.0; 400];
        s[0] = 1.0;
        let ex = spatialize_mixture(&draw, &s, &[s.clone()], 0.0, 0).unwrap();
        let full_noise: f64 = ex.noise.channel(0).iter().map(|v| v * v).sum();
        let direct: f64 = ex.s_direct.channel(0).iter().map(|v| v * v).sum();
        assert!((full_noise - direct).abs() < 1e-15);
    }

    #[test]
    fn silent_inputs_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = draw_room(&small(), &mut rng, 0);
        let noises = vec![vec![1.0; 100]; draw.noises.len()];
        assert!(matches!(
            spatialize_mixture(&draw, &[0.0; 100], &noises, 0.0, 0),
            Err(Error::Degenerate(_))
        ));
        let silent = vec![vec![0.0; 100]; draw.noises.len()];
        assert!(matches!(
            spatialize_mixture(&draw, &[1.0; 100], &silent, 0.0, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = SimRanges {
            noise_sources: (0, 3),
            ..SimRanges::default()
        };
        assert!(bad.validate().is_err());
    }
}
