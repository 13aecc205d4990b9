//! Waveform framing, count-normalized overlap-add, and the algorithmic
//! latency check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const SAMPLE_RATE: u32 = 16_000;

/// Frame geometry: input frame length, output frame length and hop, in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSpec {
    pub input: usize,
    pub output: usize,
    pub hop: usize,
}

impl Default for FrameSpec {
    /// 16 ms input frames, 2 ms output frames, 1 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            input: 256,
            output: 32,
            hop: 16,
        }
    }
}

impl FrameSpec {
    pub fn new(input: usize, output: usize, hop: usize) -> Result<Self> {
        let spec = Self { input, output, hop };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.output < self.hop || self.input < self.output {
            return Err(Error::Config(format!(
                "frame spec needs 0 < hop <= output <= input, got {self:?}"
            )));
        }
        if !self.output.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "output frame {} is not a multiple of hop {}",
                self.output, self.hop
            )));
        }
        Ok(())
    }

    /// Zeros prepended so that each frame's rightmost `output` samples line
    /// up with the hop grid.
    pub fn left_pad(&self) -> usize {
        self.input - self.output
    }

    pub fn num_frames(&self, n: usize) -> usize {
        n.div_ceil(self.hop)
    }

    /// Frames whose output window covers sample `n` (for `n < len`).
    pub fn overlap_count(&self, n: usize) -> usize {
        let last = n / self.hop;
        let first = (n + 1).saturating_sub(self.output).div_ceil(self.hop);
        last - first + 1
    }

    /// Algorithmic latency in samples.
    pub fn latency(&self) -> usize {
        self.output
    }
}

/// `C` equal-length channels of 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    channels: Vec<Vec<T>>,
}

impl<T: Real> Waveform<T> {
    pub fn new(channels: Vec<Vec<T>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::dim("waveform needs at least one channel"))?;
        if channels.iter().any(|c| c.len() != first.len()) {
            return Err(Error::dim("waveform channels differ in length"));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("waveform has non-finite samples".into()));
        }
        Ok(Self { channels })
    }

    pub fn mono(samples: Vec<T>) -> Result<Self> {
        Self::new(vec![samples])
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    pub fn cast<U: Real>(&self) -> Waveform<U> {
        Waveform {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| U::c(x.f64())).collect())
                .collect(),
        }
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
        }
    }

    /// Pooled population variance over all channels and samples.
    pub fn pooled_variance(&self) -> f64 {
        let n = (self.num_channels() * self.len()) as f64;
        let mean = self.channels.iter().flatten().map(|x| x.f64()).sum::<f64>() / n;
        self.channels
            .iter()
            .flatten()
            .map(|x| (x.f64() - mean).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn scaled(&self, scale: T) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&x| x * scale).collect())
                .collect(),
        }
    }
}

/// Multiplies `y` by the scalar that brings its pooled variance to one.
/// Returns the scaled waveform and the scale.
pub fn normalize_variance<T: Real>(y: &Waveform<T>) -> Result<(Waveform<T>, T)> {
    let scale = variance_scale(y)?;
    Ok((y.scaled(scale), scale))
}

pub fn variance_scale<T: Real>(y: &Waveform<T>) -> Result<T> {
    if y.is_empty() {
        return Err(Error::Empty("cannot normalize an empty waveform".into()));
    }
    let var = y.pooled_variance();
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::Degenerate(
            "waveform has zero variance and cannot be normalized".into(),
        ));
    }
    Ok(T::c(1.0 / var.sqrt()))
}

/// Splits every channel into overlapping frames, `C × T × input`.
///
/// The signal is left-padded with `input - output` zeros and right-padded
/// to complete the final frame, so that frame `t` ends at original sample
/// `t * hop + output`.
pub fn frame_signal<T: Real>(x: &Waveform<T>, spec: &FrameSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("cannot frame a zero-length signal".into()));
    }
    let frames = spec.num_frames(n);
    let pad = spec.left_pad();
    let mut data = Vec::with_capacity(x.num_channels() * frames * spec.input);
    for ch in x.channels() {
        for t in 0..frames {
            let start = (t * spec.hop) as isize - pad as isize;
            for k in 0..spec.input {
                let i = start + k as isize;
                data.push(if i >= 0 && (i as usize) < n {
                    ch[i as usize]
                } else {
                    T::zero()
                });
            }
        }
    }
    Tensor::new(&[x.num_channels(), frames, spec.input], data)
}

fn check_output_frames(shape: &[usize], spec: &FrameSpec, n: usize) -> Result<usize> {
    let frames = spec.num_frames(n);
    let rank = shape.len();
    let lead: usize = shape[..rank.saturating_sub(2)].iter().product();
    if rank < 2 || lead != 1 || shape[rank - 2] != frames || shape[rank - 1] != spec.output {
        return Err(Error::dim(format!(
            "overlap-add of {n} samples needs {frames}×{} frames, got {shape:?}",
            spec.output
        )));
    }
    Ok(frames)
}

/// Sums output frames at the hop interval and divides every sample by the
/// number of frames covering it. The result is truncated to `n` samples.
pub fn overlap_add<T: Real>(frames: &Tensor<T>, spec: &FrameSpec, n: usize) -> Result<Vec<T>> {
    spec.validate()?;
    let count = check_output_frames(frames.shape(), spec, n)?;
    let mut out = vec![T::zero(); count * spec.hop + spec.output];
    for (t, frame) in frames.data().chunks_exact(spec.output).enumerate() {
        let base = t * spec.hop;
        for (o, &v) in out[base..base + spec.output].iter_mut().zip(frame) {
            *o += v;
        }
    }
    out.truncate(n);
    for (i, o) in out.iter_mut().enumerate() {
        *o /= T::c(spec.overlap_count(i) as f64);
    }
    Ok(out)
}

/// Differentiable [`overlap_add`]; returns a `[n]` tensor on the tape.
pub fn overlap_add_var<T: Real>(tape: &mut Tape<T>, frames: Var, spec: &FrameSpec, n: usize) -> Result<Var> {
    let in_shape = tape.value(frames).shape().to_vec();
    let value = overlap_add(tape.value(frames), spec, n)?;
    let spec = *spec;
    Ok(tape.record(&[frames], Tensor::new(&[n], value)?, move |ctx| {
        let g = ctx.grad.data();
        let mut d = Tensor::zeros(&in_shape);
        for (t, frame) in d.data_mut().chunks_exact_mut(spec.output).enumerate() {
            let base = t * spec.hop;
            for (j, v) in frame.iter_mut().enumerate() {
                let i = base + j;
                if i < n {
                    *v = g[i] / T::c(spec.overlap_count(i) as f64);
                }
            }
        }
        vec![Some(d)]
    }))
}

/// One perturbation of a latency check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyTrial {
    /// Perturbed input sample.
    pub m: usize,
    pub channel: usize,
    /// Earliest output sample whose bits changed, if any did.
    pub earliest_affected: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct LatencyReport {
    pub trials: Vec<LatencyTrial>,
}

/// Checks that perturbing input sample `m` leaves every output sample
/// `n <= m - latency` bit-identical.
///
/// `trials` perturbation positions are drawn from `seed`; each perturbs a
/// random channel at a random index in `[latency, N)`.
pub fn latency_check<T, F>(
    model_fn: F,
    input: &Waveform<T>,
    spec: &FrameSpec,
    trials: usize,
    seed: u64,
) -> Result<LatencyReport>
where
    T: Real,
    F: Fn(&Waveform<T>) -> Result<Vec<T>>,
{
    let latency = spec.latency();
    if input.len() <= latency {
        return Err(Error::Empty(format!("latency check needs more than {latency} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<(usize, usize)> = (0..trials)
        .map(|_| {
            (
                rng.gen_range(latency..input.len()),
                rng.gen_range(0..input.num_channels()),
            )
        })
        .collect();
    latency_check_at(model_fn, input, spec, &positions)
}

/// [`latency_check`] at explicit `(m, channel)` positions.
pub fn latency_check_at<T, F>(
    model_fn: F,
    input: &Waveform<T>,
    spec: &FrameSpec,
    positions: &[(usize, usize)],
) -> Result<LatencyReport>
where
    T: Real,
    F: Fn(&Waveform<T>) -> Result<Vec<T>>,
{
    let latency = spec.latency();
    let base = model_fn(input)?;
    let mut report = LatencyReport::default();
    for &(m, channel) in positions {
        let mut perturbed = input.clone();
        let x = &mut perturbed.channels_mut()[channel][m];
        *x += T::one() + x.abs();
        let out = model_fn(&perturbed)?;
        if out.len() != base.len() {
            return Err(Error::dim("model output length changed under perturbation"));
        }
        let earliest = base
            .iter()
            .zip(&out)
            .position(|(a, b)| a.f64().to_bits() != b.f64().to_bits());
        if let Some(n) = earliest {
            if n + latency <= m {
                return Err(Error::Latency { m, n });
            }
        }
        report.trials.push(LatencyTrial {
            m,
            channel,
            earliest_affected: earliest,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Waveform<f64> {
        Waveform::mono((0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(FrameSpec::new(256, 32, 16).is_ok());
        assert!(FrameSpec::new(16, 32, 16).is_err());
        assert!(FrameSpec::new(256, 32, 64).is_err());
        assert!(FrameSpec::new(256, 24, 16).is_err());
        assert!(FrameSpec::new(256, 32, 0).is_err());
    }

    #[test]
    fn pooled_variance_four_gives_half() {
        let y = Waveform::new(vec![vec![2.0, -2.0, 2.0, -2.0], vec![-2.0, 2.0, -2.0, 2.0]]).unwrap();
        let (z, scale) = normalize_variance(&y).unwrap();
        assert!((scale - 0.5f64).abs() < 1e-15);
        assert!((z.pooled_variance() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_variance_is_fixed_point() {
        let y = Waveform::mono(vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (_, scale) = normalize_variance(&y).unwrap();
        assert!((scale - 1.0f64).abs() < 1e-6);
    }

    #[test]
    fn zero_input_is_degenerate() {
        let y = Waveform::mono(vec![0.0f64; 10]).unwrap();
        assert!(matches!(normalize_variance(&y), Err(Error::Degenerate(_))));
    }

    #[test]
    fn default_framing_of_64_samples() {
        let spec = FrameSpec::default();
        let frames = frame_signal(&ramp(64), &spec).unwrap();
        assert_eq!(frames.shape(), &[1, 4, 256]);
        let f0 = &frames.data()[..256];
        assert!(f0[..224].iter().all(|&x| x == 0.0));
        let expect: Vec<f64> = (0..32).map(|i| i as f64 + 1.0).collect();
        assert_eq!(&f0[224..], &expect[..]);
    }

    #[test]
    fn degenerate_spec_is_plain_segmentation() {
        let spec = FrameSpec::new(4, 4, 4).unwrap();
        let frames = frame_signal(&ramp(10), &spec).unwrap();
        assert_eq!(frames.shape(), &[1, 3, 4]);
        assert_eq!(frames.data(), &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 0., 0.]);
    }

    #[test]
    fn empty_signal_is_rejected() {
        let x = Waveform::<f64>::mono(vec![]).unwrap();
        assert!(matches!(frame_signal(&x, &FrameSpec::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn each_sample_is_in_two_output_windows() {
        let spec = FrameSpec::default();
        let n = 200;
        let frames = spec.num_frames(n);
        for i in spec.output..n {
            let covering = (0..frames)
                .filter(|&t| t * spec.hop <= i && i < t * spec.hop + spec.output)
                .count();
            assert_eq!(covering, 2, "sample {i}");
            assert_eq!(spec.overlap_count(i), covering);
        }
    }

    #[test]
    fn zero_and_constant_frames() {
        let spec = FrameSpec::default();
        let n = 100;
        let t = spec.num_frames(n);
        let zeros = Tensor::<f64>::zeros(&[1, t, 32]);
        assert!(overlap_add(&zeros, &spec, n).unwrap().iter().all(|&x| x == 0.0));
        let c = Tensor::<f64>::full(&[1, t, 32], 0.7);
        let out = overlap_add(&c, &spec, n).unwrap();
        assert!(out.iter().all(|&x| (x - 0.7).abs() < 1e-15));
    }

    #[test]
    fn overlap_add_rejects_wrong_frame_count() {
        let spec = FrameSpec::default();
        let frames = Tensor::<f64>::zeros(&[1, 3, 32]);
        assert!(matches!(overlap_add(&frames, &spec, 100), Err(Error::Dimension(_))));
    }

    fn rightmost(frames: &Tensor<f64>, spec: &FrameSpec) -> Tensor<f64> {
        let t = frames.shape()[1];
        let mut out = Vec::new();
        for f in frames.data().chunks_exact(spec.input).take(t) {
            out.extend_from_slice(&f[spec.input - spec.output..]);
        }
        Tensor::new(&[1, t, spec.output], out).unwrap()
    }

    #[test]
    fn identity_model_passes_latency_check() {
        let spec = FrameSpec::default();
        let x = Waveform::mono((0..600).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let model = |y: &Waveform<f64>| {
            let frames = frame_signal(y, &spec)?;
            overlap_add(&rightmost(&frames, &spec), &spec, y.len())
        };
        let report = latency_check(model, &x, &spec, 16, 3).unwrap();
        for trial in &report.trials {
            let n = trial.earliest_affected.unwrap();
            assert!(n > trial.m - spec.output);
        }
    }

    #[test]
    fn future_frame_model_fails_latency_check() {
        let spec = FrameSpec::default();
        let x = Waveform::mono((0..600).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let model = |y: &Waveform<f64>| {
            let frames = rightmost(&frame_signal(y, &spec)?, &spec);
            let t = frames.shape()[1];
            // three hops of lookahead exceed the output-frame budget
            let k = 3 * spec.output;
            let mut shifted = frames.data()[k..].to_vec();
            shifted.extend(std::iter::repeat_n(0.0, k));
            overlap_add(&Tensor::new(&[1, t, spec.output], shifted)?, &spec, y.len())
        };
        let m = 400;
        match latency_check_at(model, &x, &spec, &[(m, 0)]) {
            Err(Error::Latency { m: em, n }) => {
                assert_eq!(em, m);
                let expected = m - 3 * spec.hop;
                assert!(n.abs_diff(expected) <= spec.hop, "n = {n}");
            }
            other => panic!("expected a latency violation, got {other:?}"),
        }
    }
}
