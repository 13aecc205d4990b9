//! STFT, the phase-constrained magnitude loss, and SI-SDR.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Loss transform: 512-sample Hann window, hop 256.
pub const LOSS_WINDOW: usize = 512;
pub const LOSS_HOP: usize = 256;

pub const SI_SDR_EPS: f64 = 1e-12;
pub const SI_SDR_CAP_DB: f64 = 80.0;

/// One-sided spectrogram, `frames × bins`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

/// Periodic Hann window.
pub fn hann<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| T::c(0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()))
        .collect()
}

fn stft_frames(n: usize, window: usize, hop: usize) -> usize {
    if n <= window {
        1
    } else {
        1 + (n - window).div_ceil(hop)
    }
}

fn check_stft(window: usize, hop: usize) -> Result<()> {
    if !window.is_power_of_two() || hop == 0 || hop > window {
        return Err(Error::Config(format!(
            "STFT needs a power-of-two window and 0 < hop <= window, got {window}/{hop}"
        )));
    }
    Ok(())
}

/// Hann-windowed one-sided DFT of each frame. Frames start at multiples of
/// `hop`; the tail (or a signal shorter than one window) is zero-padded.
pub fn stft<T: Real>(x: &[T], window: usize, hop: usize) -> Result<Spectrogram<T>> {
    check_stft(window, hop)?;
    if x.is_empty() {
        return Err(Error::Empty("STFT of an empty signal".into()));
    }
    let frames = stft_frames(x.len(), window, hop);
    let bins = window / 2 + 1;
    let w = hann::<T>(window);
    let fft = FftPlanner::<T>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); window];
    let mut re = Vec::with_capacity(frames * bins);
    let mut im = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            let v = x.get(start + k).copied().unwrap_or(T::zero());
            *b = Complex::new(v * w[k], T::zero());
        }
        fft.process(&mut buf);
        for b in &buf[..bins] {
            re.push(b.re);
            im.push(b.im);
        }
    }
    Ok(Spectrogram { frames, bins, re, im })
}

/// Differentiable [`stft`] of a `[N]` tensor; the result is `2 × frames × bins`
/// with the real part first.
pub fn stft_var<T: Real>(tape: &mut Tape<T>, x: Var, window: usize, hop: usize) -> Result<Var> {
    let n = tape.value(x).len();
    let spec = stft(tape.value(x).data(), window, hop)?;
    let (frames, bins) = (spec.frames, spec.bins);
    let mut data = spec.re;
    data.extend(spec.im);
    let value = Tensor::new(&[2, frames, bins], data)?;
    let in_shape = tape.value(x).shape().to_vec();
    Ok(tape.record(&[x], value, move |ctx| {
        // d/dx[k] of (Σ_f gR·Re X + gI·Im X) = Re(Σ_f conj(G[f]) e^{-2πi f k / W}) · w[k]
        let g = ctx.grad.data();
        let (g_re, g_im) = g.split_at(frames * bins);
        let w = hann::<T>(window);
        let fft = FftPlanner::<T>::new().plan_fft_forward(window);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); window];
        let mut dx = vec![T::zero(); n];
        for t in 0..frames {
            for (f, b) in buf.iter_mut().enumerate() {
                *b = if f < bins {
                    Complex::new(g_re[t * bins + f], -g_im[t * bins + f])
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
            fft.process(&mut buf);
            let start = t * hop;
            for (k, b) in buf.iter().enumerate() {
                if start + k < n {
                    dx[start + k] += b.re * w[k];
                }
            }
        }
        vec![Some(Tensor::new(&in_shape, dx).unwrap())]
    }))
}

/// `|X_r| + |X_i|` per time-frequency cell.
fn l1_magnitude<T: Real>(s: &Spectrogram<T>) -> Vec<T> {
    s.re.iter().zip(&s.im).map(|(r, i)| r.abs() + i.abs()).collect()
}

fn spectral_magnitude_loss<T: Real>(target: &[T], estimate: &[T]) -> Result<T> {
    let a = l1_magnitude(&stft(target, LOSS_WINDOW, LOSS_HOP)?);
    let b = l1_magnitude(&stft(estimate, LOSS_WINDOW, LOSS_HOP)?);
    let sum: T = a.iter().zip(&b).map(|(&u, &v)| (u - v).abs()).sum();
    Ok(sum / T::c(a.len() as f64))
}

fn check_lengths(n: &[usize]) -> Result<()> {
    if n.iter().any(|&l| l != n[0]) {
        return Err(Error::dim(format!("loss inputs differ in length: {n:?}")));
    }
    Ok(())
}

/// Phase-constrained magnitude loss of estimate `x_hat` against target `x`
/// in mixture `y`: spectral magnitude distance of the speech estimate plus
/// that of the implied interference estimate `y - x_hat`.
pub fn pcm_loss<T: Real>(x_hat: &[T], x: &[T], y: &[T]) -> Result<T> {
    check_lengths(&[x_hat.len(), x.len(), y.len()])?;
    let r: Vec<T> = y.iter().zip(x).map(|(&a, &b)| a - b).collect();
    let r_hat: Vec<T> = y.iter().zip(x_hat).map(|(&a, &b)| a - b).collect();
    Ok(spectral_magnitude_loss(x, x_hat)? + spectral_magnitude_loss(&r, &r_hat)?)
}

fn spectral_magnitude_loss_var<T: Real>(tape: &mut Tape<T>, target: &[T], estimate: Var) -> Result<Var> {
    let spec = stft_var(tape, estimate, LOSS_WINDOW, LOSS_HOP)?;
    let shape = tape.value(spec).shape().to_vec();
    let mags = tape.abs(spec);
    let re = tape.slice(mags, 0, 0, 1)?;
    let im = tape.slice(mags, 0, 1, 1)?;
    let est_mag = tape.add(re, im)?;
    let target_mag = Tensor::new(
        &[1, shape[1], shape[2]],
        l1_magnitude(&stft(target, LOSS_WINDOW, LOSS_HOP)?),
    )?;
    let target_mag = tape.constant(target_mag);
    let diff = tape.sub(est_mag, target_mag)?;
    let diff = tape.abs(diff);
    Ok(tape.mean(diff))
}

/// Differentiable [`pcm_loss`] with respect to the `[N]` estimate.
pub fn pcm_loss_var<T: Real>(tape: &mut Tape<T>, x_hat: Var, x: &[T], y: &[T]) -> Result<Var> {
    check_lengths(&[tape.value(x_hat).len(), x.len(), y.len()])?;
    let speech = spectral_magnitude_loss_var(tape, x, x_hat)?;
    let yv = tape.constant(Tensor::new(&[y.len()], y.to_vec())?);
    let r_hat = tape.sub(yv, x_hat)?;
    let r: Vec<T> = y.iter().zip(x).map(|(&a, &b)| a - b).collect();
    let interference = spectral_magnitude_loss_var(tape, &r, r_hat)?;
    tape.add(speech, interference)
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at 80 dB.
///
/// The reference `s` is scaled by `<s_hat, s> / |s|^2`; signal and
/// distortion powers are floored at 1e-12.
pub fn si_sdr<T: Real>(s_hat: &[T], s: &[T]) -> Result<f64> {
    check_lengths(&[s_hat.len(), s.len()])?;
    let energy: f64 = s.iter().map(|v| v.f64() * v.f64()).sum();
    if energy <= 0.0 {
        return Err(Error::Degenerate("SI-SDR reference has zero energy".into()));
    }
    let inner: f64 = s_hat.iter().zip(s).map(|(a, b)| a.f64() * b.f64()).sum();
    let alpha = inner / energy;
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (a, b) in s_hat.iter().zip(s) {
        let target = alpha * b.f64();
        signal += target * target;
        let e = target - a.f64();
        noise += e * e;
    }
    let db = 10.0 * (signal.max(SI_SDR_EPS) / noise.max(SI_SDR_EPS)).log10();
    Ok(db.min(SI_SDR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let s = stft(&[0.0f64; 1000], 512, 256).unwrap();
        assert_eq!(s.frames, 3);
        assert_eq!(s.bins, 257);
        assert!(s.re.iter().chain(&s.im).all(|&v| v == 0.0));
    }

    #[test]
    fn short_signal_pads_to_one_frame() {
        let s = stft(&[1.0f64; 10], 512, 256).unwrap();
        assert_eq!(s.frames, 1);
    }

    #[test]
    fn bad_window_rejected() {
        assert!(stft(&[1.0f64; 10], 500, 256).is_err());
        assert!(stft(&[1.0f64; 10], 512, 600).is_err());
    }

    #[test]
    fn perfect_estimate_has_zero_loss() {
        let x: Vec<f64> = (0..700).map(|i| (i as f64 * 0.1).sin()).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + (i as f64 * 0.7).cos()).collect();
        assert_eq!(pcm_loss(&x, &x, &y).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            pcm_loss(&[0.0f64; 10], &[0.0; 11], &[0.0; 10]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn si_sdr_hand_case() {
        assert_eq!(si_sdr(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn si_sdr_scaled_copy_is_capped() {
        let s = [0.3f64, -1.0, 2.0, 0.5];
        let scaled: Vec<f64> = s.iter().map(|v| -2.5 * v).collect();
        assert_eq!(si_sdr(&scaled, &s).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_zero_reference_rejected() {
        assert!(matches!(si_sdr(&[1.0f64, 2.0], &[0.0, 0.0]), Err(Error::Degenerate(_))));
    }
}
