//! Multichannel mixture simulation: image-method RIRs for a circular array,
//! speech plus several noise sources, and channel-summed SNR scaling.

pub mod external;
pub mod mixture;
pub mod rir;
pub mod sources;

pub use external::WavSources;
pub use mixture::{
    achieved_snr, draw_room, generate_example, generate_example_with, spatialize_mixture, GeneratedExample,
    MixtureExample, RoomDraw, SimRanges, SourceBank, SyntheticSources,
};
pub use rir::{circular_array, image_sources, simulate_rir, ImageSource, Point, RoomSpec};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 || h.is_empty() {
        return vec![0.0; n];
    }
    let full = n + h.len() - 1;
    if (n as u64) * (h.len() as u64) < 1 << 16 {
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(h.len() - 1);
            for j in lo..=i {
                *o += x[j] * h[i - j];
            }
        }
        return out;
    }
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(size, Complex::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_and_direct_convolution_agree() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..200).map(|i| (-(i as f64) / 30.0).exp()).collect();
        let fast = convolve_truncated(&x, &h);
        for i in (0..3000).step_by(97) {
            let direct: f64 = (0..=i.min(199)).map(|j| x[i - j] * h[j]).sum();
            assert!((fast[i] - direct).abs() < 1e-9);
        }
    }
}
