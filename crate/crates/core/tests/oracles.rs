//! Values and behaviours checked against independent computations.

use std::f64::consts::PI;

use dllrnn_core::framing::{latency_check, FrameSpec, Waveform};
use dllrnn_core::loss::{hann, pcm_loss, stft};
use dllrnn_core::model::{count_params, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct O(N²) one-sided DFT of one Hann-windowed frame.
fn direct_dft(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    (0..=n / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, (&x, &wi)) in frame.iter().zip(&w).enumerate() {
                let ph = 2.0 * PI * (k * i) as f64 / n as f64;
                re += wi * x * ph.cos();
                im -= wi * x * ph.sin();
            }
            (re, im)
        })
        .collect()
}

#[test]
fn hann_window_is_periodic() {
    let w: Vec<f64> = hann(8);
    let expected = [
        0.0,
        0.146446609406726,
        0.5,
        0.853553390593274,
        1.0,
        0.853553390593274,
        0.5,
        0.146446609406726,
    ];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn stft_matches_direct_dft_on_every_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (win, hop) = (64, 16);
    let s = stft(&x, win, hop).unwrap();
    assert_eq!(s.frames, 1 + (1000 - win).div_ceil(hop));
    for t in 0..s.frames {
        let mut frame = vec![0.0; win];
        for (i, v) in frame.iter_mut().enumerate() {
            if let Some(&xv) = x.get(t * hop + i) {
                *v = xv;
            }
        }
        for (k, (re, im)) in direct_dft(&frame).into_iter().enumerate() {
            let idx = t * s.bins + k;
            assert!((s.re[idx] - re).abs() < 1e-10, "frame {t} bin {k}");
            assert!((s.im[idx] - im).abs() < 1e-10, "frame {t} bin {k}");
        }
    }
}

#[test]
fn impulse_has_flat_magnitude() {
    let w: Vec<f64> = hann(512);
    for at in [0usize, 100] {
        let mut x = vec![0.0f64; 512];
        x[at] = 1.0;
        let s = stft(&x, 512, 256).unwrap();
        for k in 0..s.bins {
            let mag = s.re[k].hypot(s.im[k]);
            assert!((mag - w[at]).abs() < 1e-12, "impulse at {at}, bin {k}");
        }
    }
}

#[test]
fn stft_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f64> = (0..900).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..900).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let (sa, sb, sab) = (
        stft(&a, 512, 256).unwrap(),
        stft(&b, 512, 256).unwrap(),
        stft(&ab, 512, 256).unwrap(),
    );
    for i in 0..sab.re.len() {
        assert!((sab.re[i] - sa.re[i] - sb.re[i]).abs() < 1e-10);
        assert!((sab.im[i] - sa.im[i] - sb.im[i]).abs() < 1e-10);
    }
}

#[test]
fn pcm_loss_of_bin_eight_sine_against_silence() {
    // One 512-sample frame; bins 7, 8, 9 carry 64, 128, 64 in one quadrature
    // component each, so each term is 256 / 257 and the loss is twice that.
    let x: Vec<f64> = (0..512).map(|n| (2.0 * PI * 8.0 * n as f64 / 512.0).sin()).collect();
    let zero = vec![0.0; 512];
    let loss = pcm_loss(&zero, &x, &x).unwrap();
    assert!((loss - 1.9922178988330015).abs() < 1e-9, "{loss}");
    assert!((loss - 512.0 / 257.0).abs() < 1e-9);
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: 2,
        hidden: 8,
        spatial: 2,
        blocks: 2,
        frame: FrameSpec::new(32, 8, 4).unwrap(),
    }
}

fn random_waveform<T: dllrnn_core::Real>(seed: u64, c: usize, n: usize) -> Waveform<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..c)
            .map(|_| (0..n).map(|_| T::c(rng.gen_range(-1.0..1.0))).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn streaming_matches_batch_bit_exactly() {
    for (cfg, n) in [(tiny_config(), 301), (ModelConfig::default(), 700)] {
        let model = Model::<f32>::init(cfg, 5).unwrap();
        let y = random_waveform::<f32>(6, cfg.channels, n);
        let scale = 0.75f32;
        let batch = model.enhance_with_scale(&y, scale).unwrap();
        for chunk in [1usize, 7, 16, 64, n] {
            let mut s = model.streaming(scale);
            let mut out = Vec::new();
            let mut start = 0;
            while start < n {
                let end = (start + chunk).min(n);
                let parts: Vec<&[f32]> = y.channels().iter().map(|c| &c[start..end]).collect();
                out.extend(s.push(&parts).unwrap());
                start = end;
            }
            out.extend(s.finish().unwrap());
            assert_eq!(out.len(), n);
            let same = out.iter().zip(&batch).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{} chunk {chunk}", cfg.name());
        }
    }
}

#[test]
fn assembled_model_meets_latency_contract() {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::init(cfg, 7).unwrap();
    let y = random_waveform::<f32>(8, cfg.channels, 800);
    let report = latency_check(|w| model.enhance_with_scale(w, 1.0), &y, &cfg.frame, 8, 9).unwrap();
    for t in &report.trials {
        let n = t.earliest_affected.expect("perturbation must reach the output");
        assert!(n + cfg.frame.latency() > t.m);
    }
}

#[test]
fn tiny_model_output_is_finite_across_seeds() {
    let cfg = tiny_config();
    let y = random_waveform::<f32>(10, 2, 200);
    for seed in 0..100 {
        let out = Model::<f32>::init(cfg, seed).unwrap().enhance(&y).unwrap();
        assert_eq!(out.len(), 200);
        assert!(out.iter().all(|v| v.is_finite()), "seed {seed}");
    }
}

#[test]
fn counted_parameters_equal_store_size() {
    for (f, s, b) in [(64, 8, 8), (64, 1, 8), (32, 8, 8), (8, 3, 5), (4, 1, 1)] {
        let cfg = ModelConfig::table(f, s, b);
        let m = Model::<f32>::init(cfg, 0).unwrap();
        assert_eq!(m.params().num_scalars(), count_params(&cfg), "{}", cfg.name());
    }
}

#[test]
fn parameter_count_is_monotone() {
    let mut prev = 0;
    for s in 1..=10 {
        let n = count_params(&ModelConfig::table(64, s, 8));
        assert!(n > prev);
        prev = n;
    }
    let mut prev = 0;
    for f in [8, 16, 32, 64, 128, 256] {
        let n = count_params(&ModelConfig::table(f, 8, 8));
        assert!(n > prev);
        prev = n;
    }
    let delta = (count_params(&ModelConfig::table(64, 8, 8)) - count_params(&ModelConfig::table(64, 1, 8))) as f64;
    assert!((delta / 0.15e6 - 1.0).abs() <= 0.30, "{delta}");
}
