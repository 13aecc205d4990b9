//! Shoebox room impulse responses by the image-source method.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Taps of the fractional-delay kernel.
pub const SINC_TAPS: usize = 81;

#[derive(Clone, Debug, PartialEq)]
pub struct RoomSpec {
    /// Length, width, height in metres.
    pub dims: [f64; 3],
    /// Energy absorption coefficient shared by all six walls.
    pub absorption: f64,
    pub speed_of_sound: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], absorption: f64) -> Self {
        Self {
            dims,
            absorption,
            speed_of_sound: SPEED_OF_SOUND,
            sample_rate: crate::framing::SAMPLE_RATE as f64,
            seed: 0,
        }
    }

    /// Wall reflection coefficient `sqrt(1 - absorption)`.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.absorption).sqrt()
    }

    pub fn contains(&self, p: &Point, margin: f64) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > margin && x < d - margin)
    }

    /// Propagation delay in samples over `distance` metres.
    pub fn delay_samples(&self, distance: f64) -> f64 {
        distance * self.sample_rate / self.speed_of_sound
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    pub reflections: u32,
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// All mirror images of `src` with at most `order` wall reflections,
/// including the source itself.
pub fn image_sources(room: &RoomSpec, src: &Point, order: u32) -> Vec<ImageSource> {
    let o = order as i64;
    // per-axis candidates: (coordinate, reflections along that axis)
    let axis = |d: usize| -> Vec<(f64, u32)> {
        let mut v = Vec::new();
        for n in -o..=o {
            for u in 0..=1i64 {
                let refl = (2 * n - u).unsigned_abs() as u32;
                if refl <= order {
                    let sign = if u == 0 { 1.0 } else { -1.0 };
                    v.push((sign * src[d] + 2.0 * n as f64 * room.dims[d], refl));
                }
            }
        }
        v
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let mut out = Vec::new();
    for &(x, rx) in &xs {
        for &(y, ry) in &ys {
            if rx + ry > order {
                continue;
            }
            for &(z, rz) in &zs {
                if rx + ry + rz <= order {
                    out.push(ImageSource {
                        position: [x, y, z],
                        reflections: rx + ry + rz,
                    });
                }
            }
        }
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Adds `amplitude` delayed by a fractional `delay` (in samples) through an
/// 81-tap Hann-tapered sinc centred on the nearest lower integer.
fn add_fractional_tap(rir: &mut [f64], delay: f64, amplitude: f64) {
    let half = (SINC_TAPS / 2) as i64;
    let centre = delay.floor() as i64;
    let width = half as f64 + 1.0;
    for k in centre - half..=centre + half {
        if k < 0 || k as usize >= rir.len() {
            continue;
        }
        let t = k as f64 - delay;
        let taper = 0.5 * (1.0 + (PI * t / width).cos());
        rir[k as usize] += amplitude * sinc(t) * taper;
    }
}

/// Impulse response from `src` to `mic` up to `order` reflections. Each image
/// contributes `β^reflections / (4π d)` at delay `d · fs / c`.
pub fn simulate_rir(room: &RoomSpec, src: &Point, mic: &Point, order: u32) -> Result<Vec<f64>> {
    for (what, p) in [("source", src), ("microphone", mic)] {
        if !room.contains(p, 0.0) {
            return Err(Error::Geometry(format!(
                "{what} {p:?} is outside the {:?} m room",
                room.dims
            )));
        }
    }
    if distance(src, mic) <= 0.0 {
        return Err(Error::Geometry("source and microphone coincide".into()));
    }
    let beta = room.reflection();
    let taps: Vec<(f64, f64)> = image_sources(room, src, order)
        .iter()
        .map(|img| {
            let d = distance(&img.position, mic);
            (
                room.delay_samples(d),
                beta.powi(img.reflections as i32) / (4.0 * PI * d),
            )
        })
        .collect();
    let max_delay = taps.iter().map(|t| t.0).fold(0.0, f64::max);
    let mut rir = vec![0.0; max_delay.ceil() as usize + SINC_TAPS / 2 + 2];
    for (delay, amplitude) in taps {
        add_fractional_tap(&mut rir, delay, amplitude);
    }
    Ok(rir)
}

/// `count` microphones evenly spaced on a horizontal circle.
pub fn circular_array(center: &Point, radius: f64, count: usize) -> Vec<Point> {
    (0..count)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / count as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]]
        })
        .collect()
}
