//! Layers: spatial convolution, layer normalization, PReLU, LSTM, linear.
//!
//! Each layer has a plain kernel (used by streaming inference) and a tape op
//! built on that kernel, so batch and frame-by-frame inference share one
//! arithmetic path.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{dot, matmul_nn, matmul_nt, matmul_tn, sigmoid, Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

/// Per-hidden-unit spatial filters: `weight` is `F × S_o × S_i`, `bias` is `S_o × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Single-layer LSTM with gates stacked `(input, forget, cell, output)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `weight` is `out × in`; also used for layer-norm gain (`weight`, rank 1)
/// and shift (`bias`).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape matches generated data")
}

impl<T: Real> SpatialConvParams<T> {
    pub fn init<R: Rng>(rng: &mut R, hidden: usize, s_in: usize, s_out: usize) -> Self {
        Self {
            weight: uniform_fan_in(rng, &[hidden, s_out, s_in], s_in),
            bias: Tensor::zeros(&[s_out, hidden]),
        }
    }
}

impl<T: Real> LstmParams<T> {
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let w_ih = uniform_fan_in(rng, &[4 * hidden, input], input);
        let w_hh = uniform_fan_in(rng, &[4 * hidden, hidden], hidden);
        let bias = Tensor::zeros(&[4 * hidden]);
        Self { w_ih, w_hh, bias }
    }
}

impl<T: Real> AffineParams<T> {
    pub fn linear<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_fan_in(rng, &[output, input], input),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn layer_norm(width: usize) -> Self {
        Self {
            weight: Tensor::ones(&[width]),
            bias: Tensor::zeros(&[width]),
        }
    }
}

fn expect_shape<T: Real>(what: &str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::dim(format!(
            "{what}: expected shape {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Spatial convolution

/// `out[o, t, f] = Σ_i W[f, o, i] · x[i, t, f] + b[o, f]`.
pub fn spatial_conv_kernel<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || weight.rank() != 3 {
        return Err(Error::dim(format!(
            "spatial conv needs S×T×F input and F×S_o×S_i weights, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let (s_in, frames, hidden) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s_out = weight.shape()[1];
    expect_shape("spatial conv weight", weight, &[hidden, s_out, s_in])?;
    expect_shape("spatial conv bias", bias, &[s_out, hidden])?;
    let (xd, w, b) = (x.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(s_out * frames * hidden);
    for o in 0..s_out {
        for t in 0..frames {
            for f in 0..hidden {
                let wrow = &w[(f * s_out + o) * s_in..(f * s_out + o + 1) * s_in];
                let mut acc = T::zero();
                for (i, &wv) in wrow.iter().enumerate() {
                    acc += wv * xd[(i * frames + t) * hidden + f];
                }
                out.push(acc + b[o * hidden + f]);
            }
        }
    }
    Tensor::new(&[s_out, frames, hidden], out)
}

pub fn spatial_conv<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let value = spatial_conv_kernel(tape.value(x), tape.value(weight), tape.value(bias))?;
    Ok(tape.record(&[x, weight, bias], value, |ctx| {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let (s_in, frames, hidden) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let s_out = w.shape()[1];
        let (xd, wd, g) = (x.data(), w.data(), ctx.grad.data());
        let mut dx = x.zeros_like();
        let mut dw = w.zeros_like();
        let mut db = Tensor::zeros(&[s_out, hidden]);
        {
            let (dxd, dwd, dbd) = (dx.data_mut(), dw.data_mut(), db.data_mut());
            for o in 0..s_out {
                for t in 0..frames {
                    for f in 0..hidden {
                        let go = g[(o * frames + t) * hidden + f];
                        dbd[o * hidden + f] += go;
                        let wbase = (f * s_out + o) * s_in;
                        for i in 0..s_in {
                            let xi = (i * frames + t) * hidden + f;
                            dxd[xi] += wd[wbase + i] * go;
                            dwd[wbase + i] += xd[xi] * go;
                        }
                    }
                }
            }
        }
        vec![Some(dx), Some(dw), Some(db)]
    }))
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis

pub fn layer_norm_kernel<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let width = x.last_dim();
    expect_shape("layer norm gain", gain, &[width])?;
    expect_shape("layer norm bias", bias, &[width])?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(width) {
        let (mean, inv) = row_stats(row, eps);
        for ((&v, &g), &b) in row.iter().zip(gain.data()).zip(bias.data()) {
            out.push((v - mean) * inv * g + b);
        }
    }
    Tensor::new(x.shape(), out)
}

fn row_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::c(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let eps = T::c(LAYER_NORM_EPS);
    let value = layer_norm_kernel(tape.value(x), tape.value(gain), tape.value(bias), eps)?;
    Ok(tape.record(&[x, gain, bias], value, move |ctx| {
        let (x, gain) = (ctx.inputs[0], ctx.inputs[1].data());
        let width = x.last_dim();
        let n = T::c(width as f64);
        let mut dx = Vec::with_capacity(x.len());
        let mut dgain = vec![T::zero(); width];
        let mut dbias = vec![T::zero(); width];
        let mut xhat = vec![T::zero(); width];
        let mut dxhat = vec![T::zero(); width];
        for (row, grow) in x.data().chunks_exact(width).zip(ctx.grad.data().chunks_exact(width)) {
            let (mean, inv) = row_stats(row, eps);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for f in 0..width {
                xhat[f] = (row[f] - mean) * inv;
                dxhat[f] = grow[f] * gain[f];
                dgain[f] += grow[f] * xhat[f];
                dbias[f] += grow[f];
                sum_d += dxhat[f];
                sum_dx += dxhat[f] * xhat[f];
            }
            for f in 0..width {
                dx.push(inv * (dxhat[f] - sum_d / n - xhat[f] * sum_dx / n));
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(&[width], dgain).unwrap()),
            Some(Tensor::new(&[width], dbias).unwrap()),
        ]
    }))
}

// ---------------------------------------------------------------------------
// PReLU with one shared slope

pub fn prelu_kernel<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

pub fn prelu<T: Real>(tape: &mut Tape<T>, x: Var, slope: Var) -> Result<Var> {
    if tape.value(slope).len() != 1 {
        return Err(Error::dim("PReLU slope must be a single scalar"));
    }
    let a = tape.value(slope).data()[0];
    let value = prelu_kernel(tape.value(x), a);
    Ok(tape.record(&[x, slope], value, |ctx| {
        let (x, a) = (ctx.inputs[0], ctx.inputs[1].data()[0]);
        let mut da = T::zero();
        let dx = x
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&v, &g)| {
                if v >= T::zero() {
                    g
                } else {
                    da += g * v;
                    g * a
                }
            })
            .collect();
        vec![Some(Tensor::new(x.shape(), dx).unwrap()), Some(Tensor::scalar(da))]
    }))
}

// ---------------------------------------------------------------------------
// Linear over the last axis

/// `out[r, o] = W[o] · x[r] + b[o]` for every leading index `r`.
pub fn linear_kernel<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if weight.rank() != 2 {
        return Err(Error::dim(format!(
            "linear weight must be rank 2, got {:?}",
            weight.shape()
        )));
    }
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if x.last_dim() != in_dim {
        return Err(Error::dim(format!(
            "linear layer expects last extent {in_dim}, input has shape {:?}",
            x.shape()
        )));
    }
    expect_shape("linear bias", bias, &[out_dim])?;
    let rows = x.len() / in_dim;
    let mut out = matmul_nt(x.data(), weight.data(), rows, in_dim, out_dim);
    for row in out.chunks_exact_mut(out_dim) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    Tensor::new(&shape, out)
}

pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let value = linear_kernel(tape.value(x), tape.value(weight), tape.value(bias))?;
    Ok(tape.record(&[x, weight, bias], value, |ctx| {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
        let rows = x.len() / in_dim;
        let g = ctx.grad.data();
        let dx = matmul_nn(g, w.data(), rows, out_dim, in_dim);
        let dw = matmul_tn(g, x.data(), out_dim, rows, in_dim);
        let mut db = vec![T::zero(); out_dim];
        for row in g.chunks_exact(out_dim) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(w.shape(), dw).unwrap()),
            Some(Tensor::new(&[out_dim], db).unwrap()),
        ]
    }))
}

// ---------------------------------------------------------------------------
// LSTM

/// Hidden and cell state.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Intermediates kept for backpropagation through time.
struct LstmCache<T> {
    /// Activated gates per step, `T × 4H`, order (i, f, g, o).
    gates: Vec<T>,
    /// Cell state per step, `T × H`.
    cells: Vec<T>,
    initial: LstmState<T>,
}

fn lstm_run<T: Real>(
    x: &Tensor<T>,
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    bias: &Tensor<T>,
    state: &LstmState<T>,
) -> Result<(Tensor<T>, LstmState<T>, LstmCache<T>)> {
    if x.rank() != 2 || w_ih.rank() != 2 {
        return Err(Error::dim(format!(
            "LSTM needs T×F input and 4H×F weights, got {:?} and {:?}",
            x.shape(),
            w_ih.shape()
        )));
    }
    let (frames, input) = (x.shape()[0], x.shape()[1]);
    let hidden = w_ih.shape()[0] / 4;
    expect_shape("LSTM input weights", w_ih, &[4 * hidden, input])?;
    expect_shape("LSTM recurrent weights", w_hh, &[4 * hidden, hidden])?;
    expect_shape("LSTM bias", bias, &[4 * hidden])?;
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::dim(format!("LSTM state must have width {hidden}")));
    }
    let g4 = 4 * hidden;
    let xproj = matmul_nt(x.data(), w_ih.data(), frames, input, g4);
    let (whh, b) = (w_hh.data(), bias.data());
    let mut h = state.h.clone();
    let mut c = state.c.clone();
    let mut out = Vec::with_capacity(frames * hidden);
    let mut gates = Vec::with_capacity(frames * g4);
    let mut cells = Vec::with_capacity(frames * hidden);
    let mut z = vec![T::zero(); g4];
    for t in 0..frames {
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = xproj[t * g4 + r] + b[r] + dot(&whh[r * hidden..(r + 1) * hidden], &h);
        }
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let g = z[2 * hidden + k].tanh();
            let o = sigmoid(z[3 * hidden + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
            z[k] = i;
            z[hidden + k] = f;
            z[2 * hidden + k] = g;
            z[3 * hidden + k] = o;
        }
        gates.extend_from_slice(&z);
        cells.extend_from_slice(&c);
        out.extend_from_slice(&h);
    }
    Ok((
        Tensor::new(&[frames, hidden], out)?,
        LstmState { h, c },
        LstmCache {
            gates,
            cells,
            initial: state.clone(),
        },
    ))
}

/// Runs the recurrence over all frames of `x` (`T × F`) starting from `state`.
/// Returns the per-frame hidden outputs and the final state.
pub fn lstm_kernel<T: Real>(
    x: &Tensor<T>,
    params: &LstmParams<T>,
    state: &LstmState<T>,
) -> Result<(Tensor<T>, LstmState<T>)> {
    let (out, fin, _) = lstm_run(x, &params.w_ih, &params.w_hh, &params.bias, state)?;
    Ok((out, fin))
}

/// Differentiable LSTM over `x: T × F`; gradients flow through time but not
/// into the initial state.
pub fn lstm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    state: &LstmState<T>,
) -> Result<(Var, LstmState<T>)> {
    let (value, fin, cache) = lstm_run(
        tape.value(x),
        tape.value(w_ih),
        tape.value(w_hh),
        tape.value(bias),
        state,
    )?;
    let var = tape.record(&[x, w_ih, w_hh, bias], value, move |ctx| {
        lstm_backward(
            ctx.inputs[0],
            ctx.inputs[1],
            ctx.inputs[2],
            ctx.output,
            ctx.grad,
            &cache,
        )
    });
    Ok((var, fin))
}

fn lstm_backward<T: Real>(
    x: &Tensor<T>,
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    hs: &Tensor<T>,
    grad: &Tensor<T>,
    cache: &LstmCache<T>,
) -> Vec<Option<Tensor<T>>> {
    let (frames, input) = (x.shape()[0], x.shape()[1]);
    let hidden = w_hh.shape()[1];
    let g4 = 4 * hidden;
    let one = T::one();
    let (whh, hsd, g) = (w_hh.data(), hs.data(), grad.data());
    let mut dz = vec![T::zero(); frames * g4];
    let mut dh_next = vec![T::zero(); hidden];
    let mut dc_next = vec![T::zero(); hidden];
    for t in (0..frames).rev() {
        let gate = &cache.gates[t * g4..(t + 1) * g4];
        let c = &cache.cells[t * hidden..(t + 1) * hidden];
        let c_prev = if t == 0 {
            &cache.initial.c[..]
        } else {
            &cache.cells[(t - 1) * hidden..t * hidden]
        };
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        for k in 0..hidden {
            let (i, f, gg, o) = (gate[k], gate[hidden + k], gate[2 * hidden + k], gate[3 * hidden + k]);
            let dh = g[t * hidden + k] + dh_next[k];
            let tc = c[k].tanh();
            let d_o = dh * tc;
            let dc = dh * o * (one - tc * tc) + dc_next[k];
            dc_next[k] = dc * f;
            dzt[k] = dc * gg * i * (one - i);
            dzt[hidden + k] = dc * c_prev[k] * f * (one - f);
            dzt[2 * hidden + k] = dc * i * (one - gg * gg);
            dzt[3 * hidden + k] = d_o * o * (one - o);
        }
        // dh_{t-1} = W_hhᵀ dz_t
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        for (r, &d) in dzt.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            for (acc, &w) in dh_next.iter_mut().zip(&whh[r * hidden..(r + 1) * hidden]) {
                *acc += d * w;
            }
        }
    }
    // h_{t-1} for every step
    let mut h_prev = Vec::with_capacity(frames * hidden);
    h_prev.extend_from_slice(&cache.initial.h);
    h_prev.extend_from_slice(&hsd[..(frames - 1) * hidden]);

    let dx = matmul_nn(&dz, w_ih.data(), frames, g4, input);
    let dw_ih = matmul_tn(&dz, x.data(), g4, frames, input);
    let dw_hh = matmul_tn(&dz, &h_prev, g4, frames, hidden);
    let mut db = vec![T::zero(); g4];
    for row in dz.chunks_exact(g4) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    vec![
        Some(Tensor::new(x.shape(), dx).unwrap()),
        Some(Tensor::new(w_ih.shape(), dw_ih).unwrap()),
        Some(Tensor::new(w_hh.shape(), dw_hh).unwrap()),
        Some(Tensor::new(&[g4], db).unwrap()),
    ]
}
