//! Reverse-mode gradients against central finite differences in f64.

use dllrnn_core::framing::{overlap_add_var, variance_scale, FrameSpec, Waveform};
use dllrnn_core::loss::{pcm_loss_var, stft_var};
use dllrnn_core::model::{Model, ModelConfig};
use dllrnn_core::nn::{self, LstmState};
use dllrnn_core::tape::{Tape, Var};
use dllrnn_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor per unit of loss magnitude. Central differences carry
/// rounding noise near `eps * |loss| / STEP`, so gradients far below the
/// loss scale cannot be resolved to `TOLERANCE` relative.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64, loss: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR * loss.abs().max(1.0))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so every element's
/// gradient differs.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), &shape));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Checks every element of every input of `f`.
fn check<F>(inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars);
        let loss = weighted_sum(&mut tape, out, 99);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(inputs);
    tape.backward(loss).unwrap();
    let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();
    let value_at = |vals: &[Tensor<f64>]| {
        let (tape, _, loss) = eval(vals);
        tape.value(loss).data()[0]
    };
    let base = value_at(inputs);
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= STEP;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * STEP);
            let analytic = grads[i].data()[k];
            let e = rel_err(analytic, numeric, base);
            assert!(
                e < TOLERANCE,
                "input {i} element {k}: analytic {analytic}, numeric {numeric}, rel {e}"
            );
            worst = worst.max(e);
        }
    }
    assert!(worst < TOLERANCE);
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_gradient() {
    let mut r = rng(1);
    check(&[random(&mut r, &[3, 4]), random(&mut r, &[4, 2])], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
}

#[test]
fn broadcast_binary_gradients() {
    let mut r = rng(2);
    let a = random(&mut r, &[2, 3, 4]);
    let b = random(&mut r, &[1, 3, 4]);
    check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
    check(&[a, b], |t, v| t.mul(v[0], v[1]).unwrap());
}

#[test]
fn unary_gradients() {
    let mut r = rng(3);
    let x = random(&mut r, &[5, 3]);
    check(std::slice::from_ref(&x), |t, v| t.sigmoid(v[0]));
    check(std::slice::from_ref(&x), |t, v| t.tanh(v[0]));
    check(std::slice::from_ref(&x), |t, v| t.abs(v[0]));
    check(&[x], |t, v| t.scale(v[0], -1.7));
}

#[test]
fn structural_gradients() {
    let mut r = rng(4);
    let a = random(&mut r, &[2, 3, 4]);
    let b = random(&mut r, &[3, 3, 4]);
    check(&[a.clone(), b], |t, v| t.concat(&[v[0], v[1]], 0).unwrap());
    check(std::slice::from_ref(&a), |t, v| t.slice(v[0], 1, 1, 2).unwrap());
    check(std::slice::from_ref(&a), |t, v| t.reshape(v[0], &[6, 4]).unwrap());
    check(&[a], |t, v| {
        let m = t.mean(v[0]);
        t.reshape(m, &[1]).unwrap()
    });
}

#[test]
fn spatial_conv_gradient() {
    let mut r = rng(5);
    let (s_in, s_out, frames, hidden) = (3, 4, 5, 6);
    check(
        &[
            random(&mut r, &[s_in, frames, hidden]),
            random(&mut r, &[hidden, s_out, s_in]),
            random(&mut r, &[s_out, hidden]),
        ],
        |t, v| nn::spatial_conv(t, v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn layer_norm_gradient() {
    let mut r = rng(6);
    check(
        &[random(&mut r, &[2, 3, 6]), random(&mut r, &[6]), random(&mut r, &[6])],
        |t, v| nn::layer_norm(t, v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn prelu_gradient() {
    let mut r = rng(7);
    check(&[random(&mut r, &[4, 5]), Tensor::scalar(0.25)], |t, v| {
        nn::prelu(t, v[0], v[1]).unwrap()
    });
}

#[test]
fn linear_gradient() {
    let mut r = rng(8);
    check(
        &[
            random(&mut r, &[2, 3, 4]),
            random(&mut r, &[5, 4]),
            random(&mut r, &[5]),
        ],
        |t, v| nn::linear(t, v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn lstm_gradient_through_time() {
    let mut r = rng(9);
    let (frames, f) = (4, 3);
    check(
        &[
            random(&mut r, &[frames, f]),
            random(&mut r, &[4 * f, f]),
            random(&mut r, &[4 * f, f]),
            random(&mut r, &[4 * f]),
        ],
        |t, v| nn::lstm(t, v[0], v[1], v[2], v[3], &LstmState::zeros(f)).unwrap().0,
    );
}

#[test]
fn overlap_add_gradient() {
    let mut r = rng(10);
    let spec = FrameSpec::new(8, 4, 2).unwrap();
    let n = 11;
    let frames = spec.num_frames(n);
    check(&[random(&mut r, &[1, frames, spec.output])], |t, v| {
        overlap_add_var(t, v[0], &spec, n).unwrap()
    });
}

#[test]
fn stft_gradient() {
    let mut r = rng(11);
    check(&[random(&mut r, &[40])], |t, v| stft_var(t, v[0], 16, 8).unwrap());
}

#[test]
fn pcm_loss_gradient() {
    let mut r = rng(12);
    let n = 700;
    let x = random(&mut r, &[n]).into_data();
    let y: Vec<f64> = x.iter().map(|v| v + r.gen_range(-0.5..0.5)).collect();
    check(&[random(&mut r, &[n])], |t, v| {
        let l = pcm_loss_var(t, v[0], &x, &y).unwrap();
        t.reshape(l, &[1]).unwrap()
    });
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

#[test]
fn full_model_gradient_on_sampled_parameters() {
    let cfg = tiny_config();
    let mut model = Model::<f64>::init(cfg, 21).unwrap();
    let mut r = rng(22);
    // move every parameter off its structured initial value
    for v in model.params_mut().values_mut() {
        v.data_mut().iter_mut().for_each(|x| *x += r.gen_range(-0.1..0.1));
    }
    let n = 256;
    let channels: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let y = Waveform::new(channels).unwrap();
    let y = y.scaled(variance_scale(&y).unwrap());
    let target: Vec<f64> = y.channel(0).iter().map(|v| 0.5 * v + r.gen_range(-0.1..0.1)).collect();
    let reference = y.channel(0).to_vec();

    let loss_of = |m: &Model<f64>, grads: bool| {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, grads);
        let est = m.forward_normalized(&mut tape, &vars, &y).unwrap();
        let loss = pcm_loss_var(&mut tape, est, &target, &reference).unwrap();
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = loss_of(&model, true);
    tape.backward(loss).unwrap();
    model.accumulate_grads(&mut tape, &vars, 1.0);
    let grads = model.params().grads().to_vec();

    let mut picks: Vec<(usize, usize)> = Vec::new();
    // one element from every array first, then random extras up to 50
    for (i, g) in grads.iter().enumerate() {
        picks.push((i, r.gen_range(0..g.len())));
    }
    while picks.len() < 50 {
        let i = r.gen_range(0..grads.len());
        picks.push((i, r.gen_range(0..grads[i].len())));
    }
    picks.truncate(50);
    let value = |m: &Model<f64>| {
        let (tape, _, loss) = loss_of(m, false);
        tape.value(loss).data()[0]
    };
    let base = value(&model);
    for (i, k) in picks {
        let mut plus = model.clone();
        plus.params_mut().values_mut()[i].data_mut()[k] += STEP;
        let mut minus = model.clone();
        minus.params_mut().values_mut()[i].data_mut()[k] -= STEP;
        let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
        let analytic = grads[i].data()[k];
        let e = rel_err(analytic, numeric, base);
        assert!(
            e < TOLERANCE,
            "{}[{k}]: analytic {analytic}, numeric {numeric}, rel {e}",
            model.params().names()[i]
        );
    }
}
