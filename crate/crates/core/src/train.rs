//! AMSGrad-Adam, global gradient-norm clipping and the training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::framing::{variance_scale, Waveform};
use crate::loss::pcm_loss_var;
use crate::model::{Model, ParamStore};
use crate::rng::substream;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_CLIP: f64 = 0.03;

/// AMSGrad moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub v_max: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || params.values().iter().map(Tensor::zeros_like).collect::<Vec<_>>();
        Self {
            m: zeros(),
            v: zeros(),
            v_max: zeros(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected AMSGrad update using the stored gradients.
///
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptState<T>) -> Result<()> {
    let (names, values, grads) = params.split_mut();
    if state.m.len() != values.len() {
        return Err(Error::dim("optimizer state does not match the parameter store"));
    }
    for ((name, v), g) in names.iter().zip(values.iter()).zip(grads.iter()) {
        if g.shape() != v.shape() {
            return Err(Error::dim(format!("gradient shape mismatch for `{name}`")));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::c(state.beta1), T::c(state.beta2));
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2_sqrt = T::c((1.0 - state.beta2.powi(t)).sqrt());
    let step_size = T::c(state.lr / bc1);
    let eps = T::c(state.eps);
    let one = T::one();
    for (i, (p, g)) in values.iter_mut().zip(grads.iter()).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let vmax = state.v_max[i].data_mut();
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            if v[k] > vmax[k] {
                vmax[k] = v[k];
            }
            let denom = vmax[k].sqrt() / bc2_sqrt + eps;
            *w -= step_size * m[k] / denom;
        }
    }
    Ok(())
}

/// Global L2 norm over all gradients.
pub fn grad_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(Tensor::norm_sq_f64).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = T::c(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// A training pair: multichannel mixture and the direct-path speech at the
/// reference (first) microphone.
#[derive(Clone, Debug)]
pub struct TrainExample<T> {
    pub mixture: Waveform<T>,
    pub target: Vec<T>,
}

impl<T: Real> TrainExample<T> {
    pub fn new(mixture: Waveform<T>, target: Vec<T>) -> Result<Self> {
        if target.len() != mixture.len() {
            return Err(Error::dim(format!(
                "target has {} samples, mixture has {}",
                target.len(),
                mixture.len()
            )));
        }
        Ok(Self { mixture, target })
    }

    fn crop(&self, start: usize, len: usize) -> Self {
        Self {
            mixture: self.mixture.crop(start, len),
            target: self.target[start..start + len].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Crop length in samples; examples at most this long are used whole.
    pub chunk: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
}

impl Default for Schedule {
    /// 200 epochs, batches of 16, 4 s chunks.
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            chunk: 4 * crate::framing::SAMPLE_RATE as usize,
            lr: DEFAULT_LR,
            clip: DEFAULT_CLIP,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk == 0 {
            return Err(Error::Config("batch size and chunk length must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_time: f64,
}

impl StepRecord {
    /// `step=… epoch=… loss=… grad_norm=… wall_s=…`
    pub fn to_line(&self) -> String {
        format!(
            "step={} epoch={} loss={:e} grad_norm={:e} wall_s={:.3}",
            self.step, self.epoch, self.loss, self.grad_norm, self.wall_time
        )
    }
}

/// PCM loss of the model on one example, computed on the variance-normalized
/// scale of the mixture. Adds `weight × gradient` into the parameter store.
pub fn example_loss<T: Real>(model: &mut Model<T>, ex: &TrainExample<T>, weight: T) -> Result<f64> {
    let scale = variance_scale(&ex.mixture)?;
    let y = ex.mixture.scaled(scale);
    let target: Vec<T> = ex.target.iter().map(|&v| v * scale).collect();
    let reference = y.channel(0).to_vec();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let estimate = model.forward_normalized(&mut tape, &vars, &y)?;
    let loss = pcm_loss_var(&mut tape, estimate, &target, &reference)?;
    let value = tape.value(loss).data()[0].f64();
    tape.backward(loss)?;
    model.accumulate_grads(&mut tape, &vars, weight);
    Ok(value)
}

/// Optimizer loop state. Every random choice derives from
/// `(seed, epoch, batch, slot)`, so resuming from a saved position replays
/// exactly.
pub struct Trainer<T> {
    pub model: Model<T>,
    pub opt: OptState<T>,
    pub schedule: Schedule,
    /// Epochs completed.
    pub epoch: u64,
    /// Batches completed in the current epoch.
    pub batch: u64,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let opt = OptState::new(model.params(), schedule.lr);
        Ok(Self::resume(model, opt, 0, 0, schedule))
    }

    pub fn resume(model: Model<T>, mut opt: OptState<T>, epoch: u64, batch: u64, schedule: Schedule) -> Self {
        opt.lr = schedule.lr;
        Self {
            model,
            opt,
            schedule,
            epoch,
            batch,
            started: Instant::now(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    /// Forward, backward, clip and update on one batch.
    pub fn train_step(&mut self, batch: &[TrainExample<T>]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        self.model.params_mut().zero_grad();
        let weight = T::one() / T::c(batch.len() as f64);
        let mut loss = 0.0;
        for ex in batch {
            loss += example_loss(&mut self.model, ex, weight)?;
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss became non-finite at step {}",
                self.opt.step + 1
            )));
        }
        let norm = clip_grad_norm(self.model.params_mut().grads_mut(), self.schedule.clip);
        adam_step(self.model.params_mut(), &mut self.opt)?;
        Ok(StepRecord {
            step: self.opt.step,
            epoch: self.epoch,
            loss,
            grad_norm: norm,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// One pass over `data` in a seeded shuffled order, cropping a seeded
    /// random chunk from each example. Returns the mean step loss.
    pub fn run_epoch(&mut self, data: &[TrainExample<T>], on_step: &mut dyn FnMut(&StepRecord)) -> Result<f64> {
        Ok(self.run_epoch_until(data, u64::MAX, on_step)?.expect("no step limit"))
    }

    /// Continues the current epoch from batch [`Trainer::batch`] until it
    /// ends or the global step count reaches `step_limit`. Returns the mean
    /// loss of the steps run if the epoch completed, `None` if it stopped
    /// early.
    pub fn run_epoch_until(
        &mut self,
        data: &[TrainExample<T>],
        step_limit: u64,
        on_step: &mut dyn FnMut(&StepRecord),
    ) -> Result<Option<f64>> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let seed = self.schedule.seed;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut substream(seed, &[0x5eed, self.epoch]));
        let batches: Vec<&[usize]> = order.chunks(self.schedule.batch_size).collect();
        if self.batch as usize > batches.len() {
            return Err(Error::Config(format!(
                "resume position batch {} is beyond the {} batches of an epoch",
                self.batch,
                batches.len()
            )));
        }
        let mut total = 0.0;
        let mut steps = 0usize;
        while (self.batch as usize) < batches.len() {
            if self.opt.step >= step_limit {
                return Ok(None);
            }
            let b = self.batch;
            let batch: Vec<TrainExample<T>> = batches[b as usize]
                .iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let ex = &data[i];
                    let n = ex.target.len();
                    if n <= self.schedule.chunk {
                        return ex.clone();
                    }
                    let mut rng = substream(seed, &[0xc0b, self.epoch, b, slot as u64]);
                    ex.crop(rng.gen_range(0..=n - self.schedule.chunk), self.schedule.chunk)
                })
                .collect();
            let rec = self.train_step(&batch)?;
            self.batch += 1;
            total += rec.loss;
            steps += 1;
            on_step(&rec);
        }
        self.epoch += 1;
        self.batch = 0;
        Ok(Some(if steps == 0 { f64::NAN } else { total / steps as f64 }))
    }
}

/// Runs the full schedule; `on_epoch` receives the trainer after each epoch
/// together with that epoch's mean loss.
pub fn fit<T: Real>(
    model: Model<T>,
    data: &[TrainExample<T>],
    schedule: Schedule,
    on_step: &mut dyn FnMut(&StepRecord),
    on_epoch: &mut dyn FnMut(&Trainer<T>, f64) -> Result<()>,
) -> Result<Trainer<T>> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut trainer = Trainer::new(model, schedule)?;
    while (trainer.epoch as usize) < trainer.schedule.epochs {
        let mean = trainer.run_epoch(data, on_step)?;
        on_epoch(&trainer, mean)?;
    }
    Ok(trainer)
}
