//! The decoupled spatial-temporal network: encoder, densely connected
//! spatio-temporal blocks, decoder, plus parameter and FLOP accounting.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::framing::{frame_signal, overlap_add_var, variance_scale, FrameSpec, Waveform, SAMPLE_RATE};
use crate::nn::{self, AffineParams, LstmParams, LstmState, SpatialConvParams, PRELU_INIT};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Hyperparameters of one network, named `D-LL-RNN-F-S-B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Microphones `C`.
    pub channels: usize,
    /// Hidden ("frequency") width `F`.
    pub hidden: usize,
    /// Spatial width `S` of interior blocks.
    pub spatial: usize,
    /// Block count `B`.
    pub blocks: usize,
    pub frame: FrameSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::table(64, 8, 8)
    }
}

impl ModelConfig {
    /// Eight microphones and default framing.
    pub fn table(hidden: usize, spatial: usize, blocks: usize) -> Self {
        Self {
            channels: 8,
            hidden,
            spatial,
            blocks,
            frame: FrameSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.spatial == 0 || self.blocks == 0 {
            return Err(Error::Config(format!(
                "channels, hidden, spatial and blocks must all be >= 1, got {self:?}"
            )));
        }
        self.frame.validate()
    }

    /// Spatial width consumed by block `b` (0-based): the encoder output plus
    /// every earlier block's output.
    pub fn block_input_width(&self, b: usize) -> usize {
        self.channels + b * self.spatial
    }

    /// Spatial width emitted by block `b`; the last block emits one stream.
    pub fn block_output_width(&self, b: usize) -> usize {
        if b + 1 == self.blocks {
            1
        } else {
            self.spatial
        }
    }

    pub fn name(&self) -> String {
        format!("D-LL-RNN-{}-{}-{}", self.hidden, self.spatial, self.blocks)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    /// Parses `D-LL-RNN-F-S-B` or the bare `F-S-B`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.strip_prefix("D-LL-RNN-").unwrap_or(s);
        let parts: Vec<_> = body.split('-').collect();
        let bad = || Error::Config(format!("`{s}` is not of the form D-LL-RNN-F-S-B"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let cfg = Self::table(nums[0], nums[1], nums[2]);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named trainable arrays with gradients, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.grads.push(value.zeros_like());
        self.values.push(value);
        self.names.push(name);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.grads
    }

    /// Values and gradients split for simultaneous mutable access.
    pub fn split_mut(&mut self) -> (&[String], &mut [Tensor<T>], &mut [Tensor<T>]) {
        (&self.names, &mut self.values, &mut self.grads)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
        }
    }
}

const ENCODER_PARAMS: usize = 5;
const BLOCK_PARAMS: usize = 10;

/// Parameter names and shapes in store order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (f, fr) = (config.hidden, config.frame);
    let mut layout = vec![
        ("encoder.weight".to_string(), vec![f, fr.input]),
        ("encoder.bias".to_string(), vec![f]),
        ("encoder.norm.gain".to_string(), vec![f]),
        ("encoder.norm.bias".to_string(), vec![f]),
        ("encoder.prelu".to_string(), vec![1]),
    ];
    for b in 0..config.blocks {
        let (d, s) = (config.block_input_width(b), config.block_output_width(b) + 1);
        let p = |n: &str| format!("block{b}.{n}");
        layout.extend([
            (p("conv.weight"), vec![f, s, d]),
            (p("conv.bias"), vec![s, f]),
            (p("norm.gain"), vec![f]),
            (p("norm.bias"), vec![f]),
            (p("prelu"), vec![1]),
            (p("lstm.w_ih"), vec![4 * f, f]),
            (p("lstm.w_hh"), vec![4 * f, f]),
            (p("lstm.bias"), vec![4 * f]),
            (p("linear.weight"), vec![f, f]),
            (p("linear.bias"), vec![f]),
        ]);
    }
    layout.push(("decoder.weight".to_string(), vec![fr.output, f]));
    layout.push(("decoder.bias".to_string(), vec![fr.output]));
    layout
}

/// Exact number of trainable scalars, derived from the layer shapes.
pub fn count_params(config: &ModelConfig) -> usize {
    let (f, fr) = (config.hidden, config.frame);
    let encoder = f * fr.input + f + 2 * f + 1;
    let blocks: usize = (0..config.blocks)
        .map(|b| {
            let (d, s) = (config.block_input_width(b), config.block_output_width(b) + 1);
            let conv = f * s * d + s * f;
            let norm = 2 * f + 1;
            let lstm = 8 * f * f + 4 * f;
            let post = f * f + f;
            conv + norm + lstm + post
        })
        .sum();
    let decoder = fr.output * f + fr.output;
    encoder + blocks + decoder
}

/// Multiply-accumulates of the matrix contractions for one frame.
pub fn macs_per_frame(config: &ModelConfig) -> usize {
    let (f, fr) = (config.hidden, config.frame);
    let encoder = config.channels * fr.input * f;
    let blocks: usize = (0..config.blocks)
        .map(|b| {
            let (d, s) = (config.block_input_width(b), config.block_output_width(b) + 1);
            f * s * d + 8 * f * f + f * f
        })
        .sum();
    encoder + blocks + f * fr.output
}

/// FLOPs for `seconds` of audio: 2 × MACs of every matrix-style contraction
/// (encoder, spatial convs, LSTM gates, post-LSTM linear, decoder) per frame,
/// at `16000 / hop` frames per second. Elementwise, normalization and
/// activation work is not counted.
pub fn count_flops(config: &ModelConfig, seconds: f64) -> f64 {
    let frames_per_second = SAMPLE_RATE as f64 / config.frame.hop as f64;
    2.0 * macs_per_frame(config) as f64 * frames_per_second * seconds
}

/// Param-store views of one spatio-temporal block.
struct BlockVars {
    conv_w: Var,
    conv_b: Var,
    norm_g: Var,
    norm_b: Var,
    prelu: Var,
    w_ih: Var,
    w_hh: Var,
    lstm_b: Var,
    lin_w: Var,
    lin_b: Var,
}

impl BlockVars {
    fn new(v: &[Var]) -> Self {
        Self {
            conv_w: v[0],
            conv_b: v[1],
            norm_g: v[2],
            norm_b: v[3],
            prelu: v[4],
            w_ih: v[5],
            w_hh: v[6],
            lstm_b: v[7],
            lin_w: v[8],
            lin_b: v[9],
        }
    }
}

/// One spatio-temporal block on the tape: `D × T × F → S_out × T × F`.
///
/// Spatial conv to `S_out + 1` streams, layer norm, PReLU; stream 0 runs
/// through the LSTM and a linear layer and multiplies the other `S_out`.
fn st_block<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockVars, s_out: usize) -> Result<Var> {
    let z = nn::spatial_conv(tape, x, p.conv_w, p.conv_b)?;
    let z = nn::layer_norm(tape, z, p.norm_g, p.norm_b)?;
    let z = nn::prelu(tape, z, p.prelu)?;
    let shape = tape.value(z).shape().to_vec();
    let (frames, hidden) = (shape[1], shape[2]);
    let temporal = tape.slice(z, 0, 0, 1)?;
    let temporal = tape.reshape(temporal, &[frames, hidden])?;
    let (temporal, _) = nn::lstm(tape, temporal, p.w_ih, p.w_hh, p.lstm_b, &LstmState::zeros(hidden))?;
    let temporal = nn::linear(tape, temporal, p.lin_w, p.lin_b)?;
    let temporal = tape.reshape(temporal, &[1, frames, hidden])?;
    let spatial = tape.slice(z, 0, 1, s_out)?;
    tape.mul(spatial, temporal)
}

/// Standalone spatio-temporal block, for direct use and testing.
pub struct StBlock<T> {
    pub conv: SpatialConvParams<T>,
    pub norm: AffineParams<T>,
    pub prelu: T,
    pub lstm: LstmParams<T>,
    pub linear: AffineParams<T>,
}

impl<T: Real> StBlock<T> {
    pub fn init(seed: u64, input_width: usize, hidden: usize, is_final: bool, spatial: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_out = if is_final { 1 } else { spatial };
        Self {
            conv: SpatialConvParams::init(&mut rng, hidden, input_width, s_out + 1),
            norm: AffineParams::layer_norm(hidden),
            prelu: T::c(PRELU_INIT),
            lstm: LstmParams::init(&mut rng, hidden, hidden),
            linear: AffineParams::linear(&mut rng, hidden, hidden),
        }
    }

    pub fn output_width(&self) -> usize {
        self.conv.weight.shape()[1] - 1
    }

    /// Registers the block's parameters on `tape` and runs it on `x`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut vars = Vec::with_capacity(BLOCK_PARAMS);
        for t in [
            &self.conv.weight,
            &self.conv.bias,
            &self.norm.weight,
            &self.norm.bias,
            &Tensor::scalar(self.prelu),
            &self.lstm.w_ih,
            &self.lstm.w_hh,
            &self.lstm.bias,
            &self.linear.weight,
            &self.linear.bias,
        ] {
            vars.push(tape.param(t.clone()));
        }
        let in_width = self.conv.weight.shape()[2];
        if tape.value(x).rank() != 3 || tape.value(x).shape()[0] != in_width {
            return Err(Error::dim(format!(
                "block expects {in_width} input streams, got shape {:?}",
                tape.value(x).shape()
            )));
        }
        st_block(tape, x, &BlockVars::new(&vars), self.output_width())
    }
}

/// Network parameters plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero, layer-norm gain 1, PReLU 0.25.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, fr) = (config.hidden, config.frame);
        let mut params = ParamStore::default();
        let enc = AffineParams::<T>::linear(&mut rng, fr.input, f);
        let enc_norm = AffineParams::<T>::layer_norm(f);
        params.insert("encoder.weight", enc.weight)?;
        params.insert("encoder.bias", enc.bias)?;
        params.insert("encoder.norm.gain", enc_norm.weight)?;
        params.insert("encoder.norm.bias", enc_norm.bias)?;
        params.insert("encoder.prelu", Tensor::scalar(T::c(PRELU_INIT)))?;
        for b in 0..config.blocks {
            let (d, s) = (config.block_input_width(b), config.block_output_width(b) + 1);
            let conv = SpatialConvParams::<T>::init(&mut rng, f, d, s);
            let norm = AffineParams::<T>::layer_norm(f);
            let lstm = LstmParams::<T>::init(&mut rng, f, f);
            let lin = AffineParams::<T>::linear(&mut rng, f, f);
            let p = |n: &str| format!("block{b}.{n}");
            params.insert(p("conv.weight"), conv.weight)?;
            params.insert(p("conv.bias"), conv.bias)?;
            params.insert(p("norm.gain"), norm.weight)?;
            params.insert(p("norm.bias"), norm.bias)?;
            params.insert(p("prelu"), Tensor::scalar(T::c(PRELU_INIT)))?;
            params.insert(p("lstm.w_ih"), lstm.w_ih)?;
            params.insert(p("lstm.w_hh"), lstm.w_hh)?;
            params.insert(p("lstm.bias"), lstm.bias)?;
            params.insert(p("linear.weight"), lin.weight)?;
            params.insert(p("linear.bias"), lin.bias)?;
        }
        let dec = AffineParams::<T>::linear(&mut rng, f, fr.output);
        params.insert("decoder.weight", dec.weight)?;
        params.insert("decoder.bias", dec.bias)?;
        Self::from_params(config, params)
    }

    /// Wraps an existing store after checking names, shapes and widths.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "{} expects {} parameter arrays, got {}",
                config.name(),
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, value)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{pname}` {:?} does not match expected `{name}` {shape:?}",
                    value.shape()
                )));
            }
        }
        for b in 0..config.blocks {
            debug_assert_eq!(
                params.values()[ENCODER_PARAMS + b * BLOCK_PARAMS].shape()[2],
                config.channels + b * config.spatial
            );
        }
        debug_assert_eq!(params.num_scalars(), count_params(&config));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Registers every parameter on `tape`, in store order.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .values()
            .iter()
            .map(|v| tape.leaf(v.clone(), trainable))
            .collect()
    }

    /// Adds the leaf gradients of a bound tape into the parameter store.
    pub fn accumulate_grads(&mut self, tape: &mut Tape<T>, vars: &[Var], weight: T) {
        for (g, &v) in self.params.grads_mut().iter_mut().zip(vars) {
            if let Some(tg) = tape.take_grad(v) {
                for (a, &b) in g.data_mut().iter_mut().zip(tg.data()) {
                    *a += b * weight;
                }
            }
        }
    }

    fn check_channels(&self, y: &Waveform<T>) -> Result<()> {
        if y.num_channels() != self.config.channels {
            return Err(Error::dim(format!(
                "{} expects {} channels, input has {}",
                self.config.name(),
                self.config.channels,
                y.num_channels()
            )));
        }
        Ok(())
    }

    /// Network on an already normalized input; returns the `[N]` estimate
    /// on the normalized scale.
    pub fn forward_normalized(&self, tape: &mut Tape<T>, vars: &[Var], y: &Waveform<T>) -> Result<Var> {
        self.check_channels(y)?;
        let cfg = &self.config;
        let frames = tape.constant(frame_signal(y, &cfg.frame)?);
        let h = nn::linear(tape, frames, vars[0], vars[1])?;
        let h = nn::layer_norm(tape, h, vars[2], vars[3])?;
        let h = nn::prelu(tape, h, vars[4])?;
        let mut streams = vec![h];
        for b in 0..cfg.blocks {
            let input = tape.concat(&streams, 0)?;
            debug_assert_eq!(tape.value(input).shape()[0], cfg.block_input_width(b));
            let block = BlockVars::new(&vars[ENCODER_PARAMS + b * BLOCK_PARAMS..]);
            let out = st_block(tape, input, &block, cfg.block_output_width(b))?;
            streams.push(out);
        }
        let last = *streams.last().unwrap();
        let dec = vars.len() - 2;
        let out = nn::linear(tape, last, vars[dec], vars[dec + 1])?;
        overlap_add_var(tape, out, &cfg.frame, y.len())
    }

    /// Full inference: variance-normalize, run the network, undo the scale.
    pub fn enhance(&self, y: &Waveform<T>) -> Result<Vec<T>> {
        let scale = variance_scale(y)?;
        self.enhance_with_scale(y, scale)
    }

    /// Inference with a caller-supplied input scale.
    pub fn enhance_with_scale(&self, y: &Waveform<T>, scale: T) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward_normalized(&mut tape, &vars, &y.scaled(scale))?;
        Ok(tape.value(out).data().iter().map(|&v| v / scale).collect())
    }

    /// Frame-by-frame processor equivalent to [`Model::enhance_with_scale`].
    pub fn streaming(&self, scale: T) -> StreamingEnhancer<'_, T> {
        StreamingEnhancer::new(self, scale)
    }
}

/// Causal frame-by-frame inference.
///
/// Input arrives in arbitrary chunks; each output sample is released as soon
/// as every frame covering it has been computed, i.e. `output - hop` samples
/// after the input that completes it. Output is bit-identical to the batch
/// path for the same scale.
pub struct StreamingEnhancer<'a, T> {
    model: &'a Model<T>,
    scale: T,
    /// Scaled input, left-padded; `history[k]` holds padded index `offset + k`.
    history: Vec<Vec<T>>,
    offset: usize,
    received: usize,
    next_frame: usize,
    states: Vec<LstmState<T>>,
    /// Overlap-add accumulator; `acc[k]` holds output sample `emitted + k`.
    acc: Vec<T>,
    emitted: usize,
}

impl<'a, T: Real> StreamingEnhancer<'a, T> {
    pub fn new(model: &'a Model<T>, scale: T) -> Self {
        let cfg = model.config;
        Self {
            model,
            scale,
            history: vec![vec![T::zero(); cfg.frame.left_pad()]; cfg.channels],
            offset: 0,
            received: 0,
            next_frame: 0,
            states: vec![LstmState::zeros(cfg.hidden); cfg.blocks],
            acc: Vec::new(),
            emitted: 0,
        }
    }

    /// Feeds one chunk (one slice per channel) and returns newly final samples.
    pub fn push(&mut self, chunk: &[&[T]]) -> Result<Vec<T>> {
        let cfg = self.model.config;
        if chunk.len() != cfg.channels || chunk.iter().any(|c| c.len() != chunk[0].len()) {
            return Err(Error::dim(format!(
                "streaming chunk needs {} equal-length channels",
                cfg.channels
            )));
        }
        for (h, c) in self.history.iter_mut().zip(chunk) {
            h.extend(c.iter().map(|&x| x * self.scale));
        }
        self.received += chunk[0].len();
        let fr = cfg.frame;
        while self.next_frame * fr.hop + fr.output <= self.received {
            self.process_next()?;
        }
        let ready = self.next_frame * fr.hop;
        Ok(self.release(ready))
    }

    /// Flushes the remaining frames with right zero padding.
    pub fn finish(mut self) -> Result<Vec<T>> {
        let fr = self.model.config.frame;
        let total = fr.num_frames(self.received);
        let need = self.offset + total * fr.hop + fr.input;
        for h in &mut self.history {
            let len = need.saturating_sub(self.offset).max(h.len());
            h.resize(len, T::zero());
        }
        while self.next_frame < total {
            self.process_next()?;
        }
        let n = self.received;
        Ok(self.release(n))
    }

    fn release(&mut self, upto: usize) -> Vec<T> {
        let fr = self.model.config.frame;
        let count = upto.saturating_sub(self.emitted).min(self.acc.len());
        let out: Vec<T> = self
            .acc
            .drain(..count)
            .enumerate()
            .map(|(k, v)| v / T::c(fr.overlap_count(self.emitted + k) as f64) / self.scale)
            .collect();
        self.emitted += count;
        out
    }

    fn process_next(&mut self) -> Result<()> {
        let cfg = self.model.config;
        let fr = cfg.frame;
        let t = self.next_frame;
        let start = t * fr.hop - self.offset;
        let mut frame = Vec::with_capacity(cfg.channels * fr.input);
        for h in &self.history {
            frame.extend_from_slice(&h[start..start + fr.input]);
        }
        let frame = Tensor::new(&[cfg.channels, 1, fr.input], frame)?;
        let out = self.frame_forward(&frame)?;

        let base = t * fr.hop - self.emitted;
        if self.acc.len() < base + fr.output {
            self.acc.resize(base + fr.output, T::zero());
        }
        for (a, &v) in self.acc[base..].iter_mut().zip(out.data()) {
            *a += v;
        }
        self.next_frame += 1;

        let drop = (self.next_frame * fr.hop).saturating_sub(self.offset);
        if drop > 4 * fr.input {
            for h in &mut self.history {
                h.drain(..drop);
            }
            self.offset += drop;
        }
        Ok(())
    }

    /// One frame through the network: `C × 1 × L_i → 1 × 1 × L_o`.
    fn frame_forward(&mut self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = self.model.config;
        let p = self.model.params.values();
        let eps = T::c(nn::LAYER_NORM_EPS);
        let h = nn::linear_kernel(frame, &p[0], &p[1])?;
        let h = nn::layer_norm_kernel(&h, &p[2], &p[3], eps)?;
        let h = nn::prelu_kernel(&h, p[4].data()[0]);
        let mut streams = vec![h];
        for b in 0..cfg.blocks {
            let q = &p[ENCODER_PARAMS + b * BLOCK_PARAMS..];
            let refs: Vec<&Tensor<T>> = streams.iter().collect();
            let input = Tensor::concat(&refs, 0)?;
            let z = nn::spatial_conv_kernel(&input, &q[0], &q[1])?;
            let z = nn::layer_norm_kernel(&z, &q[2], &q[3], eps)?;
            let z = nn::prelu_kernel(&z, q[4].data()[0]);
            let hidden = cfg.hidden;
            let temporal = z.slice_axis(0, 0, 1)?.reshape(&[1, hidden])?;
            let lstm = LstmParams {
                w_ih: q[5].clone(),
                w_hh: q[6].clone(),
                bias: q[7].clone(),
            };
            let (temporal, state) = nn::lstm_kernel(&temporal, &lstm, &self.states[b])?;
            self.states[b] = state;
            let temporal = nn::linear_kernel(&temporal, &q[8], &q[9])?;
            let s_out = cfg.block_output_width(b);
            let spatial = z.slice_axis(0, 1, s_out)?;
            let mut out = spatial.clone();
            for row in out.data_mut().chunks_exact_mut(hidden) {
                for (v, &m) in row.iter_mut().zip(temporal.data()) {
                    *v *= m;
                }
            }
            streams.push(out);
        }
        let dec = p.len() - 2;
        nn::linear_kernel(streams.last().unwrap(), &p[dec], &p[dec + 1])
    }
}
