//! Binary parameter and optimizer-state files.
//!
//! All integers are little-endian `u32`, floats little-endian `f32`.
//!
//! ```text
//! magic      8 bytes   "DLLRNNCK"
//! version    u32       1
//! config     7 × u32   channels hidden spatial blocks frame_in frame_out hop
//! records    u32       number of arrays
//! per array  u32 name length, UTF-8 name, u32 rank, rank × u32 extents,
//!            product(extents) × f32 values
//! ```
//!
//! The optimizer-state file uses magic `"DLLRNNOP"`, the same version and
//! config header, then `u64` step, `u64` completed epochs, `u64` batches
//! completed in the current epoch, a `u32` record count and the records
//! `m.<name>`, `v.<name>` and `vmax.<name>` for every parameter in order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::framing::FrameSpec;
use crate::model::{count_params, Model, ModelConfig, ParamStore};
use crate::tensor::Tensor;
use crate::train::OptState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLLRNNCK";
pub const OPT_STATE_MAGIC: &[u8; 8] = b"DLLRNNOP";
pub const FORMAT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_header(out: &mut Vec<u8>, magic: &[u8; 8], cfg: &ModelConfig) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        cfg.channels,
        cfg.hidden,
        cfg.spatial,
        cfg.blocks,
        cfg.frame.input,
        cfg.frame.output,
        cfg.frame.hop,
    ] {
        push_u32(out, v);
    }
}

fn push_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    push_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    push_u32(out, t.rank());
    for &e in t.shape() {
        push_u32(out, e);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<ModelConfig> {
        if self.take(8, "magic")? != magic {
            return Err(Error::parse(
                0,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        let at = self.pos as u64;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::parse(at, format!("unsupported format version {version}")));
        }
        let at = self.pos as u64;
        let mut f = [0usize; 7];
        for v in f.iter_mut() {
            *v = self.u32("config")?;
        }
        let cfg = ModelConfig {
            channels: f[0],
            hidden: f[1],
            spatial: f[2],
            blocks: f[3],
            frame: FrameSpec {
                input: f[4],
                output: f[5],
                hop: f[6],
            },
        };
        cfg.validate().map_err(|e| Error::parse(at, e.to_string()))?;
        Ok(cfg)
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let at = self.pos as u64;
        let len = self.u32("name length")?;
        let name = std::str::from_utf8(self.take(len, "name")?)
            .map_err(|_| Error::parse(at + 4, "parameter name is not UTF-8"))?
            .to_string();
        let rank = self.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::parse(at, format!("`{name}` has invalid rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32("extent")).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let count = match count {
            Some(c) if c > 0 && c <= (self.bytes.len() - self.pos) / 4 => c,
            _ => return Err(Error::parse(at, format!("`{name}` has invalid extents {shape:?}"))),
        };
        let data = self
            .take(4 * count, "values")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(self.pos as u64, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_model(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    push_header(&mut out, CHECKPOINT_MAGIC, model.config());
    push_u32(&mut out, model.params().len());
    for (name, t) in model.params().iter() {
        push_record(&mut out, name, t);
    }
    out
}

/// Decodes and validates against the layout implied by the header config.
pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    let cfg = c.header(CHECKPOINT_MAGIC)?;
    let n = c.u32("record count")?;
    let mut params = ParamStore::default();
    for _ in 0..n {
        let at = c.pos as u64;
        let (name, t) = c.record()?;
        params.insert(name, t).map_err(|e| Error::parse(at, e.to_string()))?;
    }
    c.finish()?;
    if params.num_scalars() != count_params(&cfg) {
        return Err(Error::Config(format!(
            "checkpoint holds {} parameters, {} needs {}",
            params.num_scalars(),
            cfg.name(),
            count_params(&cfg)
        )));
    }
    Model::from_params(cfg, params)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Saved optimizer state and loop position.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub opt: OptState<f32>,
    pub epoch: u64,
    pub batch: u64,
}

pub fn encode_opt_state(model: &Model<f32>, opt: &OptState<f32>, epoch: u64, batch: u64) -> Vec<u8> {
    let mut out = Vec::new();
    push_header(&mut out, OPT_STATE_MAGIC, model.config());
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&batch.to_le_bytes());
    push_u32(&mut out, 3 * model.params().len());
    for (prefix, ts) in [("m", &opt.m), ("v", &opt.v), ("vmax", &opt.v_max)] {
        for (name, t) in model.params().names().iter().zip(ts) {
            push_record(&mut out, &format!("{prefix}.{name}"), t);
        }
    }
    out
}

/// Decodes optimizer state for `model`; config and every record must match.
pub fn decode_opt_state(bytes: &[u8], model: &Model<f32>, lr: f64) -> Result<TrainState> {
    let mut c = Cursor { bytes, pos: 0 };
    let cfg = c.header(OPT_STATE_MAGIC)?;
    if cfg != *model.config() {
        return Err(Error::Config(format!(
            "optimizer state is for {cfg:?}, model is {:?}",
            model.config()
        )));
    }
    let mut opt = OptState::new(model.params(), lr);
    opt.step = c.u64("step")?;
    let epoch = c.u64("epoch")?;
    let batch = c.u64("batch")?;
    let n = c.u32("record count")?;
    let names = model.params().names();
    if n != 3 * names.len() {
        return Err(Error::Config(format!(
            "optimizer state has {n} records, expected {}",
            3 * names.len()
        )));
    }
    for (prefix, ts) in [("m", &mut opt.m), ("v", &mut opt.v), ("vmax", &mut opt.v_max)] {
        for (name, slot) in names.iter().zip(ts.iter_mut()) {
            let at = c.pos as u64;
            let (rname, t) = c.record()?;
            let want = format!("{prefix}.{name}");
            if rname != want || t.shape() != slot.shape() {
                return Err(Error::parse(
                    at,
                    format!(
                        "expected record `{want}` {:?}, found `{rname}` {:?}",
                        slot.shape(),
                        t.shape()
                    ),
                ));
            }
            *slot = t;
        }
    }
    c.finish()?;
    Ok(TrainState { opt, epoch, batch })
}

pub fn save_opt_state(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    opt: &OptState<f32>,
    epoch: u64,
    batch: u64,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_opt_state(model, opt, epoch, batch)).map_err(|e| Error::io(path, e))
}

pub fn load_opt_state(path: impl AsRef<Path>, model: &Model<f32>, lr: f64) -> Result<TrainState> {
    let path = path.as_ref();
    decode_opt_state(&fs::read(path).map_err(|e| Error::io(path, e))?, model, lr)
}
