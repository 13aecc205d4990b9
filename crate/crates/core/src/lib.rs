//! Low-latency multichannel speech enhancement with decoupled spatial and
//! temporal processing, trained end to end in the time domain.
//!
//! The crate carries its own reverse-mode autodiff ([`tape`]), the network
//! ([`model`]), loss and metrics ([`loss`]), a shoebox-room simulator
//! ([`sim`]), the optimizer loop ([`train`]) and file formats ([`wav`],
//! [`manifest`], [`checkpoint`]).

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod framing;
pub mod loss;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use framing::{FrameSpec, Waveform, SAMPLE_RATE};
pub use loss::{pcm_loss, si_sdr};
pub use model::{count_flops, count_params, Model, ModelConfig, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
pub use train::{OptState, Schedule, StepRecord, TrainExample, Trainer};
