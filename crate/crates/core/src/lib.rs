//! Attentional encoder network for targeted sentiment classification.
//!
//! The crate carries its own small tensor/gradient engine ([`tensor`]), the
//! network blocks ([`nn`]) and assembled model ([`model`]), the smoothed
//! training objective ([`loss`]), metrics, Adam, corpus ingestion ([`data`]),
//! and a training/evaluation harness with checkpointing ([`harness`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{AenError, Result};
pub use model::{AenConfig, AenParams};
pub use tensor::{Scalar, Tape, Tensor, Var};
