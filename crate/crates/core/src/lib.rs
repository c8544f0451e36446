//! Two-talker speech recognition with factorial HMMs: source models,
//! joint-state likelihood estimators, a joint-state posterior network and an
//! exact joint Viterbi decoder.

pub mod acoustic;
pub mod decoder;
pub mod dnn;
pub mod error;
pub mod features;
pub mod harness;
pub mod jointlik;
pub mod numeric;
pub mod signal;

pub use error::{Error, Result};
