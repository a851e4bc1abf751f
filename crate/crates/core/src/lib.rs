//! Second-order policy optimization for softmax policies whose scores live in a
//! reproducing kernel Hilbert space over state-action pairs.

pub mod cubic;
pub mod env;
pub mod error;
pub mod estimators;
pub mod kernel;
mod linalg;
pub mod harness;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
