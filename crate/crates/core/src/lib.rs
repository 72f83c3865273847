//! Second-order perturbation statistics for finite Markov chains driven by a small
//! stationary input, with an exact joint-chain oracle, a coupled simulator and the
//! queue timing-channel example.

pub mod controlled;
pub mod error;
pub mod markov;
pub mod oracle;
pub mod second_order;
pub mod simulator;
pub mod spectral;
pub mod timing;

pub use error::{Error, Result};
