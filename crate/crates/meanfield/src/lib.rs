//! Certified constants and Monte Carlo checks for mean-field interacting
//! particle systems of the form
//!
//! ```text
//! dX^i = sqrt(2) dB^i - grad V(X^i) dt - 1/(N-1) sum_{j != i} grad_x W(X^i, X^j) dt.
//! ```

pub mod certificates;
pub mod metrics;
pub mod noise;
pub mod par;
pub mod simulator;
pub mod error;
pub mod experiments;
pub mod potentials;

pub use error::{Error, Result};
