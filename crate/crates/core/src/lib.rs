//! Reduced-order PLL synchronization dynamics, physics-informed surrogate
//! training and region-of-attraction mapping.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fileio;
pub mod nn;
pub mod ode;
pub mod rollout;
pub mod roa;
pub mod rom;
pub mod train;

pub use error::{Error, Result};
pub use rom::{PllState, SystemParams};
