use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("impedance scale must be positive and finite, got {0}")]
    InvalidAlpha(f64),

    #[error("ill-posed dynamics: effective inertia M = {inertia:e} is below threshold")]
    IllPosed { inertia: f64 },

    #[error("no equilibrium exists: |T_m / (k_i V_g)| = {ratio} > 1")]
    NoEquilibrium { ratio: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("prediction time {t} s lies outside the window [0, {window}] s")]
    OutsideWindow { t: f64, window: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported format version: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
