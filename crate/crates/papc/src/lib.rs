//! Desk-scale laboratory for downlink power control in cell-free massive
//! MIMO networks.
//!
//! The crate generates propagation scenarios, evaluates downlink spectral
//! efficiency in closed form, solves max-min power control with an
//! accelerated projected gradient benchmark, and trains a pilot-aware
//! transformer (PAPC) plus a fully-connected baseline by unsupervised
//! gradient ascent on a built-in reverse-mode autodiff engine.
//!
//! Modules map onto the pipeline:
//!
//! - [`config`] — scenario constants and named presets
//! - [`scenario`] — placements, path loss, shadowing, pilot assignment
//! - [`dataset`] — the `PAPCDS01` binary sample format
//! - [`se`] — closed-form MMSE variance / SINR / spectral efficiency,
//!   the soft-minimum utility, the feasible set projection, and equal
//!   power allocation
//! - [`autodiff`] — tape-based reverse-mode differentiation over dense
//!   2-D arrays
//! - [`se_graph`] — the SINR/utility pipeline expressed on the tape
//! - [`net`] — the PAPC transformer and the FCN baseline
//! - [`checkpoint`] — the `PAPCCK01` binary weight format
//! - [`optim`] — ADAM with warmup schedule and the APG solver
//! - [`trainer`] — unsupervised training loop and model evaluation
//! - [`cli`] — the `gen` / `train` / `eval` / `bench` / `apg` commands
//!
//! Most capabilities also have a runnable demo under `examples/`.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod net;
pub mod optim;
pub mod scenario;
pub mod se;
pub mod se_graph;
pub mod trainer;

/// Crate-wide error type. Variants map onto process exit categories:
/// configuration (2), data/IO (3), numeric failure (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
