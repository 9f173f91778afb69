//! deformer-core: spatiotemporal transformer hand-pose estimation on a
//! deterministic synthetic benchmark.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense f64 tensors with a reverse-mode differentiation tape;
//!   everything downstream builds on it.
//! * [`nn`] — linear layers, layer norm, multi-head attention, transformer
//!   encoder/decoder blocks, GRUs, positional embeddings.
//! * [`handmodel`] — a differentiable parametric hand layer (48 pose + 10
//!   shape parameters → 21 joints + 778 vertices) driven by a seeded
//!   synthetic kinematic template.
//! * [`spatial`] / [`temporal`] — the per-frame and sequence-level
//!   transformer stages.
//! * [`fusion`] — motion-based cross-frame pose deformation and
//!   confidence-weighted synthesis.
//! * [`losses`] — maxMSE, mesh, adversarial, and auxiliary losses.
//! * [`discriminator`] — the recurrent motion discriminator.
//! * [`synthdata`] — deterministic synthetic sequence benchmark.
//! * [`training`] — Adam, alternating generator/discriminator updates,
//!   checkpointing.
//! * [`metrics`] — Procrustes MPJPE, AUC, F-scores, acceleration error.
//! * [`gradcheck`] — finite-difference verification suites.

pub mod config;
pub mod discriminator;
pub mod fusion;
pub mod gradcheck;
pub mod handmodel;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod seeding;
pub mod spatial;
pub mod synthdata;
pub mod temporal;
pub mod tensor;
pub mod training;

pub use tensor::{Array, Gradients, Tape, Tensor};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("tensor is not attached to the active tape")]
    DetachedTape,
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
