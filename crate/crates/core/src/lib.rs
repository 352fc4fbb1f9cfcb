//! Optimal subarchitecture extraction for the BERT architecture family.
//!
//! * [`arch`]: the `<D, A, H, I>` parameter space, validity rules and
//!   deterministic enumeration.
//! * [`cost`]: closed-form parameter and FLOP polynomials, with a tensor
//!   shape oracle and a layer-by-layer FLOP sum to check them.
//! * [`metrics`]: surrogate size, latency and error per candidate.
//! * [`engine`]: W-coefficient scalarization against a maximum point and
//!   ranking.
//! * [`toynet`]: a small forward implementation of the architecture used as
//!   an independent witness, plus the distillation loss.
//! * [`verify`]: the cross-module equivalence checks behind `ose verify`.
//! * [`config`] and [`cli`]: the JSON run configuration and the `ose` binary.

pub mod arch;
pub mod cli;
pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod toynet;
pub mod verify;

pub use arch::{enumerate, stride_subsample, validate, ArchParams, EmbeddingConfig, SearchSpace};
pub use error::{Error, Result};
