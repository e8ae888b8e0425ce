//! Two-stage difficulty-staged GRPO training at desk scale.
//!
//! A synthetic modular-arithmetic environment with graded difficulty feeds a
//! tiny autoregressive MLP policy whose log-probability gradients are
//! computed exactly. On top sit the group-relative machinery (normalized
//! advantages, zero-variance filtering, a dynamic sampling buffer, the
//! asymmetrically clipped token-level surrogate and AdamW), a two-stage
//! curriculum loop, and a Pass@1 evaluation harness.
//!
//! Rollout generation, evaluation and gradient accumulation are
//! data-parallel via rayon (the default `parallel` feature) with a
//! sequential fallback; both modes derive identical per-sample RNG streams
//! and reduce in fixed order, so results are bit-identical either way.

pub mod config;
pub mod curriculum;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod grpo;
pub mod metrics;
pub mod optim;
pub mod plot;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod toy_env;

pub use error::{Error, Result};
