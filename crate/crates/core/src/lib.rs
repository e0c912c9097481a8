//! Real-time solution of parametrized PDE-constrained optimal control
//! problems.
//!
//! The offline pipeline solves linear-quadratic optimal control problems on a
//! P1 finite-element mesh ([`fem`], [`ocp`]), collects optimal state/control
//! snapshots ([`snapshots`]), compresses them with POD and autoencoders
//! ([`reduction`]) and fits a network from scenario parameters to latent
//! optimal pairs ([`surrogate`]). Online, a forward pass plus the decoders
//! returns the optimal pair for a new scenario. [`rb_baseline`] provides the
//! intrusive Galerkin reduced-basis comparator and [`evalbench`] the error
//! metrics, parameter sweeps and timing harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evalbench;
pub mod fem;
pub mod io;
pub mod numerics;
pub mod ocp;
pub mod rb_baseline;
pub mod reduction;
pub mod snapshots;
pub mod surrogate;

pub use error::{Error, Result};
