//! Linear algebra, solvers and optimizers shared by every other module.
//!
//! All arithmetic is `f64`. Nothing here spawns threads, so results are
//! bitwise reproducible.

pub mod dense;
pub mod optimize;
pub mod rng;
pub mod solve;
pub mod sparse;
pub mod svd;

pub use dense::{DenseLu, DenseMatrix};
pub use optimize::{
    finite_diff_gradient, minimize, LineSearch, MinimizeResult, OptimizerConfig, OptimizerKind,
};
pub use rng::SplitMix64;
pub use solve::{conjugate_gradient, solve_sparse, SparseLu};
pub use sparse::{SparseMatrix, TripletBuilder};
pub use svd::{svd, Svd};
