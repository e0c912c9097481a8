use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{svd, DenseMatrix};

/// Orthonormal POD basis: the leading left singular vectors of a snapshot
/// matrix. The full singular spectrum is kept for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    /// `N_h × N`.
    pub v: DenseMatrix,
    pub singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn full_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.v.cols()
    }

    /// `Vᵀ x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.full_dim() {
            return Err(Error::dim(format!(
                "POD project: vector of {} for basis of {}",
                x.len(),
                self.full_dim()
            )));
        }
        Ok(self.v.t_matvec(x))
    }

    /// `V z`.
    pub fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::dim(format!(
                "POD lift: latent of {} for rank {}",
                z.len(),
                self.latent_dim()
            )));
        }
        Ok(self.v.matvec(z))
    }

    /// Column-wise `Vᵀ S`.
    pub fn project_columns(&self, s: &DenseMatrix) -> Result<DenseMatrix> {
        self.v.t_matmul(s)
    }

    /// Column-wise `V Z`.
    pub fn lift_columns(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.v.matmul(z)
    }

    /// `‖S − V Vᵀ S‖_F`.
    pub fn reconstruction_error(&self, s: &DenseMatrix) -> Result<f64> {
        let back = self.lift_columns(&self.project_columns(s)?)?;
        Ok(s.sub(&back).frobenius_norm())
    }

    /// Basis made of the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<PodBasis> {
        if n == 0 || n > self.latent_dim() {
            return Err(Error::invalid(
                "reduction",
                format!("cannot truncate rank {} to {n}", self.latent_dim()),
            ));
        }
        Ok(PodBasis {
            v: self.v.leading_columns(n),
            singular_values: self.singular_values.clone(),
        })
    }
}

/// POD of the raw (uncentered) snapshot matrix `S` with `n` modes.
pub fn pod_fit(s: &DenseMatrix, n: usize) -> Result<PodBasis> {
    let max = s.rows().min(s.cols());
    if n == 0 || n > max {
        return Err(Error::invalid(
            "reduction",
            format!(
                "POD rank {n} outside 1..={max} for a {}×{} snapshot matrix",
                s.rows(),
                s.cols()
            ),
        ));
    }
    let d = svd(s)?;
    Ok(PodBasis {
        v: d.u.leading_columns(n),
        singular_values: d.s,
    })
}

/// Component-wise POD for vector fields stored as `components` contiguous
/// row blocks of equal size; one basis per block.
pub fn pod_fit_components(s: &DenseMatrix, components: usize, n: usize) -> Result<Vec<PodBasis>> {
    if components == 0 || !s.rows().is_multiple_of(components) {
        return Err(Error::invalid(
            "reduction",
            format!(
                "{} rows cannot be split into {components} components",
                s.rows()
            ),
        ));
    }
    let block = s.rows() / components;
    (0..components)
        .map(|c| {
            let sub = DenseMatrix::from_fn(block, s.cols(), |i, j| s[(c * block + i, j)]);
            pod_fit(&sub, n)
        })
        .collect()
}
