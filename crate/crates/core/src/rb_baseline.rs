//! Intrusive reduced-basis solver: Galerkin projection of the KKT system onto
//! an aggregated state–adjoint space and a control space.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::dense::{dot, norm2, sub};
use crate::numerics::{DenseLu, DenseMatrix, SparseMatrix};
use crate::ocp::{kkt_matrix, DirectSolver, OcpProblem, OptimalPair, Scenario};
use crate::reduction::{pod_fit, PodBasis};
use crate::snapshots::SnapshotSet;

/// Columns whose norm falls below this after orthogonalization are dropped.
const DROP_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct AggregatedSpace {
    pub v_y: PodBasis,
    pub v_p: PodBasis,
    /// Orthonormalized concatenation `[V_y, V_p]`.
    pub v_yp: DenseMatrix,
    pub v_u: PodBasis,
    /// Columns of `[V_y, V_p]` removed as linearly dependent.
    pub dropped: usize,
}

impl AggregatedSpace {
    /// Reduced dimension `2 N_yp + N_u`.
    pub fn dim(&self) -> usize {
        2 * self.v_yp.cols() + self.v_u.latent_dim()
    }

    /// `V = diag(V_yp, V_u, V_yp)` applied to a reduced vector.
    pub fn lift(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nyp, nu) = (self.v_yp.cols(), self.v_u.latent_dim());
        (
            self.v_yp.matvec(&x[..nyp]),
            self.v_u.v.matvec(&x[nyp..nyp + nu]),
            self.v_yp.matvec(&x[nyp + nu..]),
        )
    }

    /// `Vᵀ s` for a full-order vector ordered `(y, u, p)`.
    pub fn project(&self, s: &[f64]) -> Vec<f64> {
        let (ny, nu) = (self.v_yp.rows(), self.v_u.full_dim());
        let mut out = self.v_yp.t_matvec(&s[..ny]);
        out.extend(self.v_u.v.t_matvec(&s[ny..ny + nu]));
        out.extend(self.v_yp.t_matvec(&s[ny + nu..]));
        out
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass; returns the
/// orthonormal columns and the number dropped.
pub fn orthonormalize(columns: &[Vec<f64>]) -> (Vec<Vec<f64>>, usize) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut dropped = 0;
    for c in columns {
        let n0 = norm2(c);
        let mut v = c.clone();
        for _ in 0..2 {
            for q in &basis {
                let a = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= a * qi);
            }
        }
        let n = norm2(&v);
        if n0 == 0.0 || n <= DROP_TOLERANCE * n0 {
            dropped += 1;
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    (basis, dropped)
}

/// POD bases of state, adjoint and control snapshots with the aggregated
/// state–adjoint space.
pub fn build_aggregated(
    states: &DenseMatrix,
    adjoints: &DenseMatrix,
    controls: &DenseMatrix,
    n_y: usize,
    n_p: usize,
    n_u: usize,
) -> Result<AggregatedSpace> {
    if states.rows() != adjoints.rows() {
        return Err(Error::dim("state and adjoint snapshots differ in length"));
    }
    let v_y = pod_fit(states, n_y)?;
    let v_p = pod_fit(adjoints, n_p)?;
    let v_u = pod_fit(controls, n_u)?;
    let mut cols = v_y.v.columns();
    cols.extend(v_p.v.columns());
    let (q, dropped) = orthonormalize(&cols);
    if dropped > 0 {
        warn!(
            "aggregated space: dropped {dropped} dependent columns, {} remain",
            q.len()
        );
    }
    let v_yp = DenseMatrix::from_columns(states.rows(), &q)?;
    Ok(AggregatedSpace {
        v_y,
        v_p,
        v_yp,
        v_u,
        dropped,
    })
}

/// Adjoints of the scenarios of a steady snapshot set, recomputed with the
/// full-order direct solver.
pub fn adjoint_snapshots(problem: &OcpProblem, set: &SnapshotSet) -> Result<DenseMatrix> {
    let solver = DirectSolver::new(problem)?;
    let cols = set
        .scenarios
        .iter()
        .map(|s| {
            Ok(solver
                .solve(problem, s)?
                .p
                .expect("direct solves return the adjoint"))
        })
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_columns(problem.n_state(), &cols)
}

/// `Vᵀ K_h V` formed once, with its factorization.
pub struct RbSolver {
    pub space: AggregatedSpace,
    pub k_n: DenseMatrix,
    k_h: SparseMatrix,
    lu: DenseLu,
}

/// Lifted reduced solution.
#[derive(Clone, Debug)]
pub struct RbSolution {
    pub pair: OptimalPair,
    /// `‖K_h x − s_h‖ / ‖s_h‖` of the lifted solution.
    pub residual: f64,
}

/// Dense `V` for the block-diagonal `diag(V_yp, V_u, V_yp)`.
fn block_basis(space: &AggregatedSpace) -> DenseMatrix {
    let (ny, nu) = (space.v_yp.rows(), space.v_u.full_dim());
    let (nyp, nun) = (space.v_yp.cols(), space.v_u.latent_dim());
    let mut v = DenseMatrix::zeros(2 * ny + nu, 2 * nyp + nun);
    for i in 0..ny {
        for j in 0..nyp {
            v[(i, j)] = space.v_yp[(i, j)];
            v[(ny + nu + i, nyp + nun + j)] = space.v_yp[(i, j)];
        }
    }
    for i in 0..nu {
        for j in 0..nun {
            v[(ny + i, nyp + j)] = space.v_u.v[(i, j)];
        }
    }
    v
}

impl RbSolver {
    pub fn new(problem: &OcpProblem, space: AggregatedSpace) -> Result<Self> {
        if space.v_yp.rows() != problem.n_state() || space.v_u.full_dim() != problem.n_control() {
            return Err(Error::dim("reduced bases do not match the problem"));
        }
        let k_h = kkt_matrix(problem);
        let v = block_basis(&space);
        let k_n = v.t_matmul(&k_h.mul_dense(&v))?;
        let lu = k_n
            .lu()
            .map_err(|e| Error::ReducedSingular(e.to_string()))?;
        Ok(Self {
            space,
            k_n,
            k_h,
            lu,
        })
    }

    /// Reduced solve for one scenario. The load is assembled at full order
    /// and projected.
    pub fn solve(&self, problem: &OcpProblem, mu: &Scenario) -> Result<RbSolution> {
        let (ny, nu) = (problem.n_state(), problem.n_control());
        let mut s_h = vec![0.0; 2 * ny + nu];
        s_h[ny + nu..].copy_from_slice(&problem.load(mu)?);
        let x_n = self.lu.solve(&self.space.project(&s_h))?;
        if x_n.iter().any(|v| !v.is_finite()) {
            return Err(Error::ReducedSingular("non-finite reduced solution".into()));
        }
        let (y, u, p) = self.space.lift(&x_n);
        let mut x = y.clone();
        x.extend(&u);
        x.extend(&p);
        let residual = norm2(&sub(&self.k_h.matvec(&x), &s_h)) / norm2(&s_h);
        let cost = problem.steady_cost(&y, &u);
        Ok(RbSolution {
            pair: OptimalPair {
                y,
                u,
                p: Some(p),
                cost,
                iterations: 1,
                steps: 1,
            },
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{interval_operators, Physics};
    use crate::numerics::SplitMix64;
    use crate::ocp::{CostWeights, ParamBox, Source};
    use crate::snapshots::{generate, sample_scenarios};

    fn toy() -> OcpProblem {
        let ops = interval_operators(6, Physics::default()).unwrap();
        OcpProblem::new(
            ops,
            Source::Affine(vec![
                vec![10.0, 20.0, 30.0, 20.0, 10.0, 5.0],
                vec![0.0, 5.0, 0.0, -5.0, 1.0, 2.0],
            ]),
            CostWeights {
                beta: 1e-3,
                beta_g: 1e-3,
            },
            ParamBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        norm2(&sub(a, b)) / norm2(b)
    }

    #[test]
    fn identical_spans_deduplicate() {
        let mut r = SplitMix64::new(1);
        let s = DenseMatrix::from_fn(20, 6, |_, _| r.normal());
        let c = DenseMatrix::from_fn(8, 6, |_, _| r.normal());
        let sp = build_aggregated(&s, &s, &c, 4, 4, 3).unwrap();
        assert_eq!(sp.v_yp.cols(), 4);
        assert_eq!(sp.dropped, 4);
    }

    #[test]
    fn aggregated_space_is_orthonormal_and_spans_inputs() {
        let mut r = SplitMix64::new(2);
        let s = DenseMatrix::from_fn(30, 8, |_, _| r.normal());
        let a = DenseMatrix::from_fn(30, 8, |_, _| r.normal());
        let c = DenseMatrix::from_fn(10, 8, |_, _| r.normal());
        let sp = build_aggregated(&s, &a, &c, 5, 4, 3).unwrap();
        assert_eq!(sp.v_yp.cols(), 9);
        let g = sp.v_yp.t_matmul(&sp.v_yp).unwrap();
        assert!(g.sub(&DenseMatrix::identity(9)).max_abs() <= 1e-10);
        for v in sp.v_y.v.columns().iter().chain(sp.v_p.v.columns().iter()) {
            let back = sp.v_yp.matvec(&sp.v_yp.t_matvec(v));
            assert!(norm2(&sub(&back, v)) <= 1e-9);
        }
    }

    #[test]
    fn snapshot_rank_reproduces_training_solutions() {
        let p = toy();
        let set = generate(&p, &sample_scenarios(&p.param_box, 6, 3).unwrap(), 1).unwrap();
        let adj = adjoint_snapshots(&p, &set).unwrap();
        // Loads span {f0, f1, robin}: rank 3 everywhere.
        let space = build_aggregated(&set.y, &adj, &set.u, 3, 3, 3).unwrap();
        let rb = RbSolver::new(&p, space).unwrap();
        assert!(rb.k_n.sub(&rb.k_n.transpose()).max_abs() <= 1e-12 * rb.k_n.max_abs());
        for (j, s) in set.scenarios.iter().enumerate() {
            let sol = rb.solve(&p, s).unwrap();
            assert!(rel(&sol.pair.y, &set.y.col(j)) <= 1e-6);
            assert!(rel(&sol.pair.u, &set.u.col(j)) <= 1e-6);
            assert!(sol.residual <= 1e-8);
        }
    }

    #[test]
    fn single_snapshot_rank_one() {
        let p = toy();
        let s = Scenario::steady(vec![0.4, 0.3]);
        let full = crate::ocp::solve_direct(&p, &s).unwrap();
        let col = |v: &[f64]| DenseMatrix::from_columns(v.len(), &[v.to_vec()]).unwrap();
        let space = build_aggregated(
            &col(&full.y),
            &col(full.p.as_ref().unwrap()),
            &col(&full.u),
            1,
            1,
            1,
        )
        .unwrap();
        let rb = RbSolver::new(&p, space).unwrap();
        let sol = rb.solve(&p, &s).unwrap();
        assert!(rel(&sol.pair.y, &full.y) <= 1e-9);
        assert!(rel(&sol.pair.u, &full.u) <= 1e-9);
    }
}
