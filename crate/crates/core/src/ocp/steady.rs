use super::{OcpProblem, OptimalPair, Scenario};
use crate::error::{Error, Result};
use crate::numerics::dense::{backward_substitute_transpose, forward_substitute, sub};
use crate::numerics::{
    minimize, DenseMatrix, OptimizerConfig, SparseLu, SparseMatrix, TripletBuilder,
};

/// Saddle-point system for one scenario, unknowns ordered `(y, u, p)`.
#[derive(Clone, Debug)]
pub struct KktSystem {
    pub k: SparseMatrix,
    pub rhs: Vec<f64>,
    pub n_y: usize,
    pub n_u: usize,
}

impl KktSystem {
    /// Splits a solution vector into `(y, u, p)`.
    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (y, rest) = x.split_at(self.n_y);
        let (u, p) = rest.split_at(self.n_u);
        (y, u, p)
    }
}

/// The μ-independent KKT matrix.
pub fn kkt_matrix(problem: &OcpProblem) -> SparseMatrix {
    let ops = &problem.ops;
    let (ny, nu) = (ops.n_state(), ops.n_control());
    let mut t = TripletBuilder::new(2 * ny + nu, 2 * ny + nu);
    t.add_block(0, 0, &ops.mobs, 1.0);
    t.add_block(0, ny + nu, &ops.a.transpose(), 1.0);
    t.add_block(ny, ny, &problem.r, 1.0);
    t.add_block(ny, ny + nu, &ops.b.transpose(), -1.0);
    t.add_block(ny + nu, 0, &ops.a, 1.0);
    t.add_block(ny + nu, ny, &ops.b, -1.0);
    t.build()
}

pub fn assemble_kkt(problem: &OcpProblem, mu: &Scenario) -> Result<KktSystem> {
    let (ny, nu) = (problem.n_state(), problem.n_control());
    let mut rhs = vec![0.0; 2 * ny + nu];
    rhs[ny + nu..].copy_from_slice(&problem.load(mu)?);
    Ok(KktSystem {
        k: kkt_matrix(problem),
        rhs,
        n_y: ny,
        n_u: nu,
    })
}

/// Factored KKT matrix, reusable across scenarios of one problem.
pub struct DirectSolver {
    k: SparseMatrix,
    lu: SparseLu,
    n_y: usize,
    n_u: usize,
}

impl DirectSolver {
    pub fn new(problem: &OcpProblem) -> Result<Self> {
        let k = kkt_matrix(problem);
        let lu = SparseLu::new(&k)?;
        Ok(Self {
            k,
            lu,
            n_y: problem.n_state(),
            n_u: problem.n_control(),
        })
    }

    /// Solves with one step of iterative refinement.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.lu.solve(rhs)?;
        let r = sub(rhs, &self.k.matvec(&x));
        let dx = self.lu.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        Ok(x)
    }

    pub fn solve(&self, problem: &OcpProblem, mu: &Scenario) -> Result<OptimalPair> {
        let (ny, nu) = (self.n_y, self.n_u);
        let mut rhs = vec![0.0; 2 * ny + nu];
        rhs[ny + nu..].copy_from_slice(&problem.load(mu)?);
        let x = self.solve_rhs(&rhs)?;
        let y = x[..ny].to_vec();
        let u = x[ny..ny + nu].to_vec();
        let p = x[ny + nu..].to_vec();
        let cost = problem.steady_cost(&y, &u);
        Ok(OptimalPair {
            y,
            u,
            p: Some(p),
            cost,
            iterations: 1,
            steps: 1,
        })
    }
}

/// All-at-once solve of the KKT system (factorization included).
pub fn solve_direct(problem: &OcpProblem, mu: &Scenario) -> Result<OptimalPair> {
    DirectSolver::new(problem)?.solve(problem, mu)
}

/// State solve, adjoint solve and reduced gradient for a fixed factorization.
pub(crate) struct ReducedCost<'a> {
    pub problem: &'a OcpProblem,
    pub a_lu: SparseLu,
    pub f: Vec<f64>,
}

pub(crate) struct ReducedEval {
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
}

impl<'a> ReducedCost<'a> {
    pub fn new(problem: &'a OcpProblem, mu: &Scenario) -> Result<Self> {
        Ok(Self {
            problem,
            a_lu: SparseLu::new(&problem.ops.a)?,
            f: problem.load(mu)?,
        })
    }

    pub fn eval(&self, u: &[f64]) -> Result<ReducedEval> {
        let ops = &self.problem.ops;
        let mut rhs = ops.b.matvec(u);
        for (r, f) in rhs.iter_mut().zip(&self.f) {
            *r += f;
        }
        let y = self.a_lu.solve(&rhs)?;
        let my = ops.mobs.matvec(&y);
        // A is symmetric, so the adjoint reuses the state factorization.
        let p = self
            .a_lu
            .solve(&my.iter().map(|v| -v).collect::<Vec<_>>())?;
        let ru = self.problem.r.matvec(u);
        let btp = ops.b.t_matvec(&p);
        let gradient = ru.iter().zip(&btp).map(|(a, b)| 2.0 * (a - b)).collect();
        let cost = crate::numerics::dense::dot(&y, &my) + crate::numerics::dense::dot(u, &ru);
        Ok(ReducedEval {
            cost,
            gradient,
            y,
            p,
        })
    }
}

/// Reduced cost `J(y(u), u)` and its adjoint gradient.
pub fn reduced_cost_gradient(
    problem: &OcpProblem,
    mu: &Scenario,
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if u.len() != problem.n_control() {
        return Err(Error::dim(format!(
            "control has {} entries, expected {}",
            u.len(),
            problem.n_control()
        )));
    }
    let e = ReducedCost::new(problem, mu)?.eval(u)?;
    Ok((e.cost, e.gradient))
}

/// Change of variables `w = Lᵀ u` with `R = L Lᵀ`, which turns the
/// regularization term into `‖w‖²`. Costs are divided by `J(0)`.
pub(crate) struct Preconditioner {
    pub l: DenseMatrix,
    pub scale: f64,
}

impl Preconditioner {
    pub fn new(r: &SparseMatrix, cost_at_zero: f64) -> Result<Self> {
        let l = r.to_dense().cholesky()?;
        let scale = if cost_at_zero > 0.0 {
            1.0 / cost_at_zero
        } else {
            1.0
        };
        Ok(Self { l, scale })
    }

    pub fn control(&self, w: &[f64]) -> Vec<f64> {
        backward_substitute_transpose(&self.l, w)
    }

    pub fn gradient(&self, g: &[f64]) -> Vec<f64> {
        forward_substitute(&self.l, g)
            .iter()
            .map(|v| v * self.scale)
            .collect()
    }
}

/// Two-step iteration: state solve, adjoint solve, descent update of the
/// control, starting from `u = 0`. The optimizer works on the preconditioned
/// and normalized control variable, so `cfg.gradient_tolerance` bounds the
/// gradient of `J(u(w)) / J(0)` with respect to `w`.
pub fn solve_indirect(
    problem: &OcpProblem,
    mu: &Scenario,
    cfg: &OptimizerConfig,
) -> Result<OptimalPair> {
    let rc = ReducedCost::new(problem, mu)?;
    let nu = problem.n_control();
    let pre = Preconditioner::new(&problem.r, rc.eval(&vec![0.0; nu])?.cost)?;
    let mut failure: Option<Error> = None;
    let objective = |w: &[f64]| {
        let u = pre.control(w);
        match rc.eval(&u) {
            Ok(e) => (e.cost * pre.scale, pre.gradient(&e.gradient)),
            Err(err) => {
                failure.get_or_insert(err);
                (f64::NAN, vec![f64::NAN; w.len()])
            }
        }
    };
    let result = minimize(objective, &vec![0.0; nu], cfg);
    if let Some(err) = failure {
        return Err(err);
    }
    let result = result.map_err(|e| {
        let control = match &e {
            Error::LineSearch { x, .. } => pre.control(x),
            _ => Vec::new(),
        };
        Error::Optimizer {
            source: Box::new(e),
            control,
        }
    })?;
    let u = pre.control(&result.x);
    let e = rc.eval(&u)?;
    Ok(OptimalPair {
        y: e.y,
        u,
        p: Some(e.p),
        cost: e.cost,
        iterations: result.iterations,
        steps: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{interval_operators, Physics};
    use crate::numerics::dense::norm2;
    use crate::numerics::{finite_diff_gradient, LineSearch, SplitMix64};
    use crate::ocp::{CostWeights, ParamBox, Source};

    fn toy(beta: f64) -> OcpProblem {
        let ops = interval_operators(5, Physics::default()).unwrap();
        let f0 = vec![10.0, 20.0, 30.0, 20.0, 10.0];
        let f1 = vec![0.0, 5.0, 0.0, -5.0, 1.0];
        OcpProblem::new(
            ops,
            Source::Affine(vec![f0, f1]),
            CostWeights { beta, beta_g: beta },
            ParamBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn kkt_structure() {
        let p = toy(1e-3);
        let k = assemble_kkt(&p, &Scenario::steady(vec![0.5, 0.2])).unwrap();
        assert_eq!(k.k.asymmetry(), 0.0);
        assert_eq!(k.k.rows(), 15);
        assert!(k.rhs[..10].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn direct_satisfies_optimality_system() {
        let p = toy(1e-3);
        let mu = Scenario::steady(vec![0.3, -0.4]);
        let s = solve_direct(&p, &mu).unwrap();
        let f = p.load(&mu).unwrap();
        let (y, u, adj) = (&s.y, &s.u, s.p.as_ref().unwrap());
        let ay = p.ops.a.matvec(y);
        let bu = p.ops.b.matvec(u);
        let r1: Vec<f64> = ay
            .iter()
            .zip(&bu)
            .zip(&f)
            .map(|((a, b), f)| a - b - f)
            .collect();
        assert!(norm2(&r1) <= 1e-9 * norm2(&f));
        let ru = p.r.matvec(u);
        let btp = p.ops.b.t_matvec(adj);
        assert!(norm2(&sub(&ru, &btp)) <= 1e-9 * norm2(&btp));
        assert_eq!(s.cost, p.steady_cost(y, u));
        let y_unc = solve_sparse_unc(&p, &f);
        assert!(s.cost <= p.steady_cost(&y_unc, &[0.0; 5]));
    }

    fn solve_sparse_unc(p: &OcpProblem, f: &[f64]) -> Vec<f64> {
        crate::numerics::solve_sparse(&p.ops.a, f).unwrap()
    }

    #[test]
    fn kkt_matches_minimize_oracle() {
        let p = toy(1e-2);
        let mu = Scenario::steady(vec![0.8, 0.1]);
        let s = solve_direct(&p, &mu).unwrap();
        // Brute-force minimization of the discrete cost on the control alone.
        let a = p.ops.a.to_dense();
        let b = p.ops.b.to_dense();
        let f = p.load(&mu).unwrap();
        let cost = |u: &[f64]| {
            let mut rhs = b.matvec(u);
            rhs.iter_mut().zip(&f).for_each(|(r, f)| *r += f);
            let y = a.solve(&rhs).unwrap();
            p.steady_cost(&y, u)
        };
        let obj = |u: &[f64]| (cost(u), finite_diff_gradient(cost, u, 1e-3));
        let cfg = OptimizerConfig::lbfgs(2000, 1e-9);
        let r = minimize(obj, &[0.0; 5], &cfg).unwrap();
        let rel = norm2(&sub(&r.x, &s.u)) / norm2(&s.u);
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn huge_regularization_suppresses_control() {
        let p = toy(1e12);
        let s = solve_direct(&p, &Scenario::steady(vec![0.5, 0.5])).unwrap();
        let un = p.ops.mc.quad_form(&s.u).sqrt();
        let yn = p.ops.m.quad_form(&s.y).sqrt();
        assert!(un < 1e-6 * yn);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let p = toy(1e-3);
        let mu = Scenario::steady(vec![0.5, 0.5]);
        let mut rng = SplitMix64::new(3);
        let u: Vec<f64> = (0..5).map(|_| rng.uniform(-50.0, 50.0)).collect();
        let (_, g) = reduced_cost_gradient(&p, &mu, &u).unwrap();
        let fd = finite_diff_gradient(|v| reduced_cost_gradient(&p, &mu, v).unwrap().0, &u, 1e-3);
        assert!(norm2(&sub(&g, &fd)) <= 1e-5 * norm2(&g));
    }

    #[test]
    fn indirect_agrees_with_direct() {
        let p = toy(1e-4);
        let mu = Scenario::steady(vec![0.2, 0.9]);
        let d = solve_direct(&p, &mu).unwrap();
        let cfg = OptimizerConfig::lbfgs(500, 1e-12).with_line_search(LineSearch::ExactQuadratic);
        let i = solve_indirect(&p, &mu, &cfg).unwrap();
        assert!(norm2(&sub(&d.u, &i.u)) <= 1e-6 * norm2(&d.u));
        assert!(norm2(&sub(&d.y, &i.y)) <= 1e-6 * norm2(&d.y));
    }

    #[test]
    fn small_steepest_descent_step_decreases_cost() {
        let p = toy(1e-3);
        let mu = Scenario::steady(vec![0.6, 0.0]);
        let u0 = vec![1.0; 5];
        let (j0, g) = reduced_cost_gradient(&p, &mu, &u0).unwrap();
        let u1: Vec<f64> = u0.iter().zip(&g).map(|(u, g)| u - 1e-6 * g).collect();
        let (j1, _) = reduced_cost_gradient(&p, &mu, &u1).unwrap();
        assert!(j1 < j0);
        let cfg = OptimizerConfig::steepest_descent(1, 1e-30, 1e-3);
        let one = solve_indirect(&p, &mu, &cfg).unwrap();
        let (jz, _) = reduced_cost_gradient(&p, &mu, &[0.0; 5]).unwrap();
        assert!(one.cost < jz);
    }
}
