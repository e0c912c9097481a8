use super::steady::Preconditioner;
use super::{OcpProblem, OptimalPair, Scenario, UnsteadyConfig};
use crate::error::{Error, Result};
use crate::numerics::dense::dot;
use crate::numerics::{minimize, OptimizerConfig, SparseLu};

/// Backward-Euler forward/backward sweeps for a fixed time grid:
///
/// ```text
/// (M + Δt A) yⁿ = M yⁿ⁻¹ + Δt (B uⁿ + f)
/// (M + Δt A)ᵀ pⁿ = M pⁿ⁺¹ − Δt Mobs yⁿ,   p^{N+1} = 0
/// ∂J/∂uⁿ = 2 Δt (R uⁿ − Bᵀ pⁿ)
/// ```
struct UnsteadyCost<'a> {
    problem: &'a OcpProblem,
    lu: SparseLu,
    f: Vec<f64>,
    dt: f64,
    steps: usize,
    y0: Vec<f64>,
}

struct Sweep {
    cost: f64,
    gradient: Vec<f64>,
    y: Vec<f64>,
    p: Vec<f64>,
}

impl<'a> UnsteadyCost<'a> {
    fn new(problem: &'a OcpProblem, mu: &Scenario) -> Result<Self> {
        let cfg: &UnsteadyConfig = problem
            .unsteady
            .as_ref()
            .ok_or_else(|| Error::invalid("ocp", "problem has no unsteady configuration"))?;
        let dt = cfg.dt();
        let s = problem.ops.m.add_scaled(&problem.ops.a, dt);
        Ok(Self {
            problem,
            lu: SparseLu::new(&s)?,
            f: problem.load(mu)?,
            dt,
            steps: cfg.steps,
            y0: cfg
                .initial_state
                .clone()
                .unwrap_or_else(|| vec![0.0; problem.n_state()]),
        })
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        let want = self.steps * self.problem.n_control();
        if u.len() != want {
            return Err(Error::dim(format!(
                "stacked control has {} entries, expected {want}",
                u.len()
            )));
        }
        Ok(())
    }

    fn march(&self, u: &[f64]) -> Result<Vec<f64>> {
        let ops = &self.problem.ops;
        let (ny, nu) = (ops.n_state(), ops.n_control());
        let mut y = Vec::with_capacity(self.steps * ny);
        let mut prev = self.y0.clone();
        for n in 0..self.steps {
            let mut rhs = ops.m.matvec(&prev);
            let bu = ops.b.matvec(&u[n * nu..(n + 1) * nu]);
            for ((r, b), f) in rhs.iter_mut().zip(&bu).zip(&self.f) {
                *r += self.dt * (b + f);
            }
            prev = self.lu.solve(&rhs)?;
            y.extend_from_slice(&prev);
        }
        Ok(y)
    }

    fn eval(&self, u: &[f64]) -> Result<Sweep> {
        let ops = &self.problem.ops;
        let (ny, nu) = (ops.n_state(), ops.n_control());
        let y = self.march(u)?;
        let mut p = vec![0.0; self.steps * ny];
        let mut next = vec![0.0; ny];
        let mut cost = 0.0;
        for n in (0..self.steps).rev() {
            let yn = &y[n * ny..(n + 1) * ny];
            let my = ops.mobs.matvec(yn);
            cost += dot(yn, &my);
            let mut rhs = ops.m.matvec(&next);
            for (r, m) in rhs.iter_mut().zip(&my) {
                *r -= self.dt * m;
            }
            next = self.lu.solve(&rhs)?;
            p[n * ny..(n + 1) * ny].copy_from_slice(&next);
        }
        let mut gradient = vec![0.0; self.steps * nu];
        for n in 0..self.steps {
            let un = &u[n * nu..(n + 1) * nu];
            let ru = self.problem.r.matvec(un);
            cost += dot(un, &ru);
            let btp = ops.b.t_matvec(&p[n * ny..(n + 1) * ny]);
            for ((g, r), b) in gradient[n * nu..(n + 1) * nu].iter_mut().zip(&ru).zip(&btp) {
                *g = 2.0 * self.dt * (r - b);
            }
        }
        Ok(Sweep {
            cost: cost * self.dt,
            gradient,
            y,
            p,
        })
    }
}

/// Time-stacked states produced by the stacked control `u`.
pub fn unsteady_march(problem: &OcpProblem, mu: &Scenario, u: &[f64]) -> Result<Vec<f64>> {
    let c = UnsteadyCost::new(problem, mu)?;
    c.check(u)?;
    c.march(u)
}

/// Time-summed reduced cost and its adjoint gradient.
pub fn unsteady_cost_gradient(
    problem: &OcpProblem,
    mu: &Scenario,
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let c = UnsteadyCost::new(problem, mu)?;
    c.check(u)?;
    let s = c.eval(u)?;
    Ok((s.cost, s.gradient))
}

/// Optimizes the time-stacked control with forward state and backward
/// adjoint marches, using the same per-step change of variables as
/// [`super::solve_indirect`].
pub fn solve_unsteady(
    problem: &OcpProblem,
    mu: &Scenario,
    cfg: &OptimizerConfig,
) -> Result<OptimalPair> {
    let c = UnsteadyCost::new(problem, mu)?;
    let (nu, steps) = (problem.n_control(), c.steps);
    let pre = Preconditioner::new(&problem.r, c.eval(&vec![0.0; steps * nu])?.cost)?;
    let blockwise = |v: &[f64], f: &dyn Fn(&[f64]) -> Vec<f64>| -> Vec<f64> {
        v.chunks(nu).flat_map(f).collect()
    };
    let control = |w: &[f64]| blockwise(w, &|b| pre.control(b));
    let mut failure: Option<Error> = None;
    let objective = |w: &[f64]| {
        let u = control(w);
        match c.eval(&u) {
            Ok(s) => (
                s.cost * pre.scale,
                blockwise(&s.gradient, &|g| pre.gradient(g)),
            ),
            Err(err) => {
                failure.get_or_insert(err);
                (f64::NAN, vec![f64::NAN; w.len()])
            }
        }
    };
    let result = minimize(objective, &vec![0.0; steps * nu], cfg);
    if let Some(err) = failure {
        return Err(err);
    }
    let result = result.map_err(|e| {
        let control = match &e {
            Error::LineSearch { x, .. } => control(x),
            _ => Vec::new(),
        };
        Error::Optimizer {
            source: Box::new(e),
            control,
        }
    })?;
    let u = control(&result.x);
    let s = c.eval(&u)?;
    Ok(OptimalPair {
        y: s.y,
        u,
        p: Some(s.p),
        cost: s.cost,
        iterations: result.iterations,
        steps,
    })
}
