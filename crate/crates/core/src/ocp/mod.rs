//! Parametrized linear-quadratic optimal control of the steady (and
//! backward-Euler unsteady) heat equation.
//!
//! The cost is
//!
//! ```text
//! J(y, u) = yᵀ Mobs y + β uᵀ Mc u + β_g uᵀ Kc u
//! ```
//!
//! subject to `A y = B u + f(μ)`, where `f(μ)` is the Gaussian source load plus
//! the Robin load of the obstacle. The adjoint is scaled so that the KKT
//! system reads
//!
//! ```text
//! [ Mobs  0   Aᵀ ] [y]   [0]
//! [ 0     R  −Bᵀ ] [u] = [0]      R = β Mc + β_g Kc
//! [ A    −B   0  ] [p]   [f]
//! ```
//!
//! and the reduced gradient is `∇J(u) = 2 (R u − Bᵀ p)` with `Aᵀ p = −Mobs y`.

mod steady;
mod unsteady;

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, FemOperators, Mesh, MeshParams, Physics};
use crate::numerics::SparseMatrix;

pub use steady::{
    assemble_kkt, kkt_matrix, reduced_cost_gradient, solve_direct, solve_indirect, DirectSolver,
    KktSystem,
};
pub use unsteady::{solve_unsteady, unsteady_cost_gradient, unsteady_march};

/// A point `(t, μ)` of the time × parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: Vec<f64>,
    pub time: Option<f64>,
}

impl Scenario {
    pub fn steady(params: Vec<f64>) -> Self {
        Self { params, time: None }
    }

    pub fn at_time(params: Vec<f64>, time: f64) -> Self {
        Self {
            params,
            time: Some(time),
        }
    }
}

/// Axis-aligned parameter box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `θ ∈ (−π/2, π/2)`, `r ∈ (0.4, 0.9)`.
    pub fn cooling() -> Self {
        Self {
            lower: vec![-FRAC_PI_2, 0.4],
            upper: vec![FRAC_PI_2, 0.9],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Allows `lower == upper` per coordinate.
    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::invalid(
                "ocp",
                "parameter box bounds must be non-empty and of equal length",
            ));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::invalid(
                    "ocp",
                    format!("bad parameter interval [{l}, {u}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l >= u)
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.dim()
            && params
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(p, (l, u))| *p >= *l && *p <= *u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub beta: f64,
    pub beta_g: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            beta: 1e-8,
            beta_g: 1e-8,
        }
    }
}

/// Backward-Euler time grid on `[0, T]` with `steps` steps; the state starts
/// from `initial_state` (zero when absent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsteadyConfig {
    pub final_time: f64,
    pub steps: usize,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

impl UnsteadyConfig {
    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// `t_1, …, t_N`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.steps).map(|j| j as f64 * self.dt()).collect()
    }
}

/// Parameter dependence of the volume source.
#[derive(Clone, Debug)]
pub enum Source {
    /// Gaussian heat source centered at `(r cos θ, r sin θ)`, `μ = [θ, r]`.
    Gaussian(Arc<Mesh>),
    /// Parameter-independent load vector.
    Fixed(Vec<f64>),
    /// `Σ_k μ_k · v_k`.
    Affine(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub ops: FemOperators,
    pub source: Source,
    pub cost: CostWeights,
    pub param_box: ParamBox,
    pub unsteady: Option<UnsteadyConfig>,
    /// `β Mc + β_g Kc`.
    pub r: SparseMatrix,
}

impl OcpProblem {
    pub fn new(
        ops: FemOperators,
        source: Source,
        cost: CostWeights,
        param_box: ParamBox,
        unsteady: Option<UnsteadyConfig>,
    ) -> Result<Self> {
        if !(cost.beta > 0.0) || !(cost.beta_g >= 0.0) {
            return Err(Error::invalid(
                "ocp",
                format!(
                    "need β > 0 and β_g ≥ 0 (β = {}, β_g = {})",
                    cost.beta, cost.beta_g
                ),
            ));
        }
        param_box.validate()?;
        if param_box.is_degenerate() {
            return Err(Error::invalid("ocp", "parameter box has an empty interval"));
        }
        if let Some(u) = &unsteady {
            if !(u.final_time > 0.0) || u.steps == 0 {
                return Err(Error::invalid(
                    "ocp",
                    "unsteady grid needs T > 0 and at least one step",
                ));
            }
            if let Some(y0) = &u.initial_state {
                if y0.len() != ops.n_state() {
                    return Err(Error::dim(format!(
                        "initial state has {} entries, mesh has {}",
                        y0.len(),
                        ops.n_state()
                    )));
                }
            }
        }
        let n = ops.n_state();
        match &source {
            Source::Gaussian(m) if m.node_count() != n => {
                return Err(Error::dim("source mesh differs from operator mesh"))
            }
            Source::Fixed(v) if v.len() != n => return Err(Error::dim("fixed source length")),
            Source::Affine(vs)
                if vs.len() != param_box.dim() || vs.iter().any(|v| v.len() != n) =>
            {
                return Err(Error::dim(
                    "affine source needs one load vector per parameter",
                ))
            }
            Source::Gaussian(_) if param_box.dim() != 2 => {
                return Err(Error::dim("Gaussian source needs parameters [θ, r]"))
            }
            _ => {}
        }
        let r = ops.mc.scaled(cost.beta).add_scaled(&ops.kc, cost.beta_g);
        Ok(Self {
            ops,
            source,
            cost,
            param_box,
            unsteady,
            r,
        })
    }

    /// The steady cooling benchmark on the square with the circular obstacle.
    pub fn cooling(mesh: MeshParams, physics: Physics, cost: CostWeights) -> Result<Self> {
        let mesh = Arc::new(fem::build_mesh(mesh)?);
        let ops = fem::assemble(&mesh, physics)?;
        Self::new(ops, Source::Gaussian(mesh), cost, ParamBox::cooling(), None)
    }

    pub fn mesh(&self) -> Option<&Mesh> {
        match &self.source {
            Source::Gaussian(m) => Some(m),
            _ => None,
        }
    }

    pub fn n_state(&self) -> usize {
        self.ops.n_state()
    }

    pub fn n_control(&self) -> usize {
        self.ops.n_control()
    }

    fn check_params(&self, mu: &Scenario) -> Result<()> {
        if mu.params.len() != self.param_box.dim() {
            return Err(Error::dim(format!(
                "scenario has {} parameters, problem expects {}",
                mu.params.len(),
                self.param_box.dim()
            )));
        }
        Ok(())
    }

    /// Volume source load for the scenario (without the Robin term).
    pub fn source_load(&self, mu: &Scenario) -> Result<Vec<f64>> {
        self.check_params(mu)?;
        Ok(match &self.source {
            Source::Gaussian(mesh) => fem::gaussian_source(mesh, mu),
            Source::Fixed(v) => v.clone(),
            Source::Affine(vs) => {
                let mut f = vec![0.0; self.n_state()];
                for (m, v) in mu.params.iter().zip(vs) {
                    crate::numerics::dense::axpy(*m, v, &mut f);
                }
                f
            }
        })
    }

    /// `f(μ)`: source load plus the Robin load.
    pub fn load(&self, mu: &Scenario) -> Result<Vec<f64>> {
        let mut f = self.source_load(mu)?;
        for (fi, ri) in f.iter_mut().zip(&self.ops.robin_load) {
            *fi += ri;
        }
        Ok(f)
    }

    /// Hex FNV-1a digest of the discretization: the mesh text when a mesh is
    /// attached, otherwise the state operator, observation mass and coupling.
    pub fn mesh_hash(&self) -> String {
        let h = match self.mesh() {
            Some(m) => m.fingerprint(),
            None => {
                let mut bytes = Vec::new();
                for s in [&self.ops.a, &self.ops.mobs, &self.ops.b] {
                    for v in s.values() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                    for i in s.indices() {
                        bytes.extend_from_slice(&(*i as u64).to_le_bytes());
                    }
                }
                crate::io::fnv1a64(&bytes)
            }
        };
        format!("{h:016x}")
    }

    /// Steady cost `yᵀMobs y + uᵀ R u`.
    pub fn steady_cost(&self, y: &[f64], u: &[f64]) -> f64 {
        self.ops.mobs.quad_form(y) + self.r.quad_form(u)
    }
}

/// Optimal state, control and adjoint for one scenario. Unsteady solutions
/// store the time steps `1..=N_t` back to back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalPair {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Option<Vec<f64>>,
    pub cost: f64,
    pub iterations: usize,
    /// 1 for steady solutions.
    pub steps: usize,
}

impl OptimalPair {
    pub fn state_at(&self, step: usize) -> &[f64] {
        let n = self.y.len() / self.steps;
        &self.y[step * n..(step + 1) * n]
    }

    pub fn control_at(&self, step: usize) -> &[f64] {
        let n = self.u.len() / self.steps;
        &self.u[step * n..(step + 1) * n]
    }
}

/// Cost of a (possibly time-stacked) state/control pair. Unsteady pairs are
/// weighted by the step length (rectangle rule).
pub fn eval_cost(problem: &OcpProblem, y: &[f64], u: &[f64], mu: &Scenario) -> Result<f64> {
    problem.check_params(mu)?;
    let (ny, nu) = (problem.n_state(), problem.n_control());
    if y.len() == ny && u.len() == nu {
        return Ok(problem.steady_cost(y, u));
    }
    let cfg = problem.unsteady.as_ref().ok_or_else(|| {
        Error::dim(format!(
            "steady problem expects y of {ny} and u of {nu} entries"
        ))
    })?;
    let n = cfg.steps;
    if y.len() != n * ny || u.len() != n * nu {
        return Err(Error::dim(format!(
            "time-stacked pair must have {} and {} entries",
            n * ny,
            n * nu
        )));
    }
    Ok(cfg.dt()
        * (0..n)
            .map(|j| problem.steady_cost(&y[j * ny..(j + 1) * ny], &u[j * nu..(j + 1) * nu]))
            .sum::<f64>())
}
