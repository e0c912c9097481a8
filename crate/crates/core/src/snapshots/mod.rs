//! Scenario sampling, full-order snapshot generation, train/test splits and
//! persistence.
//!
//! Columns are ordered scenario-major, then time-major: for scenarios
//! `μ1, μ2` on a grid `t1, t2` the layout is `(μ1,t1), (μ1,t2), (μ2,t1), (μ2,t2)`.
//! Adjoint fields are not kept.

mod file;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Physics;
use crate::io::fnv1a64;
use crate::numerics::dense::norm2;
use crate::numerics::{DenseMatrix, LineSearch, OptimizerConfig, SplitMix64};
use crate::ocp::{
    solve_unsteady, CostWeights, DirectSolver, OcpProblem, OptimalPair, ParamBox, Scenario,
    UnsteadyConfig,
};

pub use file::{from_bytes, load, load_verified, save, to_bytes, write_csv, MAGIC, VERSION};

/// Where a snapshot set came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub mesh_hash: String,
    pub physics: Physics,
    pub cost: CostWeights,
    pub param_box: ParamBox,
    pub unsteady: Option<UnsteadyConfig>,
    pub solver: String,
    /// Seed used to sample the scenarios.
    pub seed: Option<u64>,
    /// Content hash of the generated set this one was split from.
    pub parent: Option<String>,
    pub split: Option<SplitInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub test_fraction: f64,
    pub seed: u64,
    pub role: SplitRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

/// Paired optimal state and control snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    /// `N_y × M`.
    pub y: DenseMatrix,
    /// `N_u × M`.
    pub u: DenseMatrix,
    pub scenarios: Vec<Scenario>,
    pub time_grid: Option<Vec<f64>>,
    /// Optimizer iterations of the solve behind every column.
    pub iterations: Vec<u32>,
    /// Column position in the originally generated set.
    pub column_ids: Vec<u32>,
    pub provenance: Provenance,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn n_state(&self) -> usize {
        self.y.rows()
    }

    pub fn n_control(&self) -> usize {
        self.u.rows()
    }

    pub fn param_dim(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.params.len())
    }

    /// FNV-1a digest of the numerical content (scenarios, Y, U).
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * (self.y.as_slice().len() + self.u.as_slice().len()));
        for s in &self.scenarios {
            for p in &s.params {
                bytes.extend_from_slice(&p.to_le_bytes());
            }
            bytes.extend_from_slice(&s.time.unwrap_or(f64::NAN).to_le_bytes());
        }
        for v in self.y.as_slice().iter().chain(self.u.as_slice()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        format!("{:016x}", fnv1a64(&bytes))
    }

    /// Hash identifying the generated set this one descends from.
    pub fn lineage(&self) -> String {
        self.provenance
            .parent
            .clone()
            .unwrap_or_else(|| self.content_hash())
    }

    pub fn select(&self, idx: &[usize]) -> SnapshotSet {
        SnapshotSet {
            y: self.y.select_columns(idx),
            u: self.u.select_columns(idx),
            scenarios: idx.iter().map(|&i| self.scenarios[i].clone()).collect(),
            time_grid: self.time_grid.clone(),
            iterations: idx.iter().map(|&i| self.iterations[i]).collect(),
            column_ids: idx.iter().map(|&i| self.column_ids[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.scenarios.len();
        if self.y.cols() != m
            || self.u.cols() != m
            || self.iterations.len() != m
            || self.column_ids.len() != m
        {
            return Err(Error::dim(format!(
                "snapshot set: {} scenarios, Y has {} columns, U has {}",
                m,
                self.y.cols(),
                self.u.cols()
            )));
        }
        let p = self.param_dim();
        if self.scenarios.iter().any(|s| s.params.len() != p) {
            return Err(Error::dim(
                "snapshot set: scenarios with differing parameter counts",
            ));
        }
        Ok(())
    }
}

/// I.i.d. uniform samples of the box; deterministic in `seed`. Each
/// scenario draws its coordinates in order from one SplitMix64 stream.
pub fn sample_scenarios(param_box: &ParamBox, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    param_box.validate()?;
    if count == 0 {
        return Err(Error::invalid("snapshots", "need at least one scenario"));
    }
    let mut rng = SplitMix64::new(seed);
    Ok((0..count)
        .map(|_| {
            Scenario::steady(
                param_box
                    .lower
                    .iter()
                    .zip(&param_box.upper)
                    .map(|(l, u)| rng.uniform(*l, *u))
                    .collect(),
            )
        })
        .collect())
}

/// Optimizer settings used for snapshot-grade unsteady solves.
pub fn snapshot_optimizer() -> OptimizerConfig {
    OptimizerConfig::lbfgs(5000, 1e-10)
        .with_memory(30)
        .with_line_search(LineSearch::ExactQuadratic)
}

/// Full-order optimal pairs for every scenario, computed on `workers`
/// threads. The result does not depend on `workers`.
pub fn generate(
    problem: &OcpProblem,
    scenarios: &[Scenario],
    workers: usize,
) -> Result<SnapshotSet> {
    generate_with(problem, scenarios, workers, &snapshot_optimizer())
}

pub fn generate_with(
    problem: &OcpProblem,
    scenarios: &[Scenario],
    workers: usize,
    unsteady_cfg: &OptimizerConfig,
) -> Result<SnapshotSet> {
    if scenarios.is_empty() {
        return Err(Error::invalid("snapshots", "no scenarios to solve"));
    }
    if workers == 0 {
        return Err(Error::invalid("snapshots", "workers must be at least 1"));
    }
    let direct = match problem.unsteady {
        None => Some(DirectSolver::new(problem)?),
        Some(_) => None,
    };
    let solve_one = |mu: &Scenario| -> Result<OptimalPair> {
        match &direct {
            Some(d) => d.solve(problem, mu),
            None => solve_unsteady(problem, mu, unsteady_cfg),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("snapshots", format!("thread pool: {e}")))?;
    let results: Vec<Result<OptimalPair>> =
        pool.install(|| scenarios.par_iter().map(solve_one).collect());

    let steps = problem.unsteady.as_ref().map_or(1, |c| c.steps);
    let time_grid = problem.unsteady.as_ref().map(|c| c.grid());
    let (ny, nu) = (problem.n_state(), problem.n_control());
    let m = scenarios.len() * steps;
    let mut y = DenseMatrix::zeros(ny, m);
    let mut u = DenseMatrix::zeros(nu, m);
    let mut cols = Vec::with_capacity(m);
    let mut iterations = Vec::with_capacity(m);
    for (i, (mu, res)) in scenarios.iter().zip(results).enumerate() {
        let pair = res.map_err(|e| Error::ScenarioFailed {
            index: i,
            params: mu.params.clone(),
            source: Box::new(e),
        })?;
        for j in 0..steps {
            let c = i * steps + j;
            y.set_col(c, pair.state_at(j));
            u.set_col(c, pair.control_at(j));
            cols.push(match &time_grid {
                Some(g) => Scenario::at_time(mu.params.clone(), g[j]),
                None => Scenario::steady(mu.params.clone()),
            });
            iterations.push(pair.iterations as u32);
        }
    }
    let solver = match &problem.unsteady {
        None => "direct-kkt".to_string(),
        Some(_) => format!(
            "unsteady-{:?}-tol{:e}",
            unsteady_cfg.kind, unsteady_cfg.gradient_tolerance
        )
        .to_lowercase(),
    };
    Ok(SnapshotSet {
        y,
        u,
        scenarios: cols,
        time_grid,
        iterations,
        column_ids: (0..m as u32).collect(),
        provenance: Provenance {
            mesh_hash: problem.mesh_hash(),
            physics: problem.ops.physics,
            cost: problem.cost,
            param_box: problem.param_box.clone(),
            unsteady: problem.unsteady.clone(),
            solver,
            seed: None,
            parent: None,
            split: None,
        },
    })
}

/// Shuffles the columns with `seed` and cuts off `round(M · test_fraction)`
/// of them as the test set.
pub fn split(
    set: &SnapshotSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(SnapshotSet, SnapshotSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(
            "snapshots",
            format!("test fraction {test_fraction} not in (0, 1)"),
        ));
    }
    let m = set.len();
    let n_test = (m as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == m {
        return Err(Error::invalid(
            "snapshots",
            format!("test fraction {test_fraction} of {m} columns leaves one side empty"),
        ));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    let (test_idx, train_idx) = perm.split_at(n_test);
    let parent = set.lineage();
    let tag = |mut s: SnapshotSet, role| {
        s.provenance.parent = Some(parent.clone());
        s.provenance.split = Some(SplitInfo {
            test_fraction,
            seed,
            role,
        });
        s
    };
    Ok((
        tag(set.select(train_idx), SplitRole::Train),
        tag(set.select(test_idx), SplitRole::Test),
    ))
}

/// Re-substitutes up to `count` randomly chosen columns into the state
/// equation and fails if a relative residual exceeds `1e-8`. Unsteady
/// columns are checked when their predecessor in time is also present.
pub fn verify_columns(
    problem: &OcpProblem,
    set: &SnapshotSet,
    count: usize,
    seed: u64,
) -> Result<()> {
    if set.n_state() != problem.n_state() || set.n_control() != problem.n_control() {
        return Err(Error::Provenance {
            expected: format!(
                "{} state / {} control dofs",
                problem.n_state(),
                problem.n_control()
            ),
            found: format!("{} / {}", set.n_state(), set.n_control()),
        });
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let ops = &problem.ops;
    for &c in idx.iter().take(count) {
        let mu = &set.scenarios[c];
        let f = problem.load(mu)?;
        let (y, u) = (set.y.col(c), set.u.col(c));
        let bu = ops.b.matvec(&u);
        let (res, scale) = match (&problem.unsteady, mu.time) {
            (None, _) => {
                let ay = ops.a.matvec(&y);
                let r: Vec<f64> = ay
                    .iter()
                    .zip(&bu)
                    .zip(&f)
                    .map(|((a, b), f)| a - b - f)
                    .collect();
                (norm2(&r), norm2(&f))
            }
            (Some(cfg), Some(t)) => {
                let dt = cfg.dt();
                let prev = if (t - dt).abs() < 1e-12 * cfg.final_time.max(1.0) {
                    Some(
                        cfg.initial_state
                            .clone()
                            .unwrap_or_else(|| vec![0.0; y.len()]),
                    )
                } else {
                    (0..set.len())
                        .find(|&k| {
                            set.scenarios[k].params == mu.params
                                && set.scenarios[k]
                                    .time
                                    .is_some_and(|s| (s - (t - dt)).abs() < 1e-9 * dt)
                        })
                        .map(|k| set.y.col(k))
                };
                let Some(prev) = prev else { continue };
                let sy = ops.m.matvec(&y);
                let ay = ops.a.matvec(&y);
                let mp = ops.m.matvec(&prev);
                let r: Vec<f64> = (0..y.len())
                    .map(|i| sy[i] + dt * ay[i] - mp[i] - dt * (bu[i] + f[i]))
                    .collect();
                let rhs: Vec<f64> = (0..y.len()).map(|i| mp[i] + dt * (bu[i] + f[i])).collect();
                (norm2(&r), norm2(&rhs))
            }
            (Some(_), None) => return Err(Error::Format("unsteady snapshot without time".into())),
        };
        if res > 1e-8 * scale {
            return Err(Error::Format(format!(
                "column {c} violates the state equation (relative residual {:e})",
                res / scale
            )));
        }
    }
    Ok(())
}
