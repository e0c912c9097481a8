//! Error metrics, parameter sweeps and timing of the surrogate against the
//! full-order solver.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::io::fmt_f64;
use crate::numerics::dense::sub;
use crate::numerics::{SparseLu, SparseMatrix, SplitMix64};
use crate::ocp::{solve_direct, OcpProblem, Scenario};
use crate::snapshots::SnapshotSet;
use crate::surrogate::{rom_predict, RomModel};

/// `√((t−a)ᵀ G (t−a) / tᵀ G t)`.
pub fn rel_l2(truth: &[f64], approx: &[f64], gram: &SparseMatrix) -> Result<f64> {
    if truth.len() != approx.len() || truth.len() != gram.rows() {
        return Err(Error::dim(format!(
            "relative error of vectors {} and {} with a {}-row Gram matrix",
            truth.len(),
            approx.len(),
            gram.rows()
        )));
    }
    let den = gram.quad_form(truth);
    if !(den > 0.0) {
        return Err(Error::Eval(
            "relative error undefined for a zero-norm truth".into(),
        ));
    }
    Ok((gram.quad_form(&sub(truth, approx)).max(0.0) / den).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Encode then decode the true snapshot.
    Reconstruction,
    /// Full online prediction from the scenario.
    Prediction,
}

/// Per-sample relative L2 errors on a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mode: EvalMode,
    /// Column ids of the evaluated samples.
    pub samples: Vec<u32>,
    pub eps_state: Vec<f64>,
    pub eps_control: Vec<f64>,
    pub mean_state: f64,
    pub mean_control: f64,
}

impl ErrorReport {
    fn new(mode: EvalMode, samples: Vec<u32>, eps_state: Vec<f64>, eps_control: Vec<f64>) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Self {
            mode,
            mean_state: mean(&eps_state),
            mean_control: mean(&eps_control),
            samples,
            eps_state,
            eps_control,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,eps_state,eps_control\n");
        for ((id, a), b) in self
            .samples
            .iter()
            .zip(&self.eps_state)
            .zip(&self.eps_control)
        {
            let _ = writeln!(s, "{id},{},{}", fmt_f64(*a), fmt_f64(*b));
        }
        s
    }
}

/// Identifies the columns a model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    /// Lineage hash of the generated set the training columns came from.
    pub lineage: String,
    pub column_ids: Vec<u32>,
}

impl TrainingRecord {
    pub fn of(set: &SnapshotSet) -> Self {
        Self {
            lineage: set.lineage(),
            column_ids: set.column_ids.clone(),
        }
    }
}

/// Reconstruction and prediction reports of `rom` on `test`. State errors use
/// the domain mass matrix, control errors the control-region mass matrix.
pub fn evaluate(
    rom: &RomModel,
    test: &SnapshotSet,
    ops: &FemOperators,
    trained_on: &TrainingRecord,
) -> Result<(ErrorReport, ErrorReport)> {
    if test.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    if test.lineage() == trained_on.lineage {
        if let Some(id) = test
            .column_ids
            .iter()
            .find(|id| trained_on.column_ids.contains(id))
        {
            return Err(Error::Eval(format!(
                "test column {id} was used for training"
            )));
        }
    }
    let per_sample = |j: usize| -> Result<[f64; 4]> {
        let (y, u) = (test.y.col(j), test.u.col(j));
        let (ry, ru) = rom.decode(&rom.encode(&y, &u)?);
        let p = rom_predict(rom, &test.scenarios[j])?;
        Ok([
            rel_l2(&y, &ry, &ops.m)?,
            rel_l2(&u, &ru, &ops.mc)?,
            rel_l2(&y, &p.y, &ops.m)?,
            rel_l2(&u, &p.u, &ops.mc)?,
        ])
    };
    let rows = (0..test.len())
        .into_par_iter()
        .map(per_sample)
        .collect::<Result<Vec<_>>>()?;
    let pick = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let ids = test.column_ids.clone();
    Ok((
        ErrorReport::new(EvalMode::Reconstruction, ids.clone(), pick(0), pick(1)),
        ErrorReport::new(EvalMode::Prediction, ids, pick(2), pick(3)),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub r: f64,
    /// Full-order cost of the predicted pair.
    pub j: f64,
    /// `‖ỹ‖_{L²(Γobs)}`.
    pub obs_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub n_theta: usize,
    pub n_r: usize,
    /// Row-major: θ index outer, r index inner.
    pub rows: Vec<SweepRow>,
    pub seconds: f64,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,r,J,obs_norm\n");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt_f64(row.theta),
                fmt_f64(row.r),
                fmt_f64(row.j),
                fmt_f64(row.obs_norm)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean cost over the lattice column with r index `k`.
    pub fn mean_cost_at_r(&self, k: usize) -> f64 {
        (0..self.n_theta)
            .map(|i| self.rows[i * self.n_r + k].j)
            .sum::<f64>()
            / self.n_theta as f64
    }
}

/// `n` equispaced points of `[a, b]` including both ends; the midpoint when
/// `n = 1`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n_theta × n_r` lattice of steady scenarios over a two-parameter box.
pub fn lattice(problem: &OcpProblem, n_theta: usize, n_r: usize) -> Result<Vec<Scenario>> {
    let b = &problem.param_box;
    if b.dim() != 2 {
        return Err(Error::invalid(
            "evalbench",
            "lattices need a two-parameter box",
        ));
    }
    if n_theta == 0 || n_r == 0 {
        return Err(Error::invalid(
            "evalbench",
            "lattice sizes must be positive",
        ));
    }
    let th = linspace(b.lower[0], b.upper[0], n_theta);
    let rs = linspace(b.lower[1], b.upper[1], n_r);
    Ok(th
        .iter()
        .flat_map(|&t| rs.iter().map(move |&r| Scenario::steady(vec![t, r])))
        .collect())
}

/// Cost landscape of the surrogate over a lattice of the parameter box.
pub fn sweep(
    rom: &RomModel,
    problem: &OcpProblem,
    n_theta: usize,
    n_r: usize,
) -> Result<SweepTable> {
    let scenarios = lattice(problem, n_theta, n_r)?;
    let start = Instant::now();
    let rows = scenarios
        .par_iter()
        .map(|s| {
            let p = rom_predict(rom, s)?;
            Ok(SweepRow {
                theta: s.params[0],
                r: s.params[1],
                j: problem.steady_cost(&p.y, &p.u),
                obs_norm: problem.ops.mobs.quad_form(&p.y).max(0.0).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        n_theta,
        n_r,
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    /// Median seconds per full-order direct solve.
    pub t_fom: f64,
    /// Median seconds per surrogate query.
    pub t_rom: f64,
    pub ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Number of timed full-order solves.
pub const FOM_REPEATS: usize = 5;

/// Median wall-clock of `solve_direct` against `rom_predict` on scenarios
/// drawn from the box with `seed`.
pub fn speedup(
    problem: &OcpProblem,
    rom: &RomModel,
    n_queries: usize,
    seed: u64,
) -> Result<Speedup> {
    if n_queries < 100 {
        return Err(Error::invalid(
            "evalbench",
            format!("need at least 100 queries, got {n_queries}"),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let b = &problem.param_box;
    let mut draw = || {
        Scenario::steady(
            (0..b.dim())
                .map(|k| rng.uniform(b.lower[k], b.upper[k]))
                .collect(),
        )
    };
    let mut fom = Vec::with_capacity(FOM_REPEATS);
    for _ in 0..FOM_REPEATS {
        let s = draw();
        let t = Instant::now();
        std::hint::black_box(solve_direct(problem, &s)?);
        fom.push(t.elapsed().as_secs_f64());
    }
    let queries: Vec<Scenario> = (0..n_queries).map(|_| draw()).collect();
    let mut rom_t = Vec::with_capacity(n_queries);
    for s in &queries {
        let t = Instant::now();
        std::hint::black_box(rom_predict(rom, s)?);
        rom_t.push(t.elapsed().as_secs_f64());
    }
    let (t_fom, t_rom) = (median(fom), median(rom_t));
    Ok(Speedup {
        t_fom,
        t_rom,
        ratio: t_fom / t_rom,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficacy {
    /// Mean over scenarios of the mean |y| on the obstacle under the
    /// predicted control.
    pub controlled: f64,
    /// Same with zero control.
    pub uncontrolled: f64,
    pub ratio: f64,
}

/// Solves the full-order state equation with the surrogate's controls on a
/// lattice and compares the obstacle temperature with the uncontrolled one.
pub fn control_efficacy(
    problem: &OcpProblem,
    rom: &RomModel,
    n_theta: usize,
    n_r: usize,
) -> Result<Efficacy> {
    let ops = &problem.ops;
    let lu = SparseLu::new(&ops.a)?;
    let scenarios = lattice(problem, n_theta, n_r)?;
    let pairs = scenarios
        .par_iter()
        .map(|s| {
            let f = problem.load(s)?;
            let u = rom_predict(rom, s)?.u;
            let bu = ops.b.matvec(&u);
            let forced: Vec<f64> = f.iter().zip(&bu).map(|(a, b)| a + b).collect();
            let y_ctl = lu.solve(&forced)?;
            let y_free = lu.solve(&f)?;
            Ok((
                ops.obstacle_mean_abs(&y_ctl),
                ops.obstacle_mean_abs(&y_free),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let controlled = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let uncontrolled = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(Efficacy {
        controlled,
        uncontrolled,
        ratio: controlled / uncontrolled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, MeshParams, Physics, Quadrature};
    use crate::ocp::CostWeights;
    use crate::reduction::pod_fit;
    use crate::snapshots::{generate, sample_scenarios, split};
    use crate::surrogate::{phi_train, PhiSpec, Reducer, RomKind};

    fn mesh_problem() -> OcpProblem {
        OcpProblem::cooling(
            MeshParams {
                n: 16,
                ..MeshParams::default()
            },
            Physics::default(),
            CostWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn rel_l2_basics() {
        let g = SparseMatrix::identity(3);
        let t = [1.0, -2.0, 0.5];
        assert_eq!(rel_l2(&t, &t, &g).unwrap(), 0.0);
        assert!((rel_l2(&t, &[2.0, -4.0, 1.0], &g).unwrap() - 1.0).abs() < 1e-15);
        assert!(rel_l2(&[0.0; 3], &t, &g).is_err());
        let c = -7.5;
        let a = [0.9, -2.1, 0.4];
        let scaled = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let (r1, r2) = (
            rel_l2(&t, &a, &g).unwrap(),
            rel_l2(&scaled(&t), &scaled(&a), &g).unwrap(),
        );
        assert!((r1 - r2).abs() < 1e-15);
    }

    #[test]
    fn rel_l2_matches_elementwise_quadrature() {
        // Integrate piecewise-linear fields exactly on each triangle with the
        // 3-point rule, independently of the assembled mass matrix.
        let mesh = build_mesh(MeshParams {
            n: 16,
            ..MeshParams::default()
        })
        .unwrap();
        let ops = crate::fem::assemble(&mesh, Physics::default()).unwrap();
        let mut rng = SplitMix64::new(3);
        let n = mesh.node_count();
        let t: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let l2sq = |v: &[f64]| -> f64 {
            let mut s = 0.0;
            for k in 0..mesh.triangles.len() {
                let [i, j, l] = mesh.triangles[k];
                let area = mesh.triangle_area(k);
                for (bary, w) in Quadrature::ThreePoint.points() {
                    let x = bary[0] * v[i] + bary[1] * v[j] + bary[2] * v[l];
                    s += w * area * x * x;
                }
            }
            s
        };
        let oracle = (l2sq(&sub(&t, &a)) / l2sq(&t)).sqrt();
        assert!((rel_l2(&t, &a, &ops.m).unwrap() - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn lattice_corners_and_order() {
        let p = mesh_problem();
        let s = lattice(&p, 2, 2).unwrap();
        let b = &p.param_box;
        let corners: Vec<Vec<f64>> = s.iter().map(|x| x.params.clone()).collect();
        assert_eq!(
            corners,
            vec![
                vec![b.lower[0], b.lower[1]],
                vec![b.lower[0], b.upper[1]],
                vec![b.upper[0], b.lower[1]],
                vec![b.upper[0], b.upper[1]],
            ]
        );
    }

    fn trained_pod_nn(p: &OcpProblem) -> (RomModel, SnapshotSet, SnapshotSet) {
        let set = generate(p, &sample_scenarios(&p.param_box, 30, 1).unwrap(), 2).unwrap();
        let (train, test) = split(&set, 0.2, 2).unwrap();
        let vy = pod_fit(&train.y, 6).unwrap();
        let vu = pod_fit(&train.u, 4).unwrap();
        let spec = PhiSpec {
            hidden: vec![12],
            ..PhiSpec::default()
        };
        let rom = RomModel::new(
            RomKind::PodNn,
            Reducer::Pod(vy),
            Reducer::Pod(vu),
            &spec,
            p.param_box.clone(),
            5,
        )
        .unwrap();
        let (rom, _) = phi_train(
            &rom,
            &train,
            &crate::numerics::OptimizerConfig::lbfgs(200, 1e-10),
        )
        .unwrap();
        (rom, train, test)
    }

    #[test]
    fn evaluate_reports_and_rejects_overlap() {
        let p = mesh_problem();
        let (rom, train, test) = trained_pod_nn(&p);
        let rec = TrainingRecord::of(&train);
        let (r, q) = evaluate(&rom, &test, &p.ops, &rec).unwrap();
        assert_eq!(r.samples.len(), test.len());
        assert!(r.eps_state.iter().chain(&q.eps_control).all(|e| *e >= 0.0));
        let mean = r.eps_state.iter().sum::<f64>() / r.eps_state.len() as f64;
        assert_eq!(r.mean_state, mean);
        assert!(evaluate(&rom, &train, &p.ops, &rec).is_err());
        let csv = q.to_csv();
        assert!(csv.starts_with("sample,eps_state,eps_control\n"));
        assert_eq!(csv.lines().count(), test.len() + 1);
    }

    #[test]
    fn exact_rank_pod_reconstruction_is_exact() {
        let p = mesh_problem();
        let set = generate(&p, &sample_scenarios(&p.param_box, 8, 4).unwrap(), 1).unwrap();
        let (train, test) = split(&set, 0.25, 1).unwrap();
        let vy = pod_fit(&set.y, 8).unwrap();
        let vu = pod_fit(&set.u, 8).unwrap();
        let rom = RomModel::new(
            RomKind::PodNn,
            Reducer::Pod(vy),
            Reducer::Pod(vu),
            &PhiSpec::default(),
            p.param_box.clone(),
            1,
        )
        .unwrap();
        let (r, _) = evaluate(&rom, &test, &p.ops, &TrainingRecord::of(&train)).unwrap();
        assert!(r.eps_state.iter().chain(&r.eps_control).all(|e| *e <= 1e-9));
    }

    #[test]
    fn sweep_rows_and_speed_inputs() {
        let p = mesh_problem();
        let (rom, _, _) = trained_pod_nn(&p);
        let t = sweep(&rom, &p, 3, 4).unwrap();
        assert_eq!(t.rows.len(), 12);
        assert!(t.rows.iter().all(|r| r.j >= 0.0 && r.obs_norm >= 0.0));
        assert_eq!(t.to_csv().lines().next(), Some("theta,r,J,obs_norm"));
        assert!(speedup(&p, &rom, 0, 1).is_err());
        assert!(speedup(&p, &rom, 99, 1).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
