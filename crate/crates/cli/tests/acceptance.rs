//! End-to-end acceptance checks. Everything runs inside one test so the
//! timing-sensitive checks do not compete with each other for cores.

use std::path::Path;
use std::time::Instant;

use ocprom::evalbench::rel_l2;
use ocprom::fem::{interval_operators, MeshParams, Physics};
use ocprom::numerics::dense::{dot, norm2, sub};
use ocprom::numerics::optimize::LineSearch;
use ocprom::numerics::{finite_diff_gradient, DenseMatrix, OptimizerConfig, SplitMix64};
use ocprom::ocp::{
    reduced_cost_gradient, solve_direct, solve_indirect, unsteady_cost_gradient, CostWeights,
    OcpProblem, ParamBox, Scenario, Source, UnsteadyConfig,
};
use ocprom::rb_baseline::{adjoint_snapshots, build_aggregated, RbSolver};
use ocprom::reduction::{
    ae_loss_gradient, pod_fit, Activation, AeArchitecture, AeMode, Autoencoder, Mlp, Scaling,
};
use ocprom::snapshots::{generate, sample_scenarios};
use ocprom::surrogate::phi_loss_gradient;
use ocprom_cli::commands::{cmd_bench_cooling, thresholds};
use ocprom_cli::config::RunConfig;
use serde_json::Value;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: u32, pass: bool, detail: String) {
    println!(
        "criterion {id:>2}: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    out.push(Outcome { id, pass, detail });
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(a, b)) / norm2(b)
}

/// `n` orthonormal columns of length `m` by Gram–Schmidt on Gaussian vectors.
fn random_orthonormal(m: usize, n: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &q {
                let a = dot(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= a * y);
            }
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    q
}

fn eckart_young(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = SplitMix64::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = 16 + rng.below(113);
        let n = 4 + rng.below(61).min(m - 4);
        let r = n.min(m);
        let decay = rng.uniform(0.05, 0.5);
        let sigma: Vec<f64> = (0..r).map(|i| 10.0 * (-decay * i as f64).exp()).collect();
        let u = random_orthonormal(m, r, &mut rng);
        let v = random_orthonormal(n, r, &mut rng);
        let s = DenseMatrix::from_fn(m, n, |i, j| {
            (0..r).map(|k| sigma[k] * u[k][i] * v[k][j]).sum()
        });
        let k = 1 + rng.below(r - 1);
        let tail = sigma[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = pod_fit(&s, k).unwrap().reconstruction_error(&s).unwrap();
        worst = worst.max((err - tail).abs() / tail);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        1,
        worst <= 1e-8 && secs < 5.0,
        format!("worst relative gap {worst:.2e} (≤ 1e-8), {secs:.2}s (< 5s)"),
    );
}

fn interval_problem(nodes: usize, unsteady: Option<UnsteadyConfig>) -> OcpProblem {
    let ops = interval_operators(nodes, Physics::default()).unwrap();
    let f0: Vec<f64> = (0..nodes).map(|i| 10.0 + (i as f64).sin()).collect();
    let f1: Vec<f64> = (0..nodes).map(|i| (0.7 * i as f64).cos()).collect();
    OcpProblem::new(
        ops,
        Source::Affine(vec![f0, f1]),
        CostWeights {
            beta: 1e-3,
            beta_g: 1e-3,
        },
        ParamBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(),
        unsteady,
    )
    .unwrap()
}

fn adjoint_gradients(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = SplitMix64::new(12);
    let mu = Scenario::steady(vec![0.4, -0.3]);
    let steady = interval_problem(10, None);
    let u: Vec<f64> = (0..steady.n_control())
        .map(|_| rng.uniform(-5.0, 5.0))
        .collect();
    let (_, g) = reduced_cost_gradient(&steady, &mu, &u).unwrap();
    let fd = finite_diff_gradient(
        |v| reduced_cost_gradient(&steady, &mu, v).unwrap().0,
        &u,
        1e-3,
    );
    let e_steady = rel(&g, &fd);

    let unsteady = interval_problem(
        10,
        Some(UnsteadyConfig {
            final_time: 0.5,
            steps: 5,
            initial_state: None,
        }),
    );
    let u: Vec<f64> = (0..5 * unsteady.n_control())
        .map(|_| rng.uniform(-5.0, 5.0))
        .collect();
    let (_, g) = unsteady_cost_gradient(&unsteady, &mu, &u).unwrap();
    let fd = finite_diff_gradient(
        |v| unsteady_cost_gradient(&unsteady, &mu, v).unwrap().0,
        &u,
        1e-3,
    );
    let e_unsteady = rel(&g, &fd);
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        2,
        e_steady <= 1e-5 && e_unsteady <= 1e-4 && secs < 10.0,
        format!("steady {e_steady:.2e} (≤ 1e-5), unsteady {e_unsteady:.2e} (≤ 1e-4), {secs:.2}s (< 10s)"),
    );
}

fn direct_indirect(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let p = OcpProblem::cooling(
        MeshParams {
            n: 32,
            ..MeshParams::default()
        },
        Physics::default(),
        CostWeights::default(),
    )
    .unwrap();
    let cfg = OptimizerConfig::lbfgs(5000, 1e-10)
        .with_memory(30)
        .with_line_search(LineSearch::ExactQuadratic);
    let (mut ey, mut eu): (f64, f64) = (0.0, 0.0);
    for s in sample_scenarios(&p.param_box, 10, 13).unwrap() {
        let d = solve_direct(&p, &s).unwrap();
        let i = solve_indirect(&p, &s, &cfg).unwrap();
        ey = ey.max(rel_l2(&d.y, &i.y, &p.ops.m).unwrap());
        eu = eu.max(rel_l2(&d.u, &i.u, &p.ops.mc).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        3,
        ey <= 1e-5 && eu <= 1e-5 && secs < 60.0,
        format!("max state {ey:.2e}, max control {eu:.2e} (≤ 1e-5), {secs:.2}s (< 60s)"),
    );
}

fn backprop(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = SplitMix64::new(14);
    let data = DenseMatrix::from_fn(9, 15, |_, _| rng.uniform(-2.0, 2.0));
    let arch = AeArchitecture {
        encoder_hidden: vec![8, 5],
        latent: 3,
        decoder_hidden: vec![5, 7],
    };
    let mut ae = Autoencoder::new(&arch, AeMode::FullOrder, 9, Scaling::None, 15).unwrap();
    for b in ae
        .encoder
        .biases
        .iter_mut()
        .chain(ae.decoder.biases.iter_mut())
    {
        b.iter_mut().for_each(|v| *v = 0.2 * rng.normal());
    }
    let ne = ae.encoder.n_params();
    let (_, g) = ae_loss_gradient(&ae, &data);
    let p0 = [ae.encoder.params(), ae.decoder.params()].concat();
    let fd = finite_diff_gradient(
        |p| {
            let mut a = ae.clone();
            a.encoder.set_params(&p[..ne]);
            a.decoder.set_params(&p[ne..]);
            ae_loss_gradient(&a, &data).0
        },
        &p0,
        1e-6,
    );
    let e_ae = rel(&g, &fd);

    let phi = Mlp::new(&[4, 10, 10, 5], Activation::leaky(), &mut rng).unwrap();
    let x = DenseMatrix::from_fn(12, 4, |_, _| rng.uniform(-1.0, 1.0));
    let t = DenseMatrix::from_fn(12, 5, |_, _| rng.normal());
    let (_, g) = phi_loss_gradient(&phi, &x, &t, 2);
    let fd = finite_diff_gradient(
        |p| {
            let mut m = phi.clone();
            m.set_params(p);
            phi_loss_gradient(&m, &x, &t, 2).0
        },
        &phi.params(),
        1e-6,
    );
    let e_phi = rel(&g, &fd);
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        4,
        e_ae <= 1e-5 && e_phi <= 1e-5 && secs < 5.0,
        format!("autoencoder {e_ae:.2e}, latent map {e_phi:.2e} (≤ 1e-5), {secs:.2}s (< 5s)"),
    );
}

fn rb_consistency(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let p = OcpProblem::cooling(
        MeshParams {
            n: 24,
            ..MeshParams::default()
        },
        Physics::default(),
        CostWeights::default(),
    )
    .unwrap();
    let set = generate(&p, &sample_scenarios(&p.param_box, 12, 16).unwrap(), 1).unwrap();
    let adj = adjoint_snapshots(&p, &set).unwrap();
    let k = set.len();
    let rb = RbSolver::new(&p, build_aggregated(&set.y, &adj, &set.u, k, k, k).unwrap()).unwrap();
    let (mut ey, mut eu): (f64, f64) = (0.0, 0.0);
    for (j, s) in set.scenarios.iter().enumerate() {
        let sol = rb.solve(&p, s).unwrap();
        ey = ey.max(rel(&sol.pair.y, &set.y.col(j)));
        eu = eu.max(rel(&sol.pair.u, &set.u.col(j)));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        8,
        ey <= 1e-6 && eu <= 1e-6 && secs < 120.0,
        format!("max state {ey:.2e}, max control {eu:.2e} (≤ 1e-6) over {k} scenarios, {secs:.2}s (< 120s)"),
    );
}

fn criterion_rows<'a>(summary: &'a Value, group: &str) -> Vec<&'a Value> {
    summary["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["group"].as_str() == Some(group))
        .collect()
}

fn describe(rows: &[&Value]) -> (bool, String) {
    let pass = !rows.is_empty() && rows.iter().all(|r| r["pass"].as_bool() == Some(true));
    let text = rows
        .iter()
        .map(|r| {
            format!(
                "{} {:.4} (limit {})",
                r["name"].as_str().unwrap(),
                r["value"].as_f64().unwrap(),
                r["threshold"]
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    (pass, text)
}

const DETERMINISTIC_ARTIFACTS: [&str; 8] = [
    "snapshots.bin",
    "train.bin",
    "test.bin",
    "reducers.bin",
    "model.bin",
    "eval_reconstruction.csv",
    "eval_prediction.csv",
    "sweep.csv",
];

fn bench(dir: &Path) -> (Value, f64) {
    let cfg = RunConfig {
        out: dir.to_path_buf(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let summary = cmd_bench_cooling(&cfg).unwrap();
    (summary, start.elapsed().as_secs_f64())
}

fn cooling_benchmark(out: &mut Vec<Outcome>) {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (summary, secs) = bench(&a);

    let (pass5, text5) = describe(&criterion_rows(&summary, "accuracy"));
    report(
        out,
        5,
        pass5 && secs < 1200.0,
        format!("{text5}, pipeline {secs:.1}s (< 1200s)"),
    );

    let eff = &summary["efficacy"];
    let ratio = eff["ratio"].as_f64().unwrap();
    let grid = thresholds::EFFICACY_GRID;
    report(
        out,
        6,
        ratio <= thresholds::EFFICACY_RATIO,
        format!(
            "controlled {:.4} / uncontrolled {:.4} = {ratio:.4} (≤ 0.05) on a {grid}x{grid} grid",
            eff["controlled"].as_f64().unwrap(),
            eff["uncontrolled"].as_f64().unwrap()
        ),
    );

    let (pass7, text7) = describe(&criterion_rows(&summary, "speed"));
    report(out, 7, pass7, text7);

    let (pass9, text9) = describe(&criterion_rows(&summary, "reduction"));
    report(out, 9, pass9, text9);

    bench(&b);
    let differing: Vec<&str> = DETERMINISTIC_ARTIFACTS
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    report(
        out,
        10,
        differing.is_empty(),
        format!(
            "{} artifacts compared, differing: {differing:?}",
            DETERMINISTIC_ARTIFACTS.len()
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut out = Vec::new();
    eckart_young(&mut out);
    adjoint_gradients(&mut out);
    direct_indirect(&mut out);
    backprop(&mut out);
    rb_consistency(&mut out);
    cooling_benchmark(&mut out);
    out.sort_by_key(|o| o.id);
    let failed: Vec<String> = out
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{}: {}", o.id, o.detail))
        .collect();
    assert!(failed.is_empty(), "failing criteria: {failed:#?}");
}
