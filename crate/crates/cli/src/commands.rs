use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use ocprom::evalbench::{
    control_efficacy, evaluate, rel_l2, speedup, sweep, ErrorReport, TrainingRecord,
};
use ocprom::io::{file_hash, fmt_f64};
use ocprom::numerics::dense::{norm2, sub};
use ocprom::numerics::{finite_diff_gradient, DenseMatrix, SplitMix64};
use ocprom::ocp::{
    reduced_cost_gradient, solve_direct, unsteady_cost_gradient, OcpProblem, Scenario,
};
use ocprom::reduction::{
    ae_loss_gradient, ae_train, pod_fit, AeArchitecture, AeMode, Autoencoder, PodBasis, Scaling,
};
use ocprom::snapshots::{self, sample_scenarios, snapshot_optimizer, split};
use ocprom::surrogate::{
    load_rom, phi_loss_gradient, phi_train, reducers_from_bytes, reducers_to_bytes, rom_predict,
    save_rom, Reducer, RomKind, RomModel,
};
use serde_json::{json, Value};

use crate::config::{FieldReduction, RunConfig};
use crate::CliError;

pub const ALL_SNAPSHOTS: &str = "snapshots.bin";
pub const TRAIN_SNAPSHOTS: &str = "train.bin";
pub const TEST_SNAPSHOTS: &str = "test.bin";
pub const REDUCERS: &str = "reducers.bin";
pub const MODEL: &str = "model.bin";

fn ensure_out(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))
}

fn require(path: &Path, stage: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Missing(format!(
            "{} (run `{stage}` first)",
            path.display()
        )));
    }
    Ok(())
}

fn check_hash(expected: &str, found: &str) -> Result<(), CliError> {
    if expected != found {
        return Err(ocprom::Error::Provenance {
            expected: expected.to_string(),
            found: found.to_string(),
        }
        .into());
    }
    Ok(())
}

fn manifest_str<'a>(m: &'a Value, key: &str) -> Result<&'a str, CliError> {
    m.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Config(format!("model manifest lacks `{key}`")))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Solves the full-order problem for sampled scenarios and writes the full,
/// training and test snapshot files.
pub fn cmd_snapshots(cfg: &RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    ensure_out(cfg)?;
    let problem = cfg.problem()?;
    let s = &cfg.snapshots;
    let scenarios = sample_scenarios(&problem.param_box, s.count, s.seed)?;
    let opt = s
        .unsteady_optimizer
        .clone()
        .unwrap_or_else(snapshot_optimizer);
    let mut set = snapshots::generate_with(&problem, &scenarios, s.workers, &opt)?;
    set.provenance.seed = Some(s.seed);
    let (train, test) = split(&set, s.test_fraction, s.split_seed)?;
    snapshots::save(&set, &cfg.path(ALL_SNAPSHOTS))?;
    snapshots::save(&train, &cfg.path(TRAIN_SNAPSHOTS))?;
    snapshots::save(&test, &cfg.path(TEST_SNAPSHOTS))?;
    info!(
        "{} snapshots, {} train / {} test",
        set.len(),
        train.len(),
        test.len()
    );
    Ok(json!({
        "command": "snapshots",
        "n_state": set.n_state(),
        "n_control": set.n_control(),
        "columns": set.len(),
        "train_columns": train.len(),
        "test_columns": test.len(),
        "mesh_hash": set.provenance.mesh_hash,
        "snapshots_file": file_hash(&cfg.path(ALL_SNAPSHOTS))?,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn build_reducer(
    field: &FieldReduction,
    data: &DenseMatrix,
    cfg: &RunConfig,
    name: &str,
) -> Result<(Reducer, Value), CliError> {
    let basis = match field.pod_rank {
        Some(n) => Some(pod_fit(data, n)?),
        None => None,
    };
    let Some(ae_cfg) = &field.autoencoder else {
        let b = basis.ok_or_else(|| {
            CliError::Config(format!("{name}: need a POD rank or an autoencoder"))
        })?;
        return Ok((Reducer::Pod(b), json!({"kind": "pod"})));
    };
    let (mode, input) = match basis {
        Some(b) => {
            let coeffs = b.project_columns(data)?;
            (AeMode::PodCoefficients(b), coeffs)
        }
        None => (AeMode::FullOrder, data.clone()),
    };
    let ae = Autoencoder::new(
        &ae_cfg.architecture,
        mode,
        input.rows(),
        ae_cfg.scaling,
        ae_cfg.seed,
    )?;
    let (ae, history) = ae_train(&ae, &input, &cfg.reduction.optimizer)?;
    info!(
        "{name} autoencoder: loss {:e} -> {:e}",
        history[0],
        history[history.len() - 1]
    );
    let summary = json!({
        "kind": "autoencoder",
        "initial_loss": history[0],
        "final_loss": history[history.len() - 1],
        "iterations": history.len() - 1,
    });
    Ok((Reducer::Ae(ae), summary))
}

/// Fits the state and control reducers on the training snapshots.
pub fn cmd_reduce(cfg: &RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let train_path = cfg.path(TRAIN_SNAPSHOTS);
    require(&train_path, "snapshots")?;
    let train = snapshots::load_verified(&train_path, &problem, cfg.snapshots.seed)?;
    let (state, s_sum) = build_reducer(&cfg.reduction.state, &train.y, cfg, "state")?;
    let (control, c_sum) = build_reducer(&cfg.reduction.control, &train.u, cfg, "control")?;
    let manifest = json!({
        "train_file": file_hash(&train_path)?,
        "mesh_hash": train.provenance.mesh_hash,
        "reduction": cfg.reduction,
    });
    let bytes = reducers_to_bytes(&state, &control, &manifest)?;
    write_text_bytes(&cfg.path(REDUCERS), &bytes)?;
    Ok(json!({
        "command": "reduce",
        "latent_state": state.latent_dim(),
        "latent_control": control.latent_dim(),
        "state": s_sum,
        "control": c_sum,
        "reducers_file": file_hash(&cfg.path(REDUCERS))?,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn write_text_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn rom_kind(state: &Reducer, control: &Reducer) -> RomKind {
    let on_pod =
        |r: &Reducer| matches!(r, Reducer::Ae(a) if matches!(a.mode, AeMode::PodCoefficients(_)));
    let any_ae = |r: &Reducer| matches!(r, Reducer::Ae(_));
    if on_pod(state) || on_pod(control) {
        RomKind::PodDlRom
    } else if any_ae(state) || any_ae(control) {
        RomKind::DlRom
    } else {
        RomKind::PodNn
    }
}

/// Trains φ on the training snapshots encoded by the stored reducers.
pub fn cmd_train(cfg: &RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    let (train_path, red_path) = (cfg.path(TRAIN_SNAPSHOTS), cfg.path(REDUCERS));
    require(&train_path, "snapshots")?;
    require(&red_path, "reduce")?;
    let red_bytes = std::fs::read(&red_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", red_path.display())))?;
    let (state, control, red_manifest) = reducers_from_bytes(&red_bytes)?;
    let train_hash = file_hash(&train_path)?;
    check_hash(manifest_str(&red_manifest, "train_file")?, &train_hash)?;
    let train = snapshots::load(&train_path)?;
    let kind = rom_kind(&state, &control);
    let rom = RomModel::new(
        kind,
        state,
        control,
        &cfg.phi.network,
        cfg.param_box.clone(),
        cfg.phi.seed,
    )?;
    let (rom, history) = phi_train(&rom, &train, &cfg.phi.optimizer)?;
    let manifest = json!({
        "train_file": train_hash,
        "reducers_file": file_hash(&red_path)?,
        "mesh_hash": train.provenance.mesh_hash,
        "training": TrainingRecord::of(&train),
        "phi": cfg.phi,
    });
    save_rom(&rom, &manifest, &cfg.path(MODEL))?;
    Ok(json!({
        "command": "train",
        "kind": kind,
        "initial_loss": history[0],
        "final_loss": history[history.len() - 1],
        "iterations": history.len() - 1,
        "model_file": file_hash(&cfg.path(MODEL))?,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn load_model(cfg: &RunConfig, problem: &OcpProblem) -> Result<(RomModel, Value), CliError> {
    let path = cfg.path(MODEL);
    require(&path, "train")?;
    let (rom, manifest) = load_rom(&path)?;
    check_hash(manifest_str(&manifest, "mesh_hash")?, &problem.mesh_hash())?;
    Ok((rom, manifest))
}

fn report_summary(r: &ErrorReport) -> Value {
    json!({"mean_state": r.mean_state, "mean_control": r.mean_control, "samples": r.samples.len()})
}

/// Reconstruction and prediction errors on the test snapshots.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let (rom, manifest) = load_model(cfg, &problem)?;
    let test_path = cfg.path(TEST_SNAPSHOTS);
    require(&test_path, "snapshots")?;
    let test = snapshots::load(&test_path)?;
    check_hash(&problem.mesh_hash(), &test.provenance.mesh_hash)?;
    let record: TrainingRecord = serde_json::from_value(manifest["training"].clone())
        .map_err(|e| CliError::Config(format!("model manifest: {e}")))?;
    let (rec, pred) = evaluate(&rom, &test, &problem.ops, &record)?;
    write_text(&cfg.path("eval_reconstruction.csv"), &rec.to_csv())?;
    write_text(&cfg.path("eval_prediction.csv"), &pred.to_csv())?;
    Ok(json!({
        "command": "eval",
        "reconstruction": report_summary(&rec),
        "prediction": report_summary(&pred),
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn column_csv(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        let _ = writeln!(s, "{}", fmt_f64(*x));
    }
    s
}

/// Surrogate solution at one scenario; with `verify`, also the errors
/// against a fresh full-order solve.
pub fn cmd_predict(
    cfg: &RunConfig,
    theta: f64,
    r: f64,
    time: Option<f64>,
    verify: bool,
) -> Result<Value, CliError> {
    let start = Instant::now();
    ensure_out(cfg)?;
    let problem = cfg.problem()?;
    let (rom, _) = load_model(cfg, &problem)?;
    let mu = Scenario {
        params: vec![theta, r],
        time,
    };
    let t = Instant::now();
    let pred = rom_predict(&rom, &mu)?;
    let predict_seconds = t.elapsed().as_secs_f64();
    write_text(&cfg.path("predict_state.csv"), &column_csv(&pred.y))?;
    write_text(&cfg.path("predict_control.csv"), &column_csv(&pred.u))?;
    let mut out = json!({
        "command": "predict",
        "theta": theta,
        "r": r,
        "time": time,
        "extrapolated": pred.extrapolated,
        "cost": problem.steady_cost(&pred.y, &pred.u),
        "obstacle_mean_abs": problem.ops.obstacle_mean_abs(&pred.y),
        "predict_seconds": predict_seconds,
    });
    if verify {
        let (y, u) = match (&problem.unsteady, time) {
            (None, _) => {
                let full = solve_direct(&problem, &mu)?;
                (full.y, full.u)
            }
            (Some(un), Some(t)) => {
                let grid = un.grid();
                let k = grid
                    .iter()
                    .position(|g| (g - t).abs() <= 1e-12 * un.final_time)
                    .ok_or_else(|| CliError::Config(format!("time {t} is not on the time grid")))?;
                let opt = cfg
                    .snapshots
                    .unsteady_optimizer
                    .clone()
                    .unwrap_or_else(snapshot_optimizer);
                let full = ocprom::ocp::solve_unsteady(
                    &problem,
                    &Scenario::steady(mu.params.clone()),
                    &opt,
                )?;
                (full.state_at(k).to_vec(), full.control_at(k).to_vec())
            }
            (Some(_), None) => {
                return Err(CliError::Config(
                    "unsteady verification needs --time".into(),
                ))
            }
        };
        out["eps_state"] = json!(rel_l2(&y, &pred.y, &problem.ops.m)?);
        out["eps_control"] = json!(rel_l2(&u, &pred.u, &problem.ops.mc)?);
    }
    out["seconds"] = json!(start.elapsed().as_secs_f64());
    Ok(out)
}

/// Cost landscape over an `n_theta × n_r` lattice, written to `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, n_theta: usize, n_r: usize) -> Result<Value, CliError> {
    let problem = cfg.problem()?;
    let (rom, _) = load_model(cfg, &problem)?;
    let table = sweep(&rom, &problem, n_theta, n_r)?;
    table.write_csv(&cfg.path("sweep.csv"))?;
    Ok(json!({
        "command": "sweep",
        "rows": table.rows.len(),
        "seconds": table.seconds,
        "mean_cost_smallest_r": table.mean_cost_at_r(0),
        "mean_cost_largest_r": table.mean_cost_at_r(n_r - 1),
    }))
}

/// POD basis the state autoencoder sits on, if any.
fn outer_state_basis(rom: &RomModel) -> Option<&PodBasis> {
    match &rom.state {
        Reducer::Ae(a) => match &a.mode {
            AeMode::PodCoefficients(b) => Some(b),
            AeMode::FullOrder => None,
        },
        Reducer::Pod(_) => None,
    }
}

/// Thresholds of the desk-scale cooling benchmark.
pub mod thresholds {
    pub const EPS_STATE: f64 = 0.08;
    pub const EPS_CONTROL: f64 = 0.05;
    pub const EFFICACY_RATIO: f64 = 1.0 / 20.0;
    pub const SPEEDUP: f64 = 100.0;
    pub const SWEEP_SECONDS: f64 = 30.0;
    pub const SWEEP_SIZE: usize = 100;
    pub const EFFICACY_GRID: usize = 10;
    pub const QUERIES: usize = 1000;
}

fn row(group: &str, name: &str, value: f64, threshold: f64, pass: bool) -> Value {
    json!({"group": group, "name": name, "value": value, "threshold": threshold, "pass": pass})
}

/// Full offline/online pipeline followed by the measured benchmark table.
pub fn cmd_bench_cooling(cfg: &RunConfig) -> Result<Value, CliError> {
    use thresholds::*;
    let start = Instant::now();
    let stages = vec![
        cmd_snapshots(cfg)?,
        cmd_reduce(cfg)?,
        cmd_train(cfg)?,
        cmd_eval(cfg)?,
    ];
    let problem = cfg.problem()?;
    let (rom, _) = load_model(cfg, &problem)?;
    let test = snapshots::load(&cfg.path(TEST_SNAPSHOTS))?;
    let eval = &stages[3];
    let (eps_y, eps_u) = (
        eval["prediction"]["mean_state"]
            .as_f64()
            .unwrap_or(f64::NAN),
        eval["prediction"]["mean_control"]
            .as_f64()
            .unwrap_or(f64::NAN),
    );
    let eff = control_efficacy(&problem, &rom, EFFICACY_GRID, EFFICACY_GRID)?;
    let sp = speedup(&problem, &rom, QUERIES, cfg.snapshots.seed)?;
    let table = sweep(&rom, &problem, SWEEP_SIZE, SWEEP_SIZE)?;
    table.write_csv(&cfg.path("sweep.csv"))?;
    let mut rows = vec![
        row(
            "accuracy",
            "prediction error, state",
            eps_y,
            EPS_STATE,
            eps_y <= EPS_STATE,
        ),
        row(
            "accuracy",
            "prediction error, control",
            eps_u,
            EPS_CONTROL,
            eps_u <= EPS_CONTROL,
        ),
        row(
            "efficacy",
            "controlled / uncontrolled obstacle temperature",
            eff.ratio,
            EFFICACY_RATIO,
            eff.ratio <= EFFICACY_RATIO,
        ),
        row(
            "speed",
            "full-order / surrogate time",
            sp.ratio,
            SPEEDUP,
            sp.ratio >= SPEEDUP,
        ),
        row(
            "speed",
            "100x100 sweep seconds",
            table.seconds,
            SWEEP_SECONDS,
            table.seconds <= SWEEP_SECONDS,
        ),
    ];
    if let Some(outer) = outer_state_basis(&rom) {
        let latent = rom.state.latent_dim();
        let pod = outer.truncated(latent)?;
        let mut pod_err = 0.0;
        let mut ae_err = 0.0;
        for j in 0..test.len() {
            let y = test.y.col(j);
            let p = pod.lift(&pod.project(&y)?)?;
            pod_err += rel_l2(&y, &p, &problem.ops.m)?;
            ae_err += rel_l2(
                &y,
                &rom.state.decode(&rom.state.encode(&y)?),
                &problem.ops.m,
            )?;
        }
        let n = test.len() as f64;
        rows.push(row(
            "reduction",
            "autoencoder / POD reconstruction error at equal latent size",
            ae_err / pod_err,
            1.0,
            ae_err < pod_err,
        ));
        info!(
            "state reconstruction at latent {latent}: autoencoder {:.4}, POD {:.4}",
            ae_err / n,
            pod_err / n
        );
    }
    let all = rows.iter().all(|r| r["pass"].as_bool() == Some(true));
    Ok(json!({
        "command": "bench-cooling",
        "stages": stages,
        "criteria": rows,
        "efficacy": eff,
        "speedup": sp,
        "pass": all,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(a, b)) / norm2(b)
}

/// Gradient and oracle checks on small instances.
pub fn cmd_check(cfg: &RunConfig) -> Result<Value, CliError> {
    let start = Instant::now();
    let mut rng = SplitMix64::new(cfg.snapshots.seed);
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, tol: f64| {
        checks.push(json!({"name": name, "value": value, "tolerance": tol, "pass": value <= tol}));
    };

    let small = RunConfig {
        mesh: ocprom::fem::MeshParams { n: 16, ..cfg.mesh },
        unsteady: None,
        ..cfg.clone()
    };
    let problem = small.problem()?;
    let mu = Scenario::steady(vec![0.3, 0.6]);
    let u0: Vec<f64> = (0..problem.n_control())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let (_, g) = reduced_cost_gradient(&problem, &mu, &u0)?;
    let fd = finite_diff_gradient(
        |u| reduced_cost_gradient(&problem, &mu, u).map_or(f64::NAN, |r| r.0),
        &u0,
        1e-4,
    );
    push(
        "steady reduced gradient vs finite differences",
        rel_gap(&g, &fd),
        1e-5,
    );

    let unsteady = OcpProblem::new(
        problem.ops.clone(),
        problem.source.clone(),
        problem.cost,
        problem.param_box.clone(),
        Some(ocprom::ocp::UnsteadyConfig {
            final_time: 0.1,
            steps: 3,
            initial_state: None,
        }),
    )?;
    let uu: Vec<f64> = (0..3 * problem.n_control())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let (_, g) = unsteady_cost_gradient(&unsteady, &mu, &uu)?;
    let fd = finite_diff_gradient(
        |u| unsteady_cost_gradient(&unsteady, &mu, u).map_or(f64::NAN, |r| r.0),
        &uu,
        1e-4,
    );
    push(
        "unsteady reduced gradient vs finite differences",
        rel_gap(&g, &fd),
        1e-4,
    );

    let data = DenseMatrix::from_fn(8, 12, |_, _| rng.uniform(-2.0, 2.0));
    let arch = AeArchitecture {
        encoder_hidden: vec![7],
        latent: 3,
        decoder_hidden: vec![6],
    };
    let mut ae = Autoencoder::new(
        &arch,
        AeMode::FullOrder,
        8,
        Scaling::None,
        cfg.snapshots.seed,
    )?;
    for b in ae
        .encoder
        .biases
        .iter_mut()
        .chain(ae.decoder.biases.iter_mut())
    {
        b.iter_mut().for_each(|v| *v = 0.1 * rng.normal());
    }
    let (_, g) = ae_loss_gradient(&ae, &data);
    let fd = finite_diff_gradient(
        |p| {
            let mut a = ae.clone();
            let ne = a.encoder.n_params();
            a.encoder.set_params(&p[..ne]);
            a.decoder.set_params(&p[ne..]);
            ae_loss_gradient(&a, &data).0
        },
        &[ae.encoder.params(), ae.decoder.params()].concat(),
        1e-6,
    );
    push(
        "autoencoder backpropagation vs finite differences",
        rel_gap(&g, &fd),
        1e-5,
    );

    let phi = ocprom::reduction::Mlp::new(
        &[4, 9, 9, 5],
        ocprom::reduction::Activation::leaky(),
        &mut rng,
    )?;
    let x = DenseMatrix::from_fn(10, 4, |_, _| rng.uniform(-1.0, 1.0));
    let t = DenseMatrix::from_fn(10, 5, |_, _| rng.normal());
    let (_, g) = phi_loss_gradient(&phi, &x, &t, 3);
    let fd = finite_diff_gradient(
        |p| {
            let mut m = phi.clone();
            m.set_params(p);
            phi_loss_gradient(&m, &x, &t, 3).0
        },
        &phi.params(),
        1e-6,
    );
    push(
        "latent map backpropagation vs finite differences",
        rel_gap(&g, &fd),
        1e-5,
    );

    let s = DenseMatrix::from_fn(40, 15, |_, _| rng.normal());
    let b = pod_fit(&s, 5)?;
    let tail = b.singular_values[5..]
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    push(
        "POD truncation error vs singular value tail",
        (b.reconstruction_error(&s)? - tail).abs() / tail,
        1e-8,
    );

    let pass = checks.iter().all(|c| c["pass"].as_bool() == Some(true));
    Ok(json!({
        "command": "check",
        "checks": checks,
        "pass": pass,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}
