//! Parameter-to-latent network φ and the ROM assembled around it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::numerics::{minimize, DenseMatrix, OptimizerConfig, SplitMix64};
use crate::ocp::{ParamBox, Scenario};
use crate::reduction::model::{self, KIND_REDUCERS, KIND_SURROGATE};
use crate::reduction::{Activation, AeMode, Autoencoder, MinMaxScaler, Mlp, PodBasis};
use crate::snapshots::SnapshotSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RomKind {
    PodNn,
    DlRom,
    PodDlRom,
}

/// Derived input features appended to the raw parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `r cos θ, r sin θ` from parameters `[θ, r]`.
    PolarToCartesian,
}

/// Linear or nonlinear reduction of one field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Reducer {
    Pod(PodBasis),
    Ae(Autoencoder),
}

impl Reducer {
    pub fn latent_dim(&self) -> usize {
        match self {
            Reducer::Pod(b) => b.latent_dim(),
            Reducer::Ae(a) => a.latent_dim(),
        }
    }

    pub fn full_dim(&self) -> usize {
        match self {
            Reducer::Pod(b) => b.full_dim(),
            Reducer::Ae(a) => a.full_dim(),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reducer::Pod(b) => b.project(x),
            Reducer::Ae(a) => Ok(a.encode_input(&a.to_input(x)?)),
        }
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Reducer::Pod(b) => b.v.matvec(z),
            Reducer::Ae(a) => a.decode(z),
        }
    }

    /// Encodes every column of `s`; latents are returned as columns.
    pub fn encode_columns(&self, s: &DenseMatrix) -> Result<DenseMatrix> {
        let cols = (0..s.cols())
            .map(|j| self.encode(&s.col(j)))
            .collect::<Result<Vec<_>>>()?;
        DenseMatrix::from_columns(self.latent_dim(), &cols)
    }
}

/// How scenarios are turned into φ inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub features: Vec<Feature>,
    pub use_time: bool,
    /// Fitted on the training inputs by [`phi_train`].
    pub scaler: MinMaxScaler,
}

/// Raw parameters followed by the derived features.
pub fn augment_features(mu: &[f64], features: &[Feature]) -> Vec<f64> {
    let mut out = mu.to_vec();
    for f in features {
        match f {
            Feature::PolarToCartesian => {
                let (theta, r) = (mu[0], mu[1]);
                out.push(r * theta.cos());
                out.push(r * theta.sin());
            }
        }
    }
    out
}

fn feature_count(param_dim: usize, features: &[Feature], use_time: bool) -> usize {
    param_dim + 2 * features.len() + usize::from(use_time)
}

impl InputSpec {
    /// Unscaled φ input: augmented parameters, then time when used.
    pub fn raw(&self, mu: &Scenario) -> Result<Vec<f64>> {
        let mut x = augment_features(&mu.params, &self.features);
        match (self.use_time, mu.time) {
            (true, Some(t)) => x.push(t),
            (false, None) => {}
            (true, None) => return Err(Error::invalid("surrogate", "model expects a time input")),
            (false, Some(_)) => {
                return Err(Error::invalid("surrogate", "model takes no time input"))
            }
        }
        if x.len() != self.scaler.dim() {
            return Err(Error::dim(format!(
                "φ input has {} features, model expects {}",
                x.len(),
                self.scaler.dim()
            )));
        }
        Ok(x)
    }

    pub fn scaled(&self, mu: &Scenario) -> Result<Vec<f64>> {
        Ok(self.scaler.scale(&self.raw(mu)?))
    }
}

/// Hyperparameters of φ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiSpec {
    pub hidden: Vec<usize>,
    pub features: Vec<Feature>,
    pub use_time: bool,
    /// Min/max scale latent targets before fitting.
    pub scale_latents: bool,
}

impl Default for PhiSpec {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50],
            features: vec![Feature::PolarToCartesian],
            use_time: false,
            scale_latents: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomModel {
    pub kind: RomKind,
    pub state: Reducer,
    pub control: Reducer,
    pub phi: Mlp,
    pub input: InputSpec,
    /// Maps latents to φ outputs; `None` trains on raw latents.
    pub latent_scaler: Option<MinMaxScaler>,
    /// Training box, used to flag extrapolation.
    pub param_box: ParamBox,
}

/// One online evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub latent_state: Vec<f64>,
    pub latent_control: Vec<f64>,
    /// The scenario lies outside the training box.
    pub extrapolated: bool,
}

fn check_kind(kind: RomKind, state: &Reducer, control: &Reducer) -> Result<()> {
    let pod_ae =
        |r: &Reducer| matches!(r, Reducer::Ae(a) if matches!(a.mode, AeMode::PodCoefficients(_)));
    let full_ae = |r: &Reducer| matches!(r, Reducer::Ae(a) if a.mode == AeMode::FullOrder);
    let ok = match kind {
        RomKind::PodNn => matches!((state, control), (Reducer::Pod(_), Reducer::Pod(_))),
        RomKind::DlRom => {
            (full_ae(state) || full_ae(control)) && !pod_ae(state) && !pod_ae(control)
        }
        RomKind::PodDlRom => pod_ae(state) || pod_ae(control),
    };
    if !ok {
        return Err(Error::invalid(
            "surrogate",
            format!("reducers do not form a {kind:?} model"),
        ));
    }
    Ok(())
}

impl RomModel {
    /// Untrained model with a fresh φ seeded by `seed`.
    pub fn new(
        kind: RomKind,
        state: Reducer,
        control: Reducer,
        spec: &PhiSpec,
        param_box: ParamBox,
        seed: u64,
    ) -> Result<Self> {
        check_kind(kind, &state, &control)?;
        if spec.features.contains(&Feature::PolarToCartesian) && param_box.dim() < 2 {
            return Err(Error::invalid(
                "surrogate",
                "polar features need parameters [θ, r]",
            ));
        }
        let n_in = feature_count(param_box.dim(), &spec.features, spec.use_time);
        let n_out = state.latent_dim() + control.latent_dim();
        let mut sizes = vec![n_in];
        sizes.extend(&spec.hidden);
        sizes.push(n_out);
        let phi = Mlp::new(&sizes, Activation::leaky(), &mut SplitMix64::new(seed))?;
        Ok(Self {
            kind,
            state,
            control,
            phi,
            input: InputSpec {
                features: spec.features.clone(),
                use_time: spec.use_time,
                scaler: MinMaxScaler::unit(n_in),
            },
            latent_scaler: spec.scale_latents.then(|| MinMaxScaler::unit(n_out)),
            param_box,
        })
    }

    /// `(N_y, N_u)`.
    pub fn latent_dims(&self) -> (usize, usize) {
        (self.state.latent_dim(), self.control.latent_dim())
    }

    /// Checks the dimension chain between input spec, φ and reducers.
    pub fn validate(&self) -> Result<()> {
        check_kind(self.kind, &self.state, &self.control)?;
        let (ny, nu) = self.latent_dims();
        let n_in = feature_count(
            self.param_box.dim(),
            &self.input.features,
            self.input.use_time,
        );
        if self.phi.input_dim() != n_in || self.input.scaler.dim() != n_in {
            return Err(Error::dim(format!(
                "φ takes {} inputs, spec yields {n_in}",
                self.phi.input_dim()
            )));
        }
        if self.phi.output_dim() != ny + nu
            || self
                .latent_scaler
                .as_ref()
                .is_some_and(|s| s.dim() != ny + nu)
        {
            return Err(Error::dim(format!(
                "φ yields {} outputs, reducers need {}",
                self.phi.output_dim(),
                ny + nu
            )));
        }
        Ok(())
    }

    /// Joint latent vector `[z_y; z_u]` of a snapshot pair.
    pub fn encode(&self, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.state.encode(y)?;
        z.extend(self.control.encode(u)?);
        Ok(z)
    }

    /// Reducer decoders applied to the joint latent vector.
    pub fn decode(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ny = self.state.latent_dim();
        (self.state.decode(&z[..ny]), self.control.decode(&z[ny..]))
    }

    /// Latent vector predicted by φ.
    pub fn latent(&self, mu: &Scenario) -> Result<Vec<f64>> {
        let out = self.phi.forward(&self.input.scaled(mu)?);
        Ok(match &self.latent_scaler {
            Some(s) => s.unscale(&out),
            None => out,
        })
    }
}

/// Forward pass of φ followed by the field decoders.
pub fn rom_predict(rom: &RomModel, mu: &Scenario) -> Result<Prediction> {
    let z = rom.latent(mu)?;
    let (y, u) = rom.decode(&z);
    let ny = rom.state.latent_dim();
    Ok(Prediction {
        y,
        u,
        latent_state: z[..ny].to_vec(),
        latent_control: z[ny..].to_vec(),
        extrapolated: !rom.param_box.contains(&mu.params),
    })
}

/// Batch mean of `w_y ‖ẑ_y − z_y‖² + w_u ‖ẑ_u − z_u‖²` with
/// `w_y = N_y/(N_y+N_u)`, `w_u = N_u/(N_y+N_u)`, and its parameter gradient.
/// Inputs and targets hold one sample per row.
pub fn phi_loss_gradient(
    phi: &Mlp,
    inputs: &DenseMatrix,
    targets: &DenseMatrix,
    n_y: usize,
) -> (f64, Vec<f64>) {
    let b = inputs.rows();
    let n = targets.cols();
    let w_y = n_y as f64 / n as f64;
    let w_u = (n - n_y) as f64 / n as f64;
    let trace = phi.forward_trace(inputs);
    let out = trace.output();
    let mut d_out = DenseMatrix::zeros(b, n);
    let mut loss = 0.0;
    for r in 0..b {
        let (o, t, g) = (out.row(r), targets.row(r), d_out.row_mut(r));
        for i in 0..n {
            let w = if i < n_y { w_y } else { w_u };
            let e = o[i] - t[i];
            loss += w * e * e;
            g[i] = 2.0 * w * e / b as f64;
        }
    }
    let (grad, _) = phi.backward(&trace, &d_out);
    (loss / b as f64, grad)
}

/// Fits the input and latent scalers on `train` and trains φ on the encoded
/// training snapshots. Reducers must already be fitted.
pub fn phi_train(
    rom: &RomModel,
    train: &SnapshotSet,
    cfg: &OptimizerConfig,
) -> Result<(RomModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::invalid("surrogate", "empty training set"));
    }
    if train.n_state() != rom.state.full_dim() || train.n_control() != rom.control.full_dim() {
        return Err(Error::dim("training snapshots do not match the reducers"));
    }
    let mut work = rom.clone();
    let m = train.len();
    let raw = train
        .scenarios
        .iter()
        .map(|s| work.input.raw(s))
        .collect::<Result<Vec<_>>>()?;
    let raw_cols = DenseMatrix::from_columns(work.input.scaler.dim(), &raw)?;
    work.input.scaler = MinMaxScaler::fit(&raw_cols);
    let (ny, nu) = work.latent_dims();
    let latents = (0..m)
        .map(|j| work.encode(&train.y.col(j), &train.u.col(j)))
        .collect::<Result<Vec<_>>>()?;
    if work.latent_scaler.is_some() {
        work.latent_scaler = Some(MinMaxScaler::fit(&DenseMatrix::from_columns(
            ny + nu,
            &latents,
        )?));
    }
    let mut inputs = DenseMatrix::zeros(m, raw_cols.rows());
    let mut targets = DenseMatrix::zeros(m, ny + nu);
    for j in 0..m {
        inputs
            .row_mut(j)
            .copy_from_slice(&work.input.scaler.scale(&raw[j]));
        let t = match &work.latent_scaler {
            Some(s) => s.scale(&latents[j]),
            None => latents[j].clone(),
        };
        targets.row_mut(j).copy_from_slice(&t);
    }
    let mut probe = work.phi.clone();
    let result = minimize(
        |p| {
            probe.set_params(p);
            phi_loss_gradient(&probe, &inputs, &targets, ny)
        },
        &work.phi.params(),
        cfg,
    )
    .map_err(|e| match e {
        Error::NanObjective { iteration } => Error::Diverged { iteration },
        other => other,
    })?;
    work.phi.set_params(&result.x);
    Ok((work, result.history))
}

fn write_reducer(w: &mut ByteWriter, r: &Reducer) {
    match r {
        Reducer::Pod(b) => {
            w.u8(0);
            model::write_pod(w, b);
        }
        Reducer::Ae(a) => {
            w.u8(1);
            model::write_autoencoder(w, a);
        }
    }
}

fn read_reducer(r: &mut ByteReader<'_>) -> Result<Reducer> {
    match r.u8("reducer")? {
        0 => Ok(Reducer::Pod(model::read_pod(r)?)),
        1 => Ok(Reducer::Ae(model::read_autoencoder(r)?)),
        t => Err(Error::Format(format!("unknown reducer tag {t}"))),
    }
}

/// State and control reducers stored together ahead of φ training.
pub fn reducers_to_bytes(
    state: &Reducer,
    control: &Reducer,
    manifest: &serde_json::Value,
) -> Result<Vec<u8>> {
    model::pack(KIND_REDUCERS, manifest, |w| {
        write_reducer(w, state);
        write_reducer(w, control);
    })
}

pub fn reducers_from_bytes(data: &[u8]) -> Result<(Reducer, Reducer, serde_json::Value)> {
    let mut r = model::open(data, KIND_REDUCERS)?;
    let state = read_reducer(&mut r)?;
    let control = read_reducer(&mut r)?;
    let manifest = model::read_manifest(&mut r)?;
    Ok((state, control, manifest))
}

/// Descriptive model fields, stored as JSON ahead of the numeric payload.
#[derive(Serialize, Deserialize)]
struct RomHeader {
    kind: RomKind,
    features: Vec<Feature>,
    use_time: bool,
    param_box: ParamBox,
}

pub fn rom_to_bytes(rom: &RomModel, manifest: &serde_json::Value) -> Result<Vec<u8>> {
    rom.validate()?;
    let header = serde_json::to_vec(&RomHeader {
        kind: rom.kind,
        features: rom.input.features.clone(),
        use_time: rom.input.use_time,
        param_box: rom.param_box.clone(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    model::pack(KIND_SURROGATE, manifest, |w| {
        w.bytes(&header);
        write_reducer(w, &rom.state);
        write_reducer(w, &rom.control);
        model::write_mlp(w, &rom.phi);
        model::write_scaler(w, Some(&rom.input.scaler));
        model::write_scaler(w, rom.latent_scaler.as_ref());
    })
}

pub fn rom_from_bytes(data: &[u8]) -> Result<(RomModel, serde_json::Value)> {
    let mut r = model::open(data, KIND_SURROGATE)?;
    let header: RomHeader = serde_json::from_slice(r.bytes("model header")?)
        .map_err(|e| Error::Format(format!("model header: {e}")))?;
    let state = read_reducer(&mut r)?;
    let control = read_reducer(&mut r)?;
    let phi = model::read_mlp(&mut r)?;
    let scaler =
        model::read_scaler(&mut r)?.ok_or_else(|| Error::Format("missing input scaler".into()))?;
    let latent_scaler = model::read_scaler(&mut r)?;
    let manifest = model::read_manifest(&mut r)?;
    let rom = RomModel {
        kind: header.kind,
        state,
        control,
        phi,
        input: InputSpec {
            features: header.features,
            use_time: header.use_time,
            scaler,
        },
        latent_scaler,
        param_box: header.param_box,
    };
    rom.validate()?;
    Ok((rom, manifest))
}

pub fn save_rom(rom: &RomModel, manifest: &serde_json::Value, path: &Path) -> Result<()> {
    std::fs::write(path, rom_to_bytes(rom, manifest)?)?;
    Ok(())
}

pub fn load_rom(path: &Path) -> Result<(RomModel, serde_json::Value)> {
    rom_from_bytes(&std::fs::read(path)?)
}
