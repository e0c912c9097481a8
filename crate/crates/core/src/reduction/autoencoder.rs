use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::pod::PodBasis;
use crate::error::{Error, Result};
use crate::numerics::{minimize, DenseMatrix, OptimizerConfig, SplitMix64};

/// Per-feature affine map of `[lo, hi]` onto `[−1, 1]`. Constant features
/// use a unit width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    /// Maps `[−1, 1]` onto itself.
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Fits the ranges of the rows of `data` (features × samples).
    pub fn fit(data: &DenseMatrix) -> Self {
        let (lo, hi) = (0..data.rows())
            .map(|i| {
                data.row(i)
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                        (l.min(v), h.max(v))
                    })
            })
            .unzip();
        Self { lo, hi }
    }

    /// One common range for all features: the extremes over all of `data`.
    pub fn fit_uniform(data: &DenseMatrix) -> Self {
        let (l, h) = data
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        Self {
            lo: vec![l; data.rows()],
            hi: vec![h; data.rows()],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn width(&self, i: usize) -> f64 {
        let w = self.hi[i] - self.lo[i];
        if w > 0.0 {
            w
        } else {
            1.0
        }
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (v - self.lo[i]) / self.width(i) - 1.0)
            .collect()
    }

    pub fn unscale(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(i, v)| self.lo[i] + 0.5 * (v + 1.0) * self.width(i))
            .collect()
    }
}

/// How [`ae_train`] fits the input scaler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Raw inputs.
    None,
    /// Separate min/max per feature.
    PerFeature,
    /// A single min/max over all features, which keeps the relative size of
    /// POD coefficients.
    #[default]
    Uniform,
}

/// What the encoder sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AeMode {
    /// Full-order vectors.
    FullOrder,
    /// POD coefficients `Vᵀ x` of full-order vectors.
    PodCoefficients(PodBasis),
}

/// Hidden widths of the coder pair around the latent layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeArchitecture {
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Default for AeArchitecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![70, 30],
            latent: 6,
            decoder_hidden: vec![30, 50, 70],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub mode: AeMode,
    pub scaling: Scaling,
    /// Input scaling; the decoder produces scaled features.
    pub scaler: Option<MinMaxScaler>,
}

impl Autoencoder {
    /// Fresh coder pair with leaky-ReLU hidden layers. The scaler is fitted
    /// on the data passed to [`ae_train`].
    pub fn new(
        arch: &AeArchitecture,
        mode: AeMode,
        input_dim: usize,
        scaling: Scaling,
        seed: u64,
    ) -> Result<Self> {
        if let AeMode::PodCoefficients(b) = &mode {
            if b.latent_dim() != input_dim {
                return Err(Error::dim(format!(
                    "encoder input {input_dim} differs from POD rank {}",
                    b.latent_dim()
                )));
            }
        }
        let mut rng = SplitMix64::new(seed);
        let mut enc = vec![input_dim];
        enc.extend(&arch.encoder_hidden);
        enc.push(arch.latent);
        let mut dec = vec![arch.latent];
        dec.extend(&arch.decoder_hidden);
        dec.push(input_dim);
        Ok(Self {
            encoder: Mlp::new(&enc, Activation::leaky(), &mut rng)?,
            decoder: Mlp::new(&dec, Activation::leaky(), &mut rng)?,
            mode,
            scaling,
            scaler: (scaling != Scaling::None).then(|| MinMaxScaler::unit(input_dim)),
        })
    }

    /// Assembles a coder pair; a given scaler is kept as per-feature.
    pub fn from_parts(
        encoder: Mlp,
        decoder: Mlp,
        mode: AeMode,
        scaler: Option<MinMaxScaler>,
    ) -> Result<Self> {
        let input = encoder.input_dim();
        if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != input {
            return Err(Error::dim("encoder and decoder do not chain"));
        }
        if let AeMode::PodCoefficients(b) = &mode {
            if b.latent_dim() != input {
                return Err(Error::dim("encoder input differs from POD rank"));
            }
        }
        if scaler.as_ref().is_some_and(|s| s.dim() != input) {
            return Err(Error::dim("scaler dimension"));
        }
        Ok(Self {
            encoder,
            decoder,
            mode,
            scaling: if scaler.is_some() {
                Scaling::PerFeature
            } else {
                Scaling::None
            },
            scaler,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Full-order dimension of reconstructions.
    pub fn full_dim(&self) -> usize {
        match &self.mode {
            AeMode::FullOrder => self.input_dim(),
            AeMode::PodCoefficients(b) => b.full_dim(),
        }
    }

    /// Encoder input for a full-order vector.
    pub fn to_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.mode {
            AeMode::FullOrder => {
                if x.len() != self.input_dim() {
                    return Err(Error::dim(format!(
                        "autoencoder input {} vs {}",
                        x.len(),
                        self.input_dim()
                    )));
                }
                Ok(x.to_vec())
            }
            AeMode::PodCoefficients(b) => b.project(x),
        }
    }

    /// Latent code of an encoder-input vector.
    pub fn encode_input(&self, input: &[f64]) -> Vec<f64> {
        match &self.scaler {
            Some(s) => self.encoder.forward(&s.scale(input)),
            None => self.encoder.forward(input),
        }
    }

    /// Decoder output mapped back to encoder-input space.
    pub fn decode_to_input(&self, z: &[f64]) -> Vec<f64> {
        let out = self.decoder.forward(z);
        match &self.scaler {
            Some(s) => s.unscale(&out),
            None => out,
        }
    }

    /// Full-order reconstruction of a latent code (includes the POD lift).
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let coeffs = self.decode_to_input(z);
        match &self.mode {
            AeMode::FullOrder => coeffs,
            AeMode::PodCoefficients(b) => b.v.matvec(&coeffs),
        }
    }

    fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let ne = self.encoder.n_params();
        self.encoder.set_params(&p[..ne]);
        self.decoder.set_params(&p[ne..]);
    }
}

/// `(latent, full-order reconstruction)` of a full-order vector.
pub fn ae_apply(ae: &Autoencoder, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = ae.encode_input(&ae.to_input(x)?);
    let rec = ae.decode(&z);
    Ok((z, rec))
}

/// Batch loss `mean_b ‖x_b − x̂_b‖²` in encoder-input space and its gradient
/// with respect to the flattened (encoder, decoder) parameters. `data` holds
/// one sample per column.
pub fn ae_loss_gradient(ae: &Autoencoder, data: &DenseMatrix) -> (f64, Vec<f64>) {
    let n = data.cols();
    let d = data.rows();
    let raw = data.transpose();
    let scaled = match &ae.scaler {
        Some(s) => {
            let mut m = raw.clone();
            for r in 0..n {
                let v = s.scale(raw.row(r));
                m.row_mut(r).copy_from_slice(&v);
            }
            m
        }
        None => raw.clone(),
    };
    let te = ae.encoder.forward_trace(&scaled);
    let td = ae.decoder.forward_trace(te.output());
    let out = td.output();
    let mut d_out = DenseMatrix::zeros(n, d);
    let mut loss = 0.0;
    for r in 0..n {
        let (o, x, g) = (out.row(r), raw.row(r), d_out.row_mut(r));
        for i in 0..d {
            let (xhat, w) = match &ae.scaler {
                Some(s) => (s.lo[i] + 0.5 * (o[i] + 1.0) * s.width(i), s.width(i)),
                None => (o[i], 2.0),
            };
            let e = xhat - x[i];
            loss += e * e;
            g[i] = e * w / n as f64;
        }
    }
    let (gd, d_latent) = ae.decoder.backward(&td, &d_out);
    let (ge, _) = ae.encoder.backward(&te, &d_latent);
    let mut grad = ge;
    grad.extend(gd);
    (loss / n as f64, grad)
}

/// Full-batch training on `data` (encoder-input space, one sample per
/// column). Returns the trained coder pair and the loss per iteration.
pub fn ae_train(
    ae: &Autoencoder,
    data: &DenseMatrix,
    cfg: &OptimizerConfig,
) -> Result<(Autoencoder, Vec<f64>)> {
    if data.rows() != ae.input_dim() {
        return Err(Error::dim(format!(
            "training data has {} features, encoder expects {}",
            data.rows(),
            ae.input_dim()
        )));
    }
    if data.cols() == 0 {
        return Err(Error::invalid("reduction", "no training samples"));
    }
    let mut work = ae.clone();
    work.scaler = match work.scaling {
        Scaling::None => None,
        Scaling::PerFeature => Some(MinMaxScaler::fit(data)),
        Scaling::Uniform => Some(MinMaxScaler::fit_uniform(data)),
    };
    let mut probe = work.clone();
    let objective = |p: &[f64]| {
        probe.set_params(p);
        ae_loss_gradient(&probe, data)
    };
    debug_assert_eq!(work.params().len(), work.n_params());
    let result = minimize(objective, &work.params(), cfg).map_err(|e| match e {
        Error::NanObjective { iteration } => Error::Diverged { iteration },
        other => other,
    })?;
    work.set_params(&result.x);
    Ok((work, result.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dense::{norm2, sub};
    use crate::numerics::finite_diff_gradient;
    use crate::reduction::pod_fit;

    fn identity_ae(d: usize) -> Autoencoder {
        let eye = DenseMatrix::identity(d);
        let enc =
            Mlp::from_layers(vec![eye.clone()], vec![vec![0.0; d]], Activation::Identity).unwrap();
        let dec = Mlp::from_layers(vec![eye], vec![vec![0.0; d]], Activation::Identity).unwrap();
        Autoencoder::from_parts(enc, dec, AeMode::FullOrder, None).unwrap()
    }

    #[test]
    fn identity_coder_has_zero_loss() {
        let mut rng = SplitMix64::new(1);
        let data = DenseMatrix::from_fn(4, 7, |_, _| rng.normal());
        let ae = identity_ae(4);
        assert_eq!(ae_loss_gradient(&ae, &data).0, 0.0);
        let x = data.col(2);
        assert_eq!(ae_apply(&ae, &x).unwrap().1, x);
    }

    #[test]
    fn zero_decoder_returns_bias() {
        let mut rng = SplitMix64::new(2);
        let mut ae = Autoencoder::new(
            &AeArchitecture::default(),
            AeMode::FullOrder,
            5,
            Scaling::None,
            3,
        )
        .unwrap();
        let last = ae.decoder.weights.len() - 1;
        for w in &mut ae.decoder.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        ae.decoder.biases[last] = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        assert_eq!(ae_apply(&ae, &x).unwrap().1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn scaler_round_trip() {
        let data = DenseMatrix::from_row_major(2, 3, vec![1.0, 3.0, 2.0, 5.0, 5.0, 5.0]).unwrap();
        let s = MinMaxScaler::fit(&data);
        assert_eq!(s.scale(&[1.0, 5.0]), vec![-1.0, -1.0]);
        assert_eq!(s.scale(&[3.0, 5.0])[0], 1.0);
        assert_eq!(s.unscale(&s.scale(&[2.0, 5.0])), vec![2.0, 5.0]);
        let u = MinMaxScaler::fit_uniform(&data);
        assert_eq!((u.lo.clone(), u.hi.clone()), (vec![1.0; 2], vec![5.0; 2]));
        assert_eq!(u.scale(&[3.0, 5.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(4);
        let arch = AeArchitecture {
            encoder_hidden: vec![6],
            latent: 2,
            decoder_hidden: vec![5],
        };
        let data = DenseMatrix::from_fn(4, 9, |_, _| rng.uniform(-3.0, 3.0));
        let mut ae = Autoencoder::new(&arch, AeMode::FullOrder, 4, Scaling::PerFeature, 5).unwrap();
        ae.scaler = Some(MinMaxScaler::fit(&data));
        let mut p0 = ae.params();
        p0.iter_mut().for_each(|v| *v += 0.05 * rng.normal());
        ae.set_params(&p0);
        let (_, g) = ae_loss_gradient(&ae, &data);
        let fd = finite_diff_gradient(
            |p| {
                let mut a = ae.clone();
                a.set_params(p);
                ae_loss_gradient(&a, &data).0
            },
            &p0,
            1e-6,
        );
        assert!(norm2(&sub(&g, &fd)) <= 1e-5 * norm2(&fd));
    }

    #[test]
    fn learns_one_dimensional_manifold() {
        // Points on a closed-form curve in 10D, parametrized by t.
        let m = 60;
        let curve = |t: f64| -> Vec<f64> {
            (0..10)
                .map(|k| ((k + 1) as f64 * 0.3 * t).sin() + 0.2 * k as f64 * t)
                .collect()
        };
        let cols: Vec<Vec<f64>> = (0..m).map(|j| curve(j as f64 / (m - 1) as f64)).collect();
        let data = DenseMatrix::from_columns(10, &cols).unwrap();
        let arch = AeArchitecture {
            encoder_hidden: vec![16, 16],
            latent: 1,
            decoder_hidden: vec![16, 16],
        };
        let ae = Autoencoder::new(&arch, AeMode::FullOrder, 10, Scaling::PerFeature, 11).unwrap();
        let cfg = OptimizerConfig::lbfgs(3000, 1e-9);
        let (trained, hist) = ae_train(&ae, &data, &cfg).unwrap();
        assert!(hist.last().unwrap() <= &hist[0]);
        let mut num = 0.0;
        let mut den = 0.0;
        for c in &cols {
            let (_, r) = ae_apply(&trained, c).unwrap();
            num += norm2(&sub(c, &r)).powi(2);
            den += norm2(c).powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.01, "relative error {rel}");
    }

    #[test]
    fn pod_mode_reconstruction_includes_lift() {
        let mut rng = SplitMix64::new(6);
        let s = DenseMatrix::from_fn(12, 8, |_, _| rng.normal());
        let b = pod_fit(&s, 3).unwrap();
        let enc = Mlp::from_layers(
            vec![DenseMatrix::identity(3)],
            vec![vec![0.0; 3]],
            Activation::Identity,
        )
        .unwrap();
        let dec = enc.clone();
        let ae =
            Autoencoder::from_parts(enc, dec, AeMode::PodCoefficients(b.clone()), None).unwrap();
        let x = s.col(0);
        let (z, r) = ae_apply(&ae, &x).unwrap();
        assert_eq!(z, b.project(&x).unwrap());
        assert!(norm2(&sub(&r, &b.lift(&z).unwrap())) < 1e-14);
    }

    #[test]
    fn nan_data_reports_divergence() {
        let mut data = DenseMatrix::zeros(3, 4);
        data[(1, 1)] = f64::NAN;
        let ae = Autoencoder::new(
            &AeArchitecture::default(),
            AeMode::FullOrder,
            3,
            Scaling::None,
            1,
        )
        .unwrap();
        let r = ae_train(&ae, &data, &OptimizerConfig::adam(10, 1e-3));
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }
}
