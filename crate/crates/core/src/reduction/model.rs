//! Binary model container shared by autoencoders and surrogates.
//!
//! ```text
//! "OCPMODL1"
//! u8 kind
//! kind-specific payload
//! u32 length + UTF-8 JSON manifest
//! u64 FNV-1a of all preceding bytes
//! ```

use std::path::Path;

use super::autoencoder::{AeMode, Autoencoder, MinMaxScaler, Scaling};
use super::mlp::{Activation, Mlp};
use super::pod::PodBasis;
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::numerics::DenseMatrix;

pub const MODEL_MAGIC: &[u8; 8] = b"OCPMODL1";

pub const KIND_AUTOENCODER: u8 = 0;
pub const KIND_SURROGATE: u8 = 1;
pub const KIND_REDUCERS: u8 = 2;

/// Serializes a payload and its manifest into a model container.
pub fn pack(
    kind: u8,
    manifest: &serde_json::Value,
    body: impl FnOnce(&mut ByteWriter),
) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new(MODEL_MAGIC);
    w.u8(kind);
    body(&mut w);
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Format(e.to_string()))?;
    w.bytes(&json);
    Ok(w.finish())
}

/// Checks magic, checksum and kind; the reader is positioned at the payload.
pub fn open(data: &[u8], kind: u8) -> Result<ByteReader<'_>> {
    let mut r = ByteReader::open(data, MODEL_MAGIC)?;
    r.verify_checksum(data)?;
    let found = r.u8("model kind")?;
    if found != kind {
        return Err(Error::Format(format!(
            "model kind {found}, expected {kind}"
        )));
    }
    Ok(r)
}

/// Reads the trailing manifest and checks nothing follows it.
pub fn read_manifest(r: &mut ByteReader<'_>) -> Result<serde_json::Value> {
    let json = r.bytes("manifest")?;
    r.finish("manifest")?;
    serde_json::from_slice(json).map_err(|e| Error::Format(format!("manifest: {e}")))
}

fn write_matrix(w: &mut ByteWriter, m: &DenseMatrix) {
    w.u32(m.rows() as u32);
    w.u32(m.cols() as u32);
    w.f64s(m.as_slice());
}

fn read_matrix(r: &mut ByteReader<'_>, what: &str) -> Result<DenseMatrix> {
    let rows = r.u32(what)? as usize;
    let cols = r.u32(what)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(what.into()))?;
    DenseMatrix::from_row_major(rows, cols, r.f64s(n, what)?)
}

pub fn write_vec(w: &mut ByteWriter, v: &[f64]) {
    w.u32(v.len() as u32);
    w.f64s(v);
}

pub fn read_vec(r: &mut ByteReader<'_>, what: &str) -> Result<Vec<f64>> {
    let n = r.u32(what)? as usize;
    r.f64s(n, what)
}

pub fn write_mlp(w: &mut ByteWriter, net: &Mlp) {
    match net.activation {
        Activation::Identity => {
            w.u8(0);
            w.f64(0.0);
        }
        Activation::LeakyRelu { alpha } => {
            w.u8(1);
            w.f64(alpha);
        }
    }
    w.u32(net.weights.len() as u32);
    for (m, b) in net.weights.iter().zip(&net.biases) {
        write_matrix(w, m);
        write_vec(w, b);
    }
}

pub fn read_mlp(r: &mut ByteReader<'_>) -> Result<Mlp> {
    let tag = r.u8("activation")?;
    let alpha = r.f64("activation")?;
    let activation = match tag {
        0 => Activation::Identity,
        1 => Activation::LeakyRelu { alpha },
        t => return Err(Error::Format(format!("unknown activation tag {t}"))),
    };
    let layers = r.u32("layer count")? as usize;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for _ in 0..layers {
        weights.push(read_matrix(r, "weights")?);
        biases.push(read_vec(r, "biases")?);
    }
    Mlp::from_layers(weights, biases, activation)
}

pub fn write_scaler(w: &mut ByteWriter, s: Option<&MinMaxScaler>) {
    match s {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            write_vec(w, &s.lo);
            write_vec(w, &s.hi);
        }
    }
}

pub fn read_scaler(r: &mut ByteReader<'_>) -> Result<Option<MinMaxScaler>> {
    match r.u8("scaler")? {
        0 => Ok(None),
        1 => {
            let lo = read_vec(r, "scaler")?;
            let hi = read_vec(r, "scaler")?;
            if lo.len() != hi.len() {
                return Err(Error::Format("scaler bounds differ in length".into()));
            }
            Ok(Some(MinMaxScaler { lo, hi }))
        }
        t => Err(Error::Format(format!("unknown scaler tag {t}"))),
    }
}

pub fn write_pod(w: &mut ByteWriter, b: &PodBasis) {
    write_matrix(w, &b.v);
    write_vec(w, &b.singular_values);
}

pub fn read_pod(r: &mut ByteReader<'_>) -> Result<PodBasis> {
    Ok(PodBasis {
        v: read_matrix(r, "POD basis")?,
        singular_values: read_vec(r, "singular values")?,
    })
}

pub fn write_autoencoder(w: &mut ByteWriter, ae: &Autoencoder) {
    match &ae.mode {
        AeMode::FullOrder => w.u8(0),
        AeMode::PodCoefficients(b) => {
            w.u8(1);
            write_pod(w, b);
        }
    }
    w.u8(match ae.scaling {
        Scaling::None => 0,
        Scaling::PerFeature => 1,
        Scaling::Uniform => 2,
    });
    write_scaler(w, ae.scaler.as_ref());
    write_mlp(w, &ae.encoder);
    write_mlp(w, &ae.decoder);
}

pub fn read_autoencoder(r: &mut ByteReader<'_>) -> Result<Autoencoder> {
    let mode = match r.u8("autoencoder mode")? {
        0 => AeMode::FullOrder,
        1 => AeMode::PodCoefficients(read_pod(r)?),
        t => return Err(Error::Format(format!("unknown autoencoder mode {t}"))),
    };
    let scaling = match r.u8("scaling")? {
        0 => Scaling::None,
        1 => Scaling::PerFeature,
        2 => Scaling::Uniform,
        t => return Err(Error::Format(format!("unknown scaling tag {t}"))),
    };
    let scaler = read_scaler(r)?;
    let encoder = read_mlp(r)?;
    let decoder = read_mlp(r)?;
    let mut ae = Autoencoder::from_parts(encoder, decoder, mode, scaler)?;
    ae.scaling = scaling;
    Ok(ae)
}

pub fn save_autoencoder(ae: &Autoencoder, manifest: &serde_json::Value, path: &Path) -> Result<()> {
    let bytes = pack(KIND_AUTOENCODER, manifest, |w| write_autoencoder(w, ae))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_autoencoder(path: &Path) -> Result<(Autoencoder, serde_json::Value)> {
    let data = std::fs::read(path)?;
    let mut r = open(&data, KIND_AUTOENCODER)?;
    let ae = read_autoencoder(&mut r)?;
    let manifest = read_manifest(&mut r)?;
    Ok((ae, manifest))
}
