//! Binary snapshot container.
//!
//! ```text
//! "OCPSNAP1"
//! u32 N_y, N_u, M, N_t (0 when steady), p (parameters per scenario)
//! M rows of p+1 f64: parameters, then time (NaN when steady)
//! N_t f64: time grid
//! Y, U: column-major f64
//! M u32: solver iterations;  M u32: column ids
//! u32 length + UTF-8 JSON provenance
//! u64 FNV-1a of all preceding bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::fmt::Write as _;
use std::path::Path;

use super::{Provenance, SnapshotSet};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, ByteReader, ByteWriter};
use crate::numerics::DenseMatrix;
use crate::ocp::{OcpProblem, Scenario};

pub const MAGIC: &[u8; 8] = b"OCPSNAP1";
pub const VERSION: u32 = 1;

pub fn to_bytes(set: &SnapshotSet) -> Result<Vec<u8>> {
    set.validate()?;
    let m = set.len();
    let p = set.param_dim();
    let nt = set.time_grid.as_ref().map_or(0, Vec::len);
    let mut w = ByteWriter::new(MAGIC);
    for v in [set.n_state(), set.n_control(), m, nt, p] {
        w.u32(v as u32);
    }
    for s in &set.scenarios {
        w.f64s(&s.params);
        w.f64(s.time.unwrap_or(f64::NAN));
    }
    if let Some(g) = &set.time_grid {
        w.f64s(g);
    }
    for mat in [&set.y, &set.u] {
        for j in 0..m {
            w.f64s(&mat.col(j));
        }
    }
    for &it in &set.iterations {
        w.u32(it);
    }
    for &id in &set.column_ids {
        w.u32(id);
    }
    let json = serde_json::to_vec(&set.provenance).map_err(|e| Error::Format(e.to_string()))?;
    w.bytes(&json);
    Ok(w.finish())
}

fn check_version(data: &[u8]) -> Result<()> {
    if data.len() >= 8 && &data[..7] == b"OCPSNAP" && data[7] != MAGIC[7] {
        let v = (data[7] as char).to_digit(10).unwrap_or(u32::MAX);
        return Err(Error::BadVersion(v));
    }
    Ok(())
}

pub fn from_bytes(data: &[u8]) -> Result<SnapshotSet> {
    check_version(data)?;
    let mut r = ByteReader::open(data, MAGIC)?;
    let mut dims = [0usize; 5];
    for (d, name) in dims.iter_mut().zip(["N_y", "N_u", "M", "N_t", "p"]) {
        *d = r.u32(name)? as usize;
    }
    let [ny, nu, m, nt, p] = dims;
    let fixed = 8 * (m * (p + 1) + nt + m * (ny + nu)) + 8 * m;
    if r.remaining() < fixed + 4 {
        return Err(Error::Truncated(format!(
            "header declares {m} columns of {ny}+{nu} values, payload has {} bytes",
            r.remaining()
        )));
    }
    let mut scenarios = Vec::with_capacity(m);
    for _ in 0..m {
        let params = r.f64s(p, "scenario table")?;
        let t = r.f64("scenario table")?;
        scenarios.push(Scenario {
            params,
            time: if t.is_nan() { None } else { Some(t) },
        });
    }
    let time_grid = if nt > 0 {
        Some(r.f64s(nt, "time grid")?)
    } else {
        None
    };
    let mut read_matrix = |rows: usize, what: &str| -> Result<DenseMatrix> {
        let mut mat = DenseMatrix::zeros(rows, m);
        for j in 0..m {
            mat.set_col(j, &r.f64s(rows, what)?);
        }
        Ok(mat)
    };
    let y = read_matrix(ny, "Y")?;
    let u = read_matrix(nu, "U")?;
    let iterations = (0..m)
        .map(|_| r.u32("iterations"))
        .collect::<Result<Vec<_>>>()?;
    let column_ids = (0..m)
        .map(|_| r.u32("column ids"))
        .collect::<Result<Vec<_>>>()?;
    let len = r.u32("provenance")? as usize;
    r.expect_remaining(len, "provenance")?;
    r.verify_checksum(data)?;
    let json = &data[data.len() - 8 - len..data.len() - 8];
    let provenance: Provenance =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("provenance: {e}")))?;
    let set = SnapshotSet {
        y,
        u,
        scenarios,
        time_grid,
        iterations,
        column_ids,
        provenance,
    };
    set.validate()?;
    Ok(set)
}

pub fn save(set: &SnapshotSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(set)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SnapshotSet> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads and spot-checks five random columns against the problem's state
/// equation; also rejects files generated on a different discretization.
pub fn load_verified(path: &Path, problem: &OcpProblem, seed: u64) -> Result<SnapshotSet> {
    let set = load(path)?;
    let hash = problem.mesh_hash();
    if set.provenance.mesh_hash != hash {
        return Err(Error::Provenance {
            expected: hash,
            found: set.provenance.mesh_hash.clone(),
        });
    }
    super::verify_columns(problem, &set, 5, seed)?;
    Ok(set)
}

/// Writes `scenarios.csv`, `states.csv` and `controls.csv` into `dir`.
/// State and control files hold one snapshot per line.
pub fn write_csv(set: &SnapshotSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let p = set.param_dim();
    let mut s = String::from("column,id");
    for k in 0..p {
        let _ = write!(s, ",mu{k}");
    }
    s.push_str(",time,iterations\n");
    for (j, sc) in set.scenarios.iter().enumerate() {
        let _ = write!(s, "{j},{}", set.column_ids[j]);
        for v in &sc.params {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        let t = sc.time.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(s, ",{t},{}", set.iterations[j]);
    }
    std::fs::write(dir.join("scenarios.csv"), s)?;
    for (name, mat) in [("states.csv", &set.y), ("controls.csv", &set.u)] {
        let mut s = String::new();
        for j in 0..mat.cols() {
            let line: Vec<String> = mat.col(j).into_iter().map(fmt_f64).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        std::fs::write(dir.join(name), s)?;
    }
    Ok(())
}
