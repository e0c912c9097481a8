//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The columns of a working copy of `A` are rotated pairwise until they are
//! mutually orthogonal; the accumulated rotations form `V`, the column norms
//! are the singular values and the normalized columns form `U`.

use super::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// `A = U · diag(S) · Vt` with `k = min(rows, cols)` singular triplets,
/// singular values sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub vt: DenseMatrix,
}

pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::dim("svd of an empty matrix"));
    }
    if let Some(i) = a.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("svd input entry {i}")));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

/// Column-major working storage keeps the rotation loops contiguous.
fn jacobi_tall(a: &DenseMatrix) -> Result<Svd> {
    let (m, n) = (a.rows(), a.cols());
    let mut w: Vec<Vec<f64>> = a.columns();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (m as f64).sqrt();
    let mut norms: Vec<f64> = w.iter().map(|c| dot(c, c)).collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let tiny = scale * f64::EPSILON * f64::EPSILON;

    let mut sweep = 0;
    loop {
        let mut worst = 0.0_f64;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                norms[p] = dot(&w[p], &w[p]);
                norms[q] = dot(&w[q], &w[q]);
            }
        }
        sweep += 1;
        if !rotated {
            break;
        }
        if sweep >= MAX_SWEEPS {
            return Err(Error::SvdNoConvergence {
                sweeps: sweep,
                residual: worst,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]).then(i.cmp(&j)));

    let mut u = DenseMatrix::zeros(m, n);
    let mut vt = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let cutoff = sig[order[0]] * f64::EPSILON * (m.max(n) as f64);
    let mut have: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sj = sig[j];
        let col: Vec<f64> = if sj > cutoff && sj > 0.0 {
            s.push(sj);
            w[j].iter().map(|x| x / sj).collect()
        } else {
            s.push(if sj > cutoff { sj } else { sj.max(0.0) });
            complete_basis(&have, m)
        };
        u.set_col(k, &col);
        have.push(col);
        vt.row_mut(k).copy_from_slice(&v[j]);
    }
    Ok(Svd { u, s, vt })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// A unit vector orthogonal to every vector in `have` (two Gram–Schmidt passes
/// over canonical candidates).
fn complete_basis(have: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut c = vec![0.0; m];
        c[e] = 1.0;
        for _ in 0..2 {
            for h in have {
                let d = dot(h, &c);
                c.iter_mut().zip(h).for_each(|(ci, hi)| *ci -= d * hi);
            }
        }
        let nrm = dot(&c, &c).sqrt();
        if nrm > 0.5 {
            return c.into_iter().map(|x| x / nrm).collect();
        }
        if best.as_ref().is_none_or(|b| nrm > b.0) {
            best = Some((nrm, c));
        }
    }
    let (nrm, c) = best.expect("m > 0");
    c.into_iter().map(|x| x / nrm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SplitMix64;

    fn reconstruct(d: &Svd) -> DenseMatrix {
        let mut us = d.u.clone();
        for i in 0..us.rows() {
            for (j, x) in us.row_mut(i).iter_mut().enumerate() {
                *x *= d.s[j];
            }
        }
        us.matmul(&d.vt).unwrap()
    }

    fn orth_err(q: &DenseMatrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&DenseMatrix::identity(g.rows())).max_abs()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let d = svd(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(d.s, vec![1.0, 1.0]);
    }

    #[test]
    fn rank_one_outer_product() {
        let a = [1.0, -2.0, 3.0, 0.5];
        let b = [2.0, 1.0, -1.0];
        let m = DenseMatrix::from_fn(4, 3, |i, j| a[i] * b[j]);
        let d = svd(&m).unwrap();
        let expect = dot(&a, &a).sqrt() * dot(&b, &b).sqrt();
        assert!((d.s[0] - expect).abs() < 1e-12 * expect);
        assert!(d.s[1] < 1e-12 && d.s[2] < 1e-12);
        assert!(orth_err(&d.u) < 1e-10);
    }

    #[test]
    fn wide_matrix_goes_through_transpose() {
        let mut rng = SplitMix64::new(3);
        let m = DenseMatrix::from_fn(3, 7, |_, _| rng.next_f64() - 0.5);
        let d = svd(&m).unwrap();
        assert_eq!((d.u.rows(), d.u.cols()), (3, 3));
        assert_eq!((d.vt.rows(), d.vt.cols()), (3, 7));
        assert!(reconstruct(&d).sub(&m).frobenius_norm() <= 1e-12 * m.frobenius_norm());
        assert!(orth_err(&d.vt.transpose()) < 1e-10);
    }

    #[test]
    fn zero_matrix_still_orthonormal() {
        let d = svd(&DenseMatrix::zeros(4, 2)).unwrap();
        assert_eq!(d.s, vec![0.0, 0.0]);
        assert!(orth_err(&d.u) < 1e-12);
    }

    #[test]
    fn rejects_empty() {
        assert!(svd(&DenseMatrix::zeros(0, 3)).is_err());
    }
}
