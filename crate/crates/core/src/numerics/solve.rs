//! Sparse linear solvers.
//!
//! The direct path permutes the matrix with reverse Cuthill–McKee and then
//! runs a banded LU with partial pivoting (LAPACK `gbtf2` layout). Mesh-based
//! operators and their KKT compositions have a small profile after RCM, so
//! the band stays narrow enough for desk-scale problems.

use std::collections::VecDeque;

use super::dense::{axpy, dot, norm2};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Reusable factorization of a square sparse matrix.
#[derive(Clone, Debug)]
pub struct SparseLu {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl SparseLu {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::dim(format!(
                "LU of {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        if n == 0 {
            return Err(Error::dim("LU of empty matrix"));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                ab[pj * ldab + kv + pi - pj] += v;
            }
        }
        let scale = a.max_abs();
        let threshold = scale * f64::EPSILON * 16.0;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for i in 1..=km {
                let v = ab[col + i].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best <= threshold {
                return Err(Error::Singular {
                    index: perm[j],
                    pivot: best,
                    threshold,
                });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ldab + kv;
                    ab.swap(base + j + jp - c, base + j - c);
                }
            }
            if km > 0 {
                let r = 1.0 / ab[col];
                for i in 1..=km {
                    ab[col + i] *= r;
                }
                for c in j + 1..=ju {
                    let ujc = ab[c * ldab + kv + j - c];
                    if ujc == 0.0 {
                        continue;
                    }
                    let (left, right) = ab.split_at_mut(c * ldab);
                    let lcol = &left[col + 1..=col + km];
                    let base = kv + j + 1 - c;
                    for (t, &l) in right[base..base + km].iter_mut().zip(lcol) {
                        *t -= l * ujc;
                    }
                }
            }
        }
        Ok(Self {
            n,
            perm,
            kl,
            ku,
            ldab,
            ab,
            ipiv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidth after reordering.
    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::dim(format!(
                "rhs length {} for system of size {n}",
                b.len()
            )));
        }
        let kv = self.kl + self.ku;
        let ldab = self.ldab;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for j in 0..n {
            let km = self.kl.min(n - 1 - j);
            let p = self.ipiv[j];
            if p != j {
                x.swap(p, j);
            }
            let xj = x[j];
            if xj != 0.0 && km > 0 {
                let col = j * ldab + kv;
                axpy(-xj, &self.ab[col + 1..=col + km], &mut x[j + 1..=j + km]);
            }
        }
        for j in (0..n).rev() {
            let col = j * ldab;
            x[j] /= self.ab[col + kv];
            let xj = x[j];
            if xj != 0.0 {
                let lo = j.saturating_sub(kv);
                for i in lo..j {
                    x[i] -= self.ab[col + kv + i - j] * xj;
                }
            }
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        Ok(out)
    }
}

/// Direct solve `A x = b` (factor + substitute).
pub fn solve_sparse(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(a)?.solve(b)
}

/// Unpreconditioned conjugate gradients for SPD systems. Stops when
/// `‖b − A x‖ ≤ rel_tol · ‖b‖`.
pub fn conjugate_gradient(
    a: &SparseMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    if a.rows() != n || a.cols() != n {
        return Err(Error::dim("CG dimension mismatch"));
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * bnorm {
            return Ok(x);
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::CgNoConvergence {
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    let res = norm2(&super::dense::sub(&a.matvec(&x), b)) / bnorm;
    if res <= rel_tol {
        Ok(x)
    } else {
        Err(Error::CgNoConvergence {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern; returns
/// `perm[new] = old`. Each connected component starts from a
/// pseudo-peripheral node found by repeated BFS.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (degree[i], i));
    for &s in &seeds {
        if visited[s] {
            continue;
        }
        let start = pseudo_peripheral(s, &adj, &degree);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (degree[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    level[start] = 0;
    queue.push_back(start);
    let mut reached = Vec::new();
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        reached.push(v);
        depth = depth.max(level[v]);
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let last: Vec<usize> = reached.into_iter().filter(|&v| level[v] == depth).collect();
    (last, depth)
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut current = seed;
    let (mut last, mut depth) = bfs_levels(current, adj);
    for _ in 0..8 {
        let cand = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        let (l2, d2) = bfs_levels(cand, adj);
        if d2 <= depth {
            break;
        }
        current = cand;
        last = l2;
        depth = d2;
    }
    current
}
