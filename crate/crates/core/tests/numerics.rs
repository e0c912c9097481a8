use ocprom::numerics::dense::{dot, norm2, sub};
use ocprom::numerics::optimize::ROUNDOFF_BAND;
use ocprom::numerics::{
    finite_diff_gradient, minimize, solve_sparse, svd, DenseMatrix, OptimizerConfig, SplitMix64,
    TripletBuilder,
};
use proptest::prelude::*;

/// Classical two-sided Jacobi eigenvalue iteration for a symmetric matrix.
/// Independent of the one-sided SVD path.
fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() < 1e-15 * m.frobenius_norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = SplitMix64::new(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn orthogonality_error(q: &DenseMatrix) -> f64 {
    q.t_matmul(q)
        .unwrap()
        .sub(&DenseMatrix::identity(q.cols()))
        .max_abs()
}

fn rank_k_error(a: &DenseMatrix, k: usize) -> (f64, f64) {
    let d = svd(a).unwrap();
    let mut approx = DenseMatrix::zeros(a.rows(), a.cols());
    for r in 0..k {
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                approx[(i, j)] += d.u[(i, r)] * d.s[r] * d.vt[(r, j)];
            }
        }
    }
    let tail: f64 = d.s[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
    (a.sub(&approx).frobenius_norm(), tail)
}

#[test]
fn svd_random_8x5_against_eigen_oracle() {
    let a = random_matrix(8, 5, 42);
    let d = svd(&a).unwrap();
    let ata = a.t_matmul(&a).unwrap();
    let ev = symmetric_eigenvalues(&ata);
    for (s, e) in d.s.iter().zip(&ev) {
        assert!((s * s - e).abs() <= 1e-10 * ev[0], "{s}^2 vs {e}");
    }
    assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    assert!(orthogonality_error(&d.u) <= 1e-10);
    assert!(orthogonality_error(&d.vt.transpose()) <= 1e-10);
    let (res, tail) = rank_k_error(&a, 5);
    assert_eq!(tail, 0.0);
    assert!(res <= 1e-9 * a.frobenius_norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eckart_young_truncation(rows in 1usize..=64, cols in 1usize..=64, seed in any::<u64>(), kfrac in 0.0f64..1.0) {
        let a = random_matrix(rows, cols, seed);
        let kmax = rows.min(cols);
        let k = ((kfrac * kmax as f64) as usize).min(kmax - 1);
        let (err, tail) = rank_k_error(&a, k);
        prop_assert!((err - tail).abs() <= 1e-8 * tail.max(1e-300), "err {err} tail {tail}");
    }

    #[test]
    fn sparse_spd_matches_dense_lu(n in 2usize..60, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let mut t = TripletBuilder::new(n, n);
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.below(n);
                if j != i {
                    let v = rng.uniform(-1.0, 1.0);
                    t.add(i, j, v);
                    t.add(j, i, v);
                    diag[i] += v.abs();
                    diag[j] += v.abs();
                }
            }
        }
        for (i, d) in diag.iter().enumerate() {
            t.add(i, i, *d);
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x = solve_sparse(&a, &b).unwrap();
        let xd = a.to_dense().solve(&b).unwrap();
        prop_assert!(norm2(&sub(&x, &xd)) <= 1e-9 * norm2(&xd));
        prop_assert!(norm2(&sub(&a.matvec(&x), &b)) <= 1e-10 * norm2(&b));
    }

    #[test]
    fn central_differences_exact_on_quadratics(n in 1usize..8, seed in any::<u64>(), logh in -6.0f64..-4.0) {
        let mut rng = SplitMix64::new(seed);
        let q = DenseMatrix::from_fn(n, n, |_, _| rng.normal());
        let c: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let f = |z: &[f64]| 0.5 * dot(z, &q.matvec(z)) + dot(&c, z);
        let qt = q.transpose();
        let exact: Vec<f64> = q.matvec(&x).iter().zip(qt.matvec(&x)).zip(&c).map(|((a, b), c)| 0.5 * (a + b) + c).collect();
        let fd = finite_diff_gradient(f, &x, 10f64.powf(logh));
        prop_assert!(norm2(&sub(&fd, &exact)) <= 1e-7 * norm2(&exact).max(1.0));
    }

    #[test]
    fn lbfgs_reaches_tolerance_on_convex_quadratics(n in 1usize..12, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let q = DenseMatrix::from_fn(n, n, |_, _| rng.normal());
        let mut h = q.t_matmul(&q).unwrap();
        for i in 0..n { h[(i, i)] += 0.5; }
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let f = |x: &[f64]| { let hx = h.matvec(x); (0.5 * dot(x, &hx) - dot(&b, x), sub(&hx, &b)) };
        let r = minimize(f, &vec![0.0; n], &OptimizerConfig::lbfgs(5000, 1e-8)).unwrap();
        prop_assert!(r.converged && r.gradient_norm <= 1e-8);
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0] + ROUNDOFF_BAND * w[0].abs()));
    }
}
