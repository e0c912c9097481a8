//! First-order and quasi-Newton minimization of smooth objectives.

use serde::{Deserialize, Serialize};

use super::dense::{axpy, dot, norm2};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Lbfgs,
    SteepestDescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Backtracking on the Armijo condition, halving the step.
    Armijo,
    /// Exact minimizer along the ray for quadratic objectives (one extra
    /// gradient evaluation), safeguarded by the Armijo test.
    ExactQuadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Adam learning rate, or the initial trial step of the line search.
    pub step_size: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_line_search")]
    pub line_search: LineSearch,
}

fn default_memory() -> usize {
    10
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_line_search() -> LineSearch {
    LineSearch::Armijo
}

/// Sufficient-decrease constant of the Armijo test.
pub const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Relative cost band treated as round-off by the line search.
pub const ROUNDOFF_BAND: f64 = 1e-12;

impl OptimizerConfig {
    pub fn adam(max_iterations: usize, learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            max_iterations,
            gradient_tolerance: 1e-12,
            step_size: learning_rate,
            memory: default_memory(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            line_search: LineSearch::Armijo,
        }
    }

    pub fn lbfgs(max_iterations: usize, gradient_tolerance: f64) -> Self {
        Self {
            kind: OptimizerKind::Lbfgs,
            max_iterations,
            gradient_tolerance,
            step_size: 1.0,
            memory: default_memory(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            line_search: LineSearch::Armijo,
        }
    }

    pub fn steepest_descent(max_iterations: usize, gradient_tolerance: f64, step: f64) -> Self {
        Self {
            kind: OptimizerKind::SteepestDescent,
            step_size: step,
            ..Self::lbfgs(max_iterations, gradient_tolerance)
        }
    }

    pub fn with_memory(mut self, m: usize) -> Self {
        self.memory = m;
        self
    }

    pub fn with_line_search(mut self, ls: LineSearch) -> Self {
        self.line_search = ls;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("numerics", m.to_string()));
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient tolerance must be > 0");
        }
        if self.memory < 1 {
            return bad("L-BFGS memory must be >= 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam moments must satisfy 0 < beta < 1");
        }
        if !(self.step_size > 0.0) || !(self.epsilon > 0.0) {
            return bad("step size and epsilon must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub gradient_norm: f64,
    /// Cost at the start of every iteration, followed by the final cost.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration cap was hit before the tolerance.
    pub converged: bool,
}

/// Minimizes `f`, which returns `(value, gradient)` at a point.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    match cfg.kind {
        OptimizerKind::Adam => adam(&mut f, x0, cfg),
        OptimizerKind::Lbfgs | OptimizerKind::SteepestDescent => quasi_newton(&mut f, x0, cfg),
    }
}

fn eval<F>(f: &mut F, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (v, g) = f(x);
    if v.is_nan() || g.iter().any(|x| x.is_nan()) {
        return Err(Error::NanObjective { iteration });
    }
    Ok((v, g))
}

fn adam<F>(f: &mut F, x0: &[f64], cfg: &OptimizerConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::with_capacity(cfg.max_iterations + 1);
    let mut best = (f64::INFINITY, x.clone(), f64::INFINITY);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut converged = false;
    let mut it = 0;
    loop {
        let (fx, g) = eval(f, &x, it)?;
        history.push(fx);
        let gn = norm2(&g);
        if fx < best.0 {
            best = (fx, x.clone(), gn);
        }
        if gn <= cfg.gradient_tolerance {
            converged = true;
            break;
        }
        if it == cfg.max_iterations {
            break;
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let lr = cfg.step_size * (1.0 - b2t).sqrt() / (1.0 - b1t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= lr * m[i] / (v[i].sqrt() + cfg.epsilon);
        }
        it += 1;
    }
    // Adam is not monotone; hand back the best point seen.
    let (cost, x, gradient_norm) = best;
    Ok(MinimizeResult {
        x,
        cost,
        gradient_norm,
        history,
        iterations: it,
        converged,
    })
}

fn quasi_newton<F>(f: &mut F, x0: &[f64], cfg: &OptimizerConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let use_memory = cfg.kind == OptimizerKind::Lbfgs;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = eval(f, &x, 0)?;
    let mut history = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut last_step = cfg.step_size;
    let mut it = 0;
    let mut converged = false;
    loop {
        let gn = norm2(&g);
        if gn <= cfg.gradient_tolerance {
            converged = true;
            break;
        }
        if it == cfg.max_iterations {
            break;
        }
        let mut d = if use_memory && !s_hist.is_empty() {
            two_loop(&g, &s_hist, &y_hist)
        } else {
            g.iter().map(|v| -v).collect()
        };
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Curvature pairs went stale; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut alpha = if use_memory && !s_hist.is_empty() {
            1.0
        } else if use_memory {
            (cfg.step_size / gn).min(cfg.step_size)
        } else {
            (2.0 * last_step).max(f64::MIN_POSITIVE)
        };

        if cfg.line_search == LineSearch::ExactQuadratic {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let (_, gt) = eval(f, &xt, it)?;
            let curv = (dot(&gt, &d) - slope) / alpha;
            if curv > 0.0 {
                alpha = -slope / curv;
            }
        }

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let (fxn, gxn) = eval(f, &xn, it + 1)?;
            let armijo = fxn <= fx + ARMIJO_C1 * alpha * slope;
            // Near the optimum the decrease drops below cost round-off; fall
            // back to the slope test (approximate Wolfe) inside a relative
            // round-off band around the current cost.
            let approx = (fxn - fx).abs() <= ROUNDOFF_BAND * fx.abs()
                && dot(&gxn, &d) <= -(1.0 - 2.0 * ARMIJO_C1) * slope;
            if armijo || approx {
                accepted = Some((xn, fxn, gxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn, gxn)) = accepted else {
            return Err(Error::LineSearch {
                iteration: it,
                cost: fx,
                x,
            });
        };
        last_step = alpha;
        if use_memory {
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gxn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * norm2(&s) * norm2(&y) {
                if s_hist.len() == cfg.memory {
                    s_hist.remove(0);
                    y_hist.remove(0);
                }
                s_hist.push(s);
                y_hist.push(y);
            }
        }
        x = xn;
        fx = fxn;
        g = gxn;
        history.push(fx);
        it += 1;
    }
    Ok(MinimizeResult {
        gradient_norm: norm2(&g),
        x,
        cost: fx,
        history,
        iterations: it,
        converged,
    })
}

/// L-BFGS two-loop recursion: returns `−H·g`.
fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let k = s_hist.len();
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
    for i in (0..k).rev() {
        alphas[i] = rho[i] * dot(&s_hist[i], &q);
        axpy(-alphas[i], &y_hist[i], &mut q);
    }
    let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
    q.iter_mut().for_each(|v| *v *= gamma);
    for i in 0..k {
        let b = rho[i] * dot(&y_hist[i], &q);
        axpy(alphas[i] - b, &s_hist[i], &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = xp[i];
            xp[i] = xi + h;
            let fp = f(&xp);
            xp[i] = xi - h;
            let fm = f(&xp);
            xp[i] = xi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central difference of `f` along direction `d`.
pub fn directional_derivative<F>(mut f: F, x: &[f64], d: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - h * b).collect();
    (f(&xp) - f(&xm)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dense::DenseMatrix;
    use crate::numerics::rng::SplitMix64;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (1.0, 100.0);
        let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
        let g = vec![
            -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]),
            2.0 * b * (x[1] - x[0] * x[0]),
        ];
        (f, g)
    }

    #[test]
    fn quadratic_bowl_all_methods() {
        let c = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            (dot(&r, &r), r.iter().map(|v| 2.0 * v).collect::<Vec<_>>())
        };
        for cfg in [
            OptimizerConfig::lbfgs(100, 1e-10),
            OptimizerConfig::steepest_descent(500, 1e-10, 0.1),
            OptimizerConfig {
                gradient_tolerance: 1e-6,
                ..OptimizerConfig::adam(20000, 0.01)
            },
        ] {
            let r = minimize(f, &[0.0; 3], &cfg).unwrap();
            assert!(r.converged, "{:?}", cfg.kind);
            for (a, b) in r.x.iter().zip(&c) {
                assert!((a - b).abs() < 1e-5, "{:?}: {a} vs {b}", cfg.kind);
            }
        }
    }

    #[test]
    fn rosenbrock_classical_start() {
        let cfg = OptimizerConfig::lbfgs(2000, 1e-10);
        let r = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(r.converged);
        assert!(r.cost.abs() < 1e-8, "{}", r.cost);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
        assert!(r
            .history
            .windows(2)
            .all(|w| w[1] <= w[0] + ROUNDOFF_BAND * w[0].abs()));
    }

    #[test]
    fn rosenbrock_grid_oracle_confirms_minimum() {
        // Brute-force grid refinement around (1, 1).
        let f = |x: f64, y: f64| rosenbrock(&[x, y]).0;
        let (mut cx, mut cy, mut w) = (0.0, 0.0, 2.0);
        for _ in 0..30 {
            let mut best = (f64::INFINITY, cx, cy);
            for i in -10..=10 {
                for j in -10..=10 {
                    let (x, y) = (cx + w * i as f64 / 10.0, cy + w * j as f64 / 10.0);
                    let v = f(x, y);
                    if v < best.0 {
                        best = (v, x, y);
                    }
                }
            }
            cx = best.1;
            cy = best.2;
            w *= 0.5;
        }
        assert!((cx - 1.0).abs() < 1e-6 && (cy - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lbfgs_exact_line_search_terminates_like_cg() {
        let n = 8;
        let mut rng = SplitMix64::new(11);
        let q = DenseMatrix::from_fn(n, n, |_, _| rng.next_f64() - 0.5);
        let mut h = q.t_matmul(&q).unwrap();
        for i in 0..n {
            h[(i, i)] += 1.0;
        }
        let b: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let f = |x: &[f64]| {
            let hx = h.matvec(x);
            (
                0.5 * dot(x, &hx) - dot(&b, x),
                super::super::dense::sub(&hx, &b),
            )
        };
        let cfg = OptimizerConfig::lbfgs(100, 1e-9)
            .with_memory(n + 2)
            .with_line_search(LineSearch::ExactQuadratic);
        let r = minimize(f, &vec![0.0; n], &cfg).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= n + 2, "{} iterations", r.iterations);
    }

    #[test]
    fn nan_objective_names_iteration() {
        let mut calls = 0;
        let f = |x: &[f64]| {
            calls += 1;
            if calls > 3 {
                (f64::NAN, vec![0.0; x.len()])
            } else {
                (dot(x, x), x.iter().map(|v| 2.0 * v).collect())
            }
        };
        match minimize(f, &[1.0, 1.0], &OptimizerConfig::adam(10, 0.1)) {
            Err(Error::NanObjective { iteration }) => assert_eq!(iteration, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn line_search_failure_returns_iterate() {
        // Gradient points the wrong way: no step can decrease the cost.
        let f = |x: &[f64]| (x[0], vec![-1.0]);
        match minimize(f, &[0.0], &OptimizerConfig::steepest_descent(5, 1e-8, 1.0)) {
            Err(Error::LineSearch { x, .. }) => assert_eq!(x, vec![0.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::lbfgs(10, 0.0).validate().is_err());
        assert!(OptimizerConfig::lbfgs(10, 1e-6)
            .with_memory(0)
            .validate()
            .is_err());
        let mut c = OptimizerConfig::adam(10, 1e-3);
        c.beta1 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn central_differences() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let lin = |x: &[f64]| 2.0 * x[0] - 3.0 * x[1];
        for h in [1e-6, 1e-2, 0.5] {
            let g = finite_diff_gradient(lin, &[0.3, -0.7], h);
            assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] + 3.0).abs() < 1e-9);
        }
    }
}
