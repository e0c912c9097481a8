use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::ocp::Scenario;

/// Peak value of the heat source.
pub const SOURCE_AMPLITUDE: f64 = 5000.0;
/// Decay rate of the Gaussian.
pub const SOURCE_DECAY: f64 = 40.0;

/// Triangle quadrature rules in barycentric coordinates, weights summing to 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Three interior points, exact for quadratics.
    ThreePoint,
    /// Seven points, exact for quintics.
    SevenPoint,
}

impl Quadrature {
    pub fn points(self) -> Vec<([f64; 3], f64)> {
        match self {
            Quadrature::ThreePoint => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                vec![
                    ([a, b, b], 1.0 / 3.0),
                    ([b, a, b], 1.0 / 3.0),
                    ([b, b, a], 1.0 / 3.0),
                ]
            }
            Quadrature::SevenPoint => {
                let s = 15f64.sqrt();
                let (a, b) = ((6.0 - s) / 21.0, (6.0 + s) / 21.0);
                let (wa, wb) = ((155.0 - s) / 1200.0, (155.0 + s) / 1200.0);
                let (ca, cb) = (1.0 - 2.0 * a, 1.0 - 2.0 * b);
                vec![
                    ([1.0 / 3.0; 3], 0.225),
                    ([ca, a, a], wa),
                    ([a, ca, a], wa),
                    ([a, a, ca], wa),
                    ([cb, b, b], wb),
                    ([b, cb, b], wb),
                    ([b, b, cb], wb),
                ]
            }
        }
    }
}

/// Source center for polar parameters `[θ, r]`.
pub fn source_center(params: &[f64]) -> [f64; 2] {
    let (theta, r) = (params[0], params[1]);
    [r * theta.cos(), r * theta.sin()]
}

/// `s(x) = 5000·exp(−40·|x − center|²)`.
pub fn gaussian_value(x: [f64; 2], center: [f64; 2]) -> f64 {
    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
    SOURCE_AMPLITUDE * (-SOURCE_DECAY * (dx * dx + dy * dy)).exp()
}

/// Load vector `∫_Ω s·φ_i` with an arbitrary pointwise source.
pub fn load_vector(mesh: &Mesh, rule: Quadrature, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let pts = rule.points();
    let mut load = vec![0.0; mesh.node_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_nodes(t);
        let area = mesh.triangle_area(t);
        for (lam, w) in &pts {
            let x = [
                lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
            ];
            let v = area * w * f(x);
            for k in 0..3 {
                load[tri[k]] += v * lam[k];
            }
        }
    }
    load
}

/// Load vector of the Gaussian heat source placed by the scenario parameters.
pub fn gaussian_source(mesh: &Mesh, scenario: &Scenario) -> Vec<f64> {
    gaussian_source_with(mesh, scenario, Quadrature::ThreePoint)
}

pub fn gaussian_source_with(mesh: &Mesh, scenario: &Scenario, rule: Quadrature) -> Vec<f64> {
    let c = source_center(&scenario.params);
    load_vector(mesh, rule, |x| gaussian_value(x, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{build_mesh, MeshParams};
    use crate::numerics::dense::{norm2, sub};
    use std::f64::consts::PI;

    fn mesh(n: usize) -> Mesh {
        build_mesh(MeshParams {
            n,
            ..MeshParams::default()
        })
        .unwrap()
    }

    #[test]
    fn pointwise_values() {
        let c = source_center(&[0.3, 0.6]);
        assert_eq!(gaussian_value(c, c), 5000.0);
        let x = [c[0] + 0.3, c[1] + 0.4];
        let v = gaussian_value(x, c);
        assert!((v - 5000.0 * (-10f64).exp()).abs() < 1e-12);
        assert!((v - 0.2270).abs() < 1e-4);
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn rules_exact_on_reference_triangle() {
        // ∫ x^a y^b over the unit right triangle = a!·b!/(a+b+2)!.
        for (rule, deg) in [(Quadrature::ThreePoint, 2), (Quadrature::SevenPoint, 5)] {
            for a in 0..=deg {
                for b in 0..=deg - a {
                    let q: f64 = rule
                        .points()
                        .iter()
                        .map(|(l, w)| 0.5 * w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!((q - exact).abs() < 1e-15, "{rule:?} x^{a} y^{b}");
                }
            }
        }
    }

    #[test]
    fn integral_of_gaussian() {
        let me = mesh(64);
        let s = Scenario::steady(vec![0.0, 0.5]);
        let total: f64 = gaussian_source(&me, &s).iter().sum();
        let exact = 5000.0 * PI / 40.0;
        assert!((total - exact).abs() < 0.02 * exact, "{total} vs {exact}");
    }

    #[test]
    fn three_and_seven_point_agree() {
        let me = mesh(64);
        for params in [vec![0.0, 0.5], vec![-1.2, 0.85], vec![0.7, 0.42]] {
            let s = Scenario::steady(params);
            let l3 = gaussian_source_with(&me, &s, Quadrature::ThreePoint);
            let l7 = gaussian_source_with(&me, &s, Quadrature::SevenPoint);
            assert!(norm2(&sub(&l3, &l7)) < 1e-3 * norm2(&l7));
        }
    }
}
