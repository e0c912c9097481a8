use serde::{Deserialize, Serialize};

use super::mesh::{edge_length, BoundaryMarker, Mesh, Subdomain};
use crate::error::{Error, Result};
use crate::numerics::{SparseMatrix, TripletBuilder};

/// Physical constants of the steady heat problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    /// Thermal diffusivity.
    pub nu: f64,
    /// Heat transfer coefficient on the obstacle.
    pub gamma: f64,
    /// Exterior temperature seen by the obstacle.
    pub y_ext: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            nu: 1.0,
            gamma: 1.0,
            y_ext: 125.0,
        }
    }
}

/// Assembled P1 operators for one mesh and one set of physical constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FemOperators {
    /// `ν·K + Γd boundary mass + γ·Γobs boundary mass`.
    pub a: SparseMatrix,
    /// Domain mass.
    pub m: SparseMatrix,
    /// Domain stiffness (unweighted).
    pub k: SparseMatrix,
    /// Boundary mass on the obstacle.
    pub mobs: SparseMatrix,
    /// Mass on the control region, indexed by control DOFs.
    pub mc: SparseMatrix,
    /// Stiffness on the control region, indexed by control DOFs.
    pub kc: SparseMatrix,
    /// Control-to-state coupling, `N_y × N_u`.
    pub b: SparseMatrix,
    /// `γ·y_ext·∫_Γobs φ_i`.
    pub robin_load: Vec<f64>,
    /// State node index of every control DOF, increasing.
    pub control_dofs: Vec<usize>,
    /// `∫_Γobs φ_i`.
    pub obs_weights: Vec<f64>,
    pub area: f64,
    pub outer_length: f64,
    pub obstacle_length: f64,
    pub physics: Physics,
}

impl FemOperators {
    pub fn n_state(&self) -> usize {
        self.a.rows()
    }

    pub fn n_control(&self) -> usize {
        self.control_dofs.len()
    }

    /// Mean of `|y|` over the obstacle boundary.
    pub fn obstacle_mean_abs(&self, y: &[f64]) -> f64 {
        let s: f64 = self
            .obs_weights
            .iter()
            .zip(y)
            .map(|(w, v)| w * v.abs())
            .sum();
        s / self.obstacle_length
    }

    /// Extends a control vector by zero to all state nodes.
    pub fn control_to_state(&self, u: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.n_state()];
        for (&i, &x) in self.control_dofs.iter().zip(u) {
            v[i] = x;
        }
        v
    }
}

/// Gradients of the barycentric coordinates of a triangle, times `2·area`.
fn scaled_gradients(p: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    [
        [p[1][1] - p[2][1], p[2][0] - p[1][0]],
        [p[2][1] - p[0][1], p[0][0] - p[2][0]],
        [p[0][1] - p[1][1], p[1][0] - p[0][0]],
    ]
}

pub fn element_stiffness(p: [[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    let g = scaled_gradients(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (g[i][0] * g[j][0] + g[i][1] * g[j][1]) / (4.0 * area);
        }
    }
    k
}

pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

pub fn assemble(mesh: &Mesh, physics: Physics) -> Result<FemOperators> {
    let Physics { nu, gamma, y_ext } = physics;
    if !(nu > 0.0) || !(gamma >= 0.0) || !y_ext.is_finite() {
        return Err(Error::invalid(
            "fem",
            format!("need ν > 0 and γ ≥ 0 (ν = {nu}, γ = {gamma}, y_ext = {y_ext})"),
        ));
    }
    let n = mesh.node_count();

    let mut control_dofs: Vec<usize> = mesh
        .triangles
        .iter()
        .zip(&mesh.subdomains)
        .filter(|(_, d)| **d == Subdomain::Control)
        .flat_map(|(t, _)| t.iter().copied())
        .collect();
    control_dofs.sort_unstable();
    control_dofs.dedup();
    if control_dofs.is_empty() {
        return Err(Error::EmptyControlRegion);
    }
    let mut local = vec![usize::MAX; n];
    for (j, &i) in control_dofs.iter().enumerate() {
        local[i] = j;
    }
    let nu_c = control_dofs.len();

    let mut kb = TripletBuilder::new(n, n);
    let mut mb = TripletBuilder::new(n, n);
    let mut kcb = TripletBuilder::new(nu_c, nu_c);
    let mut mcb = TripletBuilder::new(nu_c, nu_c);
    let mut area = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_nodes(t);
        let ar = mesh.triangle_area(t);
        area += ar;
        let ke = element_stiffness(p, ar);
        let me = element_mass(ar);
        let control = mesh.subdomains[t] == Subdomain::Control;
        for i in 0..3 {
            for j in 0..3 {
                kb.add(tri[i], tri[j], ke[i][j]);
                mb.add(tri[i], tri[j], me[i][j]);
                if control {
                    kcb.add(local[tri[i]], local[tri[j]], ke[i][j]);
                    mcb.add(local[tri[i]], local[tri[j]], me[i][j]);
                }
            }
        }
    }

    let mut outer_b = TripletBuilder::new(n, n);
    let mut obs_b = TripletBuilder::new(n, n);
    let mut obs_weights = vec![0.0; n];
    let (mut outer_length, mut obstacle_length) = (0.0, 0.0);
    for &(i, j, marker) in &mesh.boundary_edges {
        let len = edge_length(mesh.nodes[i], mesh.nodes[j]);
        let (d, o) = (len / 3.0, len / 6.0);
        let target = match marker {
            BoundaryMarker::Outer => {
                outer_length += len;
                &mut outer_b
            }
            BoundaryMarker::Obstacle => {
                obstacle_length += len;
                obs_weights[i] += len / 2.0;
                obs_weights[j] += len / 2.0;
                &mut obs_b
            }
        };
        target.add(i, i, d);
        target.add(j, j, d);
        target.add(i, j, o);
        target.add(j, i, o);
    }

    let k = kb.build();
    let m = mb.build();
    let mobs = obs_b.build();
    let a = k
        .scaled(nu)
        .add_scaled(&outer_b.build(), 1.0)
        .add_scaled(&mobs, gamma);
    let mc = mcb.build();
    let kc = kcb.build();
    let b = control_coupling(&mc, &control_dofs, n);
    let robin_load = obs_weights.iter().map(|w| gamma * y_ext * w).collect();

    Ok(FemOperators {
        a,
        m,
        k,
        mobs,
        mc,
        kc,
        b,
        robin_load,
        control_dofs,
        obs_weights,
        area,
        outer_length,
        obstacle_length,
        physics,
    })
}

/// `B = E·Mc`, where `E` injects control DOFs into state nodes.
fn control_coupling(mc: &SparseMatrix, control_dofs: &[usize], n: usize) -> SparseMatrix {
    let mut t = TripletBuilder::new(n, control_dofs.len());
    for (r, &i) in control_dofs.iter().enumerate() {
        for (c, v) in mc.row(r) {
            t.add(i, c, v);
        }
    }
    t.build()
}

/// Operators on the interval `[0, 1]` with `nodes` equispaced nodes: Robin
/// conditions at both ends, the right end plays the obstacle, the whole
/// interval is the control region. Small enough for dense oracles.
pub fn interval_operators(nodes: usize, physics: Physics) -> Result<FemOperators> {
    if nodes < 2 {
        return Err(Error::invalid("fem", "interval needs at least 2 nodes"));
    }
    let Physics { nu, gamma, y_ext } = physics;
    let h = 1.0 / (nodes - 1) as f64;
    let mut kb = TripletBuilder::new(nodes, nodes);
    let mut mb = TripletBuilder::new(nodes, nodes);
    for e in 0..nodes - 1 {
        let idx = [e, e + 1];
        let ke = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
        let me = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                kb.add(idx[i], idx[j], ke[i][j]);
                mb.add(idx[i], idx[j], me[i][j]);
            }
        }
    }
    let last = nodes - 1;
    let k = kb.build();
    let m = mb.build();
    let mut ob = TripletBuilder::new(nodes, nodes);
    ob.add(last, last, 1.0);
    let mobs = ob.build();
    let mut outer = TripletBuilder::new(nodes, nodes);
    outer.add(0, 0, 1.0);
    let a = k
        .scaled(nu)
        .add_scaled(&outer.build(), 1.0)
        .add_scaled(&mobs, gamma);
    let mut obs_weights = vec![0.0; nodes];
    obs_weights[last] = 1.0;
    let mut robin_load = vec![0.0; nodes];
    robin_load[last] = gamma * y_ext;
    let control_dofs: Vec<usize> = (0..nodes).collect();
    Ok(FemOperators {
        b: m.clone(),
        mc: m.clone(),
        kc: k.clone(),
        a,
        m,
        k,
        mobs,
        robin_load,
        control_dofs,
        obs_weights,
        area: 1.0,
        outer_length: 1.0,
        obstacle_length: 1.0,
        physics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{build_mesh, MeshParams};
    use crate::numerics::solve_sparse;

    fn mesh(n: usize) -> Mesh {
        build_mesh(MeshParams {
            n,
            ..MeshParams::default()
        })
        .unwrap()
    }

    #[test]
    fn constant_identities() {
        let me = mesh(24);
        let ops = assemble(&me, Physics::default()).unwrap();
        let one = vec![1.0; ops.n_state()];
        assert!((ops.m.quad_form(&one) - me.area()).abs() < 1e-10);
        assert!((ops.area - me.area()).abs() < 1e-12);
        assert!((ops.mobs.quad_form(&one) - ops.obstacle_length).abs() < 1e-12);
        assert!((ops.obstacle_length - me.boundary_length(BoundaryMarker::Obstacle)).abs() < 1e-12);
        let rs = ops.k.matvec(&one);
        assert!(rs.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn operators_symmetric_and_a_positive() {
        let ops = assemble(&mesh(16), Physics::default()).unwrap();
        for s in [&ops.a, &ops.m, &ops.mobs, &ops.mc, &ops.kc] {
            assert_eq!(s.asymmetry(), 0.0);
        }
        let y: Vec<f64> = (0..ops.n_state())
            .map(|i| ((i * 7) % 11) as f64 - 5.0)
            .collect();
        assert!(ops.a.quad_form(&y) > 0.0);
        assert_eq!(ops.b.rows(), ops.n_state());
        assert_eq!(ops.b.cols(), ops.n_control());
    }

    #[test]
    fn constant_field_weak_residual() {
        let ops = assemble(&mesh(32), Physics::default()).unwrap();
        let c = 3.7;
        let y = vec![c; ops.n_state()];
        let r: f64 = ops
            .a
            .matvec(&y)
            .iter()
            .zip(&ops.robin_load)
            .map(|(a, f)| a - f)
            .sum();
        let expect = c * (ops.outer_length + ops.obstacle_length) - 125.0 * ops.obstacle_length;
        assert!((r - expect).abs() < 1e-9 * expect.abs(), "{r} vs {expect}");
    }

    #[test]
    fn interval_matches_hand_assembly() {
        let ops = interval_operators(3, Physics::default()).unwrap();
        let a = ops.a.to_dense();
        // h = 1/2: K = 2·[[1,-1,0],[-1,2,-1],[0,-1,1]], plus 1 at both ends.
        let expect = [[3.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 3.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - expect[i][j]).abs() < 1e-14);
            }
        }
        assert_eq!(ops.robin_load, vec![0.0, 0.0, 125.0]);
        let y = solve_sparse(&ops.a, &ops.robin_load).unwrap();
        assert!(y[2] > y[1] && y[1] > y[0]);
    }

    #[test]
    fn rejects_bad_physics() {
        let me = mesh(16);
        let bad = Physics {
            nu: 0.0,
            ..Physics::default()
        };
        assert!(assemble(&me, bad).is_err());
    }
}
