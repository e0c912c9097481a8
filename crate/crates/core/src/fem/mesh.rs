use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryMarker {
    /// Outer square boundary (homogeneous Robin).
    Outer,
    /// Obstacle boundary (Newton cooling).
    Obstacle,
}

impl BoundaryMarker {
    pub fn code(self) -> u8 {
        match self {
            BoundaryMarker::Outer => 1,
            BoundaryMarker::Obstacle => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(BoundaryMarker::Outer),
            2 => Some(BoundaryMarker::Obstacle),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subdomain {
    Bulk,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshParams {
    /// Background grid cells per side of the square.
    pub n: usize,
    pub obstacle_radius: f64,
    pub annulus_inner: f64,
    pub annulus_outer: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            n: 48,
            obstacle_radius: 0.15,
            annulus_inner: 0.2,
            annulus_outer: 0.3,
        }
    }
}

/// Triangulation of the square `(-1,1)²` with a circular hole at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<(usize, usize, BoundaryMarker)>,
    pub subdomains: Vec<Subdomain>,
    pub params: MeshParams,
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn centroid(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

fn radius(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

/// Builds the mesh from a structured background grid: triangles whose
/// centroid falls inside the obstacle are removed and the nodes of the newly
/// exposed boundary are projected radially onto the circle.
pub fn build_mesh(params: MeshParams) -> Result<Mesh> {
    let MeshParams {
        n,
        obstacle_radius: r_obs,
        annulus_inner: r_in,
        annulus_outer: r_out,
    } = params;
    if n < 16 {
        return Err(Error::invalid("fem", format!("grid resolution {n} < 16")));
    }
    if !(0.0 < r_obs && r_obs < r_in && r_in < r_out && r_out < 1.0) {
        return Err(Error::invalid(
            "fem",
            format!("need 0 < obstacle {r_obs} < inner {r_in} < outer {r_out} < 1"),
        ));
    }
    let h = 2.0 / n as f64;
    let coord = |i: usize| -1.0 + h * i as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut grid_nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            grid_nodes.push([coord(i), coord(j)]);
        }
    }

    let mut tris = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let cx = coord(i) + 0.5 * h;
            let cy = coord(j) + 0.5 * h;
            // Diagonals point away from the origin so the grid is symmetric
            // under the quadrant reflections.
            let pair = if cx * cy >= 0.0 {
                [[a, b, c], [a, c, d]]
            } else {
                [[a, b, d], [b, c, d]]
            };
            for t in pair {
                let cen = centroid(grid_nodes[t[0]], grid_nodes[t[1]], grid_nodes[t[2]]);
                if radius(cen) >= r_obs {
                    tris.push(t);
                }
            }
        }
    }

    // Snap the hole boundary onto the circle; triangles that would collapse
    // or invert join the hole and the ring is recomputed.
    let min_area = 0.05 * h * h;
    let mut rounds = 0;
    let positions = loop {
        let mut pos = grid_nodes.clone();
        for &(a, b, m) in &boundary_edges(&tris, &grid_nodes) {
            if m == BoundaryMarker::Obstacle {
                for v in [a, b] {
                    let r = radius(grid_nodes[v]);
                    pos[v] = [grid_nodes[v][0] * r_obs / r, grid_nodes[v][1] * r_obs / r];
                }
            }
        }
        let area = |t: &[usize; 3]| signed_area(pos[t[0]], pos[t[1]], pos[t[2]]);
        let bad = tris.iter().filter(|t| area(t) < min_area).count();
        if bad == 0 {
            break pos;
        }
        rounds += 1;
        if rounds > 8 {
            let (k, t) = tris
                .iter()
                .enumerate()
                .find(|(_, t)| area(t) < min_area)
                .expect("bad triangle present");
            return Err(Error::DegenerateTriangle {
                triangle: k,
                area: area(t),
            });
        }
        tris.retain(|t| area(t) >= min_area);
    };

    // Compact node numbering.
    let mut remap = vec![usize::MAX; grid_nodes.len()];
    let mut nodes = Vec::new();
    for t in &mut tris {
        for v in t.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = nodes.len();
                nodes.push(positions[*v]);
            }
            *v = remap[*v];
        }
    }
    let boundary_edges = boundary_edges(&tris, &nodes);

    for (k, t) in tris.iter().enumerate() {
        let area = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { triangle: k, area });
        }
    }

    let subdomains = tris
        .iter()
        .map(|t| {
            let r = radius(centroid(nodes[t[0]], nodes[t[1]], nodes[t[2]]));
            if r >= r_in && r <= r_out {
                Subdomain::Control
            } else {
                Subdomain::Bulk
            }
        })
        .collect();

    Ok(Mesh {
        nodes,
        triangles: tris,
        boundary_edges,
        subdomains,
        params,
    })
}

/// Edges owned by exactly one triangle, oriented as in that triangle.
fn boundary_edges(tris: &[[usize; 3]], nodes: &[[f64; 2]]) -> Vec<(usize, usize, BoundaryMarker)> {
    let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let on_square =
        |p: [f64; 2]| (p[0].abs() - 1.0).abs() < 1e-12 || (p[1].abs() - 1.0).abs() < 1e-12;
    let mut edges = Vec::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if edge_count[&(a.min(b), a.max(b))] == 1 {
                let (pa, pb) = (nodes[a], nodes[b]);
                let outer = on_square(pa)
                    && on_square(pb)
                    && ((pa[0] - pb[0]).abs() < 1e-12 || (pa[1] - pb[1]).abs() < 1e-12);
                let marker = if outer {
                    BoundaryMarker::Outer
                } else {
                    BoundaryMarker::Obstacle
                };
                edges.push((a, b, marker));
            }
        }
    }
    edges
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_nodes(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_nodes(t);
        signed_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn boundary_length(&self, marker: BoundaryMarker) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.2 == marker)
            .map(|&(a, b, _)| edge_length(self.nodes[a], self.nodes[b]))
            .sum()
    }

    /// FNV-1a hash of the exported text; identifies the mesh in provenance records.
    pub fn fingerprint(&self) -> u64 {
        crate::io::fnv1a64(self.to_text().as_bytes())
    }

    /// Plain-text export: counts precede every section, indices are 0-based.
    ///
    /// ```text
    /// <nodes>            then  x y
    /// <triangles>        then  i j k
    /// <boundary edges>   then  i j marker   (1 = outer, 2 = obstacle)
    /// <triangles>        then  flag         (0 = bulk, 1 = control)
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
        let _ = writeln!(s, "{}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "{}", self.boundary_edges.len());
        for &(a, b, m) in &self.boundary_edges {
            let _ = writeln!(s, "{a} {b} {}", m.code());
        }
        let _ = writeln!(s, "{}", self.subdomains.len());
        for d in &self.subdomains {
            let _ = writeln!(s, "{}", matches!(d, Subdomain::Control) as u8);
        }
        s
    }

    /// Parses [`Mesh::to_text`] output. Generation parameters are not part of
    /// the format and come back as defaults.
    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines();
        let mut next = |what: &str| -> Result<&str> {
            lines
                .next()
                .ok_or_else(|| bad_text(&format!("unexpected end of file reading {what}")))
        };
        let mut section = |what: &str| -> Result<Vec<Vec<&str>>> {
            let n: usize = next(what)?
                .trim()
                .parse()
                .map_err(|_| bad_text(&format!("bad {what} count")))?;
            (0..n)
                .map(|_| Ok(next(what)?.split_whitespace().collect()))
                .collect()
        };
        let nodes = section("node")?
            .iter()
            .map(|f| match f.as_slice() {
                [x, y] => Ok([parse(x)?, parse(y)?]),
                _ => Err(bad_text("node line needs two coordinates")),
            })
            .collect::<Result<Vec<[f64; 2]>>>()?;
        let nn = nodes.len();
        let index = |s: &str| -> Result<usize> {
            let i: usize = parse(s)?;
            if i < nn {
                Ok(i)
            } else {
                Err(bad_text(&format!("node index {i} out of range")))
            }
        };
        let triangles = section("triangle")?
            .iter()
            .map(|f| match f.as_slice() {
                [a, b, c] => Ok([index(a)?, index(b)?, index(c)?]),
                _ => Err(bad_text("triangle line needs three indices")),
            })
            .collect::<Result<Vec<_>>>()?;
        let boundary_edges = section("boundary edge")?
            .iter()
            .map(|f| match f.as_slice() {
                [a, b, m] => {
                    let marker = BoundaryMarker::from_code(parse(m)?)
                        .ok_or_else(|| bad_text("unknown boundary marker"))?;
                    Ok((index(a)?, index(b)?, marker))
                }
                _ => Err(bad_text("boundary edge line needs three fields")),
            })
            .collect::<Result<Vec<_>>>()?;
        let subdomains = section("subdomain")?
            .iter()
            .map(|f| match f.as_slice() {
                ["0"] => Ok(Subdomain::Bulk),
                ["1"] => Ok(Subdomain::Control),
                _ => Err(bad_text("subdomain flag must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        if subdomains.len() != triangles.len() {
            return Err(bad_text("subdomain count differs from triangle count"));
        }
        Ok(Mesh {
            nodes,
            triangles,
            boundary_edges,
            subdomains,
            params: MeshParams::default(),
        })
    }
}

fn bad_text(msg: &str) -> Error {
    Error::Format(format!("mesh text: {msg}"))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| bad_text(&format!("cannot parse {s:?}")))
}

pub fn edge_length(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
