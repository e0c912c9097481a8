//! Geometry and P1 finite-element operators for the cooling benchmark.

pub mod assemble;
pub mod mesh;
pub mod source;

pub use assemble::{assemble, interval_operators, FemOperators, Physics};
pub use mesh::{build_mesh, BoundaryMarker, Mesh, MeshParams, Subdomain};
pub use source::{gaussian_source, gaussian_value, load_vector, source_center, Quadrature};
