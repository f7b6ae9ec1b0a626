//! Hybrid epidemic simulation: a facility-based agent model coupled to a
//! drift–diffusion–reaction compartment model on a triangular mesh.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod abm;
pub mod calibration;
pub mod coupling;
pub mod error;
pub mod geometry;
pub mod landscape;
pub mod langevin;
pub mod mesh;
pub mod pde;
pub mod rng;
pub mod scenario;
pub mod synth;

pub use error::{Error, MeshError, Result};
pub use geometry::{Point2, Rect};
pub use mesh::TriMesh;
