//! Catmull-Clark subdivision solids on hexahedral meshes, their tricubic
//! Bézier approximation, isogeometric analysis on the resulting spline model
//! and a multi-resolution BESO topology optimizer on top.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All file formats, VTK export and the command-line driver live in
//! the companion `ccsolid-tools` crate.
//!
//! Module map:
//! - [`hexmesh`]: hexahedral mesh, derived incidence, validation, vertex stars.
//! - [`subdivision`]: solid subdivision rules, limit points, local subdivision matrices.
//! - [`spline`]: per-cell 4×4×4 Bézier nets, evaluation, approximation error.
//! - [`iga`]: heat and elasticity stiffness, sparse assembly, PCG solve.
//! - [`topopt`]: density fields, sensitivities, filtering and the BESO loop.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod geometry;
pub mod hexmesh;
pub mod iga;
pub mod spline;
pub mod subdivision;
pub mod topopt;

pub use geometry::{Aabb, Point3};
pub use hexmesh::{HexMesh, MeshError, ValidationReport, VertexStar};
pub use spline::{BezierVolume, SplineModel};
