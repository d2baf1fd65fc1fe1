//! Stabilized trace finite element method (TraceFEM) for scalar
//! transport-diffusion equations on evolving, level-set-defined surfaces.
//!
//! The solver works on a stationary background tetrahedral mesh. Each time
//! step reconstructs the discrete surface from a nodal level set, selects a
//! narrow band of active elements, assembles the stabilized system on the
//! traces of the background P1 space, and solves it with Gauss-Seidel
//! preconditioned GMRES. Volume stabilization with normal gradients keeps
//! the systems well conditioned and extends the solution into the band, so
//! no explicit re-extension (fast marching etc.) is needed between steps.
//!
//! Modules follow the pipeline:
//!
//! * [`mesh`] - Kuhn-subdivided background grid and point location
//! * [`geometry`] - level-set interpolation, surface extraction, narrow band,
//!   quadrature rules
//! * [`problem`] - evolving-surface problem definitions and lifted data
//! * [`assembly`] - sparse system assembly, split into its symmetric /
//!   skew / stabilization parts
//! * [`solver`] - GMRES + Gauss-Seidel and condition number estimation
//! * [`timestepper`] - the time loop with band bookkeeping and diagnostics
//! * [`postproc`] - error norms, EOC tables and renderers

pub mod assembly;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod mesh;
pub mod postproc;
pub mod problem;
pub mod solver;
pub mod sparse;
pub mod timestepper;
pub mod vec3;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
