//! Error type shared by all modules.

use thiserror::Error;

/// Partial data from a failed condition-number estimation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConditionReport {
    pub kappa: Option<f64>,
    pub lambda_max_b: Option<f64>,
    pub lambda_min_b: Option<f64>,
    pub rho_c: Option<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (box not divisible by h, bad experiment id, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the admissible domain (point outside box, nonpositive
    /// error passed to eoc, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite or otherwise corrupt numerical data.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid element or vertex index.
    #[error("index error: {0}")]
    Index(String),

    /// Degenerate cut geometry (e.g. a tetrahedron with all four level-set
    /// values equal to zero).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Geometric failure such as an empty narrow band (surface left the box).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Closest-point projection failure.
    #[error("projection error: {0}")]
    Projection(String),

    /// A surface quadrature point fell outside the narrow band of a previous
    /// state; the band constant is too small for this time step.
    #[error("band coverage error: point {point:?} in tet {tet} is outside the band of the state at t={state_time}; increase the band constant c_delta")]
    BandCoverage {
        tet: usize,
        point: [f64; 3],
        state_time: f64,
    },

    /// Gauss-Seidel preconditioner cannot be formed (zero diagonal entry).
    #[error("preconditioner error: {0}")]
    Preconditioner(String),

    /// Eigenvalue / condition estimation failure, with whatever quantities
    /// converged before the failure.
    #[error("estimator error: {message}")]
    Estimator {
        message: String,
        partial: PartialConditionReport,
    },

    /// Requested functionality needs data the problem does not provide
    /// (e.g. error norms without an exact solution).
    #[error("capability error: {0}")]
    Capability(String),

    /// Expression parsing failure in a problem file.
    #[error("expression error: {0}")]
    Expr(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
