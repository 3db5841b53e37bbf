//! Error type shared by every layer of the engine.

/// Errors raised by metric evaluation, geometry, transport and algebra
/// generation.
#[derive(Debug, thiserror::Error)]
pub enum FinslerError {
    /// A base point lies outside the chart domain of the metric.
    #[error("point outside metric domain: {0}")]
    Domain(String),

    /// The zero tangent vector was passed where the Finsler function is not
    /// smooth (it is only smooth on the slit tangent bundle).
    #[error("tangent vector must be nonzero")]
    SlitViolation,

    /// A jet order beyond the supported cap was requested.
    #[error("derivative order {requested} unsupported (max {max})")]
    UnsupportedOrder { requested: usize, max: usize },

    /// Metric registration failed validation.
    #[error("metric rejected: {0}")]
    InvalidMetric(String),

    /// The fundamental tensor failed the positive-definiteness check,
    /// signalling a bad metric or boundary proximity.
    #[error("fundamental tensor not positive definite (min eigenvalue {min_eig:.3e})")]
    MetricDegenerate { min_eig: f64 },

    /// The curvature tensor does not fit the constant-flag-curvature form.
    #[error("curvature is not of constant-flag-curvature form (residual {residual:.3e})")]
    NotConstantCurvature { residual: f64 },

    /// An operation that requires the projectively-flat catalog flag was
    /// called on a metric without it.
    #[error("metric '{0}' is not flagged projectively flat")]
    NotProjectivelyFlat(String),

    /// Parallel transport failed its Finsler-norm preservation contract.
    #[error("transport drift {drift:.3e} exceeds stability bound {bound:.3e}")]
    IntegrationUnstable { drift: f64, bound: f64 },

    /// Newton iteration for an indicatrix radius did not converge.
    #[error("indicatrix radius solve did not converge at angle {theta}")]
    IndicatrixSolve { theta: f64 },

    /// A field restricted to the indicatrix was not tangent to it.
    #[error("field not tangent to indicatrix (residual {residual:.3e})")]
    Tangency { residual: f64 },

    /// The loop-shrinking curvature probe converged at the wrong order,
    /// flagging a transport or curvature bug.
    #[error("loop curvature order fit {slope:.3} outside [{lo}, {hi}]")]
    ConsistencyFailure { slope: f64, lo: f64, hi: f64 },

    /// Invalid discretization parameters (e.g. odd spectral grid).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Algebra generation is restricted to surfaces.
    #[error("operation requires a surface (n = 2), got n = {0}")]
    SurfaceOnly(usize),

    /// Jet arithmetic hit a non-smooth point (sqrt or division at zero).
    #[error("non-smooth jet evaluation: {0}")]
    NonSmooth(String),
}

pub type Result<T> = std::result::Result<T, FinslerError>;
