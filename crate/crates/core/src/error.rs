use thiserror::Error;

/// Errors raised by the estimators and the analysis pipelines built on them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EccError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular design: columns {columns:?} are collinear with earlier covariates")]
    SingularDesign { columns: Vec<String> },

    #[error("event selects {count} rows, at least {required} are required")]
    InsufficientEventSample { count: usize, required: usize },

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("optimization failed after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    OptimizationFailure {
        iterations: usize,
        grad_norm: f64,
        /// Objective value recorded at every iteration.
        trace: Vec<f64>,
    },

    #[error("bootstrap unstable: {failures} of {replicates} replicates failed")]
    UnstableBootstrap { failures: usize, replicates: usize },

    #[error("oracle unstable: event mass {mass:.3e} is below {min:.1e}")]
    OracleUnstable { mass: f64, min: f64 },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("power iteration did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("study failed: {failed} of {total} cells failed")]
    StudyFailure { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, EccError>;
