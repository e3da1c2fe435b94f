use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field shape {found:?} does not match mesh shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-positive density {value:e} in cell {cell}")]
    NonPositiveDensity { cell: usize, value: f64 },

    #[error("density {value:e} in cell {cell} left the admissible window [{lo:e}, {hi:e}]")]
    DensityWindow {
        cell: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("nonlinear density solve did not converge after {iterations} iterations (last update {update:e})")]
    NonlinearDivergence { iterations: usize, update: f64 },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("grids are not nested: fine {fine:?} cannot be restricted to {coarse:?}")]
    NonNested {
        fine: (usize, usize),
        coarse: (usize, usize),
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
