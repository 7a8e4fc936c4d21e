use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape does not cover any grid cell")]
    EmptyDomain,

    #[error("mask has no interior cell")]
    DegenerateDomain,

    #[error("cube centred at {center:?} with radius {radius} has empty intersection with the set")]
    DegenerateCube { center: Vec<f64>, radius: f64 },

    #[error("no path between cells {from} and {to} in a connected mask")]
    Disconnected { from: usize, to: usize },

    #[error("finest Whitney level cannot separate {} cells from the set", uncovered.len())]
    ResolutionExhausted { uncovered: Vec<usize> },

    #[error("point {0:?} lies in the set")]
    InSet(Vec<f64>),

    #[error("point {0:?} lies outside the window")]
    OutsideWindow(Vec<f64>),

    #[error("partition denominator {denominator} < 1 at {point:?}")]
    Coverage { point: Vec<f64>, denominator: f64 },

    #[error("{} Whitney cubes below the diameter cutoff have empty quasi-cubes", cubes.len())]
    RegularityViolation { cubes: Vec<usize> },

    #[error("empty region")]
    EmptyRegion,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that describe the domain (not regular, not quasiconvex)
    /// rather than a defect in the computation.
    pub fn is_domain_flag(&self) -> bool {
        matches!(
            self,
            Error::RegularityViolation { .. } | Error::Disconnected { .. } | Error::EmptyDomain
        )
    }
}
