//! Batch experiment driver: certification suites and norm studies with
//! machine-readable reports.

mod certify;
mod config;
mod norms;
mod report;

pub use certify::{run_certification, CertificationRun, DomainCertification, LevelCertification};
pub use config::{
    rasterize_spec, shape_grid, DomainSpec, ExperimentConfig, Exponents, ProductSpec,
};
pub use norms::{run_norm_study, NormStudy};
pub use report::{domain_hash, CsvTable, ReportHeader, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered by severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    #[default]
    Pass,
    /// The domain failed a mathematical condition (not regular, not quasiconvex,
    /// non-extension behavior). Expected for negative tests.
    DomainFlag,
    /// An exact invariant of the construction was violated.
    InvariantViolation,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::DomainFlag => 2,
            Outcome::InvariantViolation => 3,
        }
    }

    pub fn of_error(e: &Error) -> Outcome {
        if e.is_domain_flag() {
            Outcome::DomainFlag
        } else {
            Outcome::InvariantViolation
        }
    }
}

/// Worker pool with `jobs` threads; `SOBEX_JOBS` overrides the argument.
pub fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let env = std::env::var("SOBEX_JOBS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let n = env.or(jobs).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}
