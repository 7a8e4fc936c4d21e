use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize, DomainMask, GridSpec, Shape};
use crate::suite::BoundaryFill;

/// One exponent or a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponents {
    One(f64),
    Many(Vec<f64>),
}

impl Exponents {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Exponents::One(p) => vec![*p],
            Exponents::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Shape JSON file, relative to the config file.
    pub shape: PathBuf,
    /// Grid origin shift in cells, per axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shift: Vec<f64>,
    /// Cells of padding around the shape's bounding box.
    #[serde(default = "default_pad")]
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub name: String,
    pub factor1: PathBuf,
    pub factor2: PathBuf,
    /// Test function for the commutation residual.
    #[serde(default = "default_commutation")]
    pub commutation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub products: Vec<ProductSpec>,
    pub p: Exponents,
    /// Grid spacings, strictly decreasing.
    pub levels: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Quasi-cube cutoff; half the diameter of S when absent.
    #[serde(default)]
    pub delta_s: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_suite")]
    pub suite: String,
    #[serde(default)]
    pub fill: BoundaryFill,
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_density_samples")]
    pub density_samples: usize,
    #[serde(default = "default_pairs")]
    pub quasiconvexity_pairs: usize,
    /// Quasiconvexity radius in cells.
    #[serde(default = "default_qc_cells")]
    pub quasiconvexity_cells: f64,
    /// `C_A` above this flags the domain as not regular.
    #[serde(default = "default_regularity_limit")]
    pub regularity_limit: f64,
    /// `C_q` above this flags the domain as not quasiconvex.
    #[serde(default = "default_quasiconvexity_limit")]
    pub quasiconvexity_limit: f64,
    /// Also measure Calderón brackets on the full grid.
    #[serde(default)]
    pub calderon: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_pad() -> usize {
    3
}
fn default_commutation() -> String {
    "sin_sin".into()
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    5.0
}
fn default_suite() -> String {
    "smooth".into()
}
fn default_probes() -> usize {
    10_000
}
fn default_density_samples() -> usize {
    2_000
}
fn default_pairs() -> usize {
    400
}
fn default_qc_cells() -> f64 {
    4.0
}
fn default_regularity_limit() -> f64 {
    64.0
}
fn default_quasiconvexity_limit() -> f64 {
    10.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("no grid levels".into()));
        }
        if self.levels.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(
                "grid levels must be positive".into(),
            ));
        }
        if self.levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "levels must be strictly decreasing".into(),
            ));
        }
        let ps = self.p.values();
        if ps.is_empty() || ps.iter().any(|&p| !(p >= 1.0)) {
            return Err(Error::InvalidArgument("exponents must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} not in (0, 1]",
                self.epsilon
            )));
        }
        if self.domains.is_empty() && self.products.is_empty() {
            return Err(Error::InvalidArgument("no domains or products".into()));
        }
        crate::suite::by_name(&self.suite)?;
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn load_shape(&self, path: &Path) -> Result<Shape> {
        Shape::load(&self.resolve(path))
    }
}

/// Grid of spacing `h` over the bounding box of `shape`, padded by `pad`
/// cells and shifted by `shift` cells.
pub fn shape_grid(shape: &Shape, h: f64, pad: usize, shift: &[f64]) -> Result<GridSpec> {
    let (lo, hi) = shape
        .bbox()
        .ok_or_else(|| Error::InvalidArgument("shape has no bounding box".into()))?;
    let n = lo.len();
    let origin: Vec<f64> = (0..n)
        .map(|a| lo[a] - pad as f64 * h + shift.get(a).copied().unwrap_or(0.0) * h)
        .collect();
    let extents = (0..n)
        .map(|a| ((hi[a] - lo[a]) / h - 1e-9).ceil() as usize + 2 * pad)
        .collect();
    GridSpec::new(origin, h, extents)
}

pub fn rasterize_spec(shape: &Shape, h: f64, pad: usize, shift: &[f64]) -> Result<DomainMask> {
    rasterize(shape, &shape_grid(shape, h, pad, shift)?)
}
