//! Smooth partition of unity subordinate to a Whitney family.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, MAX_DIM};
use crate::whitney::WhitneyFamily;

/// Plateau profile: 1 on `[-1, 1]`, 0 outside `[-9/8, 9/8]`, quintic (C²) in between.
pub fn rho(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 1.125 {
        0.0
    } else {
        let t = (a - 1.0) * 8.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn rho_prime(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 || a >= 1.125 {
        0.0
    } else {
        let t = (a - 1.0) * 8.0;
        -30.0 * t * t * (1.0 - t) * (1.0 - t) * 8.0 * s.signum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionValue {
    pub cube: usize,
    pub value: f64,
    pub gradient: [f64; MAX_DIM],
}

/// The family `φ_Q = ψ_Q / Σ_K ψ_K`, evaluated on demand.
#[derive(Clone, Debug)]
pub struct BumpBasis {
    pub family: Arc<WhitneyFamily>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    /// Max of `|∇φ_Q| · diam Q` over the probes.
    pub constant: f64,
    /// Max support size seen.
    pub max_support: usize,
    /// Max deviation of `Σ φ_Q` from 1.
    pub sum_error: f64,
    pub probes: usize,
}

impl BumpBasis {
    pub fn new(family: Arc<WhitneyFamily>) -> Result<Self> {
        if !family.certificate.passed() {
            return Err(Error::Invariant(
                "Whitney family failed certification".into(),
            ));
        }
        Ok(BumpBasis { family })
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    /// `ψ_Q(x)` and its gradient.
    pub fn bump(&self, id: usize, x: &[f64]) -> (f64, [f64; MAX_DIM]) {
        let q = self.family.cube(id);
        let n = self.dim();
        let r = q.half_side;
        let mut f = [0.0; MAX_DIM];
        let mut df = [0.0; MAX_DIM];
        for a in 0..n {
            let s = (x[a] - q.center[a]) / r;
            f[a] = rho(s);
            df[a] = rho_prime(s) / r;
        }
        let value: f64 = f[..n].iter().product();
        let mut grad = [0.0; MAX_DIM];
        for a in 0..n {
            grad[a] = (0..n).map(|b| if a == b { df[b] } else { f[b] }).product();
        }
        (value, grad)
    }

    /// Nonzero `φ_Q(x)` with gradients. Errors with `InSet` on S.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<PartitionValue>> {
        let ids = self.family.locate(x)?;
        self.evaluate_on(x, &ids)
    }

    /// Evaluate using a precomputed candidate list (must contain every cube whose star holds `x`).
    pub fn evaluate_on(&self, x: &[f64], ids: &[usize]) -> Result<Vec<PartitionValue>> {
        let n = self.dim();
        let mut bumps = Vec::with_capacity(ids.len());
        let mut sum = 0.0;
        let mut dsum = [0.0; MAX_DIM];
        for &id in ids {
            let (v, g) = self.bump(id, x);
            if v > 0.0 {
                sum += v;
                for a in 0..n {
                    dsum[a] += g[a];
                }
                bumps.push((id, v, g));
            }
        }
        if sum < 1.0 - 1e-12 {
            return Err(Error::Coverage {
                point: x.to_vec(),
                denominator: sum,
            });
        }
        Ok(bumps
            .into_iter()
            .map(|(cube, v, g)| {
                let mut gradient = [0.0; MAX_DIM];
                for a in 0..n {
                    gradient[a] = (g[a] * sum - v * dsum[a]) / (sum * sum);
                }
                PartitionValue {
                    cube,
                    value: v / sum,
                    gradient,
                }
            })
            .collect())
    }

    /// Probe `resolution^n` lattice points in every unclipped `Q*`.
    pub fn probe_gradients(&self, resolution: usize) -> GradientProbe {
        let n = self.dim();
        let fam = &self.family;
        let per_cube: Vec<GradientProbe> = (0..fam.len())
            .into_par_iter()
            .filter(|&id| !fam.cubes[id].clipped)
            .map(|id| {
                let star = fam.cube(id).star();
                let diam = fam.diam(id);
                let mut out = GradientProbe::default();
                let total = resolution.pow(n as u32);
                for k in 0..total {
                    let mut x = [0.0; MAX_DIM];
                    let mut rem = k;
                    for a in (0..n).rev() {
                        let j = rem % resolution;
                        rem /= resolution;
                        let t = (j as f64 + 0.5) / resolution as f64;
                        x[a] = star.lo(a) + t * 2.0 * star.half_side;
                    }
                    let Ok(vals) = self.evaluate(&x[..n]) else {
                        continue;
                    };
                    out.probes += 1;
                    out.max_support = out.max_support.max(vals.len());
                    let s: f64 = vals.iter().map(|v| v.value).sum();
                    out.sum_error = out.sum_error.max((s - 1.0).abs());
                    for v in &vals {
                        if v.cube == id {
                            let g = v.gradient[..n].iter().map(|g| g * g).sum::<f64>().sqrt();
                            out.constant = out.constant.max(g * diam);
                        }
                    }
                }
                out
            })
            .collect();
        per_cube
            .into_iter()
            .fold(GradientProbe::default(), |a, b| GradientProbe {
                constant: a.constant.max(b.constant),
                max_support: a.max_support.max(b.max_support),
                sum_error: a.sum_error.max(b.sum_error),
                probes: a.probes + b.probes,
            })
    }

    /// CSV of `Σ φ_Q` at cell centers of `grid` (empty value on S).
    pub fn dump_sum_csv(&self, grid: &GridSpec, out: &mut impl Write) -> std::io::Result<()> {
        let n = grid.dim();
        let axes = ["x", "y", "z"];
        writeln!(out, "{},sum", axes[..n].join(","))?;
        for cell in 0..grid.len() {
            let x = grid.center(cell);
            let coords: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            match self.evaluate(&x) {
                Ok(vals) => {
                    let s: f64 = vals.iter().map(|v| v.value).sum();
                    writeln!(out, "{},{s}", coords.join(","))?
                }
                Err(_) => writeln!(out, "{},", coords.join(","))?,
            }
        }
        Ok(())
    }
}
