use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DomainMask, Occupancy, Region, MAX_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `|Q| / |Q ∩ A|`
    pub ratio: f64,
}

/// Measured measure-density (Ahlfors) constants of a closed set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhlforsReport {
    pub c_a: f64,
    pub delta_a: f64,
    pub samples: Vec<DensitySample>,
}

impl AhlforsReport {
    /// Constant restricted to cubes of diameter at most `delta`.
    pub fn c_a_at(&self, delta: f64) -> f64 {
        self.samples
            .iter()
            .filter(|s| 2.0 * s.radius <= delta)
            .map(|s| s.ratio)
            .fold(1.0, f64::max)
    }

    /// `(diameter, max ratio)` for each sampled dyadic radius.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for s in &self.samples {
            let d = 2.0 * s.radius;
            match out.iter_mut().find(|(dd, _)| *dd == d) {
                Some(entry) => entry.1 = entry.1.max(s.ratio),
                None => out.push((d, s.ratio)),
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Sample `|Q(x,r)| / |Q(x,r) ∩ S|` over centers `x` in S and dyadic radii
/// `r = h, 2h, ..., <= delta/2`. All closed cells are used when `sample_count`
/// is at least their number.
pub fn measure_density(
    mask: &DomainMask,
    delta: f64,
    sample_count: usize,
    seed: u64,
) -> Result<AhlforsReport> {
    let grid = mask.grid();
    let h = grid.spacing;
    if delta < 2.0 * h {
        return Err(Error::InvalidArgument(format!("delta {delta} < 2h")));
    }
    if sample_count == 0 {
        return Err(Error::InvalidArgument(
            "sample_count must be positive".into(),
        ));
    }
    let closed = mask.cells(Region::Closed);
    if closed.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let centers: Vec<usize> = if sample_count >= closed.len() {
        closed
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, closed.len(), sample_count)
            .into_iter()
            .map(|k| closed[k])
            .collect();
        picked.sort_unstable();
        picked
    };
    let occ = Occupancy::new(mask, Region::Closed);
    let n = grid.dim();
    let mut radii = Vec::new();
    let mut k = 1i64;
    while 2.0 * (k as f64) * h <= delta * (1.0 + 1e-12) {
        radii.push(k);
        k *= 2;
    }
    let mut samples = Vec::with_capacity(centers.len() * radii.len());
    let mut c_a: f64 = 1.0;
    for &idx in &centers {
        let c = grid.coords(idx);
        let mut ci = [0i64; MAX_DIM];
        for a in 0..n {
            ci[a] = c[a] as i64;
        }
        for &k in &radii {
            let inside = occ.cube_measure(&ci[..n], k);
            let radius = k as f64 * h;
            if inside <= 0.0 {
                return Err(Error::DegenerateCube {
                    center: grid.center(idx),
                    radius,
                });
            }
            let ratio = (2 * k).pow(n as u32) as f64 / inside;
            c_a = c_a.max(ratio);
            samples.push(DensitySample {
                center: grid.center(idx),
                radius,
                ratio,
            });
        }
    }
    Ok(AhlforsReport {
        c_a,
        delta_a: delta,
        samples,
    })
}
