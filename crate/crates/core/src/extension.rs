//! The extension `Eu = Σ_Q φ_Q P_{H_Q} u` off S, `Eu = u` on S.
//!
//! The map is kept factorised: per-cube means (`P`) and per-cell partition
//! weights (`Φ`), with identity rows on S. Rows of the composed matrix are
//! available on demand.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, GridSpec, Region, MAX_DIM};
use crate::local::{sobolev_report, ScalarField, SobolevReport};
use crate::partition::BumpBasis;
use crate::quasicube::QuasiCubeFamily;
use crate::sparse::CsrMatrix;
use crate::whitney::{decompose, DyadicWindow, TICKS_PER_CELL};

#[derive(Clone, Debug)]
pub struct ExtensionMap {
    pub source: Arc<DomainMask>,
    pub target: GridSpec,
    pub qfam: Arc<QuasiCubeFamily>,
    pub basis: BumpBasis,
    /// Cubes × source cells: uniform weights over `H_Q`.
    pub means: CsrMatrix,
    /// Target cells × cubes: `φ_Q` at the cell center (empty on S).
    pub blend: CsrMatrix,
    /// Source cell for target cells in S.
    pub identity: Vec<Option<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub rows: usize,
    pub nnz: usize,
    pub max_row_support: usize,
    /// Measure of the target cells off S whose row sums to 1.
    pub layer_volume: f64,
    pub identity_rows: usize,
    pub zero_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionOptions {
    pub epsilon: f64,
    /// Quasi-cube cutoff; `None` means diam S / 2.
    pub delta_s: Option<f64>,
    /// Window margin in multiples of diam S.
    pub margin: f64,
    pub region: Region,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions {
            epsilon: 0.5,
            delta_s: None,
            margin: 5.0,
            region: Region::Closed,
        }
    }
}

impl ExtensionMap {
    /// Decompose, build the partition and the quasi-cubes, and assemble on the
    /// minimal target grid.
    pub fn build(mask: &DomainMask, opts: &ExtensionOptions) -> Result<ExtensionMap> {
        let window = DyadicWindow::around(mask, opts.margin)?;
        let h = mask.grid().spacing;
        let k = (window.diam() / h).log2().round() as u32;
        let fam = Arc::new(decompose(mask, &window, 0, k + 1)?);
        let basis = BumpBasis::new(fam.clone())?;
        let delta_s = opts.delta_s.unwrap_or(0.5 * mask.closed_diam());
        let mask = Arc::new(mask.clone());
        let qfam = Arc::new(QuasiCubeFamily::build_with_region(
            fam,
            mask,
            opts.epsilon,
            delta_s,
            opts.region,
        )?);
        let target = support_grid(&qfam)?;
        Self::assemble(qfam, basis, target)
    }

    pub fn assemble(
        qfam: Arc<QuasiCubeFamily>,
        basis: BumpBasis,
        target: GridSpec,
    ) -> Result<ExtensionMap> {
        if !Arc::ptr_eq(&qfam.family, &basis.family) {
            return Err(Error::InvalidArgument(
                "quasi-cubes and partition built over different families".into(),
            ));
        }
        let fam = &qfam.family;
        let source = qfam.mask.clone();
        let sgrid = source.grid();
        let n = sgrid.dim();
        let wgrid = fam.window.cell_grid()?;
        let t_off = wgrid.offset_of(&target).ok_or_else(|| {
            Error::InvalidArgument("target grid is not on the mask lattice".into())
        })?;
        let s_off = target.offset_of(sgrid).ok_or_else(|| {
            Error::InvalidArgument("target grid is not on the mask lattice".into())
        })?;

        let means = CsrMatrix::from_rows(
            sgrid.len(),
            (0..fam.len()).map(|id| {
                let row = qfam.members.row(id);
                let w = 1.0 / row.len().max(1) as f64;
                row.iter().map(|&c| (c, w)).collect()
            }),
        );

        let identity: Vec<Option<u32>> = (0..target.len())
            .map(|t| {
                let c = target.coords(t);
                let mut sc = [0i64; MAX_DIM];
                for a in 0..n {
                    sc[a] = c[a] as i64 - s_off[a];
                }
                sgrid
                    .checked_index(&sc[..n])
                    .filter(|&s| source.is_closed(s))
                    .map(|s| s as u32)
            })
            .collect();

        // sweep each star over the target cells it covers
        let half = TICKS_PER_CELL / 2;
        let wside = fam.window.side_ticks;
        let text: Vec<i64> = target.extents.iter().map(|&e| e as i64).collect();
        let triplets: Vec<(u32, u32, f64)> = (0..fam.len())
            .into_par_iter()
            .flat_map_iter(|id| {
                let q = &fam.cubes[id];
                let mut lo = [0i64; MAX_DIM];
                let mut hi = [0i64; MAX_DIM];
                let mut empty = false;
                for a in 0..n {
                    let c = q.center2(a) / 2;
                    let e = 9 * q.side / 16;
                    let (l, u) = ((c - e).max(0), (c + e).min(wside));
                    lo[a] = (-(-(l - half)).div_euclid(TICKS_PER_CELL) - t_off[a]).max(0);
                    hi[a] = ((u - half).div_euclid(TICKS_PER_CELL) - t_off[a]).min(text[a] - 1);
                    empty |= lo[a] > hi[a];
                }
                let mut out = Vec::new();
                if !empty {
                    target.for_each_in_box(&lo[..n], &hi[..n], |cell, _| {
                        if identity[cell].is_some() {
                            return;
                        }
                        let (v, _) = basis.bump(id, &target.center(cell));
                        if v > 0.0 {
                            out.push((cell as u32, id as u32, v));
                        }
                    });
                }
                out.into_iter()
            })
            .collect();
        let mut per_cell: Vec<Vec<(u32, f64)>> = vec![Vec::new(); target.len()];
        for (cell, id, v) in triplets {
            per_cell[cell as usize].push((id, v));
        }
        let wcube = fam.window.cube();
        for (cell, row) in per_cell.iter_mut().enumerate() {
            if identity[cell].is_some() {
                continue;
            }
            let x = target.center(cell);
            let inside = (0..n).all(|a| x[a] > wcube.lo(a) && x[a] < wcube.hi(a));
            let sum: f64 = row.iter().map(|r| r.1).sum();
            if inside && sum < 1.0 - 1e-12 {
                return Err(Error::Coverage {
                    point: x,
                    denominator: sum,
                });
            }
            row.sort_unstable_by_key(|r| r.0);
            for r in row.iter_mut() {
                r.1 /= sum;
            }
        }
        let blend = CsrMatrix::from_rows(fam.len(), per_cell);
        Ok(ExtensionMap {
            source,
            target,
            qfam,
            basis,
            means,
            blend,
            identity,
        })
    }

    /// Composed row of target cell `t`: source cells and weights.
    pub fn row(&self, t: usize) -> Vec<(u32, f64)> {
        if let Some(s) = self.identity[t] {
            return vec![(s, 1.0)];
        }
        let (cubes, phi) = self.blend.row(t);
        let mut out: Vec<(u32, f64)> = Vec::new();
        for (&q, &f) in cubes.iter().zip(phi) {
            let (cells, w) = self.means.row(q as usize);
            out.extend(cells.iter().zip(w).map(|(&c, &w)| (c, f * w)));
        }
        out.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(out.len());
        for (c, w) in out {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        merged
    }

    /// `P_{H_Q} u` per cube (0 for empty `H_Q`).
    pub fn cube_means(&self, u: &ScalarField) -> Result<Vec<f64>> {
        if u.grid != *self.source.grid() {
            return Err(Error::Shape("field is not on the source grid".into()));
        }
        self.means.convex_mul_vec(&u.values)
    }

    pub fn apply(&self, u: &ScalarField) -> Result<ScalarField> {
        let m = self.cube_means(u)?;
        let values = (0..self.target.len())
            .into_par_iter()
            .map(|t| match self.identity[t] {
                Some(s) => u.values[s as usize],
                None => self.blend.convex_dot(t, &m),
            })
            .collect();
        ScalarField::new(self.target.clone(), values)
    }

    /// `Eu(x)` and its gradient from the partition formula, at a point off S.
    pub fn eval_point(&self, means: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.target.dim();
        let vals = self.basis.evaluate(x)?;
        let mut v = 0.0;
        let mut g = vec![0.0; n];
        for pv in vals {
            v += pv.value * means[pv.cube];
            for a in 0..n {
                g[a] += pv.gradient[a] * means[pv.cube];
            }
        }
        Ok((v, g))
    }

    pub fn stats(&self) -> MapStats {
        let rows: Vec<(usize, f64)> = (0..self.target.len())
            .into_par_iter()
            .map(|t| {
                let r = self.row(t);
                (r.len(), r.iter().map(|e| e.1).sum())
            })
            .collect();
        let identity_rows = self.identity.iter().filter(|i| i.is_some()).count();
        let layer = (0..rows.len())
            .filter(|&t| self.identity[t].is_none() && (rows[t].1 - 1.0).abs() < 1e-12)
            .count();
        MapStats {
            rows: rows.len(),
            nnz: rows.iter().map(|r| r.0).sum(),
            max_row_support: rows.iter().map(|r| r.0).max().unwrap_or(0),
            layer_volume: layer as f64 * self.target.cell_volume(),
            identity_rows,
            zero_rows: rows.iter().filter(|r| r.0 == 0).count(),
        }
    }
}

/// Smallest lattice grid holding S and every cube with nonempty `H_Q`,
/// padded by two cells so differences at the edge of the support are seen.
pub fn support_grid(qfam: &QuasiCubeFamily) -> Result<GridSpec> {
    let fam = &qfam.family;
    let n = fam.dim();
    let grid = qfam.mask.grid();
    let (blo, bhi) = qfam.mask.closed_bbox().ok_or(Error::EmptyDomain)?;
    let mut lo: Vec<f64> = (0..n)
        .map(|a| grid.origin[a] + blo[a] as f64 * grid.spacing)
        .collect();
    let mut hi: Vec<f64> = (0..n)
        .map(|a| grid.origin[a] + (bhi[a] + 1) as f64 * grid.spacing)
        .collect();
    for id in 0..fam.len() {
        if qfam.members.row(id).is_empty() {
            continue;
        }
        let star = fam.cube(id).star();
        for a in 0..n {
            lo[a] = lo[a].min(star.lo(a));
            hi[a] = hi[a].max(star.hi(a));
        }
    }
    let h = grid.spacing;
    let wc = fam.window.cube();
    for a in 0..n {
        // snap outward to the lattice, stay inside the window
        let k = ((lo[a] - grid.origin[a]) / h + 1e-9).floor() - 2.0;
        lo[a] = (grid.origin[a] + k * h).max(wc.lo(a));
        let k = ((hi[a] - grid.origin[a]) / h - 1e-9).ceil() + 2.0;
        hi[a] = (grid.origin[a] + k * h).min(wc.hi(a));
    }
    let extents = (0..n)
        .map(|a| ((hi[a] - lo[a]) / h).round() as usize)
        .collect();
    GridSpec::new(lo, h, extents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRatio {
    pub name: String,
    pub source: SobolevReport,
    pub target: SobolevReport,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormReport {
    pub p: f64,
    pub ratios: Vec<NormRatio>,
    pub max_ratio: f64,
    pub refinement_drift: Option<f64>,
}

impl OperatorNormReport {
    /// Relative change of `max_ratio` from `self` to the refined report.
    pub fn drift_to(&self, finer: &OperatorNormReport) -> f64 {
        (finer.max_ratio - self.max_ratio).abs() / self.max_ratio
    }
}

/// `||Eu||_{W^{1,p}(target)} / ||u||_{W^{1,p}(Ω)}` for each named field.
pub fn operator_norm_study(
    map: &ExtensionMap,
    suite: &[(String, ScalarField)],
    p: f64,
) -> Result<OperatorNormReport> {
    let full = DomainMask::full(map.target.clone());
    let mut ratios = Vec::new();
    for (name, u) in suite {
        let source = sobolev_report(u, &map.source, p, false)?;
        if source.w1p_norm == 0.0 {
            warn!("{name}: zero norm on the source, skipped");
            continue;
        }
        let eu = map.apply(u)?;
        let target = sobolev_report(&eu, &full, p, false)?;
        ratios.push(NormRatio {
            name: name.clone(),
            ratio: target.w1p_norm / source.w1p_norm,
            source,
            target,
        });
    }
    let max_ratio = ratios.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(OperatorNormReport {
        p,
        ratios,
        max_ratio,
        refinement_drift: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Shape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn square_map(h: f64) -> ExtensionMap {
        let pad = 3.0 * h;
        let cells = ((1.0 + 2.0 * pad) / h).round() as usize;
        let grid = GridSpec::new(vec![-pad; 2], h, vec![cells, cells]).unwrap();
        let mask = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &grid).unwrap();
        ExtensionMap::build(&mask, &ExtensionOptions::default()).unwrap()
    }

    #[test]
    fn constants_extend_to_constants_on_the_layer() {
        let map = square_map(1.0 / 16.0);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |_| 2.5);
        let eu = map.apply(&u).unwrap();
        let mut layer = 0;
        for t in 0..map.target.len() {
            let s: f64 = map.row(t).iter().map(|e| e.1).sum();
            assert!(s <= 1.0 + 1e-12 && s >= 0.0);
            if (s - 1.0).abs() < 1e-12 {
                assert!((eu.values[t] - 2.5).abs() < 1e-12);
                layer += 1;
            }
        }
        assert!(layer > map.identity.iter().flatten().count());
    }

    #[test]
    fn restriction_and_contraction() {
        let map = square_map(1.0 / 16.0);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |x| (3.0 * x[0]).sin() + x[1]);
        let eu = map.apply(&u).unwrap();
        let umax = u.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 0..map.target.len() {
            if let Some(s) = map.identity[t] {
                assert_eq!(eu.values[t], u.values[s as usize]);
            }
            assert!(eu.values[t].abs() <= umax + 1e-12);
        }
        let zero = map
            .apply(&ScalarField::zeros(map.source.grid().clone()))
            .unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factorised_apply_matches_composed_rows() {
        let map = square_map(1.0 / 16.0);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |x| x[0] * x[1] - 0.3);
        let eu = map.apply(&u).unwrap();
        for t in 0..map.target.len() {
            let direct: f64 = map
                .row(t)
                .iter()
                .map(|&(c, w)| w * u.values[c as usize])
                .sum();
            assert!((direct - eu.values[t]).abs() < 1e-12);
        }
        let stats = map.stats();
        let max_h = (0..map.qfam.members.rows())
            .map(|i| map.qfam.members.row(i).len())
            .max()
            .unwrap();
        assert!(stats.max_row_support <= map.qfam.family.certificate.star_overlap * max_h);
    }

    #[test]
    fn continuous_across_the_boundary() {
        let h = 1.0 / 32.0;
        let map = square_map(h);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |x| x[0]);
        let eu = map.apply(&u).unwrap();
        let tg = &map.target;
        // probe pairs straddling the edge x = 1
        for i in 0..tg.len() {
            let c = tg.center(i);
            if (c[0] - (1.0 + 0.5 * h)).abs() < 1e-9 && c[1] > 0.1 && c[1] < 0.9 {
                let j = tg.locate(&[c[0] + h, c[1]]).unwrap();
                assert!((eu.values[j] - eu.values[i]).abs() < 3.0 * h);
            }
        }
    }

    #[test]
    fn analytic_gradient_agrees_with_differences() {
        let h = 1.0 / 32.0;
        let map = square_map(h);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |x| x[0] + 0.5 * x[1]);
        let m = map.cube_means(&u).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut probes = 0;
        while probes < 100 {
            let x = [rng.gen_range(1.1..1.2), rng.gen_range(0.2..0.8)];
            let (_, g) = map.eval_point(&m, &x).unwrap();
            let e = 1e-5;
            let (vp, _) = map.eval_point(&m, &[x[0] + e, x[1]]).unwrap();
            let (vm, _) = map.eval_point(&m, &[x[0] - e, x[1]]).unwrap();
            assert!(((vp - vm) / (2.0 * e) - g[0]).abs() < 1e-4 * (1.0 + g[0].abs()));
            probes += 1;
        }
    }

    #[test]
    fn locality_under_support_zeroing() {
        let map = square_map(1.0 / 16.0);
        let u = ScalarField::sample_on(&map.source, Region::Closed, |x| (5.0 * x[0] * x[1]).cos());
        let eu = map.apply(&u).unwrap();
        let t = map.target.locate(&[1.1, 0.5]).unwrap();
        let row = map.row(t);
        let mut v = ScalarField::zeros(u.grid.clone());
        for &(c, _) in &row {
            v.values[c as usize] = u.values[c as usize];
        }
        let ev = map.apply(&v).unwrap();
        assert_eq!(ev.values[t], eu.values[t]);
    }

    #[test]
    fn norm_study_is_finite() {
        let map = square_map(1.0 / 16.0);
        let suite = vec![
            (
                "one".to_string(),
                ScalarField::sample_on(&map.source, Region::Closed, |_| 1.0),
            ),
            (
                "x".to_string(),
                ScalarField::sample_on(&map.source, Region::Closed, |x| x[0]),
            ),
            (
                "zero".to_string(),
                ScalarField::zeros(map.source.grid().clone()),
            ),
        ];
        let r = operator_norm_study(&map, &suite, 2.0).unwrap();
        assert_eq!(r.ratios.len(), 2);
        assert!(r.max_ratio.is_finite() && r.ratios.iter().all(|x| x.ratio >= 0.95));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn linear_and_positive(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let map = square_map(1.0 / 8.0);
            let u = ScalarField::sample_on(&map.source, Region::Closed, |x| (x[0] - 0.5).abs());
            let v = ScalarField::sample_on(&map.source, Region::Closed, |x| x[1] * x[1]);
            let w = u.zip(&v, |p, q| a * p + b * q).unwrap();
            let (eu, ev, ew) = (map.apply(&u).unwrap(), map.apply(&v).unwrap(), map.apply(&w).unwrap());
            for t in 0..map.target.len() {
                let lin = a * eu.values[t] + b * ev.values[t];
                prop_assert!((ew.values[t] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
                prop_assert!(eu.values[t] >= 0.0 && ev.values[t] >= 0.0);
            }
        }
    }
}
