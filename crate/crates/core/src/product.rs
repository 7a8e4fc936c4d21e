//! Slice-wise extension on product domains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::ExtensionMap;
use crate::geometry::{DomainMask, GridSpec, Region};
use crate::local::{gradient, sobolev_report, ScalarField, SobolevReport};
use crate::suite::{BoundaryFill, TestFunction};

/// Samples on `grid_x × grid_y`, x-cells slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductField {
    pub grid_x: GridSpec,
    pub grid_y: GridSpec,
    pub values: Vec<f64>,
}

impl ProductField {
    pub fn new(grid_x: GridSpec, grid_y: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid_x.len() * grid_y.len() {
            return Err(Error::Shape(format!(
                "{} values for {} x {} cells",
                values.len(),
                grid_x.len(),
                grid_y.len()
            )));
        }
        Ok(ProductField {
            grid_x,
            grid_y,
            values,
        })
    }

    pub fn zeros(grid_x: GridSpec, grid_y: GridSpec) -> Self {
        let n = grid_x.len() * grid_y.len();
        ProductField {
            grid_x,
            grid_y,
            values: vec![0.0; n],
        }
    }

    /// Sample `f(x, y)` on `closed(mask_x) × closed(mask_y)` (or open × open
    /// for zero fill), zero elsewhere.
    pub fn sample(
        mask_x: &DomainMask,
        mask_y: &DomainMask,
        fill: BoundaryFill,
        f: impl Fn(&[f64]) -> f64 + Sync,
    ) -> Self {
        let region = match fill {
            BoundaryFill::Trace => Region::Closed,
            BoundaryFill::Zero => Region::Open,
        };
        let (gx, gy) = (mask_x.grid().clone(), mask_y.grid().clone());
        let ny = gy.len();
        let values = (0..gx.len() * ny)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / ny, k % ny);
                if mask_x.in_region(i, region) && mask_y.in_region(j, region) {
                    let mut p = gx.center(i);
                    p.extend(gy.center(j));
                    f(&p)
                } else {
                    0.0
                }
            })
            .collect();
        ProductField {
            grid_x: gx,
            grid_y: gy,
            values,
        }
    }

    pub fn sample_function(
        mask_x: &DomainMask,
        mask_y: &DomainMask,
        fill: BoundaryFill,
        f: &TestFunction,
    ) -> Self {
        Self::sample(mask_x, mask_y, fill, |p| f.eval(p))
    }

    pub fn nx(&self) -> usize {
        self.grid_x.len()
    }

    pub fn ny(&self) -> usize {
        self.grid_y.len()
    }

    /// Values at fixed y-cell, as a field on `grid_x`.
    pub fn y_slice(&self, j: usize) -> ScalarField {
        let ny = self.ny();
        ScalarField {
            grid: self.grid_x.clone(),
            values: (0..self.nx()).map(|i| self.values[i * ny + j]).collect(),
        }
    }

    /// Values at fixed x-cell, as a field on `grid_y`.
    pub fn x_slice(&self, i: usize) -> ScalarField {
        let ny = self.ny();
        ScalarField {
            grid: self.grid_y.clone(),
            values: self.values[i * ny..(i + 1) * ny].to_vec(),
        }
    }

    /// `û(y, x) = u(x, y)`.
    pub fn transpose(&self) -> ProductField {
        let (nx, ny) = (self.nx(), self.ny());
        let mut values = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                values[j * nx + i] = self.values[i * ny + j];
            }
        }
        ProductField {
            grid_x: self.grid_y.clone(),
            grid_y: self.grid_x.clone(),
            values,
        }
    }

    /// The same samples on the combined grid.
    pub fn to_scalar(&self) -> Result<ScalarField> {
        ScalarField::new(self.grid_x.product(&self.grid_y)?, self.values.clone())
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        crate::local::lp_norm(
            self.values.iter().copied(),
            p,
            self.grid_x.cell_volume() * self.grid_y.cell_volume(),
        )
    }
}

/// `E₁u(x, y) = (E u_y)(x)` for every y-cell in `slices` (all y-cells if `None`).
pub fn extend_first_factor(
    u: &ProductField,
    map: &ExtensionMap,
    slices: Option<&DomainMask>,
) -> Result<ProductField> {
    if u.grid_x != *map.source.grid() {
        return Err(Error::Shape(
            "x grid is not the extension source grid".into(),
        ));
    }
    if let Some(m) = slices {
        if *m.grid() != u.grid_y {
            return Err(Error::Shape("slice mask is not on the y grid".into()));
        }
    }
    let ny = u.ny();
    let nt = map.target.len();
    let columns: Vec<Option<Vec<f64>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            if slices.is_some_and(|m| !m.is_closed(j)) {
                return Ok(None);
            }
            Ok(Some(map.apply(&u.y_slice(j))?.values))
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; nt * ny];
    for (j, col) in columns.into_iter().enumerate() {
        if let Some(col) = col {
            for (t, v) in col.into_iter().enumerate() {
                values[t * ny + j] = v;
            }
        }
    }
    ProductField::new(map.target.clone(), u.grid_y.clone(), values)
}

/// Two-stage extension: in x with `map1`, then in y with `map2` via transposition.
pub fn extend_product(
    u: &ProductField,
    map1: &ExtensionMap,
    map2: &ExtensionMap,
) -> Result<ProductField> {
    let stage1 = extend_first_factor(u, map1, Some(&map2.source))?;
    let stage2 = extend_first_factor(&stage1.transpose(), map2, None)?;
    Ok(stage2.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// Cells with either coordinate in its S where the two stage orders differ.
    pub mismatches: usize,
    /// Max difference over the corner region outside both factors.
    pub corner_max_diff: f64,
    /// Max `|Eu|`, for scaling `corner_max_diff`.
    pub scale: f64,
}

/// Run both stage orders (x first, and y first on the transposed input) and compare.
pub fn transpose_coherence(
    u: &ProductField,
    map1: &ExtensionMap,
    map2: &ExtensionMap,
) -> Result<(ProductField, CoherenceReport)> {
    let w = extend_product(u, map1, map2)?;
    let other = extend_product(&u.transpose(), map2, map1)?.transpose();
    let ny = w.ny();
    let mut rep = CoherenceReport {
        mismatches: 0,
        corner_max_diff: 0.0,
        scale: w.values.iter().fold(0.0, |a, v| a.max(v.abs())),
    };
    for (t, (a, b)) in w.values.iter().zip(&other.values).enumerate() {
        if map1.identity[t / ny].is_some() || map2.identity[t % ny].is_some() {
            if a != b {
                rep.mismatches += 1;
            }
        } else {
            rep.corner_max_diff = rep.corner_max_diff.max((a - b).abs());
        }
    }
    Ok((w, rep))
}

/// Maximal runs of open cells of `mask` along `axis`, each in increasing order.
pub fn fiber_runs(mask: &DomainMask, axis: usize) -> Vec<Vec<usize>> {
    let grid = mask.grid();
    let stride = grid.strides()[axis];
    let len = grid.extents[axis];
    let mut runs = Vec::new();
    for start in 0..grid.len() {
        if grid.coords(start)[axis] != 0 {
            continue;
        }
        let mut cur: Vec<usize> = Vec::new();
        for k in 0..len {
            let idx = start + k * stride;
            if mask.is_open(idx) {
                cur.push(idx);
            } else if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
    }
    runs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XDerivativeReport {
    pub axis: usize,
    /// Max difference between the sliced derivative of `E₁u` and that of `E u_y`.
    pub discrepancy: f64,
    /// `||∂_i E₁u||_p^p / (||u||_p^p + ||∂_i u||_p^p)`
    pub step_constant: f64,
}

/// Compare `∂_{x_i}` of `E₁u` slice by slice with `∂_{x_i}(E u_y)` computed on its own.
pub fn x_derivative_check(
    u: &ProductField,
    map: &ExtensionMap,
    mask_y: &DomainMask,
    axis: usize,
    p: f64,
) -> Result<XDerivativeReport> {
    let ext = extend_first_factor(u, map, Some(mask_y))?;
    let full = DomainMask::full(map.target.clone());
    let hy = u.grid_y.cell_volume();
    let mut discrepancy: f64 = 0.0;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let open_x = map.source.cells(Region::Open);
    for j in mask_y.cells(Region::Open) {
        let sliced = &gradient(&ext.y_slice(j), &full)?[axis];
        let direct = &gradient(&map.apply(&u.y_slice(j))?, &full)?[axis];
        for (a, b) in sliced.values.iter().zip(&direct.values) {
            discrepancy = discrepancy.max((a - b).abs());
        }
        let uj = u.y_slice(j);
        let du = &gradient(&uj, &map.source)?[axis];
        lhs += sliced.lp_norm(p).powf(p) * hy;
        rhs += (uj.lp_norm_on(open_x.iter().copied(), p).powf(p)
            + du.lp_norm_on(open_x.iter().copied(), p).powf(p))
            * hy;
    }
    Ok(XDerivativeReport {
        axis,
        discrepancy,
        step_constant: if rhs > 0.0 { lhs / rhs } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutationReport {
    pub axis: usize,
    pub h: f64,
    /// `||D₁ - D₂||_∞` over the small-cube layer × fibers.
    pub residual: f64,
    pub skipped_runs: usize,
}

/// `D₁ = ∂_{y_j}` of `E₁u` by differences along fiber runs of `Ω₂`,
/// `D₂ = E₁(∂u/∂y_j)` from the exact derivative.
pub fn commutation_check(
    f: &TestFunction,
    map: &ExtensionMap,
    mask_y: &DomainMask,
    axis: usize,
    fill: BoundaryFill,
) -> Result<CommutationReport> {
    let n = map.source.grid().dim();
    let u = ProductField::sample_function(&map.source, mask_y, fill, f);
    let du = ProductField::sample(&map.source, mask_y, fill, |p| f.gradient(p)[n + axis]);
    let e1 = extend_first_factor(&u, map, Some(mask_y))?;
    let d2 = extend_first_factor(&du, map, Some(mask_y))?;
    let layer: Vec<usize> = (0..map.target.len())
        .filter(|&t| {
            let s: f64 = map.row(t).iter().map(|e| e.1).sum();
            (s - 1.0).abs() < 1e-12
        })
        .collect();
    let h = mask_y.grid().spacing;
    let ny = e1.ny();
    let mut residual: f64 = 0.0;
    let mut skipped = 0;
    for run in fiber_runs(mask_y, axis) {
        if run.len() < 2 {
            skipped += 1;
            continue;
        }
        let last = run.len() - 1;
        for &t in &layer {
            let row = &e1.values[t * ny..(t + 1) * ny];
            for k in 0..run.len() {
                let d1 = if k == 0 {
                    (row[run[1]] - row[run[0]]) / h
                } else if k == last {
                    (row[run[last]] - row[run[last - 1]]) / h
                } else {
                    (row[run[k + 1]] - row[run[k - 1]]) / (2.0 * h)
                };
                residual = residual.max((d1 - d2.values[t * ny + run[k]]).abs());
            }
        }
    }
    Ok(CommutationReport {
        axis,
        h,
        residual,
        skipped_runs: skipped,
    })
}

/// Least-squares slope of `log residual` against `log h`.
pub fn fitted_order(reports: &[CommutationReport]) -> f64 {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| (r.h.ln(), r.residual.ln()))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseReport {
    pub slices: usize,
    pub passing: usize,
    /// `W^{1,p}` norm of each slice `w(·, y)` over the x window.
    pub slice_norms: Vec<f64>,
    pub max_slice_norm: f64,
}

impl ConverseReport {
    pub fn fraction_passing(&self) -> f64 {
        if self.slices == 0 {
            0.0
        } else {
            self.passing as f64 / self.slices as f64
        }
    }
}

/// For each y-cell in `ball`, check that `w(·, y)` restricted to `Ω₁` equals `u`.
pub fn restriction_converse_check(
    w: &ProductField,
    mask_x: &DomainMask,
    u: &ScalarField,
    ball: &[usize],
    p: f64,
) -> Result<ConverseReport> {
    let off = w
        .grid_x
        .offset_of(mask_x.grid())
        .ok_or_else(|| Error::Shape("x grids are not on the same lattice".into()))?;
    let n = mask_x.grid().dim();
    let full = DomainMask::full(w.grid_x.clone());
    let mut passing = 0;
    let mut slice_norms = Vec::with_capacity(ball.len());
    for &j in ball {
        let slice = w.y_slice(j);
        let ok = mask_x.cells(Region::Closed).into_iter().all(|c| {
            let sc = mask_x.grid().coords(c);
            let tc: Vec<i64> = (0..n).map(|a| sc[a] as i64 + off[a]).collect();
            w.grid_x
                .checked_index(&tc)
                .is_some_and(|t| slice.values[t] == u.values[c])
        });
        if ok {
            passing += 1;
        }
        slice_norms.push(sobolev_report(&slice, &full, p, false)?.w1p_norm);
    }
    Ok(ConverseReport {
        slices: ball.len(),
        passing,
        max_slice_norm: slice_norms.iter().copied().fold(0.0, f64::max),
        slice_norms,
    })
}

/// `W^{1,p}` report of a product field over the full product grid.
pub fn product_report(w: &ProductField, p: f64) -> Result<SobolevReport> {
    let s = w.to_scalar()?;
    let full = DomainMask::full(s.grid.clone());
    sobolev_report(&s, &full, p, false)
}

/// `W^{1,p}` report of `u` over `Ω₁ × Ω₂`.
pub fn product_source_report(
    u: &ProductField,
    mask_x: &DomainMask,
    mask_y: &DomainMask,
    p: f64,
) -> Result<SobolevReport> {
    let mask = mask_x.product(mask_y)?;
    sobolev_report(&u.to_scalar()?, &mask, p, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::ExtensionOptions;
    use crate::geometry::{rasterize, Shape};
    use crate::suite::smooth_suite;

    fn interval(h: f64) -> DomainMask {
        let pad = 3.0 * h;
        let cells = ((1.0 + 2.0 * pad) / h).round() as usize;
        let grid = GridSpec::new(vec![-pad], h, vec![cells]).unwrap();
        rasterize(&Shape::cuboid(&[0.0], &[1.0]), &grid).unwrap()
    }

    fn maps(h: f64) -> (DomainMask, ExtensionMap) {
        let m = interval(h);
        let map = ExtensionMap::build(&m, &ExtensionOptions::default()).unwrap();
        (m, map)
    }

    #[test]
    fn fibers_partition_open_cells() {
        let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 16.0, vec![16, 16]).unwrap();
        let mask = rasterize(
            &Shape::from_json(r#"{"op":"difference","args":[{"prim":"ball","c":[0.5,0.5],"r":0.45},{"prim":"box","lo":[0.4,0.0],"hi":[0.6,0.55]}]}"#).unwrap(),
            &g,
        )
        .unwrap();
        for axis in 0..2 {
            let mut all: Vec<usize> = fiber_runs(&mask, axis).concat();
            all.sort_unstable();
            assert_eq!(all, mask.cells(Region::Open));
        }
    }

    #[test]
    fn separable_and_constant_fields() {
        let h = 1.0 / 16.0;
        let (m, map) = maps(h);
        let f = |x: f64| (2.0 * x).sin();
        let g = |y: f64| 1.0 + y * y;
        let u = ProductField::sample(&m, &m, BoundaryFill::Trace, |p| f(p[0]) * g(p[1]));
        let e1 = extend_first_factor(&u, &map, Some(&m)).unwrap();
        let ef = map
            .apply(&ScalarField::sample_on(&m, Region::Closed, |x| f(x[0])))
            .unwrap();
        for j in m.cells(Region::Closed) {
            let gy = g(m.grid().center(j)[0]);
            let slice = e1.y_slice(j);
            for t in 0..map.target.len() {
                assert!(
                    (slice.values[t] - ef.values[t] * gy).abs()
                        <= 1e-12 * (1.0 + ef.values[t].abs())
                );
            }
        }
        let c = ProductField::sample(&m, &m, BoundaryFill::Trace, |_| 3.0);
        let e1 = extend_first_factor(&c, &map, Some(&m)).unwrap();
        for t in 0..map.target.len() {
            let s: f64 = map.row(t).iter().map(|e| e.1).sum();
            if (s - 1.0).abs() < 1e-12 {
                for j in m.cells(Region::Open) {
                    assert!((e1.values[t * e1.ny() + j] - 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn restriction_and_transpose_coherence() {
        let h = 1.0 / 16.0;
        let (m, map) = maps(h);
        let f = &smooth_suite()[5];
        let u = ProductField::sample_function(&m, &m, BoundaryFill::Trace, f);
        let w = extend_product(&u, &map, &map).unwrap();
        let off = map.target.offset_of(m.grid()).unwrap()[0];
        let ny = w.ny();
        for i in m.cells(Region::Closed) {
            for j in m.cells(Region::Closed) {
                let (ti, tj) = ((i as i64 + off) as usize, (j as i64 + off) as usize);
                assert_eq!(w.values[ti * ny + tj], u.values[i * u.ny() + j]);
            }
        }
        let (w2, rep) = transpose_coherence(&u, &map, &map).unwrap();
        assert_eq!(w2, w);
        assert_eq!(rep.mismatches, 0);
        assert!(rep.corner_max_diff <= 1e-13 * rep.scale);
    }

    #[test]
    fn derivative_identity_and_fubini() {
        let h = 1.0 / 16.0;
        let (m, map) = maps(h);
        let f = &smooth_suite()[8];
        let u = ProductField::sample_function(&m, &m, BoundaryFill::Trace, f);
        let r = x_derivative_check(&u, &map, &m, 0, 2.0).unwrap();
        assert_eq!(r.discrepancy, 0.0);
        assert!(r.step_constant.is_finite() && r.step_constant > 0.0);
        for p in [1.5, 2.0] {
            let whole = u.lp_norm(p).powf(p);
            let sliced: f64 = (0..u.ny())
                .map(|j| u.y_slice(j).lp_norm(p).powf(p) * u.grid_y.cell_volume())
                .sum();
            assert!((whole - sliced).abs() <= 1e-12 * whole);
        }
    }

    #[test]
    fn commutation_residual_shrinks() {
        let f = &smooth_suite()[5];
        let mut reports = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let (m, map) = maps(h);
            reports.push(commutation_check(f, &map, &m, 0, BoundaryFill::Trace).unwrap());
        }
        assert!(reports[1].residual < reports[0].residual);
        // y-independent input
        let (m, map) = maps(1.0 / 16.0);
        let flat = &smooth_suite()[1];
        assert_eq!(
            commutation_check(flat, &map, &m, 0, BoundaryFill::Trace)
                .unwrap()
                .residual,
            0.0
        );
    }

    #[test]
    fn converse_slices_pass() {
        let h = 1.0 / 16.0;
        let (m, map) = maps(h);
        let f = |x: f64| x * x - 0.2;
        let v = ProductField::sample(&m, &m, BoundaryFill::Trace, |p| f(p[0]));
        let w = extend_product(&v, &map, &map).unwrap();
        let u = ScalarField::sample_on(&m, Region::Closed, |x| f(x[0]));
        let off = map.target.offset_of(m.grid()).unwrap()[0];
        let ball: Vec<usize> = m
            .cells(Region::Open)
            .into_iter()
            .filter(|&j| (m.grid().center(j)[0] - 0.5).abs() < 0.25)
            .map(|j| (j as i64 + off) as usize)
            .collect();
        let r = restriction_converse_check(&w, &m, &u, &ball, 2.0).unwrap();
        assert_eq!(r.fraction_passing(), 1.0);
        assert!(r.max_slice_norm.is_finite());
    }
}
