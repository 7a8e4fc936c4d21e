//! Local best-constant approximation, mean projection, the sharp maximal
//! function and discrete Sobolev norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cube, DomainMask, GridSpec, Occupancy, Region, MAX_DIM};

/// Samples on the cells of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Sample `f` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        ScalarField { grid, values }
    }

    /// Sample `f` on the cells of `region`, zero elsewhere.
    pub fn sample_on(mask: &DomainMask, region: Region, f: impl Fn(&[f64]) -> f64) -> Self {
        let grid = mask.grid().clone();
        let values = (0..grid.len())
            .map(|i| {
                if mask.in_region(i, region) {
                    f(&grid.center(i))
                } else {
                    0.0
                }
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Shape("fields on different grids".into()));
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `(Σ |u|^p h^n)^{1/p}` over `cells`, or the max for `p = ∞`.
    pub fn lp_norm_on(&self, cells: impl IntoIterator<Item = usize>, p: f64) -> f64 {
        lp_norm(
            cells.into_iter().map(|i| self.values[i]),
            p,
            self.grid.cell_volume(),
        )
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_norm_on(0..self.grid.len(), p)
    }
}

pub fn lp_norm(values: impl Iterator<Item = f64>, p: f64, cell_volume: f64) -> f64 {
    if p.is_infinite() {
        values.fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        values.map(f64::abs).sum::<f64>() * cell_volume
    } else if p == 2.0 {
        (values.map(|v| v * v).sum::<f64>() * cell_volume).sqrt()
    } else {
        (values.map(|v| v.abs().powf(p)).sum::<f64>() * cell_volume).powf(1.0 / p)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("exponent {p} < 1")))
    }
}

/// `(Σ w |u - c|^p)^{1/p}`, or `max |u - c|` over positive weights for `p = ∞`.
pub fn weighted_error(samples: &[(f64, f64)], c: f64, p: f64) -> f64 {
    if p.is_infinite() {
        samples
            .iter()
            .filter(|s| s.1 > 0.0)
            .fold(0.0, |m, &(u, _)| m.max((u - c).abs()))
    } else if p == 1.0 {
        samples.iter().map(|&(u, w)| w * (u - c).abs()).sum()
    } else if p == 2.0 {
        samples
            .iter()
            .map(|&(u, w)| w * (u - c) * (u - c))
            .sum::<f64>()
            .sqrt()
    } else {
        samples
            .iter()
            .map(|&(u, w)| w * (u - c).abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// Smallest `v` with weight of `{u <= v}` at least half the total.
pub fn weighted_median(samples: &mut [(f64, f64)]) -> f64 {
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let mut target = 0.5 * total;
    let mut s = &mut samples[..];
    loop {
        if s.len() == 1 {
            return s[0].0;
        }
        let m = s.len();
        let (a, b, c) = (s[0].0, s[m / 2].0, s[m - 1].0);
        let pivot = a.max(b.min(c)).min(b.max(c));
        // three-way partition: [< pivot | == pivot | > pivot]
        let (mut lt, mut i, mut gt) = (0, 0, m);
        let (mut w_lt, mut w_eq) = (0.0, 0.0);
        while i < gt {
            let v = s[i].0;
            if v < pivot {
                w_lt += s[i].1;
                s.swap(i, lt);
                lt += 1;
                i += 1;
            } else if v > pivot {
                gt -= 1;
                s.swap(i, gt);
            } else {
                w_eq += s[i].1;
                i += 1;
            }
        }
        if lt > 0 && target <= w_lt {
            s = &mut s[..lt];
        } else if gt == m || target <= w_lt + w_eq {
            return pivot;
        } else {
            target -= w_lt + w_eq;
            s = &mut s[gt..];
        }
    }
}

/// Minimizing constant and attained error for weighted samples.
pub fn best_constant_weighted(samples: &mut [(f64, f64)], p: f64) -> Result<(f64, f64)> {
    check_exponent(p)?;
    if samples.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
            (a.min(s.0), b.max(s.0))
        });
    let c = if lo == hi {
        lo
    } else if p.is_infinite() {
        0.5 * (lo + hi)
    } else if p == 1.0 {
        weighted_median(samples)
    } else if p == 2.0 {
        let w: f64 = samples.iter().map(|s| s.1).sum();
        samples.iter().map(|s| s.0 * s.1).sum::<f64>() / w
    } else {
        golden_section(|c| weighted_error(samples, c, p).powf(p), lo, hi)
    };
    Ok((c, weighted_error(samples, c, p)))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-12 * scale {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Best constant of `u` over `region` cells, errors measured with cell volume.
pub fn best_constant(u: &ScalarField, region: &[usize], p: f64) -> Result<(f64, f64)> {
    let w = u.grid.cell_volume();
    let mut samples: Vec<(f64, f64)> = region.iter().map(|&i| (u.values[i], w)).collect();
    best_constant_weighted(&mut samples, p)
}

/// Cell-weighted mean of `u` over `region`.
pub fn mean_projection(u: &ScalarField, region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(region.iter().map(|&i| u.values[i]).sum::<f64>() / region.len() as f64)
}

/// Cells of `grid` meeting `q`, weighted by the measure of the overlap.
pub fn cube_samples(u: &ScalarField, q: &Cube, a: &DomainMask, out: &mut Vec<(f64, f64)>) {
    let grid = &u.grid;
    let n = grid.dim();
    let h = grid.spacing;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for ax in 0..n {
        lo[ax] = ((q.lo(ax) - grid.origin[ax]) / h).floor() as i64;
        hi[ax] = ((q.hi(ax) - grid.origin[ax]) / h).ceil() as i64 - 1;
    }
    out.clear();
    grid.for_each_in_box(&lo[..n], &hi[..n], |cell, c| {
        if !a.is_closed(cell) {
            return;
        }
        let mut w = 1.0;
        for ax in 0..n {
            let c0 = grid.origin[ax] + c[ax] as f64 * h;
            let overlap = (c0 + h).min(q.hi(ax)) - c0.max(q.lo(ax));
            w *= (overlap / h).clamp(0.0, 1.0);
        }
        if w > 0.0 {
            out.push((u.values[cell], w * grid.cell_volume()));
        }
    });
}

/// `Λ(u; Q)_{L^p(A)} = |Q|^{-1/p} inf_c ||u - c||_{L^p(Q ∩ A)}`; zero on an empty intersection.
pub fn lambda(u: &ScalarField, q: &Cube, a: &DomainMask, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let mut samples = Vec::new();
    cube_samples(u, q, a, &mut samples);
    if samples.is_empty() {
        return Ok(0.0);
    }
    let (_, err) = best_constant_weighted(&mut samples, p)?;
    Ok(if p.is_infinite() {
        err
    } else {
        err / q.volume().powf(1.0 / p)
    })
}

/// Number of ladder steps `J` with `h 2^J >= diam A`.
pub fn default_ladder(a: &DomainMask) -> u32 {
    let h = a.grid().spacing;
    let mut j = 0;
    while h * f64::from(1u32 << j) < a.closed_diam() - 1e-12 {
        j += 1;
    }
    j
}

/// `u^#_{1,A}(x) = max_j r_j^{-1} Λ(u; Q(x, r_j))_{L^1(A)}` at the closed cells of
/// `A`, with `r_j = h 2^j`, `j = 0..=levels`.
pub fn sharp_maximal(u: &ScalarField, a: &DomainMask, levels: Option<u32>) -> Result<ScalarField> {
    let grid = &u.grid;
    if grid != a.grid() {
        return Err(Error::Shape("field and mask grids differ".into()));
    }
    let n = grid.dim();
    let levels = levels.unwrap_or_else(|| default_ladder(a));
    let points = a.cells(Region::Closed);
    let occ = Occupancy::new(a, Region::Closed);
    let ext: Vec<i64> = grid.extents.iter().map(|&e| e as i64).collect();

    // min/max of u over closed cells of Q(x, r_j), by doubling
    let mut lo_f = vec![f64::INFINITY; grid.len()];
    let mut hi_f = vec![f64::NEG_INFINITY; grid.len()];
    for x in 0..grid.len() {
        let c = grid.coords(x);
        let mut blo = [0i64; MAX_DIM];
        let mut bhi = [0i64; MAX_DIM];
        for ax in 0..n {
            blo[ax] = c[ax] as i64 - 1;
            bhi[ax] = c[ax] as i64 + 1;
        }
        grid.for_each_in_box(&blo[..n], &bhi[..n], |cell, _| {
            if a.is_closed(cell) {
                lo_f[x] = lo_f[x].min(u.values[cell]);
                hi_f[x] = hi_f[x].max(u.values[cell]);
            }
        });
    }

    let mut best = vec![0.0f64; points.len()];
    for j in 0..=levels {
        let k = 1i64 << j;
        if j > 0 {
            let s = k / 2;
            let (plo, phi) = (lo_f.clone(), hi_f.clone());
            lo_f.par_iter_mut()
                .zip(hi_f.par_iter_mut())
                .enumerate()
                .for_each(|(x, (l, h))| {
                    let c = grid.coords(x);
                    let mut ml = f64::INFINITY;
                    let mut mh = f64::NEG_INFINITY;
                    for corner in 0..(1usize << n) {
                        let mut idx = 0;
                        for ax in 0..n {
                            let sign = if corner >> ax & 1 == 1 { s } else { -s };
                            let v = (c[ax] as i64 + sign).clamp(0, ext[ax] - 1);
                            idx += v as usize * grid.strides()[ax];
                        }
                        ml = ml.min(plo[idx]);
                        mh = mh.max(phi[idx]);
                    }
                    *l = ml;
                    *h = mh;
                });
        }
        let r = k as f64 * grid.spacing;
        let qvol = (2.0 * r).powi(n as i32);
        best.par_iter_mut()
            .zip(points.par_iter())
            .for_each_init(Vec::new, |buf, (b, &x)| {
                let osc = hi_f[x] - lo_f[x];
                if !(osc > 0.0) {
                    return;
                }
                let c = grid.coords(x);
                let mut center = [0i64; MAX_DIM];
                for ax in 0..n {
                    center[ax] = c[ax] as i64;
                }
                let inside = occ.cube_measure(&center[..n], k) * grid.cell_volume();
                // r^{-1} Λ <= |Q ∩ A| osc / (2 r |Q|)
                if inside * osc / (2.0 * r * qvol) <= *b {
                    return;
                }
                buf.clear();
                let mut blo = [0i64; MAX_DIM];
                let mut bhi = [0i64; MAX_DIM];
                for ax in 0..n {
                    blo[ax] = center[ax] - k;
                    bhi[ax] = center[ax] + k;
                }
                let cv = grid.cell_volume();
                grid.for_each_in_box(&blo[..n], &bhi[..n], |cell, cc| {
                    if a.is_closed(cell) {
                        let mut w = cv;
                        for ax in 0..n {
                            if (cc[ax] - center[ax]).abs() == k {
                                w *= 0.5;
                            }
                        }
                        buf.push((u.values[cell], w));
                    }
                });
                let m = weighted_median(buf);
                let err = weighted_error(buf, m, 1.0);
                *b = b.max(err / (qvol * r));
            });
    }
    let mut out = ScalarField::zeros(grid.clone());
    for (i, &x) in points.iter().enumerate() {
        out.values[x] = best[i];
    }
    Ok(out)
}

/// Discrete partial derivatives on the open cells of `mask`: central where
/// both neighbors are open, one-sided where one is, zero otherwise.
pub fn gradient(u: &ScalarField, mask: &DomainMask) -> Result<Vec<ScalarField>> {
    let grid = &u.grid;
    if grid != mask.grid() {
        return Err(Error::Shape("field and mask grids differ".into()));
    }
    let n = grid.dim();
    let h = grid.spacing;
    let strides = grid.strides();
    let mut out = Vec::with_capacity(n);
    for ax in 0..n {
        let mut d = vec![0.0; grid.len()];
        for (x, dx) in d.iter_mut().enumerate() {
            if !mask.is_open(x) {
                continue;
            }
            let c = grid.coords(x)[ax];
            let prev = (c > 0)
                .then(|| x - strides[ax])
                .filter(|&i| mask.is_open(i));
            let next = (c + 1 < grid.extents[ax])
                .then(|| x + strides[ax])
                .filter(|&i| mask.is_open(i));
            *dx = match (prev, next) {
                (Some(a), Some(b)) => (u.values[b] - u.values[a]) / (2.0 * h),
                (None, Some(b)) => (u.values[b] - u.values[x]) / h,
                (Some(a), None) => (u.values[x] - u.values[a]) / h,
                (None, None) => 0.0,
            };
        }
        out.push(ScalarField {
            grid: grid.clone(),
            values: d,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    pub p: f64,
    pub lp_norm: f64,
    /// `Σ_i ||∂_i u||_p`
    pub grad_lp_norm: f64,
    pub w1p_norm: f64,
    pub sharp_lp_norm: Option<f64>,
    pub c1p_norm: Option<f64>,
}

/// Norms of `u` over the open cells of `mask`. The sharp maximal part is
/// computed over the closed cells when `with_sharp` is set.
pub fn sobolev_report(
    u: &ScalarField,
    mask: &DomainMask,
    p: f64,
    with_sharp: bool,
) -> Result<SobolevReport> {
    Ok(sobolev_reports(u, mask, &[p], with_sharp)?.remove(0))
}

/// `sobolev_report` for several exponents, sharing one sharp maximal function.
pub fn sobolev_reports(
    u: &ScalarField,
    mask: &DomainMask,
    ps: &[f64],
    with_sharp: bool,
) -> Result<Vec<SobolevReport>> {
    for &p in ps {
        check_exponent(p)?;
    }
    let open = mask.cells(Region::Open);
    if open.is_empty() {
        return Err(Error::DegenerateDomain);
    }
    let grads = gradient(u, mask)?;
    let sharp = if with_sharp {
        Some(sharp_maximal(u, mask, None)?)
    } else {
        None
    };
    let closed = mask.cells(Region::Closed);
    Ok(ps
        .iter()
        .map(|&p| {
            let lp = u.lp_norm_on(open.iter().copied(), p);
            let grad: f64 = grads
                .iter()
                .map(|g| g.lp_norm_on(open.iter().copied(), p))
                .sum();
            let sharp_lp_norm = sharp
                .as_ref()
                .map(|s| s.lp_norm_on(closed.iter().copied(), p));
            SobolevReport {
                p,
                lp_norm: lp,
                grad_lp_norm: grad,
                w1p_norm: lp + grad,
                sharp_lp_norm,
                c1p_norm: sharp_lp_norm.map(|sn| lp + sn),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Shape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn line(h: f64, lo: f64, hi: f64) -> GridSpec {
        GridSpec::new(vec![lo], h, vec![((hi - lo) / h).round() as usize]).unwrap()
    }

    fn brute(samples: &[(f64, f64)], p: f64) -> f64 {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
                (a.min(s.0), b.max(s.0))
            });
        (0..=10_000)
            .map(|i| weighted_error(samples, lo + (hi - lo) * i as f64 / 10_000.0, p))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn constant_field() {
        let g = line(0.1, 0.0, 1.0);
        let u = ScalarField::from_fn(g, |_| 5.0);
        let (c, e) = best_constant(&u, &(0..10).collect::<Vec<_>>(), 1.5).unwrap();
        assert_eq!((c, e), (5.0, 0.0));
    }

    #[test]
    fn identity_on_symmetric_interval() {
        let g = line(1.0 / 1000.0, -1.0, 1.0);
        let u = ScalarField::from_fn(g.clone(), |x| x[0]);
        let all: Vec<usize> = (0..g.len()).collect();
        let (c, e) = best_constant(&u, &all, 1.0).unwrap();
        assert!(c.abs() <= 1e-3);
        assert!((e - 1.0).abs() < 1e-6);
        let (c, _) = best_constant(&u, &all, 2.0).unwrap();
        assert!(c.abs() < 1e-12);
        assert!(mean_projection(&u, &all).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_region() {
        let u = ScalarField::zeros(line(0.1, 0.0, 1.0));
        assert!(matches!(
            best_constant(&u, &[], 2.0),
            Err(Error::EmptyRegion)
        ));
        assert!(matches!(mean_projection(&u, &[]), Err(Error::EmptyRegion)));
    }

    #[test]
    fn lambda_of_identity_in_one_dimension() {
        let g = line(1.0 / 512.0, -2.0, 2.0);
        let a = DomainMask::full(g.clone());
        let u = ScalarField::from_fn(g, |x| x[0]);
        for r in [0.25, 0.5, 0.3] {
            let q = Cube::new(vec![0.1], r);
            let l = lambda(&u, &q, &a, 1.0).unwrap();
            assert!((l / r - 0.5).abs() < 0.01, "{}", l / r);
        }
    }

    #[test]
    fn lambda_monotone_in_nested_cubes() {
        let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 32.0, vec![32, 32]).unwrap();
        let a = DomainMask::full(g.clone());
        let u = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r2 = rng.gen_range(0.1..0.4);
            let c2: Vec<f64> = (0..2).map(|_| rng.gen_range(r2..1.0 - r2)).collect();
            let r1 = rng.gen_range(0.02..r2);
            let c1: Vec<f64> = (0..2)
                .map(|a| c2[a] + rng.gen_range(-(r2 - r1)..(r2 - r1)))
                .collect();
            let (q1, q2) = (Cube::new(c1, r1), Cube::new(c2, r2));
            for p in [1.0, 2.0, 3.0] {
                let l1 = lambda(&u, &q1, &a, p).unwrap();
                let l2 = lambda(&u, &q2, &a, p).unwrap();
                assert!(l1 <= (q2.volume() / q1.volume()).powf(1.0 / p) * l2 * (1.0 + 1e-8));
            }
        }
    }

    #[test]
    fn solver_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.gen_range(1..64);
            let samples: Vec<(f64, f64)> =
                (0..m).map(|_| (rng.gen_range(-3.0..3.0), 0.25)).collect();
            for p in [1.0, 1.5, 2.0, 4.0] {
                let (_, e) = best_constant_weighted(&mut samples.clone(), p).unwrap();
                let b = brute(&samples, p);
                assert!(e <= b * (1.0 + 1e-9) + 1e-15, "p {p}: {e} vs {b}");
            }
        }
    }

    #[test]
    fn mean_near_optimal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 16.0, vec![16, 16]).unwrap();
        for _ in 0..100 {
            let u = ScalarField::new(
                g.clone(),
                (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let region: Vec<usize> = (0..g.len()).filter(|_| rng.gen_bool(0.5)).collect();
            if region.is_empty() {
                continue;
            }
            let ratio = g.len() as f64 / region.len() as f64;
            let m = mean_projection(&u, &region).unwrap();
            for p in [1.0, 2.0, 4.0] {
                let (_, best) = best_constant(&u, &region, p).unwrap();
                let s: Vec<(f64, f64)> = region
                    .iter()
                    .map(|&i| (u.values[i], g.cell_volume()))
                    .collect();
                let mine = weighted_error(&s, m, p);
                assert!(mine <= 2.0 * ratio * best + 1e-12);
            }
            let shifted = u.map(|v| v + 0.7);
            assert!((mean_projection(&shifted, &region).unwrap() - m - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_of_linear_is_half_slope() {
        let g = line(1.0 / 128.0, -1.0, 1.0);
        let a = DomainMask::full(g.clone());
        let u = ScalarField::from_fn(g.clone(), |x| 3.0 * x[0]);
        let s = sharp_maximal(&u, &a, None).unwrap();
        for i in 0..g.len() {
            let x = g.center(i)[0];
            if x.abs() < 0.5 {
                assert!((s.values[i] - 1.5).abs() < 0.15, "{x} {}", s.values[i]);
            }
        }
        let zero = sharp_maximal(&u.map(|_| 2.0), &a, None).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sharp_matches_direct_lambda() {
        let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 16.0, vec![16, 16]).unwrap();
        let mask = rasterize(&Shape::ball(&[0.5, 0.5], 0.4), &g).unwrap();
        let u = ScalarField::sample_on(&mask, Region::Closed, |x| (4.0 * x[0]).sin() * x[1]);
        let s = sharp_maximal(&u, &mask, None).unwrap();
        let levels = default_ladder(&mask);
        for x in mask.cells(Region::Closed) {
            let c = g.center(x);
            let direct = (0..=levels)
                .map(|j| {
                    let r = g.spacing * f64::from(1u32 << j);
                    lambda(&u, &Cube::new(c.clone(), r), &mask, 1.0).unwrap() / r
                })
                .fold(0.0, f64::max);
            assert!(
                (direct - s.values[x]).abs() <= 1e-12 * direct.max(1.0),
                "{direct} {}",
                s.values[x]
            );
        }
    }

    #[test]
    fn sobolev_of_simple_fields() {
        let h = 1.0 / 256.0;
        let g = GridSpec::new(vec![-2.0 * h; 2], h, vec![260, 260]).unwrap();
        let mask = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &g).unwrap();
        let one = ScalarField::sample_on(&mask, Region::Closed, |_| 1.0);
        let r = sobolev_report(&one, &mask, 2.0, false).unwrap();
        assert!((r.lp_norm - 1.0).abs() < 1e-12);
        assert_eq!(r.grad_lp_norm, 0.0);
        let x = ScalarField::sample_on(&mask, Region::Closed, |x| x[0]);
        let r = sobolev_report(&x, &mask, 2.0, false).unwrap();
        assert!((r.lp_norm - (1.0f64 / 3.0).sqrt()).abs() < 1e-3);
        assert!((r.grad_lp_norm - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn weighted_median_is_optimal(vals in proptest::collection::vec((-5.0f64..5.0, 0.1f64..2.0), 1..40)) {
            let mut s = vals.clone();
            let m = weighted_median(&mut s);
            let e = weighted_error(&vals, m, 1.0);
            for &(v, _) in &vals {
                prop_assert!(e <= weighted_error(&vals, v, 1.0) + 1e-9);
            }
        }

        #[test]
        fn lambda_translation_and_homogeneity(alpha in -3.0f64..3.0, shift in -2.0f64..2.0, r in 0.05f64..0.4) {
            let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 16.0, vec![16, 16]).unwrap();
            let a = DomainMask::full(g.clone());
            let u = ScalarField::from_fn(g, |x| x[0] * x[0] - x[1]);
            let q = Cube::new(vec![0.5, 0.5], r);
            for p in [1.0, 2.0] {
                let base = lambda(&u, &q, &a, p).unwrap();
                let scaled = lambda(&u.map(|v| alpha * v), &q, &a, p).unwrap();
                let moved = lambda(&u.map(|v| v + shift), &q, &a, p).unwrap();
                prop_assert!((scaled - alpha.abs() * base).abs() <= 1e-9 * (1.0 + base));
                prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base));
            }
        }

        #[test]
        fn sharp_is_sublinear(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = GridSpec::new(vec![0.0, 0.0], 1.0 / 8.0, vec![8, 8]).unwrap();
            let a = DomainMask::full(g.clone());
            let u = ScalarField::new(g.clone(), (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let v = ScalarField::new(g.clone(), (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let su = sharp_maximal(&u, &a, None).unwrap();
            let sv = sharp_maximal(&v, &a, None).unwrap();
            let sw = sharp_maximal(&u.zip(&v, |x, y| x + y).unwrap(), &a, None).unwrap();
            for i in 0..64 {
                prop_assert!(sw.values[i] <= su.values[i] + sv.values[i] + 1e-12);
            }
        }
    }
}
