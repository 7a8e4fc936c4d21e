//! Quasi-cubes `H_Q ⊆ S` attached to Whitney cubes.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, Region, MAX_DIM};
use crate::sparse::Groups;
use crate::whitney::{MaskIndex, WhitneyFamily, TICKS_PER_CELL};

#[derive(Clone, Debug)]
pub struct QuasiCubeFamily {
    pub family: Arc<WhitneyFamily>,
    pub mask: Arc<DomainMask>,
    pub epsilon: f64,
    pub delta_s: f64,
    /// Which mask cells count as S for membership.
    pub region: Region,
    /// Mask cell of `a_K` per cube.
    pub nearest: Vec<usize>,
    /// Sorted mask cells of `H_Q` per cube.
    pub members: Groups,
    /// Cubes below the resolution floor `diam Q < 4h/ε`.
    pub floor: Vec<bool>,
    /// `max |Q| / |H_Q|` over cubes with `4h/ε <= diam Q <= δ_S`.
    pub gamma1: f64,
    /// Max number of `H_Q` sharing a cell.
    pub gamma2: usize,
    /// Cubes with `Q(a_K, r_K) ⊄ 10K`.
    pub containment_violations: usize,
    /// Member cells not inside `10Q`.
    pub ten_q_violations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct QuasiCubeSummary {
    pub epsilon: f64,
    pub delta_s: f64,
    pub gamma1: f64,
    pub gamma2: usize,
    pub nonempty: usize,
    pub floor_cubes: usize,
    pub containment_violations: usize,
    pub ten_q_violations: usize,
}

/// Mask-cell range with centers strictly inside `(c - e, c + e)` (ticks) on one axis.
fn open_center_range(c: f64, e: f64, off: i64, extent: i64) -> (i64, i64) {
    let half = (TICKS_PER_CELL / 2) as f64;
    let cell = TICKS_PER_CELL as f64;
    let lo = ((c - e - half) / cell).floor() as i64 + 1 - off;
    let hi = ((c + e - half) / cell).ceil() as i64 - 1 - off;
    (lo.max(0), hi.min(extent - 1))
}

impl QuasiCubeFamily {
    pub fn build(
        family: Arc<WhitneyFamily>,
        mask: Arc<DomainMask>,
        epsilon: f64,
        delta_s: f64,
    ) -> Result<Self> {
        Self::build_with_region(family, mask, epsilon, delta_s, Region::Closed)
    }

    pub fn build_with_region(
        family: Arc<WhitneyFamily>,
        mask: Arc<DomainMask>,
        epsilon: f64,
        delta_s: f64,
        region: Region,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} not in (0, 1]"
            )));
        }
        if !(delta_s >= 0.0) {
            return Err(Error::InvalidArgument("delta_S must be nonnegative".into()));
        }
        let grid = mask.grid().clone();
        let n = grid.dim();
        let index = MaskIndex::with_region(&mask, &family.window, region);
        let off = index.offset();
        let ext: Vec<i64> = grid.extents.iter().map(|&e| e as i64).collect();
        let tick = family.window.tick;
        let h = grid.spacing;

        let mut nearest = Vec::with_capacity(family.len());
        let mut a_ticks = Vec::with_capacity(family.len());
        let mut containment_violations = 0;
        for (id, q) in family.cubes.iter().enumerate() {
            let mut c = [0i64; MAX_DIM];
            for a in 0..n {
                c[a] = q.center2(a) / 2;
            }
            let (cell, _) = index.nearest(&c[..n], &grid);
            let at = index.center_ticks(&grid.coords(cell));
            // Q(a_K, r_K) ⊆ 10K  ⇔  |a - x| + r <= 10 r
            if (0..n).any(|a| 2 * (at[a] - c[a]).abs() + q.side > 10 * q.side) {
                containment_violations += 1;
            }
            let _ = id;
            nearest.push(cell);
            a_ticks.push(at);
        }
        let by_cell = Groups::bucket(&nearest, grid.len());

        let floor: Vec<bool> = (0..family.len())
            .map(|id| family.diam(id) < 4.0 * h / epsilon)
            .collect();

        let rows: Vec<Vec<u32>> = (0..family.len())
            .into_par_iter()
            .map(|id| {
                let q = &family.cubes[id];
                if family.diam(id) > delta_s {
                    return Vec::new();
                }
                let rq = q.side as f64 / 2.0;
                let eq = epsilon * rq;
                let aq = &a_ticks[id];
                let mut lo = [0i64; MAX_DIM];
                let mut hi = [0i64; MAX_DIM];
                let mut dims = [1usize; MAX_DIM];
                for a in 0..n {
                    let (l, u) = open_center_range(aq[a] as f64, eq, off[a], ext[a]);
                    if l > u {
                        return Vec::new();
                    }
                    lo[a] = l;
                    hi[a] = u;
                    dims[a] = (u - l + 1) as usize;
                }
                let total: usize = dims[..n].iter().product();
                let mut removed = vec![false; total];
                {
                    // A_Q: K ≠ Q, r_K <= ε r_Q, K_ε ∩ Q_ε ≠ ∅
                    let reach = eq + epsilon * epsilon * rq;
                    let mut slo = [0i64; MAX_DIM];
                    let mut shi = [0i64; MAX_DIM];
                    for a in 0..n {
                        let (l, u) = open_center_range(aq[a] as f64, reach, off[a], ext[a]);
                        slo[a] = l;
                        shi[a] = u;
                    }
                    if (0..n).all(|a| slo[a] <= shi[a]) {
                        grid.for_each_in_box(&slo[..n], &shi[..n], |cell, _| {
                            for &k in by_cell.row(cell) {
                                let k = k as usize;
                                let kc = &family.cubes[k];
                                let rk = kc.side as f64 / 2.0;
                                if k == id || rk > epsilon * rq {
                                    continue;
                                }
                                let ek = epsilon * rk;
                                let ak = &a_ticks[k];
                                if (0..n).any(|a| ((ak[a] - aq[a]).abs() as f64) >= ek + eq) {
                                    continue;
                                }
                                let mut klo = [0i64; MAX_DIM];
                                let mut khi = [0i64; MAX_DIM];
                                for a in 0..n {
                                    let (l, u) =
                                        open_center_range(ak[a] as f64, ek, off[a], ext[a]);
                                    klo[a] = l.max(lo[a]);
                                    khi[a] = u.min(hi[a]);
                                }
                                if (0..n).any(|a| klo[a] > khi[a]) {
                                    continue;
                                }
                                grid.for_each_in_box(&klo[..n], &khi[..n], |_, c| {
                                    let mut li = 0;
                                    for a in 0..n {
                                        li = li * dims[a] + (c[a] - lo[a]) as usize;
                                    }
                                    removed[li] = true;
                                });
                            }
                        });
                    }
                }
                let mut out = Vec::new();
                grid.for_each_in_box(&lo[..n], &hi[..n], |cell, c| {
                    let mut li = 0;
                    for a in 0..n {
                        li = li * dims[a] + (c[a] - lo[a]) as usize;
                    }
                    if !removed[li] && mask.in_region(cell, region) {
                        out.push(cell as u32);
                    }
                });
                if out.is_empty() && floor[id] {
                    // below the resolution floor keep all of Q_ε ∩ S
                    grid.for_each_in_box(&lo[..n], &hi[..n], |cell, _| {
                        if mask.in_region(cell, region) {
                            out.push(cell as u32);
                        }
                    });
                }
                out.sort_unstable();
                out
            })
            .collect();
        let members = Groups::from_rows(rows);

        // 10Q containment of member cells, cell-exact
        let mut ten_q_violations = 0;
        for (id, q) in family.cubes.iter().enumerate() {
            for &cell in members.row(id) {
                let ct = index.center_ticks(&grid.coords(cell as usize));
                let inside = (0..n).all(|a| {
                    let d2 = (2 * ct[a] - q.center2(a)).abs() + TICKS_PER_CELL;
                    d2 <= 10 * q.side
                });
                if !inside {
                    ten_q_violations += 1;
                }
            }
        }

        let mut gamma1: f64 = 0.0;
        let mut flagged = Vec::new();
        for id in 0..family.len() {
            let diam = family.diam(id);
            if floor[id] || diam > delta_s {
                continue;
            }
            let count = members.row(id).len();
            if count == 0 {
                flagged.push(id);
                continue;
            }
            let vol = (diam).powi(n as i32);
            gamma1 = gamma1.max(vol / (count as f64 * grid.cell_volume()));
        }
        let _ = tick;
        if !flagged.is_empty() {
            return Err(Error::RegularityViolation { cubes: flagged });
        }
        let mut qf = QuasiCubeFamily {
            family,
            mask,
            epsilon,
            delta_s,
            region,
            nearest,
            members,
            floor,
            gamma1,
            gamma2: 0,
            containment_violations,
            ten_q_violations,
        };
        qf.gamma2 = qf
            .overlap_histogram()
            .keys()
            .next_back()
            .copied()
            .unwrap_or(0);
        Ok(qf)
    }

    /// Number of S cells covered by exactly `k` quasi-cubes, for each `k`.
    pub fn overlap_histogram(&self) -> BTreeMap<usize, usize> {
        let mut counts = vec![0usize; self.mask.grid().len()];
        for id in 0..self.members.rows() {
            for &c in self.members.row(id) {
                counts[c as usize] += 1;
            }
        }
        let mut hist = BTreeMap::new();
        for (cell, &k) in counts.iter().enumerate() {
            if self.mask.in_region(cell, self.region) {
                *hist.entry(k).or_insert(0) += 1;
            }
        }
        hist
    }

    pub fn summary(&self) -> QuasiCubeSummary {
        QuasiCubeSummary {
            epsilon: self.epsilon,
            delta_s: self.delta_s,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            nonempty: (0..self.members.rows())
                .filter(|&i| !self.members.row(i).is_empty())
                .count(),
            floor_cubes: self.floor.iter().filter(|&&f| f).count(),
            containment_violations: self.containment_violations,
            ten_q_violations: self.ten_q_violations,
        }
    }

    pub fn dump_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Record {
            cube_id: usize,
            a_k: Vec<f64>,
            epsilon: f64,
            member_count: usize,
            ratio: Option<f64>,
        }
        let grid = self.mask.grid();
        let n = grid.dim();
        for id in 0..self.members.rows() {
            let count = self.members.row(id).len();
            let vol = self.family.diam(id).powi(n as i32);
            let rec = Record {
                cube_id: id,
                a_k: grid.center(self.nearest[id]),
                epsilon: self.epsilon,
                member_count: count,
                ratio: (count > 0).then(|| vol / (count as f64 * grid.cell_volume())),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, GridSpec, Shape};
    use crate::whitney::{decompose, DyadicWindow};

    fn build(
        shape: &Shape,
        h: f64,
        lo: f64,
        hi: f64,
        eps: f64,
        delta: f64,
    ) -> Result<QuasiCubeFamily> {
        let cells = ((hi - lo) / h).round() as usize;
        let grid = GridSpec::new(vec![lo; 2], h, vec![cells, cells]).unwrap();
        let mask = rasterize(shape, &grid).unwrap();
        let window = DyadicWindow::around(&mask, 5.0).unwrap();
        let k = (window.diam() / h).log2().round() as u32;
        let fam = decompose(&mask, &window, 0, k + 1).unwrap();
        QuasiCubeFamily::build(Arc::new(fam), Arc::new(mask), eps, delta)
    }

    fn square(h: f64, eps: f64, delta: f64) -> QuasiCubeFamily {
        build(
            &Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]),
            h,
            -0.25,
            1.25,
            eps,
            delta,
        )
        .unwrap()
    }

    #[test]
    fn square_properties() {
        for eps in [0.25, 0.5] {
            let q = square(1.0 / 64.0, eps, 0.25);
            assert_eq!(q.containment_violations, 0);
            assert_eq!(q.ten_q_violations, 0, "eps {eps}");
            assert!(q.gamma1 > 0.0 && q.gamma1.is_finite());
        }
    }

    #[test]
    fn disk_overlap_is_resolution_independent() {
        let mut g2 = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let q = build(&Shape::ball(&[0.0, 0.0], 1.0), h, -1.25, 1.25, 0.5, 0.25).unwrap();
            assert_eq!(q.ten_q_violations, 0);
            g2.push(q.gamma2 as f64);
        }
        // staircase corners bound the overlap independently of h
        for w in g2.windows(2) {
            assert!((w[1] - w[0]).abs() <= 0.25 * w[0], "{g2:?}");
        }
    }

    #[test]
    fn epsilon_one_is_well_defined() {
        // same-size neighbors share the radius of Q_ε and may cover it
        let shape = Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]);
        let a = build(&shape, 1.0 / 64.0, -0.25, 1.25, 1.0, 0.25);
        let b = build(&shape, 1.0 / 64.0, -0.25, 1.25, 1.0, 0.25);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a.members, b.members),
            (
                Err(Error::RegularityViolation { cubes: x }),
                Err(Error::RegularityViolation { cubes: y }),
            ) => {
                assert_eq!(x, y)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn big_cubes_are_empty_and_members_avoid_removed_stars() {
        let q = square(1.0 / 16.0, 0.5, 0.25);
        let grid = q.mask.grid().clone();
        for id in 0..q.family.len() {
            if q.family.diam(id) > 0.25 {
                assert!(q.members.row(id).is_empty());
            }
            for &c in q.members.row(id) {
                assert!(q.mask.is_closed(c as usize));
            }
        }
        // H_Q ∩ K_ε = ∅ for K ∈ A_Q, checked by brute force
        let h = grid.spacing;
        for id in 0..q.family.len() {
            if q.floor[id] || q.members.row(id).is_empty() {
                continue;
            }
            let rq = q.family.cube(id).half_side;
            let aq = grid.center(q.nearest[id]);
            for k in 0..q.family.len() {
                let rk = q.family.cube(k).half_side;
                if k == id || rk > 0.5 * rq {
                    continue;
                }
                let ak = grid.center(q.nearest[k]);
                let meet = (0..2).all(|a| (ak[a] - aq[a]).abs() < 0.5 * (rk + rq));
                if !meet {
                    continue;
                }
                for &c in q.members.row(id) {
                    let x = grid.center(c as usize);
                    let inside = (0..2).all(|a| (x[a] - ak[a]).abs() < 0.5 * rk - 1e-12 * h);
                    assert!(!inside);
                }
            }
        }
    }

    #[test]
    fn histogram_double_counts() {
        let q = square(1.0 / 16.0, 0.5, 0.25);
        let hist = q.overlap_histogram();
        let total: usize = hist.iter().map(|(k, c)| k * c).sum();
        assert_eq!(total, q.members.total());
        assert_eq!(*hist.keys().next_back().unwrap(), q.gamma2);
    }

    #[test]
    fn zero_delta_gives_empty_family() {
        let q = square(1.0 / 16.0, 0.5, 0.0);
        let hist = q.overlap_histogram();
        assert_eq!(hist.len(), 1);
        assert_eq!(hist[&0], q.mask.count(Region::Closed));
    }

    #[test]
    fn half_plane_gamma_stable() {
        let shape = Shape::from_json(
            r#"{"op":"intersection","args":[
            {"prim":"halfplane","normal":[0,1],"offset":0},
            {"prim":"box","lo":[-1,-1],"hi":[1,1]}]}"#,
        )
        .unwrap();
        let mut g = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let q = build(&shape, h, -1.25, 1.25, 0.5, 0.5).unwrap();
            assert_eq!(q.ten_q_violations, 0);
            g.push((q.gamma1, q.gamma2));
        }
        assert!((g[1].0 - g[0].0).abs() / g[0].0 < 0.25, "{g:?}");
        // convex corners: the floor cubes around a corner all share its cell
        assert_eq!(g[0].1, g[1].1);
    }
}
