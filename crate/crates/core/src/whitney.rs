//! Dyadic Whitney decomposition of `window ∖ S` in the uniform norm.
//!
//! All geometry is done in integer "ticks" relative to the window's lower
//! corner. For a mask with spacing `h`, one tick is `h/32`, so cell centers,
//! cube corners and the `9/8` dilations are all exact integers.
//! The set S is represented by the centers of its closed cells; with cubes down
//! to half a cell, the selected cubes tile `window ∖ (closed cells)` exactly.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cube, DomainMask, GridSpec, Occupancy, Region, MAX_DIM};

pub const TICKS_PER_CELL: i64 = 32;

type Ticks = [i64; MAX_DIM];

/// Cubic window whose dyadic subdivision is used for the decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicWindow {
    pub origin: Vec<f64>,
    /// Length of one tick.
    pub tick: f64,
    /// Side length in ticks (a power of two).
    pub side_ticks: i64,
}

impl DyadicWindow {
    /// Window over a mask lattice: side must be `2^K h` and the corner on the lattice.
    pub fn for_mask(mask: &DomainMask, window: &Cube) -> Result<Self> {
        let grid = mask.grid();
        if window.dim() != grid.dim() {
            return Err(Error::Shape("window and mask dimensions differ".into()));
        }
        let h = grid.spacing;
        let cells = window.diam() / h;
        let k = cells.round();
        if (cells - k).abs() > 1e-9 || k < 1.0 || !(k as u64).is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "window side {} is not a power-of-two multiple of h = {h}",
                window.diam()
            )));
        }
        let origin: Vec<f64> = (0..grid.dim()).map(|a| window.lo(a)).collect();
        for a in 0..grid.dim() {
            let t = (origin[a] - grid.origin[a]) / h;
            if (t - t.round()).abs() > 1e-9 {
                return Err(Error::InvalidArgument(
                    "window corner is not on the mask lattice".into(),
                ));
            }
        }
        Ok(DyadicWindow {
            origin,
            tick: h / TICKS_PER_CELL as f64,
            side_ticks: k as i64 * TICKS_PER_CELL,
        })
    }

    /// Window for an arbitrary point set, resolved down to `max_level`.
    pub fn for_points(window: &Cube, max_level: u32) -> Self {
        let side_ticks = 16i64 << max_level;
        DyadicWindow {
            origin: (0..window.dim()).map(|a| window.lo(a)).collect(),
            tick: window.diam() / side_ticks as f64,
            side_ticks,
        }
    }

    /// Smallest power-of-two window on the mask lattice containing S with the
    /// given margin (in multiples of diam S) on every side.
    pub fn around(mask: &DomainMask, margin: f64) -> Result<Cube> {
        let grid = mask.grid();
        let (lo, hi) = mask.closed_bbox().ok_or(Error::EmptyDomain)?;
        let h = grid.spacing;
        let diam = mask.closed_diam();
        let need = diam + 2.0 * margin * diam;
        let mut cells = 1i64;
        while (cells as f64) * h < need - 1e-12 {
            cells *= 2;
        }
        let n = grid.dim();
        let mut center = Vec::with_capacity(n);
        for a in 0..n {
            // lower corner index, rounded so the window sits on the lattice
            let mid2 = lo[a] + hi[a] + 1; // twice the bbox midpoint, in cells
            let corner = (mid2 - cells).div_euclid(2);
            center.push(grid.origin[a] + (corner as f64 + cells as f64 / 2.0) * h);
        }
        Ok(Cube::new(center, cells as f64 * h / 2.0))
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn cube(&self) -> Cube {
        let half = self.side_ticks as f64 * self.tick / 2.0;
        Cube::new(self.origin.iter().map(|o| o + half).collect(), half)
    }

    pub fn to_ticks(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut t = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            t[a] = (x[a] - self.origin[a]) / self.tick;
        }
        t
    }

    pub fn from_ticks(&self, t: f64, axis: usize) -> f64 {
        self.origin[axis] + t * self.tick
    }

    pub fn side(&self, level: u32) -> i64 {
        self.side_ticks >> level
    }

    /// Grid of the window's cells at mask resolution.
    pub fn cell_grid(&self) -> Result<GridSpec> {
        let h = self.tick * TICKS_PER_CELL as f64;
        let cells = (self.side_ticks / TICKS_PER_CELL) as usize;
        GridSpec::new(self.origin.clone(), h, vec![cells; self.dim()])
    }
}

/// Distance queries against the discretized set S.
pub trait SetIndex {
    /// Exact uniform-norm distance (ticks) from the closed box `lo..=hi` to S.
    fn dist_to_box(&self, lo: &[i64], hi: &[i64]) -> i64;
    /// Whether the box lies inside the union of S's cells.
    fn box_inside(&self, lo: &[i64], hi: &[i64]) -> bool;
}

/// S as the centers of a mask's closed cells.
pub struct MaskIndex {
    dim: usize,
    /// Mask cell offset relative to the window corner, in cells.
    offset: Ticks,
    occ: Occupancy,
    extents: Ticks,
    max_dist: i64,
}

impl MaskIndex {
    pub fn new(mask: &DomainMask, window: &DyadicWindow) -> Self {
        Self::with_region(mask, window, Region::Closed)
    }

    pub fn with_region(mask: &DomainMask, window: &DyadicWindow, region: Region) -> Self {
        let grid = mask.grid();
        let n = grid.dim();
        let mut offset = [0; MAX_DIM];
        let mut extents = [1; MAX_DIM];
        for a in 0..n {
            offset[a] = ((grid.origin[a] - window.origin[a]) / grid.spacing).round() as i64;
            extents[a] = grid.extents[a] as i64;
        }
        MaskIndex {
            dim: n,
            offset,
            occ: Occupancy::new(mask, region),
            extents,
            max_dist: window.side_ticks * 4 + 4 * TICKS_PER_CELL * extents.iter().max().unwrap(),
        }
    }

    /// Mask cell index range whose centers lie in `a..=b` (ticks) on `axis`.
    fn center_range(&self, axis: usize, a: i64, b: i64) -> (i64, i64) {
        let half = TICKS_PER_CELL / 2;
        let lo = -(-(a - half)).div_euclid(TICKS_PER_CELL) - self.offset[axis];
        let hi = (b - half).div_euclid(TICKS_PER_CELL) - self.offset[axis];
        (lo, hi)
    }

    fn any_center_in(&self, lo: &[i64], hi: &[i64], d: i64) -> bool {
        let mut a = [0; MAX_DIM];
        let mut b = [0; MAX_DIM];
        for ax in 0..self.dim {
            let (l, h) = self.center_range(ax, lo[ax] - d, hi[ax] + d);
            if l > h {
                return false;
            }
            a[ax] = l;
            b[ax] = h;
        }
        self.occ.any(&a[..self.dim], &b[..self.dim])
    }

    /// A nearest cell of S to the tick point `x` in the uniform norm.
    /// Among the ties, coordinates are fixed axis by axis, each as close to
    /// `x` as possible (the lower one on equal distance).
    pub fn nearest(&self, x: &[i64], grid: &GridSpec) -> (usize, i64) {
        let d = self.dist_to_box(x, x);
        let n = self.dim;
        let mut a = [0; MAX_DIM];
        let mut b = [0; MAX_DIM];
        for ax in 0..n {
            let (l, h) = self.center_range(ax, x[ax] - d, x[ax] + d);
            a[ax] = l.max(0);
            b[ax] = h.min(self.extents[ax] - 1);
        }
        for ax in 0..n {
            // cell coordinate whose center is closest to x on this axis, from below and above
            let target = (x[ax] - TICKS_PER_CELL / 2).div_euclid(TICKS_PER_CELL) - self.offset[ax];
            let split = target.clamp(a[ax] - 1, b[ax]);
            let has = |lo: i64, hi: i64| {
                let mut aa = a;
                let mut bb = b;
                aa[ax] = lo;
                bb[ax] = hi;
                lo <= hi && self.occ.any(&aa[..n], &bb[..n])
            };
            let below = has(a[ax], split).then(|| {
                // largest v <= split with a nonempty slab
                let (mut lo, mut hi) = (a[ax], split);
                while lo < hi {
                    let mid = lo + (hi - lo + 1) / 2;
                    if has(mid, split) {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                lo
            });
            let above = has(split + 1, b[ax]).then(|| {
                let (mut lo, mut hi) = (split + 1, b[ax]);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if has(split + 1, mid) {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                lo
            });
            let center = |v: i64| (v + self.offset[ax]) * TICKS_PER_CELL + TICKS_PER_CELL / 2;
            let pick = match (below, above) {
                (Some(u), Some(v)) => {
                    if (x[ax] - center(u)).abs() <= (center(v) - x[ax]).abs() {
                        u
                    } else {
                        v
                    }
                }
                (Some(u), None) => u,
                (None, Some(v)) => v,
                (None, None) => unreachable!("nearest cell lies in the search box"),
            };
            a[ax] = pick;
            b[ax] = pick;
        }
        let coords: Vec<usize> = a[..n].iter().map(|&c| c as usize).collect();
        (grid.index(&coords), d)
    }

    /// Mask cell offset relative to the window corner, in cells.
    pub fn offset(&self) -> Ticks {
        self.offset
    }

    /// Tick coordinates of a mask cell's center.
    pub fn center_ticks(&self, coords: &[usize]) -> Ticks {
        let mut t = [0; MAX_DIM];
        for a in 0..self.dim {
            t[a] = (coords[a] as i64 + self.offset[a]) * TICKS_PER_CELL + TICKS_PER_CELL / 2;
        }
        t
    }
}

impl SetIndex for MaskIndex {
    fn dist_to_box(&self, lo: &[i64], hi: &[i64]) -> i64 {
        let (mut a, mut b) = (0, self.max_dist);
        if !self.any_center_in(lo, hi, b) {
            return i64::MAX;
        }
        while a < b {
            let mid = a + (b - a) / 2;
            if self.any_center_in(lo, hi, mid) {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        a
    }

    fn box_inside(&self, lo: &[i64], hi: &[i64]) -> bool {
        let n = self.dim;
        let mut a = [0; MAX_DIM];
        let mut b = [0; MAX_DIM];
        let mut total = 1i64;
        for ax in 0..n {
            // cells overlapping the open box
            a[ax] = lo[ax].div_euclid(TICKS_PER_CELL) - self.offset[ax];
            b[ax] = (hi[ax] - 1).div_euclid(TICKS_PER_CELL) - self.offset[ax];
            if a[ax] < 0 || b[ax] >= self.extents[ax] {
                return false;
            }
            total *= b[ax] - a[ax] + 1;
        }
        self.occ.count(&a[..n], &b[..n]) as i64 == total
    }
}

/// S as an explicit list of points (in ticks); brute-force distances.
pub struct PointCloud {
    pub points: Vec<Ticks>,
    pub dim: usize,
}

impl SetIndex for PointCloud {
    fn dist_to_box(&self, lo: &[i64], hi: &[i64]) -> i64 {
        self.points
            .iter()
            .map(|p| {
                (0..self.dim)
                    .map(|a| (lo[a] - p[a]).max(p[a] - hi[a]).max(0))
                    .max()
                    .unwrap_or(0)
            })
            .min()
            .unwrap_or(i64::MAX)
    }

    fn box_inside(&self, _lo: &[i64], _hi: &[i64]) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub level: u32,
    pub index: Ticks,
    pub lo: Ticks,
    pub side: i64,
    /// Uniform-norm distance to S, in ticks.
    pub dist: i64,
    /// Touches the window boundary.
    pub clipped: bool,
}

impl WhitneyCube {
    pub fn hi(&self, a: usize) -> i64 {
        self.lo[a] + self.side
    }

    /// Twice the center, in ticks.
    pub fn center2(&self, a: usize) -> i64 {
        2 * self.lo[a] + self.side
    }

    fn contains_ticks(&self, x: &[f64], dim: usize) -> bool {
        (0..dim).all(|a| x[a] >= self.lo[a] as f64 && x[a] <= self.hi(a) as f64)
    }

    /// `x ∈ Q*`
    fn star_contains_ticks(&self, x: &[f64], dim: usize) -> bool {
        (0..dim).all(|a| {
            let c = self.center2(a) as f64 / 2.0;
            (x[a] - c).abs() <= 9.0 * self.side as f64 / 16.0
        })
    }
}

fn stars_meet(q: &WhitneyCube, k: &WhitneyCube, dim: usize) -> bool {
    (0..dim).all(|a| 8 * (q.center2(a) - k.center2(a)).abs() <= 9 * (q.side + k.side))
}

/// Exhaustive check of the Whitney properties.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCertificate {
    pub cubes: usize,
    pub certified: usize,
    pub clipped: usize,
    /// Cubes violating `diam Q <= dist(Q, S)`.
    pub lower_violations: usize,
    /// Cubes violating `dist(Q, S) <= 4 diam Q`.
    pub upper_violations: usize,
    /// Neighbor pairs (`Q* ∩ K* ≠ ∅`) with diameter ratio outside `[1/4, 4]`.
    pub ratio_violations: usize,
    /// Max number of cubes sharing a point.
    pub overlap: usize,
    /// Max number of stars `Q*` meeting a given `K*` (including itself).
    pub star_overlap: usize,
    /// `Σ|Q| + |S ∩ window| + |frontier| == |window|` in exact tick arithmetic.
    pub partition_exact: bool,
    pub frontier: usize,
}

impl WhitneyCertificate {
    pub fn passed(&self) -> bool {
        self.lower_violations == 0
            && self.upper_violations == 0
            && self.ratio_violations == 0
            && self.partition_exact
    }
}

#[derive(Clone, Debug)]
pub struct WhitneyFamily {
    pub window: DyadicWindow,
    pub cubes: Vec<WhitneyCube>,
    /// Indices `K ≠ Q` with `Q* ∩ K*` nonempty.
    pub adjacency: Vec<Vec<u32>>,
    /// Finest-level cubes not separated from S (inside S's cells for a mask).
    pub frontier: Vec<WhitneyCube>,
    pub min_level: u32,
    pub max_level: u32,
    pub certificate: WhitneyCertificate,
    lookup: HashMap<(u32, Ticks), u32>,
}

struct Selection {
    cubes: Vec<WhitneyCube>,
    frontier: Vec<WhitneyCube>,
    interior_volume: i128,
}

fn select(window: &DyadicWindow, set: &dyn SetIndex, min_level: u32, max_level: u32) -> Selection {
    let n = window.dim();
    let mut cubes = Vec::new();
    let mut frontier = Vec::new();
    let mut interior_volume: i128 = 0;
    let mut stack = vec![(0u32, [0i64; MAX_DIM])];
    while let Some((level, index)) = stack.pop() {
        let side = window.side(level);
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for a in 0..n {
            lo[a] = index[a] * side;
            hi[a] = lo[a] + side;
        }
        let clipped = (0..n).any(|a| lo[a] == 0 || hi[a] == window.side_ticks);
        let mut dist = None;
        if level >= min_level {
            if set.box_inside(&lo[..n], &hi[..n]) {
                interior_volume += (side as i128).pow(n as u32);
                continue;
            }
            let d = set.dist_to_box(&lo[..n], &hi[..n]);
            if d >= side {
                cubes.push(WhitneyCube {
                    level,
                    index,
                    lo,
                    side,
                    dist: d,
                    clipped,
                });
                continue;
            }
            dist = Some(d);
        }
        if level >= max_level {
            frontier.push(WhitneyCube {
                level,
                index,
                lo,
                side,
                dist: dist.unwrap_or(0),
                clipped,
            });
            continue;
        }
        for child in (0..(1usize << n)).rev() {
            let mut ci = [0; MAX_DIM];
            for a in 0..n {
                ci[a] = 2 * index[a] + ((child >> (n - 1 - a)) & 1) as i64;
            }
            stack.push((level + 1, ci));
        }
    }
    Selection {
        cubes,
        frontier,
        interior_volume,
    }
}

impl WhitneyFamily {
    fn build(
        window: DyadicWindow,
        sel: Selection,
        min_level: u32,
        max_level: u32,
    ) -> WhitneyFamily {
        let mut cubes = sel.cubes;
        cubes.sort_by(|a, b| (a.level, a.index).cmp(&(b.level, b.index)));
        let lookup: HashMap<(u32, Ticks), u32> = cubes
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.level, c.index), i as u32))
            .collect();
        let mut fam = WhitneyFamily {
            window,
            cubes,
            adjacency: Vec::new(),
            frontier: sel.frontier,
            min_level,
            max_level,
            certificate: WhitneyCertificate::default(),
            lookup,
        };
        fam.adjacency = fam.compute_adjacency();
        fam.certificate = fam.certify(sel.interior_volume);
        fam
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cube(&self, id: usize) -> Cube {
        let c = &self.cubes[id];
        let center = (0..self.dim())
            .map(|a| self.window.from_ticks(c.center2(a) as f64 / 2.0, a))
            .collect();
        Cube::new(center, c.side as f64 * self.window.tick / 2.0)
    }

    pub fn diam(&self, id: usize) -> f64 {
        self.cubes[id].side as f64 * self.window.tick
    }

    pub fn dist_to_set(&self, id: usize) -> f64 {
        self.cubes[id].dist as f64 * self.window.tick
    }

    /// Finds cubes at `level` whose star meets the box `[c - ext, c + ext]`
    /// (twice-center coordinates).
    fn candidates_at(&self, level: u32, center2: &[i64], ext2: &[i64], out: &mut Vec<u32>) {
        let n = self.dim();
        let s = self.window.side(level);
        let cells = self.window.side_ticks / s;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for a in 0..n {
            // cube i covers twice-coords [2 i s, 2 (i+1) s]; its star reaches s/8 beyond
            let reach = s / 8;
            lo[a] = ((center2[a] - ext2[a] - reach) as f64 / (2 * s) as f64).floor() as i64 - 1;
            hi[a] = ((center2[a] + ext2[a] + reach) as f64 / (2 * s) as f64).floor() as i64 + 1;
            lo[a] = lo[a].max(0);
            hi[a] = hi[a].min(cells - 1);
            if lo[a] > hi[a] {
                return;
            }
        }
        let mut cur = lo;
        loop {
            if let Some(&id) = self.lookup.get(&(level, cur)) {
                out.push(id);
            }
            let mut a = n;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if cur[a] < hi[a] {
                    cur[a] += 1;
                    break;
                }
                cur[a] = lo[a];
            }
        }
    }

    fn compute_adjacency(&self) -> Vec<Vec<u32>> {
        let n = self.dim();
        let mut adj = vec![Vec::new(); self.cubes.len()];
        let mut cand = Vec::new();
        for (kid, k) in self.cubes.iter().enumerate() {
            let mut c2 = [0; MAX_DIM];
            let mut e2 = [0; MAX_DIM];
            for a in 0..n {
                c2[a] = k.center2(a);
                e2[a] = (9 * k.side) / 8 + 1;
            }
            for level in self.min_level.min(k.level)..=k.level {
                cand.clear();
                self.candidates_at(level, &c2[..n], &e2[..n], &mut cand);
                for &qid in &cand {
                    let q = &self.cubes[qid as usize];
                    let keep = q.level < k.level || (qid as usize) < kid;
                    if keep && stars_meet(q, k, n) {
                        adj[kid].push(qid);
                        adj[qid as usize].push(kid as u32);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    fn certify(&self, interior_volume: i128) -> WhitneyCertificate {
        let n = self.dim();
        let mut cert = WhitneyCertificate {
            cubes: self.cubes.len(),
            frontier: self.frontier.len(),
            ..Default::default()
        };
        let mut volume = interior_volume;
        for (id, q) in self.cubes.iter().enumerate() {
            volume += (q.side as i128).pow(n as u32);
            if q.clipped {
                cert.clipped += 1;
                continue;
            }
            cert.certified += 1;
            if q.dist < q.side {
                cert.lower_violations += 1;
            }
            if q.dist > 4 * q.side {
                cert.upper_violations += 1;
            }
            for &k in &self.adjacency[id] {
                let k = &self.cubes[k as usize];
                if 4 * k.side < q.side || k.side > 4 * q.side {
                    cert.ratio_violations += 1;
                }
            }
        }
        for f in &self.frontier {
            volume += (f.side as i128).pow(n as u32);
        }
        cert.partition_exact = volume == (self.window.side_ticks as i128).pow(n as u32);
        cert.star_overlap = self
            .adjacency
            .iter()
            .map(|a| a.len() + 1)
            .max()
            .unwrap_or(0);
        cert.overlap = self.point_overlap();
        cert
    }

    /// Max over cube corners of the number of closed cubes containing the corner.
    fn point_overlap(&self) -> usize {
        let n = self.dim();
        let mut best = usize::from(!self.cubes.is_empty());
        for (id, q) in self.cubes.iter().enumerate() {
            for corner in 0..(1usize << n) {
                let mut p = [0.0; MAX_DIM];
                for a in 0..n {
                    p[a] = (q.lo[a] + if corner >> a & 1 == 1 { q.side } else { 0 }) as f64;
                }
                let count = 1 + self.adjacency[id]
                    .iter()
                    .filter(|&&k| self.cubes[k as usize].contains_ticks(&p, n))
                    .count();
                best = best.max(count);
            }
        }
        best
    }

    /// All cubes whose star `Q*` contains `x`.
    pub fn locate(&self, x: &[f64]) -> Result<Vec<usize>> {
        let n = self.dim();
        let t = self.window.to_ticks(x);
        let side = self.window.side_ticks as f64;
        if (0..n).any(|a| t[a] < 0.0 || t[a] > side) {
            return Err(Error::OutsideWindow(x.to_vec()));
        }
        let mut out = Vec::new();
        let mut inside_some = false;
        for level in self.min_level..=self.max_level {
            let s = self.window.side(level) as f64;
            let mut lo = [0i64; MAX_DIM];
            let mut hi = [0i64; MAX_DIM];
            let count = self.window.side_ticks / self.window.side(level);
            for a in 0..n {
                lo[a] = (((t[a] - s / 16.0) / s).ceil() as i64 - 1).max(0);
                hi[a] = (((t[a] + s / 16.0) / s).floor() as i64).min(count - 1);
            }
            if (0..n).any(|a| lo[a] > hi[a]) {
                continue;
            }
            let mut cur = lo;
            loop {
                if let Some(&id) = self.lookup.get(&(level, cur)) {
                    let q = &self.cubes[id as usize];
                    if q.star_contains_ticks(&t, n) {
                        out.push(id as usize);
                        inside_some |= q.contains_ticks(&t, n);
                    }
                }
                let mut a = n;
                let mut done = true;
                while a > 0 {
                    a -= 1;
                    if cur[a] < hi[a] {
                        cur[a] += 1;
                        done = false;
                        break;
                    }
                    cur[a] = lo[a];
                }
                if done {
                    break;
                }
            }
        }
        if !inside_some {
            return Err(Error::InSet(x.to_vec()));
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Write one JSON record per cube.
    pub fn dump_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            id: usize,
            center: Vec<f64>,
            half_side: f64,
            level: u32,
            dist_to_s: f64,
            clipped: bool,
            neighbor_ids: &'a [u32],
        }
        for id in 0..self.cubes.len() {
            let cube = self.cube(id);
            let rec = Record {
                id,
                center: cube.center,
                half_side: cube.half_side,
                level: self.cubes[id].level,
                dist_to_s: self.dist_to_set(id),
                clipped: self.cubes[id].clipped,
                neighbor_ids: &self.adjacency[id],
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Whitney decomposition of `window ∖ S` for the closed cells S of `mask`.
///
/// Cubes are dyadic subcubes of `window` between `min_level` and `max_level`;
/// covering every cell outside S needs cubes of half a cell, i.e.
/// `max_level >= log2(window side / h) + 1`.
pub fn decompose(
    mask: &DomainMask,
    window: &Cube,
    min_level: u32,
    max_level: u32,
) -> Result<WhitneyFamily> {
    let dw = DyadicWindow::for_mask(mask, window)?;
    let cells_log2 = (dw.side_ticks / TICKS_PER_CELL).trailing_zeros();
    if max_level > cells_log2 + 1 {
        return Err(Error::InvalidArgument(format!(
            "max_level {max_level} finer than half a cell (limit {})",
            cells_log2 + 1
        )));
    }
    if min_level > max_level {
        return Err(Error::InvalidArgument("min_level > max_level".into()));
    }
    let index = MaskIndex::new(mask, &dw);
    // S must sit inside the window
    let (blo, bhi) = mask.closed_bbox().ok_or(Error::EmptyDomain)?;
    let n = mask.grid().dim();
    for a in 0..n {
        let lo = (blo[a] + index.offset[a]) * TICKS_PER_CELL;
        let hi = (bhi[a] + 1 + index.offset[a]) * TICKS_PER_CELL;
        if lo < 0 || hi > dw.side_ticks {
            return Err(Error::InvalidArgument("window does not contain S".into()));
        }
    }
    let sel = select(&dw, &index, min_level, max_level);
    let wgrid = dw.cell_grid()?;
    let mut uncovered = Vec::new();
    for f in &sel.frontier {
        if index.box_inside(&f.lo[..n], &(0..n).map(|a| f.hi(a)).collect::<Vec<_>>()) {
            continue;
        }
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for a in 0..n {
            lo[a] = f.lo[a].div_euclid(TICKS_PER_CELL);
            hi[a] = (f.hi(a) - 1).div_euclid(TICKS_PER_CELL);
        }
        wgrid.for_each_in_box(&lo[..n], &hi[..n], |cell, c| {
            let mut mc = [0i64; MAX_DIM];
            for a in 0..n {
                mc[a] = c[a] - index.offset[a];
            }
            let closed = mask
                .grid()
                .checked_index(&mc[..n])
                .is_some_and(|i| mask.is_closed(i));
            if !closed {
                uncovered.push(cell);
            }
        });
    }
    if !uncovered.is_empty() {
        uncovered.sort_unstable();
        uncovered.dedup();
        return Err(Error::ResolutionExhausted { uncovered });
    }
    let mut fam = WhitneyFamily::build(dw, sel, min_level, max_level);
    // frontier cubes are inside S: count them with S
    fam.frontier.clear();
    Ok(fam)
}

/// Decomposition of `window ∖ P` for a finite point set `P`.
/// Frontier cubes (within one finest cube of P) are reported, not an error.
pub fn decompose_points(
    points: &[Vec<f64>],
    window: &Cube,
    min_level: u32,
    max_level: u32,
) -> Result<WhitneyFamily> {
    let dw = DyadicWindow::for_points(window, max_level);
    let n = window.dim();
    let mut ticks = Vec::with_capacity(points.len());
    for p in points {
        if !window.contains(p) {
            return Err(Error::InvalidArgument(format!("{p:?} outside the window")));
        }
        let t = dw.to_ticks(p);
        let mut ti = [0i64; MAX_DIM];
        for a in 0..n {
            ti[a] = t[a].round() as i64;
            if (t[a] - ti[a] as f64).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{p:?} is not on the tick lattice of the window"
                )));
            }
        }
        ticks.push(ti);
    }
    if ticks.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let cloud = PointCloud {
        points: ticks,
        dim: n,
    };
    let sel = select(&dw, &cloud, min_level, max_level);
    Ok(WhitneyFamily::build(dw, sel, min_level, max_level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Shape};

    #[test]
    fn origin_in_the_line() {
        let window = Cube::new(vec![0.0], 4.0);
        let fam = decompose_points(&[vec![0.0]], &window, 0, 8).unwrap();
        for id in 0..fam.len() {
            let q = fam.cube(id);
            let (a, b) = (q.lo(0), q.hi(0));
            // dyadic intervals [2^k, 2^{k+1}] and mirrors, distance = diameter
            let far = a.abs().max(b.abs());
            let near = a.abs().min(b.abs());
            assert_eq!(far, 2.0 * near, "{a} {b}");
            assert_eq!(fam.dist_to_set(id), fam.diam(id));
        }
        assert!(fam.certificate.passed());
        assert_eq!(fam.frontier.len(), 2);
        // brute-force all-pairs star intersections
        for i in 0..fam.len() {
            let qi = fam.cube(i).star();
            let brute: Vec<u32> = (0..fam.len())
                .filter(|&j| j != i && qi.intersects(&fam.cube(j).star()))
                .map(|j| j as u32)
                .collect();
            assert_eq!(brute, fam.adjacency[i]);
            assert!(brute.len() + 1 <= 12);
        }
    }

    fn square_family(h: f64) -> (DomainMask, WhitneyFamily) {
        let cells = (1.0 / h) as usize + 6;
        let grid = GridSpec::new(vec![-3.0 * h; 2], h, vec![cells, cells]).unwrap();
        let mask = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &grid).unwrap();
        let window = DyadicWindow::around(&mask, 5.0).unwrap();
        let k = (window.diam() / h).log2().round() as u32;
        let fam = decompose(&mask, &window, 0, k + 1).unwrap();
        (mask, fam)
    }

    #[test]
    fn unit_square_certifies() {
        let (_, fam) = square_family(1.0 / 16.0);
        let c = &fam.certificate;
        assert!(c.passed(), "{c:?}");
        assert_eq!(c.overlap, 4);
        assert!(c.certified > 0);
    }

    #[test]
    fn distances_match_brute_force() {
        let (mask, fam) = square_family(1.0 / 8.0);
        let grid = mask.grid();
        let closed: Vec<Vec<f64>> = mask
            .cells(Region::Closed)
            .into_iter()
            .map(|i| grid.center(i))
            .collect();
        for id in 0..fam.len() {
            let q = fam.cube(id);
            let brute = closed
                .iter()
                .map(|p| {
                    (0..2)
                        .map(|a| (q.lo(a) - p[a]).max(p[a] - q.hi(a)).max(0.0))
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((brute - fam.dist_to_set(id)).abs() < 1e-12);
        }
    }

    #[test]
    fn cubes_avoid_set_and_tile_complement() {
        let (mask, fam) = square_family(1.0 / 8.0);
        let wgrid = fam.window.cell_grid().unwrap();
        let off = wgrid.offset_of(mask.grid()).unwrap();
        for cell in 0..wgrid.len() {
            let x = wgrid.center(cell);
            let c = wgrid.coords(cell);
            let mc: Vec<i64> = (0..2).map(|a| c[a] as i64 - off[a]).collect();
            let in_s = mask
                .grid()
                .checked_index(&mc)
                .is_some_and(|i| mask.is_closed(i));
            match fam.locate(&x) {
                Ok(ids) => {
                    assert!(!in_s);
                    assert!(!ids.is_empty());
                    assert!(ids.len() <= fam.certificate.star_overlap);
                }
                Err(Error::InSet(_)) => assert!(in_s),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn face_points_return_both_cubes() {
        let (_, fam) = square_family(1.0 / 8.0);
        let id = fam
            .cubes
            .iter()
            .position(|c| !c.clipped && c.level > 2)
            .unwrap();
        let q = fam.cube(id);
        let located = fam.locate(&q.center).unwrap();
        assert!(located.contains(&id));
        let mut face = q.center.clone();
        face[0] = q.hi(0);
        let located = fam.locate(&face).unwrap();
        let holders: Vec<usize> = (0..fam.len())
            .filter(|&j| fam.cube(j).contains(&face))
            .collect();
        assert!(holders.len() >= 2);
        for j in holders {
            assert!(located.contains(&j));
        }
    }

    #[test]
    fn coarse_max_level_is_exhausted() {
        let h = 1.0 / 8.0;
        let grid = GridSpec::new(vec![-3.0 * h; 2], h, vec![14, 14]).unwrap();
        let mask = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &grid).unwrap();
        let window = DyadicWindow::around(&mask, 5.0).unwrap();
        let k = (window.diam() / h).log2().round() as u32;
        match decompose(&mask, &window, 0, k) {
            Err(Error::ResolutionExhausted { uncovered }) => assert!(!uncovered.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_keeps_coarse_cubes() {
        let window = Cube::new(vec![0.0, 0.0], 2.0);
        let pts = vec![vec![0.0, 0.0], vec![0.5, 0.25]];
        let a = decompose_points(&pts, &window, 0, 6).unwrap();
        let b = decompose_points(&pts, &window, 0, 7).unwrap();
        let set_b: Vec<Cube> = (0..b.len()).map(|i| b.cube(i)).collect();
        for i in 0..a.len() {
            assert!(set_b.contains(&a.cube(i)));
        }
        assert!(b.len() > a.len());
    }
}
