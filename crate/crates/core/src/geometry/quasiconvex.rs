use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{euclid_dist, DomainMask, GridSpec, MAX_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub geodesic: f64,
    pub straight: f64,
}

impl GeodesicWitness {
    pub fn ratio(&self) -> f64 {
        if self.straight == 0.0 {
            1.0
        } else {
            self.geodesic / self.straight
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexityReport {
    pub c_q: f64,
    pub radius: f64,
    pub witness_pairs: Vec<GeodesicWitness>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest paths through open cells, moving between cells that share a face,
/// edge or corner; edge weight is the distance between cell centers.
pub struct GeodesicSolver<'a> {
    mask: &'a DomainMask,
    steps: Vec<([i64; MAX_DIM], f64)>,
    dist: Vec<f64>,
    touched: Vec<usize>,
}

impl<'a> GeodesicSolver<'a> {
    pub fn new(mask: &'a DomainMask) -> Self {
        let grid = mask.grid();
        let steps = neighbor_steps(grid.dim())
            .into_iter()
            .map(|off| {
                let nz = off.iter().filter(|&&o| o != 0).count() as f64;
                (off, grid.spacing * nz.sqrt())
            })
            .collect();
        GeodesicSolver {
            mask,
            steps,
            dist: vec![f64::INFINITY; grid.len()],
            touched: Vec::new(),
        }
    }

    /// Path length between the centers of two open cells, `None` if unreachable.
    pub fn cell_distance(&mut self, from: usize, to: usize) -> Option<f64> {
        for &t in &self.touched {
            self.dist[t] = f64::INFINITY;
        }
        self.touched.clear();
        let grid = self.mask.grid();
        let n = grid.dim();
        let mut heap = BinaryHeap::new();
        self.dist[from] = 0.0;
        self.touched.push(from);
        heap.push(Entry {
            dist: 0.0,
            cell: from,
        });
        while let Some(Entry { dist, cell }) = heap.pop() {
            if cell == to {
                return Some(dist);
            }
            if dist > self.dist[cell] {
                continue;
            }
            let c = grid.coords(cell);
            let mut nb = [0i64; MAX_DIM];
            for (off, w) in &self.steps {
                for a in 0..n {
                    nb[a] = c[a] as i64 + off[a];
                }
                let Some(j) = grid.checked_index(&nb[..n]) else {
                    continue;
                };
                if !self.mask.is_open(j) {
                    continue;
                }
                let nd = dist + w;
                if nd < self.dist[j] {
                    if self.dist[j].is_infinite() {
                        self.touched.push(j);
                    }
                    self.dist[j] = nd;
                    heap.push(Entry { dist: nd, cell: j });
                }
            }
        }
        None
    }
}

fn neighbor_steps(n: usize) -> Vec<[i64; MAX_DIM]> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut off = [0i64; MAX_DIM];
        let mut c = code;
        for o in off.iter_mut().take(n) {
            *o = (c % 3) as i64 - 1;
            c /= 3;
        }
        if off.iter().any(|&o| o != 0) {
            out.push(off);
        }
    }
    out
}

/// Geodesic versus straight distance for two points of Ω. Points are joined
/// to the centers of their cells by straight segments.
pub fn geodesic_ratio(mask: &DomainMask, x: &[f64], y: &[f64]) -> Result<GeodesicWitness> {
    let grid = mask.grid();
    let cell = |p: &[f64]| -> Result<usize> {
        grid.locate(p)
            .filter(|&i| mask.is_open(i))
            .ok_or_else(|| Error::InvalidArgument(format!("{p:?} is not in an open cell")))
    };
    let (cx, cy) = (cell(x)?, cell(y)?);
    let straight = euclid_dist(x, y);
    let geodesic = if cx == cy {
        straight
    } else {
        let mut solver = GeodesicSolver::new(mask);
        let d = solver
            .cell_distance(cx, cy)
            .ok_or(Error::Disconnected { from: cx, to: cy })?;
        euclid_dist(x, &grid.center(cx)) + d + euclid_dist(&grid.center(cy), y)
    };
    Ok(GeodesicWitness {
        x: x.to_vec(),
        y: y.to_vec(),
        geodesic,
        straight,
    })
}

/// Connected components of the open cells; returns component id per cell
/// (`u32::MAX` outside) and component sizes.
pub fn open_components(mask: &DomainMask) -> (Vec<u32>, Vec<usize>) {
    let grid = mask.grid();
    let n = grid.dim();
    let steps = neighbor_steps(n);
    let mut comp = vec![u32::MAX; grid.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if !mask.is_open(start) || comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(cell) = queue.pop_front() {
            size += 1;
            let c = grid.coords(cell);
            let mut nb = [0i64; MAX_DIM];
            for off in &steps {
                for a in 0..n {
                    nb[a] = c[a] as i64 + off[a];
                }
                if let Some(j) = grid.checked_index(&nb[..n]) {
                    if mask.is_open(j) && comp[j] == u32::MAX {
                        comp[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Largest geodesic/straight ratio over random pairs of open-cell centers with
/// `|x - y| < radius`, drawn from the largest connected component.
pub fn quasiconvexity(
    mask: &DomainMask,
    radius: f64,
    pair_count: usize,
    seed: u64,
) -> Result<QuasiconvexityReport> {
    let grid = mask.grid();
    if radius <= 2.0 * grid.spacing {
        return Err(Error::InvalidArgument(format!("radius {radius} <= 2h")));
    }
    let (comp, sizes) = open_components(mask);
    let Some((main, _)) = sizes.iter().enumerate().max_by_key(|(_, &s)| s) else {
        return Err(Error::EmptyDomain);
    };
    let cells: Vec<usize> = (0..grid.len())
        .filter(|&i| comp[i] == main as u32)
        .collect();
    let reach = (radius / grid.spacing).ceil() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solver = GeodesicSolver::new(mask);
    let mut pairs = Vec::with_capacity(pair_count);
    let mut c_q: f64 = 1.0;
    let mut attempts = 0usize;
    while pairs.len() < pair_count && attempts < 50 * pair_count.max(1) {
        attempts += 1;
        let a = cells[rng.gen_range(0..cells.len())];
        let Some(b) = random_partner(grid, &comp, main as u32, a, reach, &mut rng) else {
            continue;
        };
        let (xa, xb) = (grid.center(a), grid.center(b));
        let straight = euclid_dist(&xa, &xb);
        if straight >= radius {
            continue;
        }
        let geodesic = if a == b {
            0.0
        } else {
            solver
                .cell_distance(a, b)
                .ok_or(Error::Disconnected { from: a, to: b })?
        };
        let w = GeodesicWitness {
            x: xa,
            y: xb,
            geodesic,
            straight,
        };
        c_q = c_q.max(w.ratio());
        pairs.push(w);
    }
    Ok(QuasiconvexityReport {
        c_q,
        radius,
        witness_pairs: pairs,
    })
}

fn random_partner(
    grid: &GridSpec,
    comp: &[u32],
    id: u32,
    a: usize,
    reach: i64,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let n = grid.dim();
    let c = grid.coords(a);
    let mut nb = [0i64; MAX_DIM];
    for _ in 0..16 {
        for ax in 0..n {
            nb[ax] = c[ax] as i64 + rng.gen_range(-reach..=reach);
        }
        if let Some(j) = grid.checked_index(&nb[..n]) {
            if comp[j] == id {
                return Some(j);
            }
        }
    }
    None
}
