use serde::{Deserialize, Serialize};

use super::{GridSpec, Shape, MAX_DIM};
use crate::error::{Error, Result};

pub const CELL_OUTSIDE: u8 = 0;
pub const CELL_BOUNDARY: u8 = 1;
pub const CELL_OPEN: u8 = 2;

/// Which cells of a mask make up a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Rasterized Ω.
    Open,
    /// Rasterized S = closure of Ω (open cells plus the boundary layer).
    #[default]
    Closed,
}

/// Rasterized domain: one state byte per cell (0 outside, 1 boundary layer, 2 open).
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    grid: GridSpec,
    state: Vec<u8>,
}

impl DomainMask {
    /// Mask from explicit open cells; the boundary layer is every non-open cell
    /// sharing a face, edge or corner with an open cell.
    pub fn from_open(grid: GridSpec, open: &[bool]) -> Result<Self> {
        if open.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} flags for {} cells",
                open.len(),
                grid.len()
            )));
        }
        if !open.iter().any(|&o| o) {
            return Err(Error::EmptyDomain);
        }
        let n = grid.dim();
        let mut state: Vec<u8> = open
            .iter()
            .map(|&o| if o { CELL_OPEN } else { CELL_OUTSIDE })
            .collect();
        for idx in 0..grid.len() {
            if !open[idx] {
                continue;
            }
            let c = grid.coords(idx);
            for axis in 0..n {
                if c[axis] == 0 || c[axis] + 1 == grid.extents[axis] {
                    return Err(Error::InvalidArgument(
                        "open cells touch the grid border; enlarge the grid margin".into(),
                    ));
                }
            }
            let mut lo = [0i64; MAX_DIM];
            let mut hi = [0i64; MAX_DIM];
            for axis in 0..n {
                lo[axis] = c[axis] as i64 - 1;
                hi[axis] = c[axis] as i64 + 1;
            }
            grid.for_each_in_box(&lo[..n], &hi[..n], |j, _| {
                if state[j] == CELL_OUTSIDE {
                    state[j] = CELL_BOUNDARY;
                }
            });
        }
        Ok(DomainMask { grid, state })
    }

    /// Every cell open, no boundary layer: the whole grid box as a domain.
    pub fn full(grid: GridSpec) -> Self {
        let state = vec![CELL_OPEN; grid.len()];
        DomainMask { grid, state }
    }

    /// Mask from raw state bytes (as stored in the binary format).
    pub fn from_states(grid: GridSpec, state: Vec<u8>) -> Result<Self> {
        if state.len() != grid.len() {
            return Err(Error::Shape("state length does not match grid".into()));
        }
        if let Some(bad) = state.iter().find(|&&s| s > CELL_OPEN) {
            return Err(Error::Format(format!("invalid cell state {bad}")));
        }
        Ok(DomainMask { grid, state })
    }

    /// Product mask on `self.grid × other.grid`; a product cell is open when both
    /// factors are open and closed when both are closed.
    pub fn product(&self, other: &DomainMask) -> Result<Self> {
        let grid = self.grid.product(&other.grid)?;
        let mut state = Vec::with_capacity(grid.len());
        for &a in &self.state {
            for &b in &other.state {
                state.push(a.min(b));
            }
        }
        Ok(DomainMask { grid, state })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn states(&self) -> &[u8] {
        &self.state
    }

    pub fn state(&self, idx: usize) -> u8 {
        self.state[idx]
    }

    pub fn is_open(&self, idx: usize) -> bool {
        self.state[idx] == CELL_OPEN
    }

    pub fn is_closed(&self, idx: usize) -> bool {
        self.state[idx] != CELL_OUTSIDE
    }

    pub fn in_region(&self, idx: usize, region: Region) -> bool {
        match region {
            Region::Open => self.is_open(idx),
            Region::Closed => self.is_closed(idx),
        }
    }

    pub fn cells(&self, region: Region) -> Vec<usize> {
        (0..self.state.len())
            .filter(|&i| self.in_region(i, region))
            .collect()
    }

    pub fn count(&self, region: Region) -> usize {
        self.state
            .iter()
            .filter(|&&s| match region {
                Region::Open => s == CELL_OPEN,
                Region::Closed => s != CELL_OUTSIDE,
            })
            .count()
    }

    pub fn measure(&self, region: Region) -> f64 {
        self.count(region) as f64 * self.grid.cell_volume()
    }

    /// Index box (inclusive) of the closed cells.
    pub fn closed_bbox(&self) -> Option<([i64; MAX_DIM], [i64; MAX_DIM])> {
        let n = self.grid.dim();
        let mut lo = [i64::MAX; MAX_DIM];
        let mut hi = [i64::MIN; MAX_DIM];
        let mut any = false;
        for (idx, &s) in self.state.iter().enumerate() {
            if s == CELL_OUTSIDE {
                continue;
            }
            any = true;
            let c = self.grid.coords(idx);
            for a in 0..n {
                lo[a] = lo[a].min(c[a] as i64);
                hi[a] = hi[a].max(c[a] as i64);
            }
        }
        any.then_some((lo, hi))
    }

    /// Uniform-norm diameter of S (closed cells taken as closed squares).
    pub fn closed_diam(&self) -> f64 {
        match self.closed_bbox() {
            None => 0.0,
            Some((lo, hi)) => (0..self.grid.dim())
                .map(|a| (hi[a] - lo[a] + 1) as f64 * self.grid.spacing)
                .fold(0.0, f64::max),
        }
    }

    /// Binary PGM image (2-D only): 0 outside, 127 boundary layer, 255 open.
    /// Row 0 of the image is the top (largest second coordinate).
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        if self.grid.dim() != 2 {
            return Err(Error::Shape("PGM export needs a 2-D mask".into()));
        }
        let (w, h) = (self.grid.extents[0], self.grid.extents[1]);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in (0..h).rev() {
            for col in 0..w {
                let s = self.state[self.grid.index(&[col, row])];
                out.push(match s {
                    CELL_OPEN => 255,
                    CELL_BOUNDARY => 127,
                    _ => 0,
                });
            }
        }
        Ok(out)
    }
}

/// Rasterize by cell-center membership: a cell is open when its center lies in
/// the open set described by `shape`.
pub fn rasterize(shape: &Shape, grid: &GridSpec) -> Result<DomainMask> {
    shape.validate()?;
    if shape.dim() != Some(grid.dim()) {
        return Err(Error::Shape("shape and grid dimensions differ".into()));
    }
    let open: Vec<bool> = (0..grid.len())
        .map(|i| shape.contains(&grid.center(i)))
        .collect();
    DomainMask::from_open(grid.clone(), &open)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_grid(h: f64) -> GridSpec {
        let n = (1.0 / h) as usize + 4;
        GridSpec::new(vec![-2.0 * h; 2], h, vec![n, n]).unwrap()
    }

    #[test]
    fn unit_square_has_64_open_cells() {
        let grid = unit_square_grid(0.125);
        let m = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &grid).unwrap();
        assert_eq!(m.count(Region::Open), 64);
        // one full ring around the 8x8 block
        assert_eq!(m.count(Region::Closed), 100);
        assert!((m.closed_diam() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn layer_is_exactly_the_neighbors() {
        let grid = unit_square_grid(0.125);
        let m = rasterize(&Shape::ball(&[0.5, 0.5], 0.3), &grid).unwrap();
        for i in 0..grid.len() {
            let c = grid.coords(i);
            let mut near_open = false;
            for j in 0..grid.len() {
                let d = grid.coords(j);
                if m.is_open(j)
                    && (c[0] as i64 - d[0] as i64).abs() <= 1
                    && (c[1] as i64 - d[1] as i64).abs() <= 1
                {
                    near_open = true;
                }
            }
            assert_eq!(m.is_closed(i), near_open || m.is_open(i));
        }
    }

    #[test]
    fn slit_row_is_removed() {
        let h = 1.0 / 16.0;
        // cell centers on y = 0
        let grid = GridSpec::new(vec![-1.25, -1.25 - h / 2.0], h, vec![40, 40]).unwrap();
        let slit = Shape::difference(vec![
            Shape::ball(&[0.0, 0.0], 1.0),
            Shape::cuboid(&[0.0, -h / 4.0], &[1.0, h / 4.0]),
        ]);
        let m = rasterize(&slit, &grid).unwrap();
        let row = grid.extents[1] / 2;
        assert!((grid.center_coord(1, row)).abs() < 1e-15);
        for col in 0..grid.extents[0] {
            let x = grid.center_coord(0, col);
            let idx = grid.index(&[col, row]);
            if x > 0.0 && x < 1.0 {
                assert!(!m.is_open(idx));
                assert_eq!(m.state(idx), CELL_BOUNDARY);
            }
            if x < 0.0 && x > -1.0 + h {
                assert!(m.is_open(idx));
            }
        }
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let grid = unit_square_grid(0.125);
        let s = Shape::intersection(vec![
            Shape::cuboid(&[0.0, 0.0], &[0.3, 0.3]),
            Shape::cuboid(&[0.6, 0.6], &[0.9, 0.9]),
        ]);
        assert!(matches!(rasterize(&s, &grid), Err(Error::EmptyDomain)));
    }

    #[test]
    fn pgm_header() {
        let grid = unit_square_grid(0.25);
        let m = rasterize(&Shape::cuboid(&[0.0, 0.0], &[1.0, 1.0]), &grid).unwrap();
        let pgm = m.to_pgm().unwrap();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(pgm.len(), 11 + 64);
    }
}
