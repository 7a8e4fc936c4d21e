use serde::{Deserialize, Serialize};

use super::Cube;
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Uniform cell grid. Cell `i` along an axis has center `origin + (i + 1/2) h`.
///
/// Linear cell indices are row-major: axis 0 varies slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub extents: Vec<usize>,
}

impl GridSpec {
    pub fn new(origin: Vec<f64>, spacing: f64, extents: Vec<usize>) -> Result<Self> {
        if origin.is_empty() || origin.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "grid dimension {} not in 1..={MAX_DIM}",
                origin.len()
            )));
        }
        if origin.len() != extents.len() {
            return Err(Error::InvalidArgument(
                "origin and extents have different lengths".into(),
            ));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing {spacing} must be positive"
            )));
        }
        let count = extents
            .iter()
            .try_fold(1u64, |acc, &e| acc.checked_mul(e as u64))
            .unwrap_or(u64::MAX);
        if count == 0 || count >= 1 << 31 {
            return Err(Error::InvalidArgument(format!(
                "cell count {count} outside 1..2^31"
            )));
        }
        Ok(GridSpec {
            origin,
            spacing,
            extents,
        })
    }

    /// Grid whose cells tile the closed box `[lo, lo + extents h]`.
    pub fn covering(lo: &[f64], hi: &[f64], spacing: f64) -> Result<Self> {
        let extents = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| (((b - a) / spacing).ceil() as usize).max(1))
            .collect();
        GridSpec::new(lo.to_vec(), spacing, extents)
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for axis in (0..self.dim()).rev() {
            s[axis] = acc;
            acc *= self.extents[axis];
        }
        s
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.extents)
            .fold(0, |acc, (&c, &e)| acc * e + c)
    }

    /// Index of integer coordinates that may fall outside the grid.
    pub fn checked_index(&self, coords: &[i64]) -> Option<usize> {
        let mut acc = 0usize;
        for (&c, &e) in coords.iter().zip(&self.extents) {
            if c < 0 || c as usize >= e {
                return None;
            }
            acc = acc * e + c as usize;
        }
        Some(acc)
    }

    pub fn coords(&self, mut index: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for axis in (0..self.dim()).rev() {
            c[axis] = index % self.extents[axis];
            index /= self.extents[axis];
        }
        c
    }

    pub fn center_coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.spacing
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        let c = self.coords(index);
        (0..self.dim())
            .map(|a| self.center_coord(a, c[a]))
            .collect()
    }

    pub fn cell_cube(&self, index: usize) -> Cube {
        Cube::new(self.center(index), 0.5 * self.spacing)
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + self.extents[axis] as f64 * self.spacing
    }

    /// Cell containing `x`, if inside the grid box (upper faces belong to the last cell).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut coords = [0i64; MAX_DIM];
        for axis in 0..self.dim() {
            let t = (x[axis] - self.origin[axis]) / self.spacing;
            if !(0.0..=self.extents[axis] as f64).contains(&t) {
                return None;
            }
            coords[axis] = (t.floor() as i64).min(self.extents[axis] as i64 - 1);
        }
        self.checked_index(&coords[..self.dim()])
    }

    /// Integer cell offset of `other`'s origin relative to `self`'s, when the
    /// two lattices coincide (same spacing, origins differing by whole cells).
    pub fn offset_of(&self, other: &GridSpec) -> Option<[i64; MAX_DIM]> {
        if self.dim() != other.dim() || self.spacing != other.spacing {
            return None;
        }
        let mut off = [0i64; MAX_DIM];
        for axis in 0..self.dim() {
            let t = (other.origin[axis] - self.origin[axis]) / self.spacing;
            let r = t.round();
            if (t - r).abs() > 1e-9 {
                return None;
            }
            off[axis] = r as i64;
        }
        Some(off)
    }

    /// Iterate over the cells of the index box `lo..=hi` (clamped to the grid).
    pub fn for_each_in_box(
        &self,
        lo: &[i64],
        hi: &[i64],
        mut f: impl FnMut(usize, [i64; MAX_DIM]),
    ) {
        let n = self.dim();
        let mut a = [0i64; MAX_DIM];
        let mut b = [0i64; MAX_DIM];
        for axis in 0..n {
            a[axis] = lo[axis].max(0);
            b[axis] = hi[axis].min(self.extents[axis] as i64 - 1);
            if a[axis] > b[axis] {
                return;
            }
        }
        let strides = self.strides();
        let mut cur = a;
        loop {
            let idx: usize = (0..n).map(|ax| cur[ax] as usize * strides[ax]).sum();
            f(idx, cur);
            let mut axis = n;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < b[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = a[axis];
            }
        }
    }

    /// Product grid `self × other` (axes of `self` first).
    pub fn product(&self, other: &GridSpec) -> Result<GridSpec> {
        if self.spacing != other.spacing {
            return Err(Error::Shape("product grids need equal spacing".into()));
        }
        let mut origin = self.origin.clone();
        origin.extend_from_slice(&other.origin);
        let mut extents = self.extents.clone();
        extents.extend_from_slice(&other.extents);
        GridSpec::new(origin, self.spacing, extents)
    }
}
