//! Compressed row storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows of `u32` items, e.g. cell lists per cube.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Groups {
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl Groups {
    pub fn from_rows(rows: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let mut offsets = vec![0];
        let mut items = Vec::new();
        for r in rows {
            items.extend_from_slice(&r);
            offsets.push(items.len());
        }
        Groups { offsets, items }
    }

    /// Bucket `keys[i] = k` into row `k`; each row lists the `i` in increasing order.
    pub fn bucket(keys: &[usize], rows: usize) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        for &k in keys {
            offsets[k + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut fill = offsets.clone();
        let mut items = vec![0u32; keys.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i as u32;
            fill[k] += 1;
        }
        Groups { offsets, items }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.items[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }
}

/// Sparse matrix in CSR layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(ncols: usize, rows: impl IntoIterator<Item = Vec<(u32, f64)>>) -> Self {
        let mut m = CsrMatrix {
            ncols,
            offsets: vec![0],
            ..Default::default()
        };
        for r in rows {
            for (c, v) in r {
                debug_assert!((c as usize) < ncols);
                m.cols.push(c);
                m.vals.push(v);
            }
            m.offsets.push(m.cols.len());
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let s = self.offsets[r]..self.offsets[r + 1];
        (&self.cols[s.clone()], &self.vals[s])
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.nrows())
            .map(|r| self.offsets[r + 1] - self.offsets[r])
            .max()
            .unwrap_or(0)
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(r);
        c.iter().zip(v).map(|(&c, &v)| v * x[c as usize]).sum()
    }

    /// `row_dot` for a row of nonnegative weights, clamped to the hull of the
    /// entries it touches (and 0 when the weights sum below 1), so rounding
    /// can never leave the range of a convex combination.
    pub fn convex_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(r);
        let mut sum = 0.0;
        let mut wsum = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&c, &v) in c.iter().zip(v) {
            let xc = x[c as usize];
            sum += v * xc;
            wsum += v;
            lo = lo.min(xc);
            hi = hi.max(xc);
        }
        if c.is_empty() {
            return 0.0;
        }
        if wsum < 1.0 {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        sum.clamp(lo, hi)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Shape(format!(
                "vector of length {} for {} columns",
                x.len(),
                self.ncols
            )));
        }
        Ok((0..self.nrows()).map(|r| self.row_dot(r, x)).collect())
    }

    pub fn convex_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Shape(format!(
                "vector of length {} for {} columns",
                x.len(),
                self.ncols
            )));
        }
        Ok((0..self.nrows()).map(|r| self.convex_dot(r, x)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_groups_keys() {
        let g = Groups::bucket(&[2, 0, 2, 1], 4);
        assert_eq!(g.row(0), &[1]);
        assert_eq!(g.row(2), &[0, 2]);
        assert!(g.row(3).is_empty());
        assert_eq!(g.total(), 4);
    }

    #[test]
    fn matvec() {
        let m = CsrMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -1.0)]]);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![7.0, 0.0, -2.0]);
        assert_eq!(m.max_row_len(), 2);
        assert!(m.mul_vec(&[1.0]).is_err());
    }

    #[test]
    fn convex_rows_stay_in_range() {
        let w = 0.1;
        let m = CsrMatrix::from_rows(
            3,
            vec![
                vec![(0, w); 10]
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| ((i % 3) as u32, e.1))
                    .collect(),
                vec![(1, 0.5)],
                vec![],
            ],
        );
        let x = [0.7, 0.7, 0.7];
        let y = m.convex_mul_vec(&x).unwrap();
        assert!(y[0] <= 0.7 && y[0] >= 0.7 - 1e-15);
        assert_eq!(y[1], 0.35);
        assert_eq!(y[2], 0.0);
        assert_eq!(m.convex_dot(1, &[-1.0, -4.0, 0.0]), -2.0);
    }
}
