use super::{DomainMask, GridSpec, Region, MAX_DIM};

/// Summed-area table over the cells of a region: O(2^n) box counts.
#[derive(Clone, Debug)]
pub struct Occupancy {
    dim: usize,
    extents: [i64; MAX_DIM],
    strides: [usize; MAX_DIM],
    table: Vec<u32>,
}

impl Occupancy {
    pub fn new(mask: &DomainMask, region: Region) -> Self {
        Self::from_flags(mask.grid(), |i| mask.in_region(i, region))
    }

    pub fn from_flags(grid: &GridSpec, flag: impl Fn(usize) -> bool) -> Self {
        let n = grid.dim();
        let mut extents = [1i64; MAX_DIM];
        let mut padded = [1usize; MAX_DIM];
        for a in 0..n {
            extents[a] = grid.extents[a] as i64;
            padded[a] = grid.extents[a] + 1;
        }
        let mut strides = [0usize; MAX_DIM];
        let mut acc = 1;
        for a in (0..n).rev() {
            strides[a] = acc;
            acc *= padded[a];
        }
        let mut table = vec![0u32; acc];
        for idx in 0..grid.len() {
            if flag(idx) {
                let c = grid.coords(idx);
                let t: usize = (0..n).map(|a| (c[a] + 1) * strides[a]).sum();
                table[t] = 1;
            }
        }
        // prefix sums along each axis
        for a in 0..n {
            let s = strides[a];
            for t in 0..table.len() {
                let coord = (t / s) % padded[a];
                if coord > 0 {
                    table[t] += table[t - s];
                }
            }
        }
        Occupancy {
            dim: n,
            extents,
            strides,
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of flagged cells with index in the inclusive box `lo..=hi`.
    pub fn count(&self, lo: &[i64], hi: &[i64]) -> u32 {
        let n = self.dim;
        let mut a = [0usize; MAX_DIM];
        let mut b = [0usize; MAX_DIM];
        for ax in 0..n {
            let l = lo[ax].max(0);
            let h = hi[ax].min(self.extents[ax] - 1);
            if l > h {
                return 0;
            }
            a[ax] = l as usize; // padded index of the cell before `l`
            b[ax] = h as usize + 1;
        }
        let mut total: i64 = 0;
        for corner in 0..(1usize << n) {
            let mut t = 0;
            let mut sign = 1i64;
            for ax in 0..n {
                if corner >> ax & 1 == 1 {
                    t += a[ax] * self.strides[ax];
                    sign = -sign;
                } else {
                    t += b[ax] * self.strides[ax];
                }
            }
            total += sign * self.table[t] as i64;
        }
        total as u32
    }

    pub fn any(&self, lo: &[i64], hi: &[i64]) -> bool {
        self.count(lo, hi) > 0
    }

    /// Measure (in cells) of the flagged set inside the cube centred at cell
    /// `center` with half side `half` cells: cells strictly inside count fully,
    /// cells whose centers lie on a face count by the fraction inside.
    pub fn cube_measure(&self, center: &[i64], half: i64) -> f64 {
        let n = self.dim;
        let mut total = 0.0;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        // 3^n pieces: lower face slab, interior, upper face slab per axis
        for piece in 0..3usize.pow(n as u32) {
            let mut p = piece;
            let mut weight = 1.0;
            for ax in 0..n {
                match p % 3 {
                    0 => {
                        lo[ax] = center[ax] - half;
                        hi[ax] = lo[ax];
                        weight *= 0.5;
                    }
                    1 => {
                        lo[ax] = center[ax] - half + 1;
                        hi[ax] = center[ax] + half - 1;
                    }
                    _ => {
                        lo[ax] = center[ax] + half;
                        hi[ax] = lo[ax];
                        weight *= 0.5;
                    }
                }
                p /= 3;
            }
            if (0..n).all(|ax| lo[ax] <= hi[ax]) {
                total += weight * self.count(&lo[..n], &hi[..n]) as f64;
            }
        }
        total
    }
}
