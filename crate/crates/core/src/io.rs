//! Binary mask and field formats, CSV export.
//!
//! All binary numbers are little-endian. Header: 8-byte magic, `u32` dim,
//! `dim` × `u32` extents, `dim` × `f64` origin, `f64` spacing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, GridSpec, MAX_DIM};
use crate::local::ScalarField;
use crate::product::ProductField;

pub const MASK_MAGIC: &[u8; 8] = b"SOBEXMSK";
pub const FIELD_MAGIC: &[u8; 8] = b"SOBEXFLD";

fn put_header(out: &mut Vec<u8>, magic: &[u8; 8], grid: &GridSpec) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &e in &grid.extents {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &o in &grid.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&grid.spacing.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<GridSpec> {
        if self.take(8)? != magic {
            return Err(Error::Format(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let dim = self.u32()? as usize;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Format(format!(
                "dimension {dim} not in 1..={MAX_DIM}"
            )));
        }
        let extents = (0..dim)
            .map(|_| self.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let origin = (0..dim).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let spacing = self.f64()?;
        GridSpec::new(origin, spacing, extents).map_err(|e| Error::Format(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_mask(mask: &DomainMask) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, MASK_MAGIC, mask.grid());
    out.extend_from_slice(mask.states());
    out
}

pub fn decode_mask(buf: &[u8]) -> Result<DomainMask> {
    let mut r = Reader { buf, pos: 0 };
    let grid = r.header(MASK_MAGIC)?;
    let states = r.take(grid.len())?.to_vec();
    r.finish()?;
    DomainMask::from_states(grid, states)
}

pub fn encode_field(u: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * u.values.len());
    put_header(&mut out, FIELD_MAGIC, &u.grid);
    for v in &u.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_values(r: &mut Reader, n: usize) -> Result<Vec<f64>> {
    let bytes = r.take(
        n.checked_mul(8)
            .ok_or_else(|| Error::Format("size overflow".into()))?,
    )?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode_field(buf: &[u8]) -> Result<ScalarField> {
    let mut r = Reader { buf, pos: 0 };
    let grid = r.header(FIELD_MAGIC)?;
    let values = read_values(&mut r, grid.len())?;
    r.finish()?;
    ScalarField::new(grid, values)
}

/// Field header with `dim = n + m`, then a `u32` split recording `n`, then samples.
pub fn encode_product(u: &ProductField) -> Result<Vec<u8>> {
    let grid = u.grid_x.product(&u.grid_y)?;
    let mut out = Vec::with_capacity(64 + 8 * u.values.len());
    put_header(&mut out, FIELD_MAGIC, &grid);
    out.extend_from_slice(&(u.grid_x.dim() as u32).to_le_bytes());
    for v in &u.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_product(buf: &[u8]) -> Result<ProductField> {
    let mut r = Reader { buf, pos: 0 };
    let grid = r.header(FIELD_MAGIC)?;
    let n = r.u32()? as usize;
    if n == 0 || n >= grid.dim() {
        return Err(Error::Format(format!(
            "split {n} invalid for dimension {}",
            grid.dim()
        )));
    }
    let values = read_values(&mut r, grid.len())?;
    r.finish()?;
    let gx = GridSpec::new(
        grid.origin[..n].to_vec(),
        grid.spacing,
        grid.extents[..n].to_vec(),
    )?;
    let gy = GridSpec::new(
        grid.origin[n..].to_vec(),
        grid.spacing,
        grid.extents[n..].to_vec(),
    )?;
    ProductField::new(gx, gy, values)
}

/// One row per cell: center coordinates, then the value.
pub fn field_csv(u: &ScalarField, out: &mut impl Write) -> std::io::Result<()> {
    let axes = ["x", "y", "z"];
    writeln!(out, "{},value", axes[..u.grid.dim()].join(","))?;
    for (i, v) in u.values.iter().enumerate() {
        for c in u.grid.center(i) {
            write!(out, "{c},")?;
        }
        writeln!(out, "{v}")?;
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<DomainMask> {
    decode_mask(&read(path)?)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    decode_field(&read(path)?)
}

pub fn read_product(path: &Path) -> Result<ProductField> {
    decode_product(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_header_layout() {
        let g = GridSpec::new(vec![-1.0, 0.5], 0.25, vec![3, 2]).unwrap();
        let m = DomainMask::from_states(g, vec![0, 1, 2, 1, 1, 0]).unwrap();
        let b = encode_mask(&m);
        assert_eq!(&b[..8], b"SOBEXMSK");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(b[36..44].try_into().unwrap()), 0.25);
        assert_eq!(b.len(), 44 + 6);
        assert_eq!(decode_mask(&b).unwrap(), m);
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = GridSpec::new(vec![0.0], 0.5, vec![4]).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0]);
        let mut b = encode_field(&u);
        assert!(decode_mask(&b).is_err());
        assert!(decode_field(&b[..b.len() - 1]).is_err());
        b.push(0);
        assert!(decode_field(&b).is_err());
        let mut bad = encode_field(&u);
        bad[0] = b'X';
        assert!(matches!(decode_field(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn product_split_roundtrip() {
        let gx = GridSpec::new(vec![0.0, 0.0], 0.5, vec![2, 3]).unwrap();
        let gy = GridSpec::new(vec![-1.0], 0.5, vec![4]).unwrap();
        let u = ProductField::new(gx, gy, (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        let b = encode_product(&u).unwrap();
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(decode_product(&b).unwrap(), u);
        // the same bytes minus the split are not a plain field
        assert!(decode_field(&b).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = GridSpec::new(vec![0.0, 0.0], 0.5, vec![2, 2]).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let mut out = Vec::new();
        field_csv(&u, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0.25,0.75,7.75");
    }

    proptest! {
        #[test]
        fn field_roundtrip(
            ext in proptest::collection::vec(1usize..6, 1..=3),
            origin in -10.0f64..10.0,
            spacing in 0.01f64..2.0,
            seed in any::<u64>(),
        ) {
            let g = GridSpec::new(vec![origin; ext.len()], spacing, ext).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let u = ScalarField::new(g, vals).unwrap();
            let back = decode_field(&encode_field(&u)).unwrap();
            prop_assert_eq!(back.grid, u.grid);
            prop_assert!(back.values.iter().zip(&u.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
