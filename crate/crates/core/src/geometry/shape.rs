//! Constructive-geometry descriptions of open domains.
//!
//! JSON form, e.g. the slit disk:
//!
//! ```json
//! {"op": "difference", "args": [
//!     {"prim": "ball", "c": [0, 0], "r": 1},
//!     {"prim": "box", "lo": [0, -0.001], "hi": [1, 0.001]}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Prim(Primitive),
    Op(Combination),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prim", rename_all = "lowercase")]
pub enum Primitive {
    /// Open Euclidean ball.
    Ball { c: Vec<f64>, r: f64 },
    /// Open axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ x : normal · x < offset }`
    #[serde(alias = "halfplane")]
    Halfspace { normal: Vec<f64>, offset: f64 },
    /// Interior of a simple polygon (2-D only).
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsgOp {
    Union,
    Intersection,
    /// First argument minus the union of the rest.
    Difference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub op: CsgOp,
    pub args: Vec<Shape>,
}

pub type BoundingBox = (Vec<f64>, Vec<f64>);

impl Shape {
    pub fn ball(c: &[f64], r: f64) -> Shape {
        Shape::Prim(Primitive::Ball { c: c.to_vec(), r })
    }

    pub fn cuboid(lo: &[f64], hi: &[f64]) -> Shape {
        Shape::Prim(Primitive::Box {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        })
    }

    pub fn halfspace(normal: &[f64], offset: f64) -> Shape {
        Shape::Prim(Primitive::Halfspace {
            normal: normal.to_vec(),
            offset,
        })
    }

    pub fn polygon(vertices: Vec<[f64; 2]>) -> Shape {
        Shape::Prim(Primitive::Polygon { vertices })
    }

    pub fn union(args: Vec<Shape>) -> Shape {
        Shape::Op(Combination {
            op: CsgOp::Union,
            args,
        })
    }

    pub fn intersection(args: Vec<Shape>) -> Shape {
        Shape::Op(Combination {
            op: CsgOp::Intersection,
            args,
        })
    }

    pub fn difference(args: Vec<Shape>) -> Shape {
        Shape::Op(Combination {
            op: CsgOp::Difference,
            args,
        })
    }

    pub fn from_json(text: &str) -> Result<Shape> {
        let shape: Shape = serde_json::from_str(text)?;
        shape.validate()?;
        Ok(shape)
    }

    pub fn load(path: &Path) -> Result<Shape> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Shape::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("shape serializes")
    }

    /// Spatial dimension, or `None` for an empty combination.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Shape::Prim(Primitive::Ball { c, .. }) => Some(c.len()),
            Shape::Prim(Primitive::Box { lo, .. }) => Some(lo.len()),
            Shape::Prim(Primitive::Halfspace { normal, .. }) => Some(normal.len()),
            Shape::Prim(Primitive::Polygon { .. }) => Some(2),
            Shape::Op(c) => c.args.first().and_then(Shape::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match self {
            Shape::Prim(Primitive::Ball { r, .. }) if !(*r > 0.0) => {
                bad("ball radius must be positive")
            }
            Shape::Prim(Primitive::Box { lo, hi }) if lo.len() != hi.len() => {
                bad("box corners differ in dimension")
            }
            Shape::Prim(Primitive::Polygon { vertices }) if vertices.len() < 3 => {
                bad("polygon needs at least 3 vertices")
            }
            Shape::Prim(_) => Ok(()),
            Shape::Op(c) => {
                if c.args.is_empty() {
                    return bad("combination without arguments");
                }
                let d = c.args[0].dim();
                for a in &c.args {
                    a.validate()?;
                    if a.dim() != d {
                        return bad("combination arguments differ in dimension");
                    }
                }
                Ok(())
            }
        }
    }

    /// Membership in the open set described by the shape.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Shape::Prim(p) => p.contains(x),
            Shape::Op(c) => match c.op {
                CsgOp::Union => c.args.iter().any(|s| s.contains(x)),
                CsgOp::Intersection => c.args.iter().all(|s| s.contains(x)),
                CsgOp::Difference => {
                    c.args[0].contains(x) && !c.args[1..].iter().any(|s| s.contains(x))
                }
            },
        }
    }

    /// Axis-aligned bounding box; `None` when the shape is unbounded.
    pub fn bbox(&self) -> Option<BoundingBox> {
        match self {
            Shape::Prim(Primitive::Ball { c, r }) => Some((
                c.iter().map(|v| v - r).collect(),
                c.iter().map(|v| v + r).collect(),
            )),
            Shape::Prim(Primitive::Box { lo, hi }) => Some((lo.clone(), hi.clone())),
            Shape::Prim(Primitive::Halfspace { .. }) => None,
            Shape::Prim(Primitive::Polygon { vertices }) => {
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for v in vertices {
                    for a in 0..2 {
                        lo[a] = lo[a].min(v[a]);
                        hi[a] = hi[a].max(v[a]);
                    }
                }
                Some((lo, hi))
            }
            Shape::Op(c) => match c.op {
                CsgOp::Difference => c.args[0].bbox(),
                CsgOp::Union => {
                    let mut acc: Option<BoundingBox> = None;
                    for a in &c.args {
                        let b = a.bbox()?;
                        acc = Some(match acc {
                            None => b,
                            Some((lo, hi)) => (
                                lo.iter().zip(&b.0).map(|(p, q)| p.min(*q)).collect(),
                                hi.iter().zip(&b.1).map(|(p, q)| p.max(*q)).collect(),
                            ),
                        });
                    }
                    acc
                }
                CsgOp::Intersection => {
                    let mut acc: Option<BoundingBox> = None;
                    for b in c.args.iter().filter_map(Shape::bbox) {
                        acc = Some(match acc {
                            None => b,
                            Some((lo, hi)) => (
                                lo.iter().zip(&b.0).map(|(p, q)| p.max(*q)).collect(),
                                hi.iter().zip(&b.1).map(|(p, q)| p.min(*q)).collect(),
                            ),
                        });
                    }
                    acc
                }
            },
        }
    }

    /// Image under the planar rigid motion `x ↦ R(angle) x + shift` (2-D shapes only).
    /// Boxes become polygons.
    pub fn rigid_2d(&self, angle: f64, shift: [f64; 2]) -> Shape {
        let (s, c) = angle.sin_cos();
        let map = |p: &[f64]| -> [f64; 2] {
            [
                c * p[0] - s * p[1] + shift[0],
                s * p[0] + c * p[1] + shift[1],
            ]
        };
        match self {
            Shape::Prim(Primitive::Ball { c: center, r }) => Shape::ball(&map(center), *r),
            Shape::Prim(Primitive::Box { lo, hi }) => Shape::polygon(vec![
                map(&[lo[0], lo[1]]),
                map(&[hi[0], lo[1]]),
                map(&[hi[0], hi[1]]),
                map(&[lo[0], hi[1]]),
            ]),
            Shape::Prim(Primitive::Halfspace { normal, offset }) => {
                let n = [c * normal[0] - s * normal[1], s * normal[0] + c * normal[1]];
                Shape::halfspace(&n, offset + n[0] * shift[0] + n[1] * shift[1])
            }
            Shape::Prim(Primitive::Polygon { vertices }) => {
                Shape::polygon(vertices.iter().map(|v| map(v)).collect())
            }
            Shape::Op(comb) => Shape::Op(Combination {
                op: comb.op,
                args: comb.args.iter().map(|a| a.rigid_2d(angle, shift)).collect(),
            }),
        }
    }
}

impl Primitive {
    fn contains(&self, x: &[f64]) -> bool {
        match self {
            Primitive::Ball { c, r } => {
                c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r * r
            }
            Primitive::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *a < *v && *v < *b),
            Primitive::Halfspace { normal, offset } => {
                normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() < *offset
            }
            Primitive::Polygon { vertices } => polygon_contains(vertices, x[0], x[1]),
        }
    }
}

/// Crossing-number test.
fn polygon_contains(vertices: &[[f64; 2]], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > py) != (yj > py) {
            let x_cross = xj + (py - yj) * (xi - xj) / (yi - yj);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_slit_disk() {
        let s = Shape::from_json(
            r#"{"op":"difference","args":[{"prim":"ball","c":[0,0],"r":1},
                {"prim":"box","lo":[0,-0.01],"hi":[1,0.01]}]}"#,
        )
        .unwrap();
        assert!(s.contains(&[0.5, 0.5]));
        assert!(!s.contains(&[0.5, 0.0]));
        assert!(s.contains(&[-0.5, 0.0]));
        assert_eq!(s.bbox().unwrap(), (vec![-1.0, -1.0], vec![1.0, 1.0]));
        let again = Shape::from_json(&s.to_json()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn polygon_and_halfspace() {
        let tri = Shape::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(tri.contains(&[0.2, 0.2]));
        assert!(!tri.contains(&[0.6, 0.6]));
        let hp = Shape::from_json(r#"{"prim":"halfplane","normal":[0,1],"offset":0}"#).unwrap();
        assert!(hp.contains(&[3.0, -1.0]));
        assert!(hp.bbox().is_none());
        let clipped = Shape::intersection(vec![hp, Shape::cuboid(&[-1.0, -1.0], &[1.0, 1.0])]);
        assert_eq!(clipped.bbox().unwrap(), (vec![-1.0, -1.0], vec![1.0, 1.0]));
    }

    #[test]
    fn rigid_motion_moves_points() {
        let b = Shape::cuboid(&[0.0, 0.0], &[2.0, 1.0]);
        let r = b.rigid_2d(std::f64::consts::FRAC_PI_2, [1.0, 0.0]);
        // (1.5, 0.5) ↦ (-0.5, 1.5) + (1, 0)
        assert!(r.contains(&[0.5, 1.5]));
        assert!(!r.contains(&[1.5, 0.5]));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let s = Shape::union(vec![
            Shape::ball(&[0.0], 1.0),
            Shape::ball(&[0.0, 0.0], 1.0),
        ]);
        assert!(s.validate().is_err());
    }
}
