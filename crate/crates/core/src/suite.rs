//! Closed-form test functions with exact first derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, Region};
use crate::local::ScalarField;

type Func = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(&[f64]) -> [f64; 3] + Send + Sync>;

#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Func,
    pub grad: Grad,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .finish()
    }
}

/// How the input is sampled on the boundary layer of a mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryFill {
    /// Sample the generator on every closed cell.
    #[default]
    Trace,
    /// Zero on the layer, generator on open cells.
    Zero,
}

impl TestFunction {
    fn new(
        name: &str,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> [f64; 3] + Send + Sync + 'static,
    ) -> Self {
        TestFunction {
            name: name.into(),
            f: Arc::new(f),
            grad: Arc::new(grad),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 3] {
        (self.grad)(x)
    }

    pub fn sample(&self, mask: &DomainMask, fill: BoundaryFill) -> ScalarField {
        let region = match fill {
            BoundaryFill::Trace => Region::Closed,
            BoundaryFill::Zero => Region::Open,
        };
        ScalarField::sample_on(mask, region, |x| self.eval(x))
    }

    /// `∂_axis u` sampled the same way as [`TestFunction::sample`].
    pub fn sample_derivative(
        &self,
        mask: &DomainMask,
        fill: BoundaryFill,
        axis: usize,
    ) -> ScalarField {
        let region = match fill {
            BoundaryFill::Trace => Region::Closed,
            BoundaryFill::Zero => Region::Open,
        };
        ScalarField::sample_on(mask, region, |x| self.gradient(x)[axis])
    }

    /// Reorder coordinates: `g(x) = f(x[perm[0]], x[perm[1]], ...)`.
    pub fn permuted(&self, perm: Vec<usize>) -> TestFunction {
        let f = self.f.clone();
        let g = self.grad.clone();
        let p1 = perm.clone();
        TestFunction {
            name: format!("{}∘perm", self.name),
            f: Arc::new(move |x| f(&gather(x, &p1))),
            grad: Arc::new(move |x| {
                let d = g(&gather(x, &perm));
                let mut out = [0.0; 3];
                for (i, &p) in perm.iter().enumerate() {
                    out[p] = d[i];
                }
                out
            }),
        }
    }
}

fn gather(x: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&p| x[p]).collect()
}

fn xy(x: &[f64]) -> (f64, f64) {
    (x[0], if x.len() > 1 { x[1] } else { 0.3 })
}

/// First two derivatives only; unused axes stay zero. In one dimension the
/// second coordinate is frozen at 0.3 and its derivative dropped.
fn g2(x: &[f64], dx: f64, dy: f64) -> [f64; 3] {
    if x.len() > 1 {
        [dx, dy, 0.0]
    } else {
        [dx, 0.0, 0.0]
    }
}

/// Ten smooth functions of the first two coordinates.
pub fn smooth_suite() -> Vec<TestFunction> {
    vec![
        TestFunction::new("one", |_| 1.0, |x| g2(x, 0.0, 0.0)),
        TestFunction::new("x", |x| x[0], |x| g2(x, 1.0, 0.0)),
        TestFunction::new(
            "x2_minus_y",
            |x| {
                let (a, b) = xy(x);
                a * a - b
            },
            |x| g2(x, 2.0 * x[0], -1.0),
        ),
        TestFunction::new(
            "r2",
            |x| {
                let (a, b) = xy(x);
                a * a + b * b
            },
            |x| {
                let (a, b) = xy(x);
                g2(x, 2.0 * a, 2.0 * b)
            },
        ),
        TestFunction::new(
            "xy_plus_x",
            |x| {
                let (a, b) = xy(x);
                a * b + a
            },
            |x| {
                let (a, b) = xy(x);
                g2(x, b + 1.0, a)
            },
        ),
        TestFunction::new(
            "sin_sin",
            |x| {
                let (a, b) = xy(x);
                (PI * a).sin() * (PI * b).sin()
            },
            |x| {
                let (a, b) = xy(x);
                g2(
                    x,
                    PI * (PI * a).cos() * (PI * b).sin(),
                    PI * (PI * a).sin() * (PI * b).cos(),
                )
            },
        ),
        TestFunction::new(
            "cos2_plus_y",
            |x| {
                let (a, b) = xy(x);
                (2.0 * PI * a).cos() + b
            },
            |x| g2(x, -2.0 * PI * (2.0 * PI * x[0]).sin(), 1.0),
        ),
        TestFunction::new(
            "exp",
            |x| {
                let (a, b) = xy(x);
                (a + b - 1.0).exp()
            },
            |x| {
                let (a, b) = xy(x);
                let e = (a + b - 1.0).exp();
                g2(x, e, e)
            },
        ),
        TestFunction::new(
            "bump",
            |x| {
                let (a, b) = xy(x);
                let r2 = (a - 0.4).powi(2) + (b - 0.6).powi(2);
                (-r2 / 0.1).exp()
            },
            |x| {
                let (a, b) = xy(x);
                let r2 = (a - 0.4).powi(2) + (b - 0.6).powi(2);
                let e = (-r2 / 0.1).exp();
                g2(x, -2.0 * (a - 0.4) / 0.1 * e, -2.0 * (b - 0.6) / 0.1 * e)
            },
        ),
        TestFunction::new(
            "cubic",
            |x| {
                let (a, b) = xy(x);
                (a - 0.3).powi(3) - b * b * a
            },
            |x| {
                let (a, b) = xy(x);
                g2(x, 3.0 * (a - 0.3).powi(2) - b * b, -2.0 * b * a)
            },
        ),
    ]
}

fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t))
    }
}

/// Angle in `[0, 2π)` measured from the positive x axis.
fn angle(a: f64, b: f64) -> f64 {
    let t = b.atan2(a);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Functions jumping across the positive x axis: close to 1 just above it,
/// close to 0 just below, smooth elsewhere (cut off near the origin).
pub fn jump_suite() -> Vec<TestFunction> {
    let make = |name: &str, r0: f64, r1: f64, k: f64| {
        let f = move |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let r = a.hypot(b);
            let (s, _) = smoothstep((r - r0) / (r1 - r0));
            (1.0 - angle(a, b) / (2.0 * PI)) * s * (1.0 + k * a)
        };
        let g = move |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let r = a.hypot(b).max(1e-300);
            let (s, ds) = smoothstep((r - r0) / (r1 - r0));
            let ds = ds / (r1 - r0);
            let th = 1.0 - angle(a, b) / (2.0 * PI);
            // ∂θ/∂a = -b/r², ∂θ/∂b = a/r²
            let dth = [b / (2.0 * PI * r * r), -a / (2.0 * PI * r * r)];
            let m = 1.0 + k * a;
            [
                dth[0] * s * m + th * ds * a / r * m + th * s * k,
                dth[1] * s * m + th * ds * b / r * m,
                0.0,
            ]
        };
        TestFunction::new(name, f, g)
    };
    vec![
        make("angular_jump", 0.25, 0.5, 0.0),
        make("angular_jump_wide", 0.1, 0.3, 0.0),
        make("angular_jump_tilted", 0.25, 0.5, 0.5),
    ]
}

pub fn by_name(name: &str) -> Result<Vec<TestFunction>> {
    match name {
        "smooth" => Ok(smooth_suite()),
        "jump" => Ok(jump_suite()),
        other => Err(Error::InvalidArgument(format!("unknown suite {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(fun: &TestFunction, x: &[f64]) {
        let g = fun.gradient(x);
        for a in 0..x.len() {
            let errs: Vec<f64> = [1e-3, 5e-4]
                .iter()
                .map(|&e| {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[a] += e;
                    xm[a] -= e;
                    ((fun.eval(&xp) - fun.eval(&xm)) / (2.0 * e) - g[a]).abs()
                })
                .collect();
            // second order: halving the step quarters the error
            assert!(
                errs[1] <= 0.3 * errs[0] + 1e-8,
                "{} axis {a}: {errs:?}",
                fun.name
            );
        }
    }

    #[test]
    fn derivatives_are_second_order_consistent() {
        for fun in smooth_suite() {
            for x in [[0.2, 0.7], [0.9, 0.1], [-0.4, 0.55]] {
                check(&fun, &x);
            }
            check(&fun, &[0.37]);
        }
        for fun in jump_suite() {
            for x in [[0.2, 0.7], [-0.5, -0.3], [0.4, -0.2], [0.05, 0.4]] {
                check(&fun, &x);
            }
        }
    }

    #[test]
    fn jump_values_across_the_axis() {
        let f = &jump_suite()[0];
        assert!((f.eval(&[0.8, 1e-9]) - 1.0).abs() < 1e-6);
        assert!(f.eval(&[0.8, -1e-9]).abs() < 1e-6);
        assert_eq!(f.eval(&[0.1, 0.1]), 0.0);
    }

    #[test]
    fn permutation_swaps_axes() {
        let f = &smooth_suite()[4];
        let g = f.permuted(vec![1, 0]);
        let x = [0.3, 0.8];
        assert_eq!(g.eval(&x), f.eval(&[0.8, 0.3]));
        assert_eq!(g.gradient(&x)[0], f.gradient(&[0.8, 0.3])[1]);
    }
}
