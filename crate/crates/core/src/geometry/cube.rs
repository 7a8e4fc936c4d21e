use serde::{Deserialize, Serialize};

/// Closed cube `Q(x, r) = { y : |y - x|_inf <= r }`, i.e. a ball of the uniform norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub half_side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, half_side: f64) -> Self {
        assert!(half_side > 0.0, "cube half side must be positive");
        Cube { center, half_side }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `lambda Q`: same center, half side scaled by `lambda`.
    pub fn dilate(&self, lambda: f64) -> Cube {
        Cube::new(self.center.clone(), self.half_side * lambda)
    }

    /// `Q* = (9/8) Q`, the support of the cube's bump.
    pub fn star(&self) -> Cube {
        self.dilate(9.0 / 8.0)
    }

    /// Diameter in the uniform norm.
    pub fn diam(&self) -> f64 {
        2.0 * self.half_side
    }

    pub fn volume(&self) -> f64 {
        self.diam().powi(self.dim() as i32)
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.center[axis] - self.half_side
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.center[axis] + self.half_side
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(xi, ci)| (xi - ci).abs() <= self.half_side)
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        self.center
            .iter()
            .zip(&other.center)
            .all(|(a, b)| (a - b).abs() <= self.half_side + other.half_side)
    }

    /// `self ⊆ other` for closed cubes.
    pub fn is_inside(&self, other: &Cube) -> bool {
        self.center
            .iter()
            .zip(&other.center)
            .all(|(a, b)| (a - b).abs() + self.half_side <= other.half_side)
    }

    /// Uniform-norm distance between two closed cubes (0 when they meet).
    pub fn distance(&self, other: &Cube) -> f64 {
        self.center
            .iter()
            .zip(&other.center)
            .map(|(a, b)| ((a - b).abs() - self.half_side - other.half_side).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `|x - y|_inf`
pub fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn euclid_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_is_nine_eighths() {
        let q = Cube::new(vec![1.0, -2.0], 0.5);
        let s = q.star();
        assert_eq!(s.center, q.center);
        assert_eq!(s.half_side, 0.5625);
        assert_eq!(q.diam(), 1.0);
        assert_eq!(q.volume(), 1.0);
    }

    #[test]
    fn distance_and_containment() {
        let a = Cube::new(vec![0.0, 0.0], 1.0);
        let b = Cube::new(vec![3.0, 0.5], 0.5);
        assert_eq!(a.distance(&b), 1.5);
        assert!(!a.intersects(&b));
        assert!(Cube::new(vec![0.5, 0.5], 0.5).is_inside(&a));
        assert!(a.contains(&[1.0, -1.0]));
        assert!(!a.contains(&[1.0 + 1e-12, 0.0]));
    }
}
