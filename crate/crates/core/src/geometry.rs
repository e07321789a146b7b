use core::ops::{Add, Mul};

/// Points and vectors in model space.
pub type Point3 = nalgebra::Vector3<f64>;

/// Values that the subdivision rules can combine linearly: positions, or
/// scalar indicator fields when a rule is probed for its weights.
pub trait Affine: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
}

impl Affine for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Affine for Point3 {
    fn zero() -> Self {
        Point3::zeros()
    }
}

/// Arithmetic mean of a non-empty sequence.
pub(crate) fn mean<T: Affine>(items: impl IntoIterator<Item = T>) -> T {
    let mut acc = T::zero();
    let mut n = 0usize;
    for x in items {
        acc = acc + x;
        n += 1;
    }
    debug_assert!(n > 0, "mean of an empty set");
    acc * (1.0 / n as f64)
}

/// Axis-aligned box, closed on both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Self::new(first, first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}
