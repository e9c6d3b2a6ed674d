//! Minimal 2D vector types: integer lattice vectors and floating-point
//! points/slopes. Kept deliberately small — the solver only ever needs
//! component access, dot products and a few norms.

use std::ops::{Add, Mul, Neg, Sub};

/// Lattice vector with integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IVec2 {
    pub x: i64,
    pub y: i64,
}

/// Point or slope in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl IVec2 {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: IVec2) -> i64 {
        self.x * other.x + self.y * other.y
    }

    /// Determinant of the 2x2 matrix with columns `self`, `other`.
    pub fn det(self, other: IVec2) -> i64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_inf(self) -> i64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn norm_l2(self) -> f64 {
        ((self.x * self.x + self.y * self.y) as f64).sqrt()
    }

    /// True when the coordinates are coprime (gcd 1), i.e. the vector is
    /// not a nontrivial integer multiple of a shorter lattice vector.
    pub fn is_irreducible(self) -> bool {
        gcd(self.x.unsigned_abs(), self.y.unsigned_abs()) == 1
    }

    pub fn as_vec2(self) -> Vec2 {
        Vec2::new(self.x as f64, self.y as f64)
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_l2(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_l1(self) -> f64 {
        self.x.abs() + self.y.abs()
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Add for IVec2 {
    type Output = IVec2;
    fn add(self, o: IVec2) -> IVec2 {
        IVec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for IVec2 {
    type Output = IVec2;
    fn sub(self, o: IVec2) -> IVec2 {
        IVec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for IVec2 {
    type Output = IVec2;
    fn neg(self) -> IVec2 {
        IVec2::new(-self.x, -self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        self.scale(s)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
