//! Planar geometry shared by the map, the rasterizer and the collision checks.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing at `angle` radians (counterclockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotated by +90°.
    pub fn perp_left(self) -> Self {
        Self { x: -self.y, y: self.x }
    }

    /// Rotated by -90°.
    pub fn perp_right(self) -> Self {
        Self { x: self.y, y: -self.x }
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (other - self).norm()
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

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position plus heading (radians, counterclockwise from +x).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn direction(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_positive(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_signed(angle: f64) -> f64 {
    let a = wrap_positive(angle);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Rectangle with arbitrary orientation; `heading` is the direction of the long axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    /// Unit vectors along the length and the width.
    pub fn axes(&self) -> (Vec2, Vec2) {
        let f = Vec2::from_angle(self.heading);
        (f, f.perp_left())
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let a = f * self.half_length;
        let b = l * self.half_width;
        [
            self.center + a + b,
            self.center - a + b,
            self.center - a - b,
            self.center + a - b,
        ]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    /// Closed containment test, inflated by `margin` on every side.
    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        let (f, l) = self.axes();
        self.contains_with_axes(p, f, l, margin)
    }

    #[inline]
    pub(crate) fn contains_with_axes(&self, p: Vec2, f: Vec2, l: Vec2, margin: f64) -> bool {
        let d = p - self.center;
        d.dot(f).abs() <= self.half_length + margin && d.dot(l).abs() <= self.half_width + margin
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let (f, l) = self.axes();
        let c = self.center.dot(axis);
        let r = self.half_length * f.dot(axis).abs() + self.half_width * l.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test with strictly positive overlap on every axis;
    /// rectangles that only touch do not overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let max_reach = self.bounding_radius() + other.bounding_radius();
        if (other.center - self.center).norm_sq() >= max_reach * max_reach {
            return false;
        }
        let (f1, l1) = self.axes();
        let (f2, l2) = other.axes();
        for axis in [f1, l1, f2, l2] {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            if a1 <= b0 || b1 <= a0 {
                return false;
            }
        }
        true
    }
}
