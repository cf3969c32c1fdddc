use std::f64::consts::{FRAC_PI_2, TAU};

use crate::geometry::{wrap_positive, Vec2};

/// Exact centerline piece: a straight segment or a circular arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Line {
        start: Vec2,
        end: Vec2,
    },
    /// Positive `sweep` runs counterclockwise.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Primitive {
    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Line { start, end } => start.distance(end),
            Primitive::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Point at parameter `t ∈ [0, 1]`.
    pub fn point_at(&self, t: f64) -> Vec2 {
        match *self {
            Primitive::Line { start, end } => start.lerp(end, t),
            Primitive::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => center + Vec2::from_angle(start_angle + sweep * t) * radius,
        }
    }

    pub fn heading_at(&self, t: f64) -> f64 {
        match *self {
            Primitive::Line { start, end } => (end - start).angle(),
            Primitive::Arc {
                start_angle, sweep, ..
            } => start_angle + sweep * t + FRAC_PI_2.copysign(sweep),
        }
    }

    pub fn start(&self) -> Vec2 {
        self.point_at(0.0)
    }

    pub fn end(&self) -> Vec2 {
        self.point_at(1.0)
    }

    /// The part of this primitive from parameter `t` to its end.
    pub fn trimmed_from(&self, t: f64) -> Primitive {
        match *self {
            Primitive::Line { start, end } => Primitive::Line {
                start: start.lerp(end, t),
                end,
            },
            Primitive::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => Primitive::Arc {
                center,
                radius,
                start_angle: start_angle + sweep * t,
                sweep: sweep * (1.0 - t),
            },
        }
    }

    /// Butt-capped stroke of total width `2·half_width`, inflated by `margin`.
    pub fn band_contains(&self, p: Vec2, half_width: f64, margin: f64) -> bool {
        match *self {
            Primitive::Line { start, end } => {
                let d = end - start;
                let len = d.norm();
                if len == 0.0 {
                    return false;
                }
                let dir = d * (1.0 / len);
                let rel = p - start;
                let along = rel.dot(dir);
                along >= -margin
                    && along <= len + margin
                    && rel.cross(dir).abs() <= half_width + margin
            }
            Primitive::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => ArcBand {
                center,
                radius,
                half_width,
                start_angle,
                sweep,
            }
            .contains(p, margin),
        }
    }

    /// Conservative bounding circle of the stroke.
    pub fn bounding_circle(&self, half_width: f64) -> (Vec2, f64) {
        match *self {
            Primitive::Line { start, end } => {
                (start.lerp(end, 0.5), 0.5 * start.distance(end) + half_width)
            }
            Primitive::Arc {
                center, radius, ..
            } => (center, radius + half_width),
        }
    }
}

/// Annular sector: points within `half_width` radially of a circular arc,
/// between the arc's end rays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcBand {
    pub center: Vec2,
    pub radius: f64,
    pub half_width: f64,
    pub start_angle: f64,
    pub sweep: f64,
}

impl ArcBand {
    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        let rel = p - self.center;
        let d2 = rel.norm_sq();
        let lo = (self.radius - self.half_width - margin).max(0.0);
        let hi = self.radius + self.half_width + margin;
        if d2 < lo * lo || d2 > hi * hi {
            return false;
        }
        let d = d2.sqrt();
        let span = self.sweep.abs();
        let slack = if d > 0.0 { margin / d } else { 0.0 };
        if span + slack >= TAU {
            return true;
        }
        let rel_angle = wrap_positive((rel.angle() - self.start_angle) * self.sweep.signum());
        rel_angle <= span + slack || rel_angle >= TAU - slack
    }
}
