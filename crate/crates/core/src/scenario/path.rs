use std::f64::consts::TAU;

use super::map::{RoundaboutMap, LEG_COUNT};
use super::primitive::Primitive;
use super::ScenarioError;
use crate::geometry::{wrap_positive, OrientedRect, Pose, Vec2};

/// A primitive together with the polyline vertices sampled from it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPiece {
    pub primitive: Primitive,
    pub first_vertex: usize,
    /// Number of polyline segments the primitive was split into.
    pub segments: usize,
}

/// Arc-length parameterized route from an entry lane to an exit lane.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    pub entry_id: usize,
    pub exit_id: usize,
    pub points: Vec<Vec2>,
    pub cum_length: Vec<f64>,
    pub total_length: f64,
    pub lane_width: f64,
    pub pieces: Vec<PathPiece>,
    /// Arc position where the path joins the ring centerline.
    pub merge_s: f64,
    /// Arc position where the path leaves the ring centerline.
    pub diverge_s: f64,
}

/// Entry leg → entry curve → counterclockwise ring arc → exit curve → exit leg.
///
/// When `entry_id == exit_id` the ring arc covers the full loop minus the
/// junction offsets.
pub fn path_for(
    map: &RoundaboutMap,
    entry_id: usize,
    exit_id: usize,
    sample_step: f64,
) -> Result<PathSpec, ScenarioError> {
    if entry_id >= LEG_COUNT || exit_id >= LEG_COUNT {
        return Err(ScenarioError::InvalidLeg(entry_id.max(exit_id)));
    }
    if !(sample_step.is_finite() && sample_step > 0.0) {
        return Err(ScenarioError::InvalidGeometry(format!(
            "sample_step must be positive, got {sample_step}"
        )));
    }
    let entry = &map.legs[entry_id];
    let exit = &map.legs[exit_id];
    let mut sweep = wrap_positive(exit.diverge_angle - entry.merge_angle);
    if sweep == 0.0 {
        sweep = TAU;
    }
    let ring = Primitive::Arc {
        center: map.ring_center,
        radius: map.centerline_radius,
        start_angle: entry.merge_angle,
        sweep,
    };
    let primitives = [
        entry.entry_lane,
        entry.entry_curve,
        ring,
        exit.exit_curve,
        exit.exit_lane,
    ];

    let mut points = Vec::new();
    let mut pieces = Vec::with_capacity(primitives.len());
    for prim in primitives {
        let segments = ((prim.length() / sample_step).ceil() as usize).max(1);
        let first_vertex = points.len().saturating_sub(1);
        let start = if points.is_empty() { 0 } else { 1 };
        for i in start..=segments {
            points.push(prim.point_at(i as f64 / segments as f64));
        }
        pieces.push(PathPiece {
            primitive: prim,
            first_vertex,
            segments,
        });
    }
    let mut cum_length = Vec::with_capacity(points.len());
    cum_length.push(0.0);
    for w in points.windows(2) {
        let last = *cum_length.last().unwrap();
        cum_length.push(last + w[0].distance(w[1]));
    }
    let total_length = *cum_length.last().unwrap();
    let merge_s = cum_length[pieces[2].first_vertex];
    let diverge_s = cum_length[pieces[3].first_vertex];
    Ok(PathSpec {
        entry_id,
        exit_id,
        points,
        cum_length,
        total_length,
        lane_width: map.lane_width,
        pieces,
        merge_s,
        diverge_s,
    })
}

impl PathSpec {
    /// Index `i` of the segment `[points[i], points[i+1]]` holding arc position
    /// `s`. A vertex belongs to its outgoing segment; the end belongs to the
    /// last segment.
    pub fn segment_index(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        let idx = self.cum_length.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(last)
    }

    /// Position and heading at arc position `s`, interpolated linearly along
    /// the polyline.
    pub fn arc_point(&self, s: f64) -> Result<Pose, ScenarioError> {
        if !(0.0..=self.total_length).contains(&s) {
            return Err(ScenarioError::ArcOutOfRange {
                s,
                total: self.total_length,
            });
        }
        Ok(self.pose_at(s))
    }

    /// Like [`arc_point`](Self::arc_point) but clamps `s` into range.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.total_length);
        let i = self.segment_index(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cum_length[i + 1] - self.cum_length[i];
        let frac = ((s - self.cum_length[i]) / seg).clamp(0.0, 1.0);
        Pose {
            position: a + (b - a) * frac,
            heading: (b - a).angle(),
        }
    }

    /// Piece index and primitive parameter for arc position `s`.
    pub fn primitive_param(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total_length);
        let i = self.segment_index(s);
        let k = self
            .pieces
            .iter()
            .rposition(|p| p.first_vertex <= i)
            .unwrap_or(0);
        let piece = &self.pieces[k];
        let seg = self.cum_length[i + 1] - self.cum_length[i];
        let frac = ((s - self.cum_length[i]) / seg).clamp(0.0, 1.0);
        let t = ((i - piece.first_vertex) as f64 + frac) / piece.segments as f64;
        (k, t.min(1.0))
    }

    /// The exact primitives covering `[s, total_length]`.
    pub fn remaining_primitives(&self, s: f64) -> Vec<Primitive> {
        let (k, t) = self.primitive_param(s);
        let mut out = Vec::with_capacity(self.pieces.len() - k);
        out.push(self.pieces[k].primitive.trimmed_from(t));
        out.extend(self.pieces[k + 1..].iter().map(|p| p.primitive));
        out
    }

    /// Lane-width rectangles covering the polyline between `s0` and `s1`.
    pub fn band_rects(&self, s0: f64, s1: f64, width: f64) -> Vec<OrientedRect> {
        let s0 = s0.clamp(0.0, self.total_length);
        let s1 = s1.clamp(0.0, self.total_length);
        let mut rects = Vec::new();
        if s1 <= s0 {
            return rects;
        }
        let mut i = self.segment_index(s0);
        while i + 1 < self.points.len() && self.cum_length[i] < s1 {
            let lo = self.cum_length[i].max(s0);
            let hi = self.cum_length[i + 1].min(s1);
            if hi > lo {
                let a = self.pose_at(lo).position;
                let b = self.pose_at(hi).position;
                let heading = (self.points[i + 1] - self.points[i]).angle();
                rects.push(OrientedRect::new(a.lerp(b, 0.5), heading, hi - lo, width));
            }
            i += 1;
        }
        rects
    }

    /// Closest point of the polyline restricted to `(s_min, s_max]`, as
    /// `(arc position, lateral distance)`.
    pub fn project(&self, p: Vec2, s_min: f64, s_max: f64) -> Option<(f64, f64)> {
        let s_max = s_max.min(self.total_length);
        if s_max <= s_min {
            return None;
        }
        let mut best: Option<(f64, f64)> = None;
        let mut i = self.segment_index(s_min.max(0.0));
        while i + 1 < self.points.len() && self.cum_length[i] <= s_max {
            let a = self.points[i];
            let d = self.points[i + 1] - a;
            let len2 = d.norm_sq();
            let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
            let s = self.cum_length[i] + t * (self.cum_length[i + 1] - self.cum_length[i]);
            if s > s_min && s <= s_max {
                let dist = p.distance(a + d * t);
                if best.is_none_or(|(_, bd)| dist < bd) {
                    best = Some((s, dist));
                }
            }
            i += 1;
        }
        best
    }

    pub fn is_entering(&self, s: f64, half_length: f64) -> bool {
        s - half_length < self.merge_s
    }

    /// Fully past the merge point and not yet past the diverge point.
    pub fn is_on_ring(&self, s: f64, half_length: f64) -> bool {
        s - half_length >= self.merge_s && s < self.diverge_s
    }
}
