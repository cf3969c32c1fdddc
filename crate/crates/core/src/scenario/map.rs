use serde::{Deserialize, Serialize};

use super::primitive::{ArcBand, Primitive};
use super::ScenarioError;
use crate::geometry::{OrientedRect, Vec2};

/// Number of legs on the roundabout.
pub const LEG_COUNT: usize = 3;

/// User-facing geometry parameters; all lengths in meters, angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub ring_center: [f64; 2],
    /// Outer edge of the circulating carriageway.
    pub ring_radius: f64,
    pub lane_width: f64,
    pub leg_length: f64,
    pub leg_angles_deg: Vec<f64>,
    /// Radius of the curve joining a leg lane to the ring centerline.
    pub junction_radius: f64,
    pub sample_step: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            ring_center: [0.0, 0.0],
            ring_radius: 14.0,
            lane_width: 4.0,
            leg_length: 25.0,
            leg_angles_deg: vec![90.0, 210.0, 330.0],
            junction_radius: 6.0,
            sample_step: 0.5,
        }
    }
}

/// One leg: a two-lane straight road meeting the ring at `anchor_angle`.
///
/// The entry lane sits on the counterclockwise side of the leg axis so that
/// entering traffic turns right into the counterclockwise ring.
#[derive(Clone, Debug, PartialEq)]
pub struct Leg {
    pub anchor_angle: f64,
    pub length: f64,
    /// Straight entry lane, far end to the start of the entry curve.
    pub entry_lane: Primitive,
    pub entry_curve: Primitive,
    pub exit_curve: Primitive,
    /// Straight exit lane, end of the exit curve to the far end.
    pub exit_lane: Primitive,
    /// Ring angle where entering traffic joins the ring centerline.
    pub merge_angle: f64,
    /// Ring angle where exiting traffic leaves the ring centerline.
    pub diverge_angle: f64,
    pub rect: OrientedRect,
}

/// A closed piece of drivable surface.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Annulus {
        center: Vec2,
        inner: f64,
        outer: f64,
    },
    Rect(OrientedRect),
    Band(ArcBand),
}

impl Region {
    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        match self {
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let d2 = (p - *center).norm_sq();
                let lo = (inner - margin).max(0.0);
                let hi = outer + margin;
                d2 >= lo * lo && d2 <= hi * hi
            }
            Region::Rect(r) => r.contains(p, margin),
            Region::Band(b) => b.contains(p, margin),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundaboutMap {
    pub ring_center: Vec2,
    pub ring_radius: f64,
    pub lane_width: f64,
    /// Radius of the driving line around the ring.
    pub centerline_radius: f64,
    pub junction_radius: f64,
    pub sample_step: f64,
    pub legs: Vec<Leg>,
    /// Annulus, one rectangle per leg and one band per junction curve.
    pub navigable: Vec<Region>,
}

/// Validates `cfg` and lays out the ring, the legs and their junction curves.
pub fn build_roundabout(cfg: &GeometryConfig) -> Result<RoundaboutMap, ScenarioError> {
    let GeometryConfig {
        ring_center,
        ring_radius,
        lane_width,
        leg_length,
        ref leg_angles_deg,
        junction_radius,
        sample_step,
    } = *cfg;
    let positive = |name: &'static str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(ScenarioError::InvalidGeometry(format!(
                "{name} must be positive, got {v}"
            )))
        }
    };
    positive("lane_width", lane_width)?;
    positive("ring_radius", ring_radius)?;
    positive("leg_length", leg_length)?;
    positive("junction_radius", junction_radius)?;
    positive("sample_step", sample_step)?;
    if ring_radius <= lane_width {
        return Err(ScenarioError::InvalidGeometry(format!(
            "ring_radius ({ring_radius}) must exceed lane_width ({lane_width})"
        )));
    }
    if junction_radius <= 0.5 * lane_width {
        return Err(ScenarioError::InvalidGeometry(
            "junction_radius must exceed half the lane width".into(),
        ));
    }
    if leg_angles_deg.len() != LEG_COUNT {
        return Err(ScenarioError::LegCount(leg_angles_deg.len()));
    }

    let center = Vec2::new(ring_center[0], ring_center[1]);
    let half_lane = 0.5 * lane_width;
    let rc = ring_radius - half_lane;
    let lateral = half_lane + junction_radius;
    let reach = rc + junction_radius;
    let radial = (reach * reach - lateral * lateral).sqrt();
    let outer_end = ring_radius + leg_length;
    if radial >= outer_end {
        return Err(ScenarioError::InvalidGeometry(format!(
            "leg_length too short for the junction curve (needs > {:.3} m)",
            radial - ring_radius
        )));
    }
    // Angular offset between a leg axis and its merge/diverge points.
    let offset = lateral.atan2(radial);

    let angles: Vec<f64> = leg_angles_deg.iter().map(|d| d.to_radians()).collect();
    for (i, &a) in angles.iter().enumerate() {
        for &b in &angles[i + 1..] {
            let gap = crate::geometry::wrap_positive(b - a);
            let gap = gap.min(std::f64::consts::TAU - gap);
            if gap <= 2.0 * offset + 1e-9 {
                return Err(ScenarioError::InvalidGeometry(format!(
                    "legs at {:.1}° and {:.1}° are too close for their junctions",
                    a.to_degrees(),
                    b.to_degrees()
                )));
            }
        }
    }

    let sweep = offset - std::f64::consts::FRAC_PI_2;
    let mut legs = Vec::with_capacity(LEG_COUNT);
    let mut navigable = vec![Region::Annulus {
        center,
        inner: ring_radius - lane_width,
        outer: ring_radius,
    }];
    for &phi in &angles {
        let u = Vec2::from_angle(phi);
        let t = u.perp_left();
        let entry_far = center + u * outer_end + t * half_lane;
        let entry_tangent = center + u * radial + t * half_lane;
        let entry_center = center + u * radial + t * lateral;
        let entry_curve = Primitive::Arc {
            center: entry_center,
            radius: junction_radius,
            start_angle: phi - std::f64::consts::FRAC_PI_2,
            sweep,
        };
        let exit_center = center + u * radial - t * lateral;
        let exit_curve = Primitive::Arc {
            center: exit_center,
            radius: junction_radius,
            start_angle: phi - offset + std::f64::consts::PI,
            sweep,
        };
        let exit_tangent = center + u * radial - t * half_lane;
        let exit_far = center + u * outer_end - t * half_lane;
        let rect_len = outer_end - rc;
        let rect = OrientedRect::new(
            center + u * (rc + 0.5 * rect_len),
            phi,
            rect_len,
            2.0 * lane_width,
        );
        navigable.push(Region::Rect(rect));
        for curve in [&entry_curve, &exit_curve] {
            if let Primitive::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } = *curve
            {
                navigable.push(Region::Band(ArcBand {
                    center,
                    radius,
                    half_width: half_lane,
                    start_angle,
                    sweep,
                }));
            }
        }
        legs.push(Leg {
            anchor_angle: phi,
            length: leg_length,
            entry_lane: Primitive::Line {
                start: entry_far,
                end: entry_tangent,
            },
            entry_curve,
            exit_curve,
            exit_lane: Primitive::Line {
                start: exit_tangent,
                end: exit_far,
            },
            merge_angle: phi + offset,
            diverge_angle: phi - offset,
            rect,
        });
    }

    Ok(RoundaboutMap {
        ring_center: center,
        ring_radius,
        lane_width,
        centerline_radius: rc,
        junction_radius,
        sample_step,
        legs,
        navigable,
    })
}

impl RoundaboutMap {
    pub fn is_navigable(&self, p: Vec2) -> bool {
        self.is_navigable_with_margin(p, 0.0)
    }

    pub(crate) fn is_navigable_with_margin(&self, p: Vec2, margin: f64) -> bool {
        self.navigable.iter().any(|r| r.contains(p, margin))
    }

    /// Angular offset between a leg axis and its merge point on the ring.
    pub fn junction_offset(&self) -> f64 {
        let lateral = 0.5 * self.lane_width + self.junction_radius;
        let reach = self.centerline_radius + self.junction_radius;
        lateral.atan2((reach * reach - lateral * lateral).sqrt())
    }

    /// The same map rotated by `angle` about the origin.
    pub fn rotated(cfg: &GeometryConfig, angle: f64) -> Result<Self, ScenarioError> {
        let c = Vec2::new(cfg.ring_center[0], cfg.ring_center[1]).rotate(angle);
        let mut rotated = cfg.clone();
        rotated.ring_center = [c.x, c.y];
        rotated.leg_angles_deg = cfg
            .leg_angles_deg
            .iter()
            .map(|d| d + angle.to_degrees())
            .collect();
        build_roundabout(&rotated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_has_three_legs() {
        let map = build_roundabout(&GeometryConfig::default()).unwrap();
        assert_eq!(map.legs.len(), 3);
        assert_eq!(map.centerline_radius, 12.0);
        // 1 annulus + 3 rects + 6 junction bands
        assert_eq!(map.navigable.len(), 10);
        assert!(map.is_navigable(Vec2::new(0.0, 12.0)));
        assert!(map.is_navigable(Vec2::new(0.0, 30.0)));
    }

    #[test]
    fn central_island_not_navigable() {
        let map = build_roundabout(&GeometryConfig::default()).unwrap();
        assert!(!map.is_navigable(map.ring_center));
        assert!(!map.is_navigable(Vec2::new(5.0, 5.0)));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut cfg = GeometryConfig {
            lane_width: 0.0,
            ..Default::default()
        };
        assert!(build_roundabout(&cfg).is_err());
        cfg.lane_width = 4.0;
        cfg.ring_radius = 3.0;
        assert!(build_roundabout(&cfg).is_err());
        cfg.ring_radius = 14.0;
        cfg.leg_length = -1.0;
        assert!(build_roundabout(&cfg).is_err());
    }

    #[test]
    fn rejects_wrong_leg_count() {
        let cfg = GeometryConfig {
            leg_angles_deg: vec![0.0, 90.0, 180.0, 270.0],
            ..Default::default()
        };
        assert!(matches!(
            build_roundabout(&cfg),
            Err(ScenarioError::LegCount(4))
        ));
        let cfg = GeometryConfig {
            leg_angles_deg: vec![0.0, 180.0],
            ..Default::default()
        };
        assert!(matches!(
            build_roundabout(&cfg),
            Err(ScenarioError::LegCount(2))
        ));
    }

    #[test]
    fn curves_connect_lanes_to_ring() {
        let map = build_roundabout(&GeometryConfig::default()).unwrap();
        for leg in &map.legs {
            let a = leg.entry_lane.end();
            let b = leg.entry_curve.start();
            assert!(a.distance(b) < 1e-9);
            let ring_pt = map.ring_center
                + crate::geometry::Vec2::from_angle(leg.merge_angle) * map.centerline_radius;
            assert!(leg.entry_curve.end().distance(ring_pt) < 1e-9);
            let ring_pt = map.ring_center
                + crate::geometry::Vec2::from_angle(leg.diverge_angle) * map.centerline_radius;
            assert!(leg.exit_curve.start().distance(ring_pt) < 1e-9);
            assert!(leg.exit_curve.end().distance(leg.exit_lane.start()) < 1e-9);
        }
    }
}
