use std::collections::BTreeSet;

use super::config::{EnvConfig, RewardConfig};
use super::vehicle::VehicleState;
use crate::env::AgentId;

/// Unordered pairs `(lower id, higher id)` whose footprints overlap with
/// positive area.
pub fn detect_collisions(vehicles: &[VehicleState], cfg: &EnvConfig) -> BTreeSet<(AgentId, AgentId)> {
    let rects: Vec<_> = vehicles.iter().map(|v| v.footprint(cfg)).collect();
    let mut pairs = BTreeSet::new();
    for i in 0..vehicles.len() {
        for j in i + 1..vehicles.len() {
            if rects[i].overlaps(&rects[j]) {
                let (a, b) = (vehicles[i].id, vehicles[j].id);
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    pairs
}

/// The agent, still entering, has its footprint inside the lane-width region
/// of length `3·d_v` ahead of some vehicle `v` already on the ring, where
/// `d_v` is the distance `v` covers in one look-ahead horizon.
///
/// The region is clipped where `v` leaves the ring.
pub fn yield_violation(
    agent: &VehicleState,
    vehicles: &[VehicleState],
    cfg: &EnvConfig,
    reward: &RewardConfig,
) -> bool {
    if !agent.is_entering(cfg) {
        return false;
    }
    let footprint = agent.footprint(cfg);
    let half_length = 0.5 * cfg.vehicle_length;
    vehicles
        .iter()
        .filter(|v| v.id != agent.id && v.is_on_ring(cfg))
        .any(|v| {
            let reach = 3.0 * v.speed * reward.lookahead_horizon;
            if reach <= 0.0 {
                return false;
            }
            let start = v.s + half_length;
            let end = (start + reach).min(v.path.diverge_s);
            v.path
                .band_rects(start, end, v.path.lane_width)
                .iter()
                .any(|r| r.overlaps(&footprint))
        })
}

/// Bumper-to-bumper gap to the nearest vehicle ahead on the agent's own path,
/// together with that vehicle. A vehicle counts as on the path when its center
/// lies within half a lane of the centerline.
pub fn leader_gap<'a>(
    agent: &VehicleState,
    vehicles: &'a [VehicleState],
    cfg: &EnvConfig,
    search: f64,
) -> Option<(f64, &'a VehicleState)> {
    let half_lane = 0.5 * agent.path.lane_width;
    let reach = search + cfg.vehicle_length;
    vehicles
        .iter()
        .filter(|v| v.id != agent.id)
        .filter(|v| {
            let d = v.path.pose_at(v.s).position - agent.path.pose_at(agent.s).position;
            d.norm() <= reach + half_lane
        })
        .filter_map(|v| {
            let center = v.path.pose_at(v.s).position;
            // project on the whole remaining path so a clipped range cannot
            // produce a spurious endpoint match
            agent
                .path
                .project(center, agent.s, agent.path.total_length)
                .filter(|&(s, lateral)| lateral <= half_lane && s - agent.s <= reach)
                .map(|(s, _)| (s - agent.s - cfg.vehicle_length, v))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// The nearest vehicle ahead is closer than `d_a`, unless it is an entering
/// vehicle from another leg cutting in.
pub fn safety_violation(
    agent: &VehicleState,
    vehicles: &[VehicleState],
    cfg: &EnvConfig,
    reward: &RewardConfig,
) -> bool {
    let safety = agent.speed * reward.lookahead_horizon;
    if safety <= 0.0 {
        return false;
    }
    match leader_gap(agent, vehicles, cfg, safety) {
        Some((gap, leader)) if gap < safety => {
            let cutting_in =
                leader.is_entering(cfg) && leader.path.entry_id != agent.path.entry_id;
            !cutting_in
        }
        _ => false,
    }
}
