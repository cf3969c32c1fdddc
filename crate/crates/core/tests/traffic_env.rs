use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use roundsim::env::{AgentStatus, MultiAgentEnv};
use roundsim::geometry::{OrientedRect, Vec2};
use roundsim::scenario::{build_roundabout, GeometryConfig};
use roundsim::traffic_env::*;

fn env_with(cfg: EnvConfig) -> TrafficEnv {
    let map = Arc::new(build_roundabout(&GeometryConfig::default()).unwrap());
    TrafficEnv::new(map, cfg, RewardConfig::default()).unwrap()
}

fn staged_env() -> TrafficEnv {
    let mut env = env_with(EnvConfig::default());
    env.set_spawn_profile(SpawnProfile {
        max_spawned: Some(0),
        ..Default::default()
    });
    env.clear();
    env
}

fn all(env: &TrafficEnv, a: Action) -> BTreeMap<u64, Action> {
    env.vehicles().iter().map(|v| (v.id, a)).collect()
}

#[test]
fn reset_is_deterministic() {
    let mut a = env_with(EnvConfig::default());
    let mut b = env_with(EnvConfig::default());
    let oa = a.reset_world();
    let ob = b.reset_world();
    assert_eq!(oa, ob);
    assert_eq!(a.vehicles(), b.vehicles());
    let again = a.reset_world();
    assert_eq!(oa, again);
}

#[test]
fn reset_without_capacity_is_empty() {
    let mut env = env_with(EnvConfig {
        max_vehicles: 0,
        ..Default::default()
    });
    assert!(env.reset_world().is_empty());
    assert!(env.vehicles().is_empty());
}

#[test]
fn reset_observations_start_fresh() {
    let mut env = env_with(EnvConfig::default());
    for (_, obs) in env.reset_world() {
        assert_eq!(obs.numeric[2], 0.0);
        assert_eq!(obs.frames.len(), FRAME_STACK);
        assert!(obs.frames.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn far_apart_maintain_has_no_danger() {
    let mut env = staged_env();
    env.place_vehicle(0, 1, 2.0, 5.0, 5.0).unwrap();
    env.place_vehicle(1, 2, 2.0, 5.0, 5.0).unwrap();
    let step = env.step_joint(&all(&env, Action::Maintain)).unwrap();
    for o in &step.outcomes {
        assert_eq!(o.reward.r_danger, 0.0);
        assert_eq!(o.reward.r_terminal, 0.0);
        assert_eq!(o.status, AgentStatus::Active);
    }
}

#[test]
fn reaching_the_end_is_a_goal() {
    let mut env = staged_env();
    let total = env.path(0, 1).total_length;
    let id = env.place_vehicle(0, 1, total - 1e-3, 6.0, 6.0).unwrap();
    let step = env.step_joint(&all(&env, Action::Maintain)).unwrap();
    let o = &step.outcomes[0];
    assert_eq!(o.id, id);
    assert_eq!(o.status, AgentStatus::ReachedGoal);
    assert_eq!(o.reward.r_terminal, 1.0);
    assert_eq!(o.s, total);
    assert!(o.observation.is_none());
    assert!(env.vehicles().is_empty());
}

#[test]
fn overlapping_vehicles_both_crash() {
    let mut env = staged_env();
    env.place_vehicle(0, 1, 5.0, 5.0, 5.0).unwrap();
    env.place_vehicle(0, 2, 7.0, 0.0, 5.0).unwrap();
    let step = env.step_joint(&all(&env, Action::Maintain)).unwrap();
    assert_eq!(step.outcomes.len(), 2);
    for o in &step.outcomes {
        assert_eq!(o.status, AgentStatus::Crashed);
        assert_eq!(o.reward.r_terminal, -1.0);
    }
    assert!(env.vehicles().is_empty());
}

#[test]
fn missing_action_is_rejected() {
    let mut env = staged_env();
    env.place_vehicle(0, 1, 5.0, 5.0, 5.0).unwrap();
    env.place_vehicle(1, 1, 5.0, 5.0, 5.0).unwrap();
    let mut actions = all(&env, Action::Maintain);
    actions.pop_first();
    assert!(env.step_joint(&actions).is_err());
    assert_eq!(env.step_count(), 0);
}

#[test]
fn spawning_respects_capacity_and_clearance() {
    let mut env = env_with(EnvConfig::default());
    env.clear();
    assert!(env.spawn_policy().is_some());

    // every entry mouth occupied
    let mut env = staged_env();
    for e in 0..3 {
        env.place_vehicle(e, 0, 4.0, 0.0, 5.0).unwrap();
    }
    env.set_spawn_profile(SpawnProfile::default());
    assert!(env.spawn_policy().is_none());
    assert!(env.try_spawn(1, 0, 6.0, None).is_none());

    let mut env = staged_env();
    for e in 0..3 {
        env.place_vehicle(e, 0, 20.0, 0.0, 5.0).unwrap();
        env.place_vehicle(e, 1, 30.0, 0.0, 5.0).unwrap();
    }
    env.set_spawn_profile(SpawnProfile::default());
    assert_eq!(env.vehicles().len(), 6);
    assert!(env.spawn_policy().is_none());
}

#[test]
fn spawned_vehicle_properties() {
    let mut env = env_with(EnvConfig::default());
    for seed in 0..50 {
        env.reseed(seed);
        env.reset_world();
        let v = &env.vehicles()[0];
        assert_eq!(v.s, 0.0);
        assert_eq!(v.speed, 0.0);
        assert!((5.0..=8.0).contains(&v.target_speed));
        assert_eq!(v.aggressiveness_override, None);
    }
}

#[test]
fn numeric_inputs_examples() {
    let mut env = staged_env();
    let id = env.place_vehicle(0, 1, 0.0, 6.0, 6.0).unwrap();
    let v = env.vehicle(id).unwrap().clone();
    let cfg = env.config().clone();
    let n = numeric_inputs(&v, 0.0, &cfg);
    assert_eq!(n[0], 0.5);
    assert_eq!(n[2], 0.0);
    assert_eq!(n[3], v.path.total_length / 200.0);
    let mut v2 = v.clone();
    v2.aggressiveness_override = Some(1.2);
    assert_eq!(numeric_inputs(&v2, 13.0, &cfg)[2], 1.2);
    assert_eq!(numeric_inputs(&v, 10.0, &cfg)[2], 0.25);
}

#[test]
fn stationary_agent_times_out_on_schedule() {
    let mut env = staged_env();
    env.place_vehicle(0, 1, 5.0, 0.0, 5.0).unwrap();
    let mut steps = 0;
    loop {
        let step = env.step_joint(&all(&env, Action::Brake)).unwrap();
        steps += 1;
        let o = &step.outcomes[0];
        if o.status.is_terminal() {
            assert_eq!(o.status, AgentStatus::TimedOut);
            assert_eq!(o.reward.r_terminal, -1.0);
            break;
        }
    }
    assert_eq!(steps, 400);
}

#[test]
fn frame_stack_rolls_oldest_first() {
    let mut env = staged_env();
    let id = env.place_vehicle(0, 1, 5.0, 8.0, 8.0).unwrap();
    let first = env.observation(id);
    let step = env.step_joint(&all(&env, Action::Maintain)).unwrap();
    let obs = step.outcomes[0].observation.clone().unwrap();
    assert_eq!(obs.frames.len(), 4);
    assert_eq!(obs.frames[..3], first.frames[1..]);
    assert_eq!(*obs.frames[3], env.render(id).unwrap());
}

#[test]
fn trait_step_maps_indices() {
    let mut env = env_with(EnvConfig::default());
    let agents = MultiAgentEnv::reset(&mut env);
    let actions: BTreeMap<u64, usize> = agents.iter().map(|(id, _)| (*id, 0)).collect();
    let step = MultiAgentEnv::step(&mut env, &actions).unwrap();
    assert_eq!(step.transitions.len(), agents.len());
    let bad: BTreeMap<u64, usize> = env.active_agents().into_iter().map(|id| (id, 7)).collect();
    assert!(MultiAgentEnv::step(&mut env, &bad).is_err());
}

fn run_trace(seed: u64, steps: usize) -> Vec<u8> {
    let mut env = env_with(EnvConfig {
        seed,
        ..Default::default()
    });
    env.reset_world();
    let mut trace = TraceWriter::new(Vec::new()).unwrap();
    for k in 0..steps {
        let actions = env
            .vehicles()
            .iter()
            .map(|v| (v.id, Action::ALL[(v.id as usize + k / 7) % 3]))
            .collect();
        let step = env.step_joint(&actions).unwrap();
        assert!(env.vehicles().len() <= env.config().max_vehicles);
        trace.write_step(&step).unwrap();
    }
    trace.finish().unwrap()
}

#[test]
fn traces_are_reproducible() {
    let a = run_trace(3, 600);
    let b = run_trace(3, 600);
    assert_eq!(a, b);
    assert_ne!(a, run_trace(4, 600));
}

// --- traffic rules ---

/// An on-ring vehicle from entry 2 heading to exit 1 passes the merge point of
/// leg 0, where an entering agent from leg 0 sits.
fn merge_scene(ring_speed: f64, ahead: f64, agent_offset: f64) -> (VehicleState, VehicleState) {
    let mut env = staged_env();
    let p0 = env.path(0, 2).clone();
    let a = env
        .place_vehicle(0, 2, p0.merge_s + agent_offset, 3.0, 6.0)
        .unwrap();
    let agent = env.vehicle(a).unwrap().clone();
    let center = agent.path.pose_at(agent.s).position;
    let ring = env.path(2, 1).clone();
    let (s_at, lateral) = ring
        .project(center, ring.merge_s, ring.diverge_s)
        .unwrap();
    assert!(lateral < 1.0);
    let v = env
        .place_vehicle(2, 1, s_at - ahead, ring_speed, 6.0)
        .unwrap();
    (agent, env.vehicle(v).unwrap().clone())
}

#[test]
fn entering_in_front_of_ring_vehicle_fails_to_yield() {
    let cfg = EnvConfig::default();
    let reward = RewardConfig::default();
    let (agent, ring) = merge_scene(6.0, 10.0, 0.0);
    assert!(agent.is_entering(&cfg));
    assert!(ring.is_on_ring(&cfg));
    let all = vec![agent.clone(), ring.clone()];
    assert!(yield_violation(&agent, &all, &cfg, &reward));

    // beyond 3·d_v (3·2 m = 6 m, region ends 8 m past the ring vehicle's center)
    let (agent, ring) = merge_scene(2.0, 13.0, 0.0);
    assert!(!yield_violation(&agent, &[agent.clone(), ring], &cfg, &reward));
}

#[test]
fn stationary_ring_vehicle_needs_no_yield() {
    let cfg = EnvConfig::default();
    let (agent, ring) = merge_scene(0.0, 6.0, 0.0);
    assert!(!yield_violation(&agent, &[agent.clone(), ring], &cfg, &RewardConfig::default()));
}

#[test]
fn inserted_agent_is_not_yielding() {
    let cfg = EnvConfig::default();
    let (agent, ring) = merge_scene(6.0, 10.0, 2.5);
    assert!(!agent.is_entering(&cfg));
    assert!(!yield_violation(&agent, &[agent.clone(), ring], &cfg, &RewardConfig::default()));
}

fn follow_pair(agent_speed: f64, gap: f64) -> (VehicleState, VehicleState) {
    let mut env = staged_env();
    let a = env.place_vehicle(0, 2, 10.0, agent_speed, 6.0).unwrap();
    let b = env.place_vehicle(0, 2, 10.0 + 4.0 + gap, 5.0, 6.0).unwrap();
    (env.vehicle(a).unwrap().clone(), env.vehicle(b).unwrap().clone())
}

#[test]
fn close_follower_violates_safety_distance() {
    let cfg = EnvConfig::default();
    let reward = RewardConfig::default();
    let (a, b) = follow_pair(8.0, 5.0);
    let all = vec![a.clone(), b.clone()];
    let (gap, leader) = leader_gap(&a, &all, &cfg, 8.0).unwrap();
    assert!((gap - 5.0).abs() < 1e-9);
    assert_eq!(leader.id, b.id);
    assert!(safety_violation(&a, &all, &cfg, &reward));
    assert!(!safety_violation(&b, &all, &cfg, &reward));

    let (a, b) = follow_pair(8.0, 9.0);
    assert!(!safety_violation(&a, &[a.clone(), b], &cfg, &reward));
}

#[test]
fn stopped_agent_never_violates_safety() {
    let cfg = EnvConfig::default();
    let (a, b) = follow_pair(0.0, 0.5);
    assert!(!safety_violation(&a, &[a.clone(), b], &cfg, &RewardConfig::default()));
}

#[test]
fn cutting_in_leader_is_exempt() {
    let cfg = EnvConfig::default();
    let reward = RewardConfig::default();
    // ring vehicle 7 m behind the merging car's center: 3 m bumper gap
    let (merging, ring) = merge_scene(6.0, 7.0, 0.0);
    let all = vec![merging.clone(), ring.clone()];
    let (gap, leader) = leader_gap(&ring, &all, &cfg, 6.0).unwrap();
    assert_eq!(leader.id, merging.id);
    assert!((gap - 3.0).abs() < 0.05);
    assert!(!safety_violation(&ring, &all, &cfg, &reward));

    // same spot, but the leader has already merged
    let (merged, ring) = merge_scene(6.0, 7.0 + 2.5, 2.5);
    assert!(!merged.is_entering(&cfg));
    assert!(safety_violation(&ring, &[merged, ring.clone()], &cfg, &reward));
}

// --- collision oracle ---

fn sampled_overlap(a: &OrientedRect, b: &OrientedRect, n: usize) -> bool {
    let (u, v) = (Vec2::from_angle(a.heading), Vec2::from_angle(a.heading).perp_left());
    for i in 0..n {
        for j in 0..n {
            let x = (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
            let y = (j as f64 + 0.5) / n as f64 * 2.0 - 1.0;
            let p = a.center + u * (x * a.half_length) + v * (y * a.half_width);
            if b.contains(p, 0.0) {
                return true;
            }
        }
    }
    false
}

/// Area of the convex intersection, by clipping `a` against the edges of `b`.
fn intersection_area(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let mut poly: Vec<Vec2> = a.corners().to_vec();
    let bc = b.corners();
    for k in 0..4 {
        let (p, q) = (bc[k], bc[(k + 1) % 4]);
        let inside = |x: Vec2| (q - p).cross(x - p) >= 0.0;
        let mut out = Vec::new();
        for i in 0..poly.len() {
            let (cur, nxt) = (poly[i], poly[(i + 1) % poly.len()]);
            let (ci, ni) = (inside(cur), inside(nxt));
            if ci {
                out.push(cur);
            }
            if ci != ni {
                let d1 = (q - p).cross(cur - p);
                let d2 = (q - p).cross(nxt - p);
                out.push(cur.lerp(nxt, d1 / (d1 - d2)));
            }
        }
        poly = out;
        if poly.is_empty() {
            return 0.0;
        }
    }
    let mut area = 0.0;
    for i in 0..poly.len() {
        area += poly[i].cross(poly[(i + 1) % poly.len()]);
    }
    0.5 * area.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn collision_matches_point_sampling(
        ax in -3.0f64..3.0, ay in -3.0f64..3.0, ah in -3.2f64..3.2,
        bx in -3.0f64..3.0, by in -3.0f64..3.0, bh in -3.2f64..3.2,
    ) {
        let a = OrientedRect::new(Vec2::new(ax, ay), ah, 4.0, 1.8);
        let b = OrientedRect::new(Vec2::new(bx, by), bh, 4.0, 1.8);
        let sat = a.overlaps(&b);
        let sampled = sampled_overlap(&a, &b, 120);
        if sampled {
            prop_assert!(sat);
        }
        if sat && !sampled {
            // only slivers thinner than the sampling grid may be missed
            prop_assert!(intersection_area(&a, &b) < 0.05);
        }
        prop_assert_eq!(sat, b.overlaps(&a));
    }
}

#[test]
fn corner_overlap_of_rotated_rectangles() {
    let a = OrientedRect::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 1.8);
    let b = OrientedRect::new(Vec2::new(3.2, 1.6), std::f64::consts::FRAC_PI_4, 4.0, 1.8);
    assert!(a.overlaps(&b));
    assert!(sampled_overlap(&a, &b, 200));
    let far = OrientedRect::new(Vec2::new(10.0, 0.0), 0.0, 4.0, 1.8);
    assert!(!a.overlaps(&far));
    assert!(a.overlaps(&a));
}
