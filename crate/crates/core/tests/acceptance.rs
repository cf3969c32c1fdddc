//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test --test acceptance`. Set `ROUNDSIM_LONG=1` to add the
//! long-running sweep trend check, which otherwise reports SKIP.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roundsim::config::RunConfig;
use roundsim::env::AgentStatus;
use roundsim::eval::{run_sweep, SweepParameter, SweepSpec};
use roundsim::geometry::{OrientedRect, Pose};
use roundsim::nn::{ConvSpec, Gradients, NetConfig, PolicyValueNet, VisualConfig};
use roundsim::rl_core::{loss_gradients, loss_value, n_step_returns, RlConfig, RmsProp};
use roundsim::scenario::*;
use roundsim::traffic_env::reward::{r_danger, r_speed, r_terminal};
use roundsim::traffic_env::{
    compute_reward, Action, EnvConfig, RewardConfig, SpeedCapMode, StepEvents, TraceWriter, TrafficEnv,
};
use roundsim::trainer::{run_training, GlobalStore, Policy, ScriptFn, TrainerConfig};
use roundsim::validation_env::run_validation;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1: rewards ----

fn rewards() -> Check {
    let cfg = RewardConfig::default();
    let status = |s| StepEvents {
        status: Some(s),
        ..Default::default()
    };
    let total = |speed, target, ev: &StepEvents| compute_reward(speed, target, ev, &cfg).unwrap().total;
    ensure(total(0.0, 6.0, &status(AgentStatus::ReachedGoal)) == 1.0, || "goal".into())?;
    ensure(total(0.0, 6.0, &status(AgentStatus::Crashed)) == -1.0, || "crash".into())?;
    ensure(total(0.0, 6.0, &status(AgentStatus::TimedOut)) == -1.0, || "timeout".into())?;
    for target in [5.0, 6.5, 8.0] {
        ensure(r_speed(target, target, &cfg).unwrap() == 0.001, || "speed at target".into())?;
        // the binary64 value of 0.001 - 0.03
        ensure(r_speed(2.0 * target, target, &cfg).unwrap() == 0.001 - 0.03, || "speed at twice the target".into())?;
    }
    let yielded = StepEvents {
        yield_violation: true,
        ..Default::default()
    };
    let unsafe_gap = StepEvents {
        safety_violation: true,
        ..Default::default()
    };
    ensure(compute_reward(0.0, 6.0, &yielded, &cfg).unwrap().r_danger == -0.05, || "yield".into())?;
    ensure(compute_reward(0.0, 6.0, &unsafe_gap, &cfg).unwrap().r_danger == -0.05, || "safety".into())?;
    ensure(total(6.0, 6.0, &yielded) == 0.0 - 0.05 + 0.001, || "yield at target".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let statuses = [
        None,
        Some(AgentStatus::Active),
        Some(AgentStatus::ReachedGoal),
        Some(AgentStatus::Crashed),
        Some(AgentStatus::TimedOut),
    ];
    for _ in 0..10_000 {
        let ev = StepEvents {
            status: statuses[rng.gen_range(0..statuses.len())],
            yield_violation: rng.gen(),
            safety_violation: rng.gen(),
        };
        let target = rng.gen_range(5.0..8.0);
        let speed = if rng.gen_bool(0.1) { target } else { rng.gen_range(0.0..12.0) };
        let r = compute_reward(speed, target, &ev, &cfg).unwrap();
        let terminal = match ev.status {
            Some(AgentStatus::ReachedGoal) => 1.0,
            Some(AgentStatus::Crashed) | Some(AgentStatus::TimedOut) => -1.0,
            _ => 0.0,
        };
        // both penalties are 0.05 and never add up
        let danger = if ev.yield_violation || ev.safety_violation { -0.05 } else { 0.0 };
        let speed_term = if speed <= target {
            speed / target * 0.001
        } else {
            0.001 - (speed - target) / target * 0.03
        };
        ensure(
            r.r_terminal == terminal && r.r_danger == danger && r.r_speed == speed_term,
            || format!("terms differ at speed {speed}, target {target}, {ev:?}"),
        )?;
        ensure(r.total == r.r_terminal + r.r_danger + r.r_speed, || "decomposition".into())?;
        ensure(
            r.r_terminal == r_terminal(ev.status.unwrap_or(AgentStatus::Active), &cfg) && r.r_danger == r_danger(&ev, &cfg),
            || "component functions".into(),
        )?;
    }
    Ok("hand cases exact; 10000 random states decompose exactly".into())
}

// ---- 2: returns ----

fn returns() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let len = rng.gen_range(1..=40);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bootstrap = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-5.0..5.0) };
        let gamma = rng.gen_range(0.0..=1.0);
        let got = n_step_returns(&rewards, bootstrap, gamma);
        ensure(got.len() == len, || "length".into())?;
        for (i, g) in got.iter().enumerate() {
            let mut want = 0.0;
            let mut discount = 1.0;
            for r in &rewards[i..] {
                want += discount * r;
                discount *= gamma;
            }
            want += discount * bootstrap;
            worst = worst.max((g - want).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("1000 tuples, max abs error {worst:.1e}"))
}

// ---- 3: gradients ----

fn reduced_net() -> NetConfig {
    NetConfig {
        visual: Some(VisualConfig {
            channels: 12,
            size: 8,
            conv1: ConvSpec {
                filters: 2,
                kernel: 4,
                stride: 2,
            },
            conv2: ConvSpec {
                filters: 2,
                kernel: 2,
                stride: 1,
            },
            fc: 8,
        }),
        numeric_inputs: 4,
        numeric_hidden: 6,
        merge_hidden: 8,
        actions: 3,
    }
}

struct Sample {
    visual: Vec<f64>,
    numeric: Vec<f64>,
    action: usize,
    ret: f64,
    advantage: f64,
}

/// Summed actor-critic loss over `samples`, advantages held fixed.
fn batch_loss(net: &PolicyValueNet, samples: &[Sample], rl: &RlConfig) -> f64 {
    samples
        .iter()
        .map(|s| {
            let out = net.forward(&s.visual, &s.numeric).unwrap();
            loss_value(&out.logits, s.action, s.advantage, s.ret, out.value, rl)
        })
        .sum()
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut live = 0;
    for config in 0..10u64 {
        let cfg = reduced_net();
        let mut net = PolicyValueNet::init(cfg.clone(), config).unwrap();
        for p in net.params_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let rl = RlConfig {
            entropy_coef: rng.gen_range(0.0..0.1),
            gamma: rng.gen_range(0.9..1.0),
            ..RlConfig::default()
        };
        let len = rng.gen_range(1..=5);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let rets = n_step_returns(&rewards, rng.gen_range(-1.0..1.0), rl.gamma);
        let samples: Vec<Sample> = rets
            .iter()
            .map(|&ret| {
                let visual: Vec<f64> = (0..cfg.visual_len()).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect();
                let numeric: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.5)).collect();
                let value = net.forward(&visual, &numeric).unwrap().value;
                Sample {
                    visual,
                    numeric,
                    action: rng.gen_range(0..3),
                    ret,
                    advantage: ret - value,
                }
            })
            .collect();

        let mut grads = Gradients::zeros_like(&net);
        for s in &samples {
            let out = net.forward(&s.visual, &s.numeric).unwrap();
            let (dl, dv) = loss_gradients(&out.logits, s.action, s.advantage, s.ret, out.value, &rl);
            net.backward_into(&out.cache, &dl, dv, &mut grads).unwrap();
        }
        for i in 0..net.param_count() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = batch_loss(&net, &samples, &rl);
            net.params_mut()[i] = orig - h;
            let down = batch_loss(&net, &samples, &rl);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.as_slice()[i];
            // the floor keeps entries without any gradient (dead units) from
            // dividing rounding noise by zero
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            live += usize::from(analytic.abs() > 1e-6);
            checked += 1;
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{checked} parameters ({live} with non-negligible gradient) over 10 configurations, max relative error {worst:.1e}"))
}

// ---- 4: validation ----

fn validation() -> Check {
    let cfg = RunConfig::default();
    let mut lines = Vec::new();
    for seed in [0, 1, 2] {
        let vcfg = cfg.validation(seed);
        ensure(vcfg.max_env_steps <= 50_000, || "step budget".into())?;
        let report = run_validation(&vcfg).map_err(|e| e.to_string())?;
        let last = report.last();
        ensure(last.agreement >= 0.95 && last.value_error < 0.15, || {
            format!("seed {seed}: agreement {}, value error {}", last.agreement, last.value_error)
        })?;
        lines.push(format!("seed {seed} {:.2}/{:.3}", last.agreement, last.value_error));
    }
    Ok(format!("agreement/value error: {}", lines.join(", ")))
}

// ---- 5: multi-agent mechanics ----

fn multi_agent() -> Check {
    let map = Arc::new(build_roundabout(&GeometryConfig::default()).unwrap());
    let cfg = TrainerConfig {
        n_env: 2,
        n_ag: 3,
        total_episodes: u64::MAX,
        max_env_steps: Some(10_000),
        ..Default::default()
    };
    let store = GlobalStore::new(
        PolicyValueNet::init(RunConfig::default().net(), 0).unwrap(),
        cfg.lr,
        cfg.rmsprop_decay,
        cfg.rmsprop_eps,
    );
    let (tx, rx) = mpsc::channel();
    let make = |i: usize| {
        let env = EnvConfig {
            max_vehicles: 3,
            seed: 50 + i as u64,
            ..Default::default()
        };
        TrafficEnv::new(map.clone(), env, RewardConfig::default()).unwrap()
    };
    let accelerate: Arc<ScriptFn> = Arc::new(|_, _| Action::Accelerate as usize);
    let report = run_training(&cfg, &RlConfig::default(), &store, make, Policy::Scripted(accelerate), Some(tx))
        .map_err(|e| e.to_string())?;
    let stats: Vec<_> = rx.into_iter().collect();
    ensure(report.env_steps == vec![10_000, 10_000], || format!("steps {:?}", report.env_steps))?;
    ensure(report.episodes > 0 && report.pushes == report.episodes, || {
        format!("{} pushes for {} episodes", report.pushes, report.episodes)
    })?;
    ensure(store.update_counter() == report.pushes, || "store counter".into())?;
    ensure(stats.len() as u64 == report.episodes, || "stats rows".into())?;

    // two concurrent updates must equal one of the two sequential orders
    let base = PolicyValueNet::init(NetConfig::numeric_only(4, 16, 16, 3), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = [Gradients::zeros_like(&base), Gradients::zeros_like(&base)];
    for grad in &mut g {
        grad.as_mut_slice().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    }
    let sequential = |a: &Gradients, b: &Gradients| {
        let mut net = base.clone();
        let mut opt = RmsProp::new(net.param_count(), 1e-2, 0.99, 1e-5);
        opt.apply(net.params_mut(), a.as_slice());
        opt.apply(net.params_mut(), b.as_slice());
        net.params().to_vec()
    };
    let orders = [sequential(&g[0], &g[1]), sequential(&g[1], &g[0])];
    for _ in 0..100 {
        let store = GlobalStore::new(base.clone(), 1e-2, 0.99, 1e-5);
        std::thread::scope(|s| {
            for grad in &g {
                let store = &store;
                s.spawn(move || store.apply(grad).unwrap());
            }
        });
        ensure(orders.contains(&store.into_net().params().to_vec()), || "interleaved update".into())?;
    }
    Ok(format!(
        "2x10000 steps, {} episodes, {} pushes; 100 paired updates serialized",
        report.episodes, report.pushes
    ))
}

// ---- 6: determinism ----

fn trace(seed: u64, steps: usize) -> Vec<u8> {
    let map = Arc::new(build_roundabout(&GeometryConfig::default()).unwrap());
    let mut env = TrafficEnv::new(map, EnvConfig { seed, ..Default::default() }, RewardConfig::default()).unwrap();
    env.reset_world();
    let mut w = TraceWriter::new(Vec::new()).unwrap();
    for k in 0..steps {
        let actions: BTreeMap<_, _> = env
            .vehicles()
            .iter()
            .map(|v| (v.id, Action::ALL[(v.id as usize * 3 + k / 11) % 3]))
            .collect();
        w.write_step(&env.step_joint(&actions).unwrap()).unwrap();
    }
    w.finish().unwrap()
}

fn determinism() -> Check {
    let a = trace(11, 5_000);
    let b = trace(11, 5_000);
    ensure(a == b, || "traces differ".into())?;
    ensure(a != trace(12, 5_000), || "seed has no effect".into())?;
    Ok(format!("5000-step traces identical ({} bytes)", a.len()))
}

// ---- 7: rasterizer ----

fn subset(a: &BinaryGrid, b: &BinaryGrid) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(&x, &y)| x <= y)
}

fn rasterizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..100 {
        let first: f64 = rng.gen_range(0.0..360.0);
        let geometry = GeometryConfig {
            ring_radius: rng.gen_range(12.0..18.0),
            lane_width: rng.gen_range(3.0..4.5),
            leg_angles_deg: vec![first, first + 120.0, first + 240.0],
            ..Default::default()
        };
        let map = build_roundabout(&geometry).unwrap();
        let path = path_for(&map, rng.gen_range(0..3), rng.gen_range(0..3), 0.5).unwrap();
        let s = rng.gen_range(0.0..0.95) * path.total_length;
        let view = rasterize_view(&map, &[], path.pose_at(s), &path, s);
        ensure(view.path.count_ones() > 0 && subset(&view.path, &view.navigable), || format!("path {k}"))?;
    }

    let cfg = GeometryConfig::default();
    let map = build_roundabout(&cfg).unwrap();
    let rotate = |p: Pose, a: f64| Pose {
        position: p.position.rotate(a),
        heading: p.heading + a,
    };
    for k in 0..50 {
        let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let turned = RoundaboutMap::rotated(&cfg, angle).unwrap();
        let (entry, exit) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let path = path_for(&map, entry, exit, 0.5).unwrap();
        let turned_path = path_for(&turned, entry, exit, 0.5).unwrap();
        let s = rng.gen_range(0.0..1.0) * path.total_length;
        let ego = path.pose_at(s);
        let other_path = path_for(&map, (entry + 1) % 3, exit, 0.5).unwrap();
        let other = other_path.pose_at(rng.gen_range(0.0..1.0) * other_path.total_length);
        let cars = |a: Pose, b: Pose| [OrientedRect::new(a.position, a.heading, 4.0, 1.8), OrientedRect::new(b.position, b.heading, 4.0, 1.8)];
        let view = rasterize_view(&turned, &cars(rotate(ego, angle), rotate(other, angle)), rotate(ego, angle), &turned_path, s);
        let inner = rasterize_with_margin(&map, &cars(ego, other), ego, &path, s, -1e-6);
        let outer = rasterize_with_margin(&map, &cars(ego, other), ego, &path, s, 1e-6);
        for ((lo, mid), hi) in inner.layers().into_iter().zip(view.layers()).zip(outer.layers()) {
            ensure(subset(lo, mid) && subset(mid, hi), || format!("rotation {k} by {angle}"))?;
        }
    }

    let estimate = 4.0 * 1.8 / (METERS_PER_PIXEL * METERS_PER_PIXEL);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let path = path_for(&map, rng.gen_range(0..3), rng.gen_range(0..3), 0.5).unwrap();
        let s = rng.gen_range(0.0..1.0) * path.total_length;
        let ego = path.pose_at(s);
        let view = rasterize_view(&map, &[OrientedRect::new(ego.position, ego.heading, 4.0, 1.8)], ego, &path, s);
        worst = worst.max((view.obstacles.count_ones() as f64 - estimate).abs());
    }
    ensure(worst <= 4.0, || format!("ego footprint off by {worst:.2} px"))?;
    Ok(format!("100 paths, 50 rotations, ego footprint within {worst:.2} px of {estimate:.2}"))
}

// ---- 8: smoke training ----

const SMOKE_EPISODES: u64 = 2_000;
const SMOKE_WINDOW: usize = 200;

/// Goal ratio over the final window of a 2-agent training run.
fn smoke_run(policy: Policy, seed: u64) -> Result<f64, String> {
    let run = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let map = Arc::new(build_roundabout(&run.geometry()).unwrap());
    let cfg = TrainerConfig {
        n_env: 1,
        n_ag: 2,
        total_episodes: SMOKE_EPISODES,
        seed,
        ..run.trainer()
    };
    let net = PolicyValueNet::init(run.net(), seed).map_err(|e| e.to_string())?;
    let store = GlobalStore::new(net, cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let (tx, rx) = mpsc::channel();
    let make = |_| {
        let env = EnvConfig {
            max_vehicles: 2,
            speed_cap_mode: SpeedCapMode::TargetCap,
            ..run.env()
        };
        TrafficEnv::new(map.clone(), env, run.reward()).unwrap()
    };
    run_training(&cfg, &run.rl(), &store, make, policy, Some(tx)).map_err(|e| e.to_string())?;
    let mut stats: Vec<_> = rx.into_iter().collect();
    stats.sort_by_key(|s| s.episode);
    let tail = &stats[stats.len().saturating_sub(SMOKE_WINDOW)..];
    let goals = tail.iter().filter(|s| s.outcome == AgentStatus::ReachedGoal).count();
    Ok(goals as f64 / tail.len() as f64)
}

fn smoke_training() -> Check {
    let seed = 2024;
    let maintain: Arc<ScriptFn> = Arc::new(|_, _| Action::Maintain as usize);
    let baseline = smoke_run(Policy::Scripted(maintain), seed)?;
    let learned = smoke_run(Policy::Learned, seed)?;
    ensure(learned - baseline >= 0.15, || {
        format!("learned {learned:.3} vs always-maintain {baseline:.3} over the last {SMOKE_WINDOW} episodes")
    })?;
    Ok(format!("goal ratio {learned:.3} vs always-maintain {baseline:.3} over the last {SMOKE_WINDOW} episodes"))
}

// ---- 9: long sweep trend (opt-in) ----

fn long_trend() -> Option<Check> {
    std::env::var_os("ROUNDSIM_LONG")?;
    Some((|| {
        let run = RunConfig {
            total_episodes: 50_000,
            n_env: 4,
            ..RunConfig::default()
        };
        let map = Arc::new(build_roundabout(&run.geometry()).unwrap());
        let tcfg = run.trainer();
        let store = GlobalStore::new(
            PolicyValueNet::init(run.net(), run.seed).map_err(|e| e.to_string())?,
            tcfg.lr,
            tcfg.rmsprop_decay,
            tcfg.rmsprop_eps,
        );
        let make = |i: usize| {
            let env = EnvConfig {
                seed: run.seed + i as u64,
                ..run.env()
            };
            TrafficEnv::new(map.clone(), env, run.reward()).unwrap()
        };
        run_training(&tcfg, &run.rl(), &store, make, Policy::Learned, None).map_err(|e| e.to_string())?;
        let spec = SweepSpec {
            parameter: SweepParameter::Aggressiveness,
            values: vec![0.0, 0.5, 1.0],
            ..run.sweep()
        };
        let net = store.into_net();
        let rows = run_sweep(&spec, map, &run.env(), &run.reward(), &net, |_| {}).map_err(|e| e.to_string())?;
        let speeds: Vec<f64> = rows.iter().map(|r| r.avg_speed).collect();
        ensure(speeds.windows(2).all(|w| w[1] >= w[0] - 0.2), || format!("speeds {speeds:?}"))?;
        Ok(format!("average speeds {speeds:.2?}"))
    })())
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn run_one(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let (pass, detail) = match (result, budget) {
        (Ok(d), Some(b)) if elapsed > b => (false, format!("{d}; over the {}s budget", b.as_secs())),
        (Ok(d), _) => (true, d),
        (Err(e), _) => (false, e),
    };
    println!(
        "[{}] {id}. {name} ({:.1}s): {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "reward oracles", budget: Duration::from_secs(1), run: rewards },
        Criterion { id: 2, name: "n-step returns", budget: Duration::from_secs(1), run: returns },
        Criterion { id: 3, name: "gradient fidelity", budget: Duration::from_secs(60), run: gradients },
        Criterion { id: 4, name: "validation convergence", budget: Duration::from_secs(300), run: validation },
        Criterion { id: 5, name: "multi-agent mechanics", budget: Duration::from_secs(60), run: multi_agent },
        Criterion { id: 6, name: "simulator determinism", budget: Duration::from_secs(30), run: determinism },
        Criterion { id: 7, name: "rasterizer properties", budget: Duration::from_secs(30), run: rasterizer },
        Criterion { id: 8, name: "smoke training", budget: Duration::from_secs(7_200), run: smoke_training },
    ];
    let only: Option<Vec<u32>> = std::env::var("ROUNDSIM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        failed += usize::from(!run_one(c.id, c.name, Some(c.budget), c.run));
    }
    match long_trend() {
        // informative only; never fails the run
        Some(result) => {
            run_one(9, "long-run sweep trend (non-gating)", None, || result);
        }
        None => println!("[SKIP] 9. long-run sweep trend (non-gating): set ROUNDSIM_LONG=1 to run"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
