use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use roundsim::config::RunConfig;
use roundsim::eval::{self, PolicyDriver};
use roundsim::nn::{self, PolicyValueNet};
use roundsim::scenario::{build_roundabout, RoundaboutMap, VIEW_PIXELS};
use roundsim::traffic_env::{Action, TraceWriter, TrafficEnv};
use roundsim::trainer::{self, GlobalStore, Policy};
use roundsim::validation_env::run_validation;

#[derive(Parser)]
#[command(name = "roundsim", version, about = "Roundabout traffic simulator and actor-critic trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared policy with parallel workers.
    Train(Common),
    /// Certify the learner on the chain MDP against its exact solution.
    Validate(Common),
    /// Sweep the probe's aggressiveness or target speed.
    EvalSweep {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint (overrides `checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the simulator and dump the trace and every rendered view.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        /// Drive every vehicle with one fixed action.
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        scripted: Option<Scripted>,
        /// Drive every vehicle with a trained policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Plot learning curves from a stats CSV.
    Plot {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Moving-average window in episodes.
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scripted {
    Accelerate,
    Brake,
    Maintain,
}

impl From<Scripted> for Action {
    fn from(s: Scripted) -> Self {
        match s {
            Scripted::Accelerate => Action::Accelerate,
            Scripted::Brake => Action::Brake,
            Scripted::Maintain => Action::Maintain,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

type CliResult<T> = Result<T, Failure>;

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(common) => train(&common),
        Command::Validate(common) => validate(&common),
        Command::EvalSweep { common, checkpoint } => eval_sweep(&common, checkpoint),
        Command::Replay {
            common,
            steps,
            scripted,
            checkpoint,
        } => replay(&common, steps, scripted, checkpoint),
        Command::Plot { stats, out, window } => plot(&stats, &out, window),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Loads the configuration, creates the output directory and echoes the
/// resolved configuration into it.
fn setup(common: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(config_err)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(runtime)?;
    fs::write(out.join("config.json"), cfg.to_json()).map_err(runtime)?;
    Ok((cfg, out))
}

fn build_map(cfg: &RunConfig) -> CliResult<Arc<RoundaboutMap>> {
    build_roundabout(&cfg.geometry()).map(Arc::new).map_err(config_err)
}

/// Writes to a sibling file first so readers never see a partial checkpoint.
fn save_atomically(net: &PolicyValueNet, path: &Path) -> Result<(), nn::NnError> {
    let tmp = path.with_extension("tmp");
    nn::save(net, &tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn train(common: &Common) -> CliResult<()> {
    let (cfg, out) = setup(common)?;
    let map = build_map(&cfg)?;
    let tcfg = cfg.trainer();
    let net = match &cfg.init_checkpoint {
        Some(path) => nn::load(path).map_err(runtime)?,
        None => PolicyValueNet::init(cfg.net(), cfg.seed).map_err(config_err)?,
    };
    let store = GlobalStore::new(net, tcfg.lr, tcfg.rmsprop_decay, tcfg.rmsprop_eps);
    let mut env_cfg = cfg.env();
    if env_cfg.max_vehicles > tcfg.n_ag {
        warn!("capping vehicles per instance at n_ag = {}", tcfg.n_ag);
        env_cfg.max_vehicles = tcfg.n_ag;
    }
    let make_env = |i: usize| {
        let env_cfg = roundsim::traffic_env::EnvConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..env_cfg.clone()
        };
        TrafficEnv::new(map.clone(), env_cfg, cfg.reward()).expect("configuration validated")
    };

    let halt = Arc::new(AtomicBool::new(false));
    {
        let halt = halt.clone();
        if let Err(e) = ctrlc::set_handler(move || halt.store(true, Ordering::SeqCst)) {
            warn!("cannot install the interrupt handler: {e}");
        }
    }

    let stats_path = out.join("stats.csv");
    let ckpt_path = out.join("checkpoint.ckpt");
    let (tx, rx) = mpsc::channel::<trainer::EpisodeStats>();
    let every = cfg.checkpoint_every;
    info!("training for {} episodes with {}x{} workers", tcfg.total_episodes, tcfg.n_env, tcfg.n_ag);

    let (report, writer) = std::thread::scope(|scope| {
        let store = &store;
        let writer = scope.spawn(move || -> Result<u64, String> {
            let mut w = csv::Writer::from_path(&stats_path).map_err(|e| e.to_string())?;
            let mut count = 0u64;
            let mut recent = std::collections::VecDeque::new();
            for stats in rx {
                w.serialize(stats.to_row()).map_err(|e| e.to_string())?;
                count += 1;
                recent.push_back(stats.outcome == roundsim::env::AgentStatus::ReachedGoal);
                if recent.len() > 100 {
                    recent.pop_front();
                }
                if every > 0 && count.is_multiple_of(every) {
                    w.flush().map_err(|e| e.to_string())?;
                    save_atomically(&store.snapshot().0, &ckpt_path).map_err(|e| e.to_string())?;
                    let ratio = recent.iter().filter(|&&g| g).count() as f64 / recent.len() as f64;
                    info!("episode {count}: goal ratio over the last {} = {ratio:.3}", recent.len());
                }
            }
            w.flush().map_err(|e| e.to_string())?;
            Ok(count)
        });
        let report = trainer::run_training_until(&tcfg, &cfg.rl(), store, make_env, Policy::Learned, Some(tx), &halt);
        (report, writer.join())
    });
    let written = match writer {
        Ok(r) => r.map_err(Failure::Runtime)?,
        Err(_) => return Err(Failure::Runtime("the stats writer panicked".into())),
    };
    let report = report.map_err(runtime)?;
    let final_net = store.into_net();
    save_atomically(&final_net, &out.join("final.ckpt")).map_err(runtime)?;
    if halt.load(Ordering::SeqCst) {
        info!("interrupted; checkpoint written");
    }
    info!(
        "finished {} episodes ({} rows written, {} updates), env steps {:?}",
        report.episodes, written, report.pushes, report.env_steps
    );
    Ok(())
}

fn validate(common: &Common) -> CliResult<()> {
    let (cfg, out) = setup(common)?;
    let mut all_pass = true;
    for &seed in &cfg.validation_seeds {
        let vcfg = cfg.validation(seed);
        let report = run_validation(&vcfg).map_err(runtime)?;
        let file = fs::File::create(out.join(format!("validation_seed{seed}.csv"))).map_err(runtime)?;
        report.write_csv(file).map_err(runtime)?;
        let last = report.last();
        let pass = last.agreement >= 0.95 && last.value_error < 0.15;
        all_pass &= pass;
        println!(
            "seed {seed}: agreement {:.3}, max value error {:.4} after {} steps ({} episodes) {}",
            last.agreement,
            last.value_error,
            last.step,
            report.episodes,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(Failure::Runtime("validation thresholds not met".into()))
    }
}

fn eval_sweep(common: &Common, checkpoint: Option<PathBuf>) -> CliResult<()> {
    let (mut cfg, out) = setup(common)?;
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    let spec = cfg.sweep();
    if spec.checkpoint.is_none() {
        return Err(Failure::Config("eval-sweep needs a checkpoint".into()));
    }
    let map = build_map(&cfg)?;
    let rows = eval::run_sweep_from_checkpoint(&spec, map, &cfg.env(), &cfg.reward(), |r| {
        info!(
            "value {}: success {:.3}, speed {:.2} m/s over {} episodes",
            r.value, r.success_ratio, r.avg_speed, r.episodes
        )
    })
    .map_err(runtime)?;
    let file = fs::File::create(out.join("sweep.csv")).map_err(runtime)?;
    eval::write_rows(&rows, file).map_err(runtime)?;
    let svg = eval::sweep_svg(&rows, spec.parameter).map_err(runtime)?;
    fs::write(out.join("sweep.svg"), svg).map_err(runtime)?;
    Ok(())
}

fn blank_pgm() -> Vec<u8> {
    let mut out = format!("P5\n{VIEW_PIXELS} {VIEW_PIXELS}\n255\n").into_bytes();
    out.resize(out.len() + VIEW_PIXELS * VIEW_PIXELS, 0);
    out
}

fn replay(common: &Common, steps: u64, scripted: Option<Scripted>, checkpoint: Option<PathBuf>) -> CliResult<()> {
    let (cfg, out) = setup(common)?;
    let net = match (&scripted, &checkpoint) {
        (Some(_), _) => None,
        (None, Some(path)) => Some(nn::load(path).map_err(runtime)?),
        (None, None) => return Err(Failure::Config("replay needs --scripted or --checkpoint".into())),
    };
    let map = build_map(&cfg)?;
    let mut env = TrafficEnv::new(map, cfg.env(), cfg.reward()).map_err(config_err)?;
    let mut driver = net.as_ref().map(|n| PolicyDriver::new(n, cfg.action_repeat, cfg.seed));
    let frames = out.join("frames");
    fs::create_dir_all(&frames).map_err(runtime)?;
    let trace_file = fs::File::create(out.join("trace.csv")).map_err(runtime)?;
    let mut trace = TraceWriter::new(std::io::BufWriter::new(trace_file)).map_err(runtime)?;
    env.reset_world();
    for _ in 0..steps {
        let mut actions = std::collections::BTreeMap::new();
        for v in env.vehicles() {
            let a = match (&scripted, &mut driver) {
                (Some(s), _) => Action::from(*s),
                (None, Some(d)) => d.act(v.id, &env.observation(v.id)).map_err(runtime)?,
                (None, None) => unreachable!("checked above"),
            };
            actions.insert(v.id, a);
        }
        let step = env.step_joint(&actions).map_err(runtime)?;
        if let Some(d) = &mut driver {
            for o in step.outcomes.iter().filter(|o| o.status.is_terminal()) {
                d.forget(o.id);
            }
        }
        trace.write_step(&step).map_err(runtime)?;
        // the view of the oldest vehicle still on the road, blank if none
        let view = env.vehicles().first().and_then(|v| env.render(v.id));
        for (k, name) in ["navigable", "obstacles", "path"].into_iter().enumerate() {
            let bytes = match &view {
                Some(layers) => layers.layers()[k].to_pgm(),
                None => blank_pgm(),
            };
            let path = frames.join(format!("step{:05}_{name}.pgm", step.step));
            fs::write(path, bytes).map_err(runtime)?;
        }
    }
    let mut w = trace.finish().map_err(runtime)?;
    w.flush().map_err(runtime)?;
    info!("replayed {steps} steps into {}", out.display());
    Ok(())
}

fn plot(stats: &Path, out: &Path, window: usize) -> CliResult<()> {
    let file = fs::File::open(stats).map_err(config_err)?;
    let rows = trainer::read_stats(file).map_err(runtime)?;
    let svg = eval::learning_curve_svg(&rows, window).map_err(runtime)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(out, svg).map_err(runtime)?;
    Ok(())
}
