//! C interface to the roundabout simulator and the policy/value network.
//!
//! Objects are exposed as opaque handles created by `*_new`/`*_load` and
//! released with the matching `*_free`. Every fallible function returns an
//! [`RbStatus`]; on failure a description is kept per thread and can be
//! fetched with [`rb_last_error`]. Panics never cross the boundary.
//!
//! Handles are not synchronized: a handle may be moved between threads but
//! must not be used from two threads at once.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use roundsim::config::RunConfig;
use roundsim::env::AgentStatus;
use roundsim::nn::{self, PolicyValueNet};
use roundsim::scenario::{build_roundabout, CELLS};
use roundsim::traffic_env::{Action, AgentOutcome, TrafficEnv, FRAME_STACK, NUMERIC_INPUTS};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Simulation = 4,
    Network = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Terminal state of an agent, mirroring the simulator's statuses.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbAgentStatus {
    Active = 0,
    ReachedGoal = 1,
    Crashed = 2,
    TimedOut = 3,
}

impl From<AgentStatus> for RbAgentStatus {
    fn from(s: AgentStatus) -> Self {
        match s {
            AgentStatus::Active => RbAgentStatus::Active,
            AgentStatus::ReachedGoal => RbAgentStatus::ReachedGoal,
            AgentStatus::Crashed => RbAgentStatus::Crashed,
            AgentStatus::TimedOut => RbAgentStatus::TimedOut,
        }
    }
}

/// What happened to one agent during the last step.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbOutcome {
    pub id: u64,
    pub status: RbAgentStatus,
    /// Total reward of the step.
    pub reward: f64,
    pub speed: f64,
    /// Arc length along the route (m).
    pub s: f64,
}

/// Action indices accepted by [`rb_env_step`].
pub const RB_ACTION_ACCELERATE: u32 = 0;
pub const RB_ACTION_BRAKE: u32 = 1;
pub const RB_ACTION_MAINTAIN: u32 = 2;

/// Length of the visual observation: stacked frames of three 84x84 layers,
/// channel-major, values 0 or 1.
pub const RB_VISUAL_LEN: usize = 84_672;
/// Length of the numeric observation.
pub const RB_NUMERIC_LEN: usize = 4;

const _: () = assert!(RB_VISUAL_LEN == FRAME_STACK * 3 * CELLS);
const _: () = assert!(RB_NUMERIC_LEN == NUMERIC_INPUTS);

/// Opaque simulator handle.
pub struct RbEnv {
    env: TrafficEnv,
    last: Vec<RbOutcome>,
    visual: Vec<f64>,
}

/// Opaque network handle.
pub struct RbNet {
    net: PolicyValueNet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Fail(RbStatus, String);

impl Fail {
    fn new(status: RbStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            RbStatus::Panic
        }
    }
}

unsafe fn deref_mut<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| Fail::new(RbStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| Fail::new(RbStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::new(RbStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail::new(RbStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    CStr::from_ptr(deref(ptr, what)?)
        .to_str()
        .map_err(|_| Fail::new(RbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// A null pointer selects the defaults.
unsafe fn run_config(json: *const c_char) -> Result<RunConfig, Fail> {
    if json.is_null() {
        return Ok(RunConfig::default());
    }
    RunConfig::from_json(c_str(json, "config")?).map_err(|e| Fail::new(RbStatus::Config, e))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the length of
/// the full message without the terminator; an empty message means the last
/// call succeeded.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rb_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a simulator from a JSON run configuration (null for defaults).
/// The world starts empty until [`rb_env_reset`] is called.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_env_new(config_json: *const c_char, out: *mut *mut RbEnv) -> RbStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg = run_config(config_json)?;
        let map = build_roundabout(&cfg.geometry()).map_err(|e| Fail::new(RbStatus::Config, e))?;
        let env = TrafficEnv::new(Arc::new(map), cfg.env(), cfg.reward()).map_err(|e| Fail::new(RbStatus::Config, e))?;
        *out = Box::into_raw(Box::new(RbEnv {
            env,
            last: Vec::new(),
            visual: Vec::new(),
        }));
        Ok(())
    })
}

/// Releases a simulator; null is ignored.
///
/// # Safety
/// `env` must be null or a handle from [`rb_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rb_env_free(env: *mut RbEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Restarts the world at t = 0 with the initial vehicles.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_env_reset(env: *mut RbEnv) -> RbStatus {
    guard(|| {
        let h = deref_mut(env, "env")?;
        h.env.reset_world();
        h.last.clear();
        Ok(())
    })
}

/// Writes the ids of the vehicles on the road, oldest first. `out_len`
/// receives the count; if it exceeds `cap` nothing is written and
/// `RB_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `env` must be a live handle, `ids` must hold `cap` values, `out_len`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_env_agents(env: *const RbEnv, ids: *mut u64, cap: usize, out_len: *mut usize) -> RbStatus {
    guard(|| {
        let h = deref(env, "env")?;
        let out_len = deref_mut(out_len, "out_len")?;
        let vehicles = h.env.vehicles();
        *out_len = vehicles.len();
        if vehicles.len() > cap {
            return Err(Fail::new(RbStatus::BufferTooSmall, format!("{} agents, room for {cap}", vehicles.len())));
        }
        let ids = slice_mut(ids, vehicles.len(), "ids")?;
        for (slot, v) in ids.iter_mut().zip(vehicles) {
            *slot = v.id;
        }
        Ok(())
    })
}

/// Advances the world by one tick. `ids[i]` performs `actions[i]`; every
/// vehicle on the road needs exactly one action. The outcomes are kept for
/// [`rb_env_outcomes`] and `out_count` receives their number.
///
/// # Safety
/// `ids` and `actions` must hold `n` values; `env` and `out_count` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn rb_env_step(
    env: *mut RbEnv,
    ids: *const u64,
    actions: *const u32,
    n: usize,
    out_count: *mut usize,
) -> RbStatus {
    guard(|| {
        let h = deref_mut(env, "env")?;
        let out_count = deref_mut(out_count, "out_count")?;
        let ids = slice(ids, n, "ids")?;
        let actions = slice(actions, n, "actions")?;
        let mut joint = BTreeMap::new();
        for (&id, &a) in ids.iter().zip(actions) {
            let action = Action::from_index(a as usize)
                .ok_or_else(|| Fail::new(RbStatus::InvalidArgument, format!("action {a} out of range")))?;
            if joint.insert(id, action).is_some() {
                return Err(Fail::new(RbStatus::InvalidArgument, format!("agent {id} listed twice")));
            }
        }
        let step = h.env.step_joint(&joint).map_err(|e| Fail::new(RbStatus::Simulation, e))?;
        h.last = step.outcomes.iter().map(outcome).collect();
        *out_count = h.last.len();
        Ok(())
    })
}

fn outcome(o: &AgentOutcome) -> RbOutcome {
    RbOutcome {
        id: o.id,
        status: o.status.into(),
        reward: o.reward.total,
        speed: o.speed,
        s: o.s,
    }
}

/// Copies the outcomes of the last step; same size protocol as
/// [`rb_env_agents`].
///
/// # Safety
/// `env` must be a live handle, `buf` must hold `cap` values, `out_len`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_env_outcomes(env: *const RbEnv, buf: *mut RbOutcome, cap: usize, out_len: *mut usize) -> RbStatus {
    guard(|| {
        let h = deref(env, "env")?;
        let out_len = deref_mut(out_len, "out_len")?;
        *out_len = h.last.len();
        if h.last.len() > cap {
            return Err(Fail::new(RbStatus::BufferTooSmall, format!("{} outcomes, room for {cap}", h.last.len())));
        }
        slice_mut(buf, h.last.len(), "buf")?.copy_from_slice(&h.last);
        Ok(())
    })
}

/// Writes the observation of an active vehicle. `visual` needs
/// `RB_VISUAL_LEN` values (or may be null when `visual_len` is 0 to skip
/// it) and `numeric` needs `RB_NUMERIC_LEN`.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn rb_env_observation(
    env: *mut RbEnv,
    id: u64,
    visual: *mut f64,
    visual_len: usize,
    numeric: *mut f64,
    numeric_len: usize,
) -> RbStatus {
    guard(|| {
        let h = deref_mut(env, "env")?;
        if h.env.vehicle(id).is_none() {
            return Err(Fail::new(RbStatus::InvalidArgument, format!("no active agent {id}")));
        }
        if numeric_len != RB_NUMERIC_LEN || (visual_len != 0 && visual_len != RB_VISUAL_LEN) {
            return Err(Fail::new(
                RbStatus::BufferTooSmall,
                format!("expected {RB_VISUAL_LEN} (or 0) visual and {RB_NUMERIC_LEN} numeric values"),
            ));
        }
        let obs = h.env.observation(id);
        slice_mut(numeric, numeric_len, "numeric")?.copy_from_slice(&obs.numeric);
        if visual_len > 0 {
            obs.write_visual(&mut h.visual);
            slice_mut(visual, visual_len, "visual")?.copy_from_slice(&h.visual);
        }
        Ok(())
    })
}

/// Simulated time in seconds since the last reset.
///
/// # Safety
/// `env` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_env_sim_time(env: *const RbEnv, out: *mut f64) -> RbStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(env, "env")?.env.sim_time();
        Ok(())
    })
}

/// Creates a freshly initialized network whose shape follows the run
/// configuration (null for defaults).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_net_new(config_json: *const c_char, seed: u64, out: *mut *mut RbNet) -> RbStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg = run_config(config_json)?;
        let net = PolicyValueNet::init(cfg.net(), seed).map_err(|e| Fail::new(RbStatus::Config, e))?;
        *out = Box::into_raw(Box::new(RbNet { net }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_net_load(path: *const c_char, out: *mut *mut RbNet) -> RbStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let path = PathBuf::from(c_str(path, "path")?);
        let net = nn::load(&path).map_err(|e| match e {
            nn::NnError::Io(_) => Fail::new(RbStatus::Io, e),
            other => Fail::new(RbStatus::Network, other),
        })?;
        *out = Box::into_raw(Box::new(RbNet { net }));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rb_net_save(net: *const RbNet, path: *const c_char) -> RbStatus {
    guard(|| {
        let h = deref(net, "net")?;
        let path = PathBuf::from(c_str(path, "path")?);
        nn::save(&h.net, &path).map_err(|e| Fail::new(RbStatus::Io, e))
    })
}

/// Releases a network; null is ignored.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_net_free(net: *mut RbNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of trainable parameters.
///
/// # Safety
/// `net` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_net_param_count(net: *const RbNet, out: *mut usize) -> RbStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(net, "net")?.net.param_count();
        Ok(())
    })
}

/// Lengths of the inputs the network expects; the visual length is 0 for a
/// network without the convolutional trunk.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_net_input_sizes(net: *const RbNet, visual_len: *mut usize, numeric_len: *mut usize) -> RbStatus {
    guard(|| {
        let cfg = deref(net, "net")?.net.config();
        *deref_mut(visual_len, "visual_len")? = cfg.visual_len();
        *deref_mut(numeric_len, "numeric_len")? = cfg.numeric_inputs;
        Ok(())
    })
}

/// Evaluates the network: `logits` receives one value per action (3) and
/// `value` the state value.
///
/// # Safety
/// Buffers must hold the stated number of values; `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rb_net_forward(
    net: *const RbNet,
    visual: *const f64,
    visual_len: usize,
    numeric: *const f64,
    numeric_len: usize,
    logits: *mut f64,
    logits_len: usize,
    value: *mut f64,
) -> RbStatus {
    guard(|| {
        let h = deref(net, "net")?;
        let value = deref_mut(value, "value")?;
        let actions = h.net.config().actions;
        if logits_len != actions {
            return Err(Fail::new(RbStatus::BufferTooSmall, format!("logits need {actions} values")));
        }
        let out = h
            .net
            .forward(slice(visual, visual_len, "visual")?, slice(numeric, numeric_len, "numeric")?)
            .map_err(|e| Fail::new(RbStatus::InvalidArgument, e))?;
        slice_mut(logits, logits_len, "logits")?.copy_from_slice(&out.logits);
        *value = out.value;
        Ok(())
    })
}
