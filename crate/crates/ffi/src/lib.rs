//! C ABI for `popmf`.
//!
//! Objects cross the boundary as opaque handles created by `popmf_*_new`-style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`PopmfStatus`]; on failure `popmf_last_error` describes the
//! problem. Results are written through caller-provided out pointers and
//! buffers. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use popmf::dynamics::{coordination_utility, logit_policy, sis_model};
use popmf::harness::config::weighted_adjacency;
use popmf::interaction::WeightedEdge;
use popmf::meanfield::{nimfa_average, solve_cmfa, solve_nimfa};
use popmf::oracle::{build_generator, exact_marginals, DEFAULT_CAP};
use popmf::simulator::{sample_average, simulate_ct, simulate_dt};
use popmf::{Error, InteractionMatrix, PopulationModel, PopulationState, Trajectory};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopmfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is inconsistent with the others (buffer length, sizes).
    InvalidArgument = 2,
    /// The library rejected the input (bad model, bad matrix, cap exceeded).
    Validation = 3,
    /// A computation failed at run time.
    Runtime = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// Row-stochastic interaction matrix.
pub struct PopmfInteraction(InteractionMatrix);

/// Two-state population model (logit coordination game or SIS).
pub struct PopmfModel(PopulationModel);

/// One simulated trajectory.
pub struct PopmfTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Argument(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> PopmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PopmfStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(&format!("null pointer: {name}"));
            PopmfStatus::NullPointer
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(&msg);
            PopmfStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            if e.is_validation() {
                PopmfStatus::Validation
            } else {
                PopmfStatus::Runtime
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            PopmfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, name: &'static str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or(Failure::Null(name))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn initial_state(model: &PopulationModel, states: &[u32]) -> Result<PopulationState, Failure> {
    if states.len() != model.n_agents() {
        return Err(Failure::Argument(format!(
            "initial state has {} entries, model has {} agents",
            states.len(),
            model.n_agents()
        )));
    }
    Ok(PopulationState::new(
        states.iter().map(|&s| s as usize).collect(),
        model.n_states(),
    )?)
}

fn check_len(got: usize, want: usize, name: &str) -> Outcome {
    if got != want {
        return Err(Failure::Argument(format!("{name} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Message for the most recent failing call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn popmf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn popmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Complete graph with self-loops, `W = 11ᵀ/n`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_complete(n: usize, out: *mut *mut PopmfInteraction) -> PopmfStatus {
    guard(|| emit(out, PopmfInteraction(InteractionMatrix::complete(n)?)))
}

/// Ring where each agent averages over its `⌊density·n⌋` nearest neighbors.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_nearest_neighbor(
    n: usize,
    density: f64,
    out: *mut *mut PopmfInteraction,
) -> PopmfStatus {
    guard(|| emit(out, PopmfInteraction(InteractionMatrix::nearest_neighbor(n, density)?)))
}

/// Random-walk matrix of an undirected graph given by `len` edges
/// `(us[k], vs[k])`.
///
/// # Safety
/// `us` and `vs` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_from_edges(
    n: usize,
    us: *const usize,
    vs: *const usize,
    len: usize,
    out: *mut *mut PopmfInteraction,
) -> PopmfStatus {
    guard(|| {
        let us = slice(us, len, "us")?;
        let vs = slice(vs, len, "vs")?;
        let edges: Vec<(usize, usize)> = us.iter().copied().zip(vs.iter().copied()).collect();
        emit(out, PopmfInteraction(InteractionMatrix::from_adjacency(&edges, n)?))
    })
}

/// # Safety
/// `w` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_free(w: *mut PopmfInteraction) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_size(w: *const PopmfInteraction) -> usize {
    w.as_ref().map_or(0, |w| w.0.n())
}

/// Local density θ, spectral density λ (power iteration to `tol`) and the
/// maximum column sum.
///
/// # Safety
/// `w` must be a live handle; the three out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn popmf_interaction_density(
    w: *const PopmfInteraction,
    tol: f64,
    max_iter: usize,
    theta: *mut f64,
    lambda: *mut f64,
    max_col_sum: *mut f64,
) -> PopmfStatus {
    guard(|| {
        let w = handle(w, "w")?;
        if theta.is_null() || lambda.is_null() || max_col_sum.is_null() {
            return Err(Failure::Null("density outputs"));
        }
        let rep = w.0.density_report(tol, max_iter)?;
        *theta = rep.theta;
        *lambda = rep.lambda;
        *max_col_sum = rep.max_col_sum;
        Ok(())
    })
}

/// Logit coordination game with utilities `(x₁, 2x₂)` and noise `eta`; every
/// agent has clock rate `clock_rate`. The interaction matrix is copied.
///
/// # Safety
/// `w` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn popmf_model_logit(
    w: *const PopmfInteraction,
    eta: f64,
    clock_rate: f64,
    out: *mut *mut PopmfModel,
) -> PopmfStatus {
    guard(|| {
        let w = handle(w, "w")?;
        let policy = logit_policy(coordination_utility(), eta)?;
        let n = w.0.n();
        let model = PopulationModel::new(
            popmf::StateSpace::new(["1", "2"])?,
            vec![clock_rate; n],
            policy,
            Arc::new(w.0.clone()),
        )?;
        emit(out, PopmfModel(model))
    })
}

/// SIS epidemic on an undirected weighted graph. `weights` may be null for
/// unit weights. State 0 is susceptible, state 1 infected.
///
/// # Safety
/// `us`, `vs` (and `weights` unless null) must point to `len` readable
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn popmf_model_sis(
    n: usize,
    us: *const usize,
    vs: *const usize,
    weights: *const f64,
    len: usize,
    b: f64,
    gamma: f64,
    out: *mut *mut PopmfModel,
) -> PopmfStatus {
    guard(|| {
        let us = slice(us, len, "us")?;
        let vs = slice(vs, len, "vs")?;
        let ws = if weights.is_null() { None } else { Some(slice(weights, len, "weights")?) };
        let edges: Vec<WeightedEdge> = (0..len)
            .map(|k| WeightedEdge {
                u: us[k],
                v: vs[k],
                weight: ws.map_or(1.0, |w| w[k]),
            })
            .collect();
        let adjacency = weighted_adjacency(&edges, n)?;
        emit(out, PopmfModel(sis_model(&adjacency, b, gamma)?))
    })
}

/// # Safety
/// `m` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn popmf_model_free(m: *mut PopmfModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_model_agents(m: *const PopmfModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_agents())
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_model_states(m: *const PopmfModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_states())
}

/// Continuous-time trajectory on `[0, horizon]` from the state indices in
/// `init` (one per agent).
///
/// # Safety
/// `m` must be a live handle, `init` must point to `n` readable values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn popmf_simulate_ct(
    m: *const PopmfModel,
    init: *const u32,
    n: usize,
    horizon: f64,
    seed: u64,
    out: *mut *mut PopmfTrajectory,
) -> PopmfStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let start = initial_state(m, slice(init, n, "init")?)?;
        emit(out, PopmfTrajectory(simulate_ct(m, &start, horizon, seed)?))
    })
}

/// Discrete-time chain with step `xi`; requires `xi · Σ r_i ≤ 1`.
///
/// # Safety
/// As for [`popmf_simulate_ct`].
#[no_mangle]
pub unsafe extern "C" fn popmf_simulate_dt(
    m: *const PopmfModel,
    init: *const u32,
    n: usize,
    horizon: f64,
    xi: f64,
    seed: u64,
    out: *mut *mut PopmfTrajectory,
) -> PopmfStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let start = initial_state(m, slice(init, n, "init")?)?;
        emit(out, PopmfTrajectory(simulate_dt(m, &start, horizon, xi, seed)?))
    })
}

/// # Safety
/// `t` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn popmf_trajectory_free(t: *mut PopmfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of state-changing events, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn popmf_trajectory_events(t: *const PopmfTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.0.events.len())
}

/// Population average at each of the `grid_len` times, written row-major
/// into `out` (`grid_len × n_states` values).
///
/// # Safety
/// `t` must be a live handle, `grid` readable for `grid_len` values and
/// `out` writable for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn popmf_trajectory_sample_average(
    t: *const PopmfTrajectory,
    grid: *const f64,
    grid_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PopmfStatus {
    guard(|| {
        let t = &handle(t, "trajectory")?.0;
        let grid = slice(grid, grid_len, "grid")?;
        let s = t.initial.n_states();
        check_len(out_len, grid_len * s, "out")?;
        let out = slice_mut(out, out_len, "out")?;
        for (row, avg) in sample_average(t, grid)?.iter().enumerate() {
            out[row * s..(row + 1) * s].copy_from_slice(avg);
        }
        Ok(())
    })
}

/// CMFA state at `horizon` from `x0` (RK4 with step `step`). Requires a
/// model with identical agents.
///
/// # Safety
/// `m` must be a live handle; `x0` and `out` must hold `n_states` values.
#[no_mangle]
pub unsafe extern "C" fn popmf_cmfa_final(
    m: *const PopmfModel,
    x0: *const f64,
    n_states: usize,
    horizon: f64,
    step: f64,
    out: *mut f64,
) -> PopmfStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        check_len(n_states, m.n_states(), "x0")?;
        let x0 = slice(x0, n_states, "x0")?;
        let out = slice_mut(out, n_states, "out")?;
        let r = m.uniform_rate().ok_or(Error::NonHomogeneousPolicy)?;
        let sol = solve_cmfa(m.policy(), r, x0, horizon, step, usize::MAX)?;
        out.copy_from_slice(sol.final_state());
        Ok(())
    })
}

/// Population average of the NIMFA at `horizon`, started from the pure
/// profile given by the state indices in `init`.
///
/// # Safety
/// `m` must be a live handle, `init` readable for `n` values and `out`
/// writable for `n_states` values.
#[no_mangle]
pub unsafe extern "C" fn popmf_nimfa_average_final(
    m: *const PopmfModel,
    init: *const u32,
    n: usize,
    horizon: f64,
    step: f64,
    out: *mut f64,
    n_states: usize,
) -> PopmfStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        check_len(n_states, m.n_states(), "out")?;
        let start = initial_state(m, slice(init, n, "init")?)?;
        let out = slice_mut(out, n_states, "out")?;
        let sol = solve_nimfa(m, &start.to_profile(), horizon, step, usize::MAX)?;
        let avg = nimfa_average(&sol);
        out.copy_from_slice(avg.last().expect("solution has a final state"));
        Ok(())
    })
}

/// Exact `E[Y_av(t)]` from the deterministic initial state `init`, by
/// uniformization over all `|S|^N` configurations (at most 65536).
///
/// # Safety
/// `m` must be a live handle, `init` readable for `n` values and `out`
/// writable for `n_states` values.
#[no_mangle]
pub unsafe extern "C" fn popmf_exact_average(
    m: *const PopmfModel,
    init: *const u32,
    n: usize,
    t: f64,
    out: *mut f64,
    n_states: usize,
) -> PopmfStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        check_len(n_states, m.n_states(), "out")?;
        let start = initial_state(m, slice(init, n, "init")?)?;
        let out = slice_mut(out, n_states, "out")?;
        let gen = build_generator(m, DEFAULT_CAP)?;
        let p0 = gen.point_distribution(&start)?;
        let marg = exact_marginals(&gen, &p0, &[t])?;
        out.copy_from_slice(&marg[0]);
        Ok(())
    })
}
