//! Exact continuous-time simulation of population processes, the
//! fixed-step discretized chain, grid sampling of population averages, and
//! seeded Monte Carlo replication.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{local_estimate_into, PopulationModel, PopulationState, StateBuf};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, exponential, geometric, rng_from_seed, splitmix64, SimRng};

/// Slack allowed on `Σ_{β≠α} ρ^{αβ}` before a ring aborts the run.
pub const ROW_SUM_SLACK: f64 = 1e-9;

/// One realized jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub agent: usize,
    pub from: usize,
    pub to: usize,
}

/// One realization of the population process on `[0, horizon]`.
///
/// Only actual jumps are stored. Clock rings that left the agent in place
/// are counted in `rings` together with the jumps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: PopulationState,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub seed: u64,
    pub rings: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> PopulationState {
        let mut state = self.initial.clone();
        for e in &self.events {
            state.set(e.agent, e.to);
        }
        state
    }

    /// `time,agent,from,to` with state labels.
    pub fn events_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("time,agent,from,to\n");
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{}", e.time, e.agent, labels[e.from], labels[e.to]);
        }
        s
    }

    /// Sidecar `agent,state` for the initial state.
    pub fn initial_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("agent,state\n");
        for (i, &a) in self.initial.assignment().iter().enumerate() {
            let _ = writeln!(s, "{i},{}", labels[a]);
        }
        s
    }
}

enum AgentPicker {
    Uniform(usize),
    Weighted(WeightedIndex<f64>),
}

impl AgentPicker {
    fn new(rates: &[f64]) -> Result<Self> {
        let r0 = rates[0];
        if rates.iter().all(|&r| r == r0) {
            Ok(AgentPicker::Uniform(rates.len()))
        } else {
            WeightedIndex::new(rates)
                .map(AgentPicker::Weighted)
                .map_err(|e| Error::invalid(format!("clock rates: {e}")))
        }
    }

    #[inline]
    fn pick(&self, rng: &mut SimRng) -> usize {
        match self {
            AgentPicker::Uniform(n) => rng.random_range(0..*n),
            AgentPicker::Weighted(w) => w.sample(rng),
        }
    }
}

/// Shared ring logic: agent `i` evaluates its local estimate and either
/// jumps or stays. Returns the target state on a jump.
struct Ringer<'a> {
    model: &'a PopulationModel,
    z: StateBuf,
    rho: StateBuf,
}

impl<'a> Ringer<'a> {
    fn new(model: &'a PopulationModel) -> Self {
        let s = model.n_states();
        Self {
            model,
            z: StateBuf::from_elem(0.0, s),
            rho: StateBuf::from_elem(0.0, s),
        }
    }

    #[inline]
    fn ring(
        &mut self,
        rng: &mut SimRng,
        state: &PopulationState,
        agent: usize,
        time: f64,
    ) -> Result<Option<usize>> {
        let from = state.state(agent);
        local_estimate_into(self.model.interaction(), state, agent, &mut self.z);
        self.model.policy().rates(agent, from, &self.z, &mut self.rho);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut target = None;
        for (to, &p) in self.rho.iter().enumerate() {
            if to == from {
                continue;
            }
            acc += p;
            if target.is_none() && u < acc {
                target = Some(to);
            }
        }
        if acc > 1.0 + ROW_SUM_SLACK || !acc.is_finite() {
            return Err(Error::PolicyRowSum {
                time,
                agent,
                from,
                sum: acc,
            });
        }
        Ok(target)
    }
}

fn check_init(model: &PopulationModel, init: &PopulationState) -> Result<()> {
    if init.n_agents() != model.n_agents() || init.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} agents / {} states, model has {} / {}",
            init.n_agents(),
            init.n_states(),
            model.n_agents(),
            model.n_states()
        )));
    }
    Ok(())
}

/// Exact (Gillespie) simulation: rings arrive at total rate `Σ r_i`, the
/// ringing agent is `i` with probability `r_i / Σ r`, and it then jumps
/// `α → β` with probability `ρ_i^{αβ}(Ȳ_i)`.
pub fn simulate_ct(
    model: &PopulationModel,
    init: &PopulationState,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    check_init(model, init)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let mut rng = rng_from_seed(seed);
    let total = model.total_rate();
    let picker = AgentPicker::new(model.clock_rates())?;
    let mut ringer = Ringer::new(model);
    let mut state = init.clone();
    let mut events = Vec::new();
    let mut rings = 0u64;
    let mut t = 0.0;
    loop {
        t += exponential(&mut rng, total);
        if t > horizon {
            break;
        }
        rings += 1;
        let agent = picker.pick(&mut rng);
        if let Some(to) = ringer.ring(&mut rng, &state, agent, t)? {
            events.push(Event {
                time: t,
                agent,
                from: state.state(agent),
                to,
            });
            state.set(agent, to);
        }
    }
    Ok(Trajectory {
        initial: init.clone(),
        events,
        horizon,
        seed,
        rings,
    })
}

/// Discretized chain with step `xi`: at each step, with probability
/// `xi Σ r_i` a single agent (chosen proportionally to `r_i`) updates via
/// the same policy, otherwise nothing happens. Idle stretches are skipped
/// by drawing their geometric length directly. Runs `⌊horizon/xi⌋` steps.
pub fn simulate_dt(
    model: &PopulationModel,
    init: &PopulationState,
    horizon: f64,
    xi: f64,
    seed: u64,
) -> Result<Trajectory> {
    check_init(model, init)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("step xi must be positive, got {xi}")));
    }
    let p = xi * model.total_rate();
    if p > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "xi * sum(r) = {p} exceeds 1; step probabilities are invalid"
        )));
    }
    let n_steps = (horizon / xi + 1e-9).floor() as u64;
    let mut rng = rng_from_seed(seed);
    let picker = AgentPicker::new(model.clock_rates())?;
    let mut ringer = Ringer::new(model);
    let mut state = init.clone();
    let mut events = Vec::new();
    let mut rings = 0u64;
    let mut step = 0u64;
    loop {
        step = step.saturating_add(geometric(&mut rng, p.min(1.0)));
        if step > n_steps {
            break;
        }
        rings += 1;
        let t = step as f64 * xi;
        let agent = picker.pick(&mut rng);
        if let Some(to) = ringer.ring(&mut rng, &state, agent, t)? {
            events.push(Event {
                time: t,
                agent,
                from: state.state(agent),
                to,
            });
            state.set(agent, to);
        }
    }
    Ok(Trajectory {
        initial: init.clone(),
        events,
        horizon: n_steps as f64 * xi,
        seed,
        rings,
    })
}

pub(crate) fn check_grid(grid: &[f64], horizon: f64) -> Result<()> {
    if let Some(w) = grid.windows(2).find(|w| !(w[0] <= w[1])) {
        return Err(Error::GridMismatch(format!("grid not sorted at {} > {}", w[0], w[1])));
    }
    if let (Some(&first), Some(&last)) = (grid.first(), grid.last()) {
        if first < 0.0 || last > horizon * (1.0 + 1e-12) {
            return Err(Error::GridMismatch(format!(
                "grid [{first}, {last}] outside [0, {horizon}]"
            )));
        }
    }
    Ok(())
}

/// `Y_av` at each grid time, right-continuous at jump times.
pub fn sample_average(traj: &Trajectory, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_grid(grid, traj.horizon)?;
    let n = traj.initial.n_agents() as f64;
    let mut counts: Vec<i64> = traj.initial.counts().iter().map(|&c| c as i64).collect();
    let mut next = 0;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        while next < traj.events.len() && traj.events[next].time <= t {
            let e = &traj.events[next];
            counts[e.from] -= 1;
            counts[e.to] += 1;
            next += 1;
        }
        out.push(counts.iter().map(|&c| c as f64 / n).collect());
    }
    Ok(out)
}

/// Runs `f(k, seed_k)` for `k = 0..m` on the current rayon pool with
/// `seed_k = derive_seed(base_seed, k)`. Output order is by `k` whatever
/// the scheduling; the first failing replicate (lowest `k`) is reported.
pub fn replicate_map<T, F>(m: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..m)
        .into_par_iter()
        .map(|k| f(k, derive_seed(base_seed, k as u64)))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| Error::Replicate {
                index: k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Replicate seeds `derive_seed(base_seed, k)` for `k = 0..m`.
pub fn derive_seed_list(base_seed: u64, m: usize) -> Vec<u64> {
    (0..m as u64).map(|k| derive_seed(base_seed, k)).collect()
}

/// Seed handed to an initial-condition sampler for the replicate seeded
/// with `replicate_seed`.
pub fn init_seed(replicate_seed: u64) -> u64 {
    splitmix64(replicate_seed ^ 0x1A17_1A17_1A17_1A17)
}

/// Initial condition of an ensemble.
pub enum InitialCondition<'a> {
    Fixed(&'a PopulationState),
    /// Called with [`init_seed`] of each replicate's seed.
    Sampled(&'a (dyn Fn(u64) -> Result<PopulationState> + Sync)),
}

impl InitialCondition<'_> {
    pub fn draw(&self, replicate_seed: u64) -> Result<PopulationState> {
        match self {
            InitialCondition::Fixed(s) => Ok((*s).clone()),
            InitialCondition::Sampled(f) => f(init_seed(replicate_seed)),
        }
    }
}

/// Per-gridpoint ensemble mean and sample variance of `Y_av`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub grid: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub m: usize,
    pub seeds: Vec<u64>,
    /// Sampled `Y_av` of every replicate, indexed by replicate.
    pub series: Vec<Vec<Vec<f64>>>,
    /// Filled by callers comparing against a mean-field reference.
    pub sup_deviations: Vec<f64>,
}

impl EnsembleStats {
    pub fn from_series(grid: Vec<f64>, series: Vec<Vec<Vec<f64>>>, seeds: Vec<u64>) -> Result<Self> {
        let m = series.len();
        if m == 0 {
            return Err(Error::invalid("ensemble needs at least one replicate"));
        }
        let s = series[0].first().map_or(0, Vec::len);
        let g = grid.len();
        let mut mean = vec![vec![0.0; s]; g];
        for rep in &series {
            if rep.len() != g {
                return Err(Error::GridMismatch("replicate series length differs from grid".into()));
            }
            for (mg, v) in mean.iter_mut().zip(rep) {
                for (a, b) in mg.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        mean.iter_mut().flatten().for_each(|a| *a /= m as f64);
        let mut variance = vec![vec![0.0; s]; g];
        if m > 1 {
            for rep in &series {
                for ((vg, mg), v) in variance.iter_mut().zip(&mean).zip(rep) {
                    for ((acc, mu), x) in vg.iter_mut().zip(mg).zip(v) {
                        *acc += (x - mu) * (x - mu);
                    }
                }
            }
            variance
                .iter_mut()
                .flatten()
                .for_each(|a| *a /= (m - 1) as f64);
        }
        Ok(Self {
            grid,
            mean,
            variance,
            m,
            seeds,
            series,
            sup_deviations: Vec::new(),
        })
    }

    pub fn standard_error(&self, g: usize, state: usize) -> f64 {
        (self.variance[g][state] / self.m as f64).sqrt()
    }

    /// `t,mean_<label>...,var_<label>...,m`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("t");
        for l in labels {
            let _ = write!(s, ",mean_{l}");
        }
        for l in labels {
            let _ = write!(s, ",var_{l}");
        }
        s.push_str(",m\n");
        for (g, &t) in self.grid.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in &self.mean[g] {
                let _ = write!(s, ",{v}");
            }
            for v in &self.variance[g] {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", self.m);
        }
        s
    }
}

/// Monte Carlo ensemble of `simulate_ct` runs sampled on `grid`.
pub fn replicate(
    model: &PopulationModel,
    init: &InitialCondition<'_>,
    horizon: f64,
    grid: &[f64],
    m: usize,
    base_seed: u64,
) -> Result<EnsembleStats> {
    if m == 0 {
        return Err(Error::invalid("replicate count must be >= 1"));
    }
    check_grid(grid, horizon)?;
    let series = replicate_map(m, base_seed, |_, seed| {
        let start = init.draw(seed)?;
        let traj = simulate_ct(model, &start, horizon, seed)?;
        sample_average(&traj, grid)
    })?;
    EnsembleStats::from_series(grid.to_vec(), series, derive_seed_list(base_seed, m))
}

/// Evenly spaced grid `0, dt, 2dt, ..., horizon` (the last point is exactly
/// `horizon`).
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![horizon];
    }
    (0..points)
        .map(|k| {
            if k + 1 == points {
                horizon
            } else {
                horizon * k as f64 / (points - 1) as f64
            }
        })
        .collect()
}
