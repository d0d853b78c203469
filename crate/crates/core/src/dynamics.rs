//! State spaces, rate policies, population models and the bookkeeping of
//! pure and mixed population states.
//!
//! A policy gives, for agent `i` in state `α` looking at a local estimate
//! `z` on the simplex, the probability `ρ_i^{αβ}(z)` of moving to `β` once
//! its clock rings. The simulators realize a ring as: jump to `β ≠ α` with
//! probability `ρ_i^{αβ}(z)`, stay put with the remaining probability. That
//! is an exact realization of the jump rates `r_i ρ_i^{αβ}(z)` as long as
//! `Σ_{β≠α} ρ_i^{αβ}(z) ≤ 1`, which [`validate_policy`] checks by sampling.
//!
//! Naming note: the SIS recovery rate is called `gamma` here, while the
//! density of a nearest-neighbor ring graph is called `density`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::interaction::{InteractionMatrix, Row};
use crate::rng::{rng_from_seed, uniform_pos};

/// Scratch buffer sized for typical state spaces.
pub(crate) type StateBuf = SmallVec<[f64; 8]>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::invalid("state space needs at least two states"));
        }
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) {
                return Err(Error::invalid(format!("duplicate state label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Per-agent transition probabilities `ρ_i^{αβ}(z)`.
pub trait RateFunction: Send + Sync {
    fn n_states(&self) -> usize;

    /// Writes `ρ_i^{α β}(z)` into `out[β]` for every `β`. The entry
    /// `out[from]` carries no meaning and is ignored by all consumers.
    fn rates(&self, agent: usize, from: usize, z: &[f64], out: &mut [f64]);
}

/// A rate function together with its declared Lipschitz bound and whether
/// all agents share it.
#[derive(Clone)]
pub struct RatePolicy {
    inner: Arc<dyn RateFunction>,
    lipschitz_bound: f64,
    homogeneous: bool,
}

impl fmt::Debug for RatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RatePolicy")
            .field("n_states", &self.n_states())
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl RatePolicy {
    pub fn new(
        inner: Arc<dyn RateFunction>,
        lipschitz_bound: f64,
        homogeneous: bool,
    ) -> Result<Self> {
        if !(lipschitz_bound >= 0.0) {
            return Err(Error::invalid("Lipschitz bound must be nonnegative"));
        }
        Ok(Self {
            inner,
            lipschitz_bound,
            homogeneous,
        })
    }

    /// Policy from a closure `(agent, from, to, z) -> ρ`.
    pub fn from_fn<F>(n_states: usize, homogeneous: bool, lipschitz_bound: f64, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    {
        struct Closure<F> {
            n_states: usize,
            f: F,
        }
        impl<F> RateFunction for Closure<F>
        where
            F: Fn(usize, usize, usize, &[f64]) -> f64 + Send + Sync,
        {
            fn n_states(&self) -> usize {
                self.n_states
            }
            fn rates(&self, agent: usize, from: usize, z: &[f64], out: &mut [f64]) {
                for (to, o) in out.iter_mut().enumerate() {
                    *o = if to == from { 0.0 } else { (self.f)(agent, from, to, z) };
                }
            }
        }
        Self::new(Arc::new(Closure { n_states, f }), lipschitz_bound, homogeneous)
    }

    /// Homogeneous policy with constant probabilities `matrix[α][β]`.
    pub fn constant(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let s = matrix.len();
        if matrix.iter().any(|r| r.len() != s) {
            return Err(Error::DimensionMismatch("constant policy must be square".into()));
        }
        Self::from_fn(s, true, 0.0, move |_, a, b, _| matrix[a][b])
    }

    pub fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    #[inline]
    pub fn rates(&self, agent: usize, from: usize, z: &[f64], out: &mut [f64]) {
        self.inner.rates(agent, from, z, out);
    }

    pub fn rate(&self, agent: usize, from: usize, to: usize, z: &[f64]) -> f64 {
        let mut buf: StateBuf = SmallVec::from_elem(0.0, self.n_states());
        self.rates(agent, from, z, &mut buf);
        if to == from {
            0.0
        } else {
            buf[to]
        }
    }
}

/// A utility map `U: Δ(S) → ℝ^S` with its Lipschitz constant in the sup norm.
#[derive(Clone)]
pub struct Utility {
    n_states: usize,
    lipschitz: f64,
    f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Utility")
            .field("n_states", &self.n_states)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Utility {
    pub fn new<F>(n_states: usize, lipschitz: f64, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            n_states,
            lipschitz,
            f: Arc::new(f),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        self.eval_into(x, &mut out);
        out
    }
}

/// The two-action coordination game `U(x₁, x₂) = (x₁, 2x₂)`.
pub fn coordination_utility() -> Utility {
    Utility::new(2, 2.0, |x, out| {
        out[0] = x[0];
        out[1] = 2.0 * x[1];
    })
}

struct Logit {
    utility: Utility,
    inv_eta: f64,
}

impl RateFunction for Logit {
    fn n_states(&self) -> usize {
        self.utility.n_states
    }

    fn rates(&self, _agent: usize, _from: usize, z: &[f64], out: &mut [f64]) {
        self.utility.eval_into(z, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = ((*o - max) * self.inv_eta).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }
}

/// Logit choice: `ρ^{αβ}(x) = exp(U^β(x)/η) / Σ_γ exp(U^γ(x)/η)`,
/// independent of the current state `α`.
pub fn logit_policy(utility: Utility, eta: f64) -> Result<RatePolicy> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("logit noise level must be positive, got {eta}")));
    }
    // softmax is 1/2-Lipschitz from the sup norm to the sup norm
    let lipschitz = utility.lipschitz / (2.0 * eta);
    RatePolicy::new(
        Arc::new(Logit {
            utility,
            inv_eta: 1.0 / eta,
        }),
        lipschitz,
        true,
    )
}

/// Logit choice probabilities over all targets (the same for every origin).
pub fn logit_probabilities(utility: &Utility, eta: f64, x: &[f64]) -> Vec<f64> {
    let logit = Logit {
        utility: utility.clone(),
        inv_eta: 1.0 / eta,
    };
    let mut out = vec![0.0; utility.n_states];
    logit.rates(0, 0, x, &mut out);
    out
}

pub const SUSCEPTIBLE: usize = 0;
pub const INFECTED: usize = 1;

struct SisRates {
    /// (1 + γ/d_i)⁻¹
    infect: Vec<f64>,
    /// γ/(d_i + γ)
    recover: Vec<f64>,
}

impl RateFunction for SisRates {
    fn n_states(&self) -> usize {
        2
    }

    fn rates(&self, agent: usize, from: usize, z: &[f64], out: &mut [f64]) {
        if from == SUSCEPTIBLE {
            out[SUSCEPTIBLE] = 0.0;
            out[INFECTED] = self.infect[agent] * z[INFECTED];
        } else {
            out[SUSCEPTIBLE] = self.recover[agent];
            out[INFECTED] = 0.0;
        }
    }
}

/// Population model: state space, clock rates, policy and interaction matrix.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    state_space: StateSpace,
    clock_rates: Vec<f64>,
    policy: RatePolicy,
    w: Arc<InteractionMatrix>,
}

impl PopulationModel {
    pub fn new(
        state_space: StateSpace,
        clock_rates: Vec<f64>,
        policy: RatePolicy,
        w: Arc<InteractionMatrix>,
    ) -> Result<Self> {
        let n = w.n();
        if clock_rates.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} clock rates for {n} agents",
                clock_rates.len()
            )));
        }
        if let Some((i, r)) = clock_rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(**r > 0.0 && r.is_finite()))
        {
            return Err(Error::invalid(format!("clock rate of agent {i} is {r}, must be > 0")));
        }
        if policy.n_states() != state_space.size() {
            return Err(Error::DimensionMismatch(format!(
                "policy over {} states, state space has {}",
                policy.n_states(),
                state_space.size()
            )));
        }
        if !w.is_validated() {
            return Err(Error::invalid(
                "interaction matrix must be a validated row-stochastic matrix",
            ));
        }
        Ok(Self {
            state_space,
            clock_rates,
            policy,
            w,
        })
    }

    /// Same clock rate for every agent.
    pub fn with_uniform_rate(
        state_space: StateSpace,
        rate: f64,
        policy: RatePolicy,
        w: Arc<InteractionMatrix>,
    ) -> Result<Self> {
        let n = w.n();
        Self::new(state_space, vec![rate; n], policy, w)
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    pub fn n_states(&self) -> usize {
        self.state_space.size()
    }

    pub fn n_agents(&self) -> usize {
        self.clock_rates.len()
    }

    pub fn clock_rates(&self) -> &[f64] {
        &self.clock_rates
    }

    pub fn policy(&self) -> &RatePolicy {
        &self.policy
    }

    pub fn interaction(&self) -> &InteractionMatrix {
        &self.w
    }

    pub fn interaction_arc(&self) -> &Arc<InteractionMatrix> {
        &self.w
    }

    pub fn total_rate(&self) -> f64 {
        self.clock_rates.iter().sum()
    }

    pub fn max_rate(&self) -> f64 {
        self.clock_rates.iter().copied().fold(0.0, f64::max)
    }

    /// The common clock rate, if all agents share one.
    pub fn uniform_rate(&self) -> Option<f64> {
        let r0 = self.clock_rates[0];
        self.clock_rates.iter().all(|&r| r == r0).then_some(r0)
    }

    /// Identical agents: homogeneous policy and a shared clock rate.
    pub fn has_identical_agents(&self) -> bool {
        self.policy.is_homogeneous() && self.uniform_rate().is_some()
    }
}

/// Builds the SIS model from a nonnegative weighted adjacency given as sparse
/// rows: `d_i = b Σ_j A_ij`, `r_i = d_i + γ`, `W = A` row-normalized,
/// `ρ^{SI}_i(z) = z^I / (1 + γ/d_i)` and `ρ^{IS}_i = γ / (d_i + γ)`.
pub fn sis_model(adjacency: &[Vec<(usize, f64)>], b: f64, gamma: f64) -> Result<PopulationModel> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("infection rate b must be positive, got {b}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("recovery rate gamma must be positive, got {gamma}")));
    }
    let n = adjacency.len();
    let mut rows = Vec::with_capacity(n);
    let mut clock_rates = Vec::with_capacity(n);
    let mut infect = Vec::with_capacity(n);
    let mut recover = Vec::with_capacity(n);
    for (i, row) in adjacency.iter().enumerate() {
        if let Some(&(j, a)) = row.iter().find(|(_, a)| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::NegativeWeight {
                row: i,
                col: j,
                weight: a,
            });
        }
        let total: f64 = row.iter().map(|&(_, a)| a).sum();
        if !(total > 0.0) {
            return Err(Error::DegreeZero { vertex: i });
        }
        let d = b * total;
        clock_rates.push(d + gamma);
        infect.push(1.0 / (1.0 + gamma / d));
        recover.push(gamma / (d + gamma));
        rows.push(
            row.iter()
                .filter(|&&(_, a)| a > 0.0)
                .map(|&(j, a)| (j, a / total))
                .collect(),
        );
    }
    let w = InteractionMatrix::from_rows(n, rows)?;
    let policy = RatePolicy::new(Arc::new(SisRates { infect, recover }), 1.0, false)?;
    PopulationModel::new(StateSpace::new(["S", "I"])?, clock_rates, policy, Arc::new(w))
}

/// [`sis_model`] from a dense adjacency matrix.
pub fn sis_model_dense(adjacency: &[Vec<f64>], b: f64, gamma: f64) -> Result<PopulationModel> {
    sis_model(&dense_to_rows(adjacency)?, b, gamma)
}

pub(crate) fn dense_to_rows(dense: &[Vec<f64>]) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = dense.len();
    dense
        .iter()
        .map(|r| {
            if r.len() != n {
                return Err(Error::DimensionMismatch("adjacency must be square".into()));
            }
            Ok(r.iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(j, &a)| (j, a))
                .collect())
        })
        .collect()
}

/// Pure population state with per-state occupancy counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationState {
    assignment: Vec<usize>,
    counts: Vec<usize>,
}

impl PopulationState {
    pub fn new(assignment: Vec<usize>, n_states: usize) -> Result<Self> {
        let mut counts = vec![0; n_states];
        for (i, &s) in assignment.iter().enumerate() {
            if s >= n_states {
                return Err(Error::invalid(format!(
                    "agent {i} in state {s}, only {n_states} states"
                )));
            }
            counts[s] += 1;
        }
        if assignment.is_empty() {
            return Err(Error::invalid("population must have at least one agent"));
        }
        Ok(Self { assignment, counts })
    }

    pub fn uniform(n_agents: usize, state: usize, n_states: usize) -> Result<Self> {
        Self::new(vec![state; n_agents], n_states)
    }

    pub fn n_agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_states(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn state(&self, agent: usize) -> usize {
        self.assignment[agent]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    #[inline]
    pub fn set(&mut self, agent: usize, state: usize) {
        let old = self.assignment[agent];
        self.counts[old] -= 1;
        self.counts[state] += 1;
        self.assignment[agent] = state;
    }

    /// Y_av = counts / N.
    pub fn average(&self) -> Vec<f64> {
        population_average(self)
    }

    /// One-hot profile of this state.
    pub fn to_profile(&self) -> MixedProfile {
        let s = self.n_states();
        let mut data = vec![0.0; self.n_agents() * s];
        for (i, &a) in self.assignment.iter().enumerate() {
            data[i * s + a] = 1.0;
        }
        MixedProfile {
            n_agents: self.n_agents(),
            n_states: s,
            data,
        }
    }
}

/// Y_av = (1/N) Σ_i Y_i.
pub fn population_average(state: &PopulationState) -> Vec<f64> {
    let n = state.n_agents() as f64;
    state.counts.iter().map(|&c| c as f64 / n).collect()
}

/// Local estimate `Ȳ_i = Σ_j w_ij Y_j`, written into `out`.
#[inline]
pub fn local_estimate_into(w: &InteractionMatrix, state: &PopulationState, agent: usize, out: &mut [f64]) {
    match w.row(agent) {
        Row::Uniform(n) => {
            let inv = 1.0 / n as f64;
            for (o, &c) in out.iter_mut().zip(&state.counts) {
                *o = c as f64 * inv;
            }
        }
        Row::Sparse(cols, ws) => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (&j, &wij) in cols.iter().zip(ws) {
                out[state.assignment[j]] += wij;
            }
        }
    }
}

pub fn local_estimate(w: &InteractionMatrix, state: &PopulationState, agent: usize) -> Vec<f64> {
    let mut out = vec![0.0; state.n_states()];
    local_estimate_into(w, state, agent, &mut out);
    out
}

/// Per-agent mixed states `y_i ∈ Δ(S)`, stored as N consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile {
    n_agents: usize,
    n_states: usize,
    data: Vec<f64>,
}

impl MixedProfile {
    pub fn new(n_agents: usize, n_states: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_agents * n_states {
            return Err(Error::DimensionMismatch(format!(
                "profile of length {} for {n_agents} agents x {n_states} states",
                data.len()
            )));
        }
        let p = Self {
            n_agents,
            n_states,
            data,
        };
        for i in 0..n_agents {
            let y = p.agent(i);
            let sum: f64 = y.iter().sum();
            if y.iter().any(|&v| v < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("agent {i} profile {y:?} is not on the simplex")));
            }
        }
        Ok(p)
    }

    /// Every agent holds the same mixed state `x`.
    pub fn identical(n_agents: usize, x: &[f64]) -> Result<Self> {
        Self::new(n_agents, x.len(), x.repeat(n_agents))
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// y_av = (1/N) Σ_i y_i.
    pub fn average(&self) -> Vec<f64> {
        block_average(&self.data, self.n_states)
    }
}

pub(crate) fn block_average(data: &[f64], block: usize) -> Vec<f64> {
    let n = data.len() / block;
    let mut avg = vec![0.0; block];
    for y in data.chunks_exact(block) {
        for (a, v) in avg.iter_mut().zip(y) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);
    avg
}

/// A sampled breach of the policy assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyViolation {
    pub agent: usize,
    pub from: usize,
    pub z: Vec<f64>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// Some `ρ^{αβ}(z)` outside `[0, 1]` (or not finite).
    OutOfRange { to: usize, value: f64 },
    /// `Σ_{β≠α} ρ^{αβ}(z) > 1`.
    RowSum { sum: f64 },
    /// Observed slope above the declared Lipschitz bound.
    Lipschitz { to: usize, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub worst_row_sum: f64,
    pub max_lipschitz_ratio: f64,
    pub violations: Vec<PolicyViolation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts a failed report into a [`Error::PolicyValidation`] listing
    /// the first few offending `(agent, state, z)` triples.
    pub fn check(&self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let listed: Vec<String> = self
            .violations
            .iter()
            .take(5)
            .map(|v| format!("agent {} state {} z={:?}: {:?}", v.agent, v.from, v.z, v.kind))
            .collect();
        Err(Error::PolicyValidation(format!(
            "{} violation(s), worst row sum {}; {}",
            self.violations.len(),
            self.worst_row_sum,
            listed.join("; ")
        )))
    }
}

const MAX_REPORTED_VIOLATIONS: usize = 64;

/// Samples points of the simplex (vertices, barycenter, random points and
/// nearby perturbations) and checks boundedness, the sub-stochastic row
/// condition and the declared Lipschitz bound. A homogeneous policy is
/// checked for agent 0 only.
pub fn validate_policy(model: &PopulationModel, n_samples: usize, seed: u64) -> ValidationReport {
    let s = model.n_states();
    let policy = model.policy();
    let mut rng = rng_from_seed(seed);

    let mut points: Vec<Vec<f64>> = (0..s)
        .map(|a| (0..s).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    points.push(vec![1.0 / s as f64; s]);
    while points.len() < n_samples.max(s + 1) {
        points.push(random_simplex_point(&mut rng, s));
    }
    let perturbed: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let mut q: Vec<f64> = p.iter().map(|&v| v + 1e-3 * uniform_pos(&mut rng)).collect();
            let t: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= t);
            q
        })
        .collect();

    let agents: Vec<usize> = if policy.is_homogeneous() {
        vec![0]
    } else {
        (0..model.n_agents()).collect()
    };
    let bound = policy.lipschitz_bound() * (1.0 + 1e-6);
    let mut report = ValidationReport {
        samples: points.len(),
        worst_row_sum: 0.0,
        max_lipschitz_ratio: 0.0,
        violations: Vec::new(),
    };
    let push = |report: &mut ValidationReport, v: PolicyViolation| {
        if report.violations.len() < MAX_REPORTED_VIOLATIONS {
            report.violations.push(v);
        }
    };
    let mut buf = vec![0.0; s];
    let mut buf2 = vec![0.0; s];
    for &i in &agents {
        for from in 0..s {
            for (k, z) in points.iter().enumerate() {
                policy.rates(i, from, z, &mut buf);
                let mut sum = 0.0;
                for (to, &v) in buf.iter().enumerate() {
                    if to == from {
                        continue;
                    }
                    if !(0.0..=1.0).contains(&v) {
                        push(
                            &mut report,
                            PolicyViolation {
                                agent: i,
                                from,
                                z: z.clone(),
                                kind: ViolationKind::OutOfRange { to, value: v },
                            },
                        );
                    }
                    sum += v;
                }
                report.worst_row_sum = report.worst_row_sum.max(sum);
                if sum > 1.0 + 1e-12 {
                    push(
                        &mut report,
                        PolicyViolation {
                            agent: i,
                            from,
                            z: z.clone(),
                            kind: ViolationKind::RowSum { sum },
                        },
                    );
                }
                // slopes against a nearby point and against the next sample
                let others = [Some(&perturbed[k]), points.get(k + 1)];
                for z2 in others.into_iter().flatten() {
                    let dist = z
                        .iter()
                        .zip(z2.iter())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    if dist < 1e-12 {
                        continue;
                    }
                    policy.rates(i, from, z2, &mut buf2);
                    for to in (0..s).filter(|&t| t != from) {
                        let ratio = (buf[to] - buf2[to]).abs() / dist;
                        report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(ratio);
                        if ratio > bound {
                            push(
                                &mut report,
                                PolicyViolation {
                                    agent: i,
                                    from,
                                    z: z.clone(),
                                    kind: ViolationKind::Lipschitz { to, ratio },
                                },
                            );
                        }
                    }
                }
            }
        }
    }
    report
}

/// Uniform (flat Dirichlet) point on the simplex.
pub fn random_simplex_point<R: Rng + ?Sized>(rng: &mut R, s: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..s).map(|_| -uniform_pos(rng).ln()).collect();
    let t: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= t);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> StateSpace {
        StateSpace::new(["1", "2"]).unwrap()
    }

    fn clique_adjacency(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect()
    }

    #[test]
    fn state_space_rules() {
        assert!(StateSpace::new(["a"]).is_err());
        assert!(StateSpace::new(["a", "a"]).is_err());
        let s = StateSpace::new(["S", "I"]).unwrap();
        assert_eq!(s.index_of("I"), Some(1));
    }

    #[test]
    fn local_estimate_complete() {
        let w = InteractionMatrix::complete(4).unwrap();
        let st = PopulationState::new(vec![0, 0, 1, 1], 2).unwrap();
        for i in 0..4 {
            assert_eq!(local_estimate(&w, &st, i), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn local_estimate_path_and_ring() {
        let w = InteractionMatrix::from_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
        let st = PopulationState::new(vec![0, 1, 0], 2).unwrap();
        assert_eq!(local_estimate(&w, &st, 1), vec![1.0, 0.0]);

        let ring = InteractionMatrix::nearest_neighbor(6, 0.34).unwrap();
        let st = PopulationState::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(local_estimate(&ring, &st, 1), vec![1.0, 0.0]);
        assert_eq!(local_estimate(&ring, &st, 3), vec![0.5, 0.5]);
    }

    #[test]
    fn population_average_examples() {
        let st = PopulationState::new(vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1], 2).unwrap();
        assert_eq!(population_average(&st), vec![0.8, 0.2]);
        let st = PopulationState::uniform(5, 1, 3).unwrap();
        assert_eq!(population_average(&st), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn set_keeps_counts_consistent() {
        let mut st = PopulationState::new(vec![0, 1, 1], 2).unwrap();
        st.set(0, 1);
        assert_eq!(st.counts(), &[0, 3]);
        st.set(2, 0);
        assert_eq!(st.counts(), &[1, 2]);
    }

    #[test]
    fn coordination_values() {
        let u = coordination_utility();
        assert_eq!(u.eval(&[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(u.eval(&[0.0, 1.0]), vec![0.0, 2.0]);
        assert_eq!(u.eval(&[0.5, 0.5]), vec![0.5, 1.0]);
    }

    #[test]
    fn logit_values() {
        let p = logit_policy(coordination_utility(), 0.1).unwrap();
        assert!(p.is_homogeneous());
        let x = [2.0 / 3.0, 1.0 / 3.0];
        assert!((p.rate(0, 1, 0, &x) - 0.5).abs() < 1e-12);
        assert!((p.rate(0, 0, 1, &x) - 0.5).abs() < 1e-12);
        let expect = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((p.rate(0, 1, 0, &[0.8, 0.2]) - expect).abs() < 1e-12);
        assert!((expect - 0.982014).abs() < 1e-6);

        let noisy = logit_policy(coordination_utility(), 1e3).unwrap();
        assert!((noisy.rate(0, 1, 0, &[0.8, 0.2]) - 0.5).abs() < 1e-3);
        assert!(logit_policy(coordination_utility(), 0.0).is_err());
    }

    #[test]
    fn logit_overflow_safe() {
        let u = Utility::new(2, 1.0, |x, out| {
            out[0] = 1e6 * x[0];
            out[1] = 0.0;
        });
        let p = logit_probabilities(&u, 1e-3, &[1.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn sis_three_clique() {
        let m = sis_model_dense(&clique_adjacency(3), 1.0, 1.0).unwrap();
        assert_eq!(m.clock_rates(), &[3.0, 3.0, 3.0]);
        let p = m.policy();
        assert!((p.rate(0, INFECTED, SUSCEPTIBLE, &[0.0, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.rate(0, SUSCEPTIBLE, INFECTED, &[0.0, 1.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.rate(0, SUSCEPTIBLE, INFECTED, &[1.0, 0.0]), 0.0);
        assert_eq!(m.interaction().entry(0, 1), 0.5);
        assert_eq!(m.interaction().entry(0, 0), 0.0);
    }

    #[test]
    fn sis_rejects_isolated_agent() {
        let mut a = clique_adjacency(3);
        a[2] = vec![0.0; 3];
        assert!(matches!(
            sis_model_dense(&a, 1.0, 1.0),
            Err(Error::DegreeZero { vertex: 2 })
        ));
    }

    #[test]
    fn validate_builtin_policies() {
        let w = Arc::new(InteractionMatrix::complete(10).unwrap());
        let logit = logit_policy(coordination_utility(), 0.1).unwrap();
        let m = PopulationModel::with_uniform_rate(two_state(), 1.0, logit, w).unwrap();
        let r = validate_policy(&m, 500, 1);
        assert!(r.passed(), "{:?}", r.violations.first());
        assert!(r.worst_row_sum <= 1.0);

        let sis = sis_model_dense(&clique_adjacency(3), 1.0, 1.0).unwrap();
        let r = validate_policy(&sis, 200, 2);
        assert!(r.passed());
        assert!(r.check().is_ok());
    }

    #[test]
    fn validate_adversarial_policy() {
        let p = RatePolicy::from_fn(3, true, 0.0, |_, from, to, _| {
            if from == 0 && (to == 1 || to == 2) {
                0.8
            } else {
                0.0
            }
        })
        .unwrap();
        let w = Arc::new(InteractionMatrix::complete(4).unwrap());
        let m = PopulationModel::with_uniform_rate(
            StateSpace::new(["1", "2", "3"]).unwrap(),
            1.0,
            p,
            w,
        )
        .unwrap();
        let r = validate_policy(&m, 50, 3);
        assert!(!r.passed());
        assert!((r.worst_row_sum - 1.6).abs() < 1e-12);
        assert!(matches!(r.violations[0].kind, ViolationKind::RowSum { .. }));
        assert!(matches!(r.check(), Err(Error::PolicyValidation(_))));
    }

    #[test]
    fn lipschitz_violation_detected() {
        // declared bound 0.1 but slope 1
        let p = RatePolicy::from_fn(2, true, 0.1, |_, _, to, z| z[to]).unwrap();
        let w = Arc::new(InteractionMatrix::complete(2).unwrap());
        let m = PopulationModel::with_uniform_rate(two_state(), 1.0, p, w).unwrap();
        let r = validate_policy(&m, 50, 4);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::Lipschitz { .. })));
    }

    #[test]
    fn model_rejects_unvalidated_matrix() {
        let raw = InteractionMatrix::from_dense_unchecked(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let p = RatePolicy::constant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(PopulationModel::with_uniform_rate(two_state(), 1.0, p, Arc::new(raw)).is_err());
    }

    #[test]
    fn mixed_profile_validation() {
        assert!(MixedProfile::new(1, 2, vec![0.5, 0.6]).is_err());
        let p = MixedProfile::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.average(), vec![0.5, 0.5]);
    }
}
