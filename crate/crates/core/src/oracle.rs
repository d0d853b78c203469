//! Exact small-system machinery: the generator of the joint process over
//! all `|S|^N` configurations, transient marginals by uniformization,
//! martingale residuals along simulated paths, and sup-norm deviations.
//!
//! Configurations are numbered in mixed radix with agent 0 least
//! significant: `index = Σ_i x_i |S|^i`.

use std::fmt::Write as _;

use crate::dynamics::{MixedProfile, PopulationModel, PopulationState, StateBuf, INFECTED};
use crate::error::{Error, Result};
use crate::interaction::Row;
use crate::simulator::{check_grid, Trajectory};

pub const DEFAULT_CAP: usize = 65_536;

/// Poisson tail mass left out of each uniformization sum.
pub const TRUNCATION_TOL: f64 = 1e-12;

/// Largest `Λ̄ Δt` handled in one uniformization sum; longer intervals are
/// split.
const MAX_POISSON_MEAN: f64 = 32.0;

/// Sparse CTMC generator over all configurations.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    n_agents: usize,
    n_states: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diag: Vec<f64>,
    uniformization_rate: f64,
}

fn state_count(n_states: usize, n_agents: usize, cap: usize) -> Result<usize> {
    let required = (n_states as u128).checked_pow(n_agents as u32).unwrap_or(u128::MAX);
    if required > cap as u128 {
        return Err(Error::CapExceeded { required, cap });
    }
    Ok(required as usize)
}

impl GeneratorMatrix {
    /// Assembles a generator from a closure listing, for configuration
    /// `x` (decoded into `config`), the off-diagonal `(target, rate)` pairs.
    fn assemble<F>(n_agents: usize, n_states: usize, cap: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[usize], &mut Vec<(usize, f64)>),
    {
        let size = state_count(n_states, n_agents, cap)?;
        let mut offsets = Vec::with_capacity(size + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut rates = Vec::new();
        let mut diag = Vec::with_capacity(size);
        let mut config = vec![0usize; n_agents];
        let mut buf = Vec::new();
        for x in 0..size {
            buf.clear();
            f(x, &config, &mut buf);
            buf.retain(|&(_, r)| r != 0.0);
            buf.sort_by_key(|&(y, _)| y);
            let mut out = 0.0;
            for &(y, r) in &buf {
                out += r;
                cols.push(y);
                rates.push(r);
            }
            diag.push(0.0 - out);
            offsets.push(cols.len());
            // advance the mixed-radix counter
            for c in config.iter_mut() {
                *c += 1;
                if *c < n_states {
                    break;
                }
                *c = 0;
            }
        }
        let uniformization_rate = diag.iter().fold(0.0f64, |m, d| m.max(-d));
        Ok(Self {
            n_agents,
            n_states,
            offsets,
            cols,
            rates,
            diag,
            uniformization_rate,
        })
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// `Λ̄ = max_x |Λ_{x,x}|`.
    pub fn uniformization_rate(&self) -> f64 {
        self.uniformization_rate
    }

    pub fn encode(&self, config: &[usize]) -> usize {
        config
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.n_states + c)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        (0..self.n_agents)
            .map(|_| {
                let c = index % self.n_states;
                index /= self.n_states;
                c
            })
            .collect()
    }

    /// Off-diagonal entries of row `x`, sorted by column.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[x]..self.offsets[x + 1];
        self.cols[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return self.diag[x];
        }
        let r = self.offsets[x]..self.offsets[x + 1];
        match self.cols[r.clone()].binary_search(&y) {
            Ok(k) => self.rates[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz_off_diagonal(&self) -> usize {
        self.cols.len()
    }

    /// Largest `|Σ_y Λ_{x,y}|` over rows.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.size())
            .map(|x| (self.diag[x] + self.row(x).map(|(_, r)| r).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise difference to another generator on the same
    /// configuration space.
    pub fn max_abs_difference(&self, other: &GeneratorMatrix) -> Result<f64> {
        if self.n_agents != other.n_agents || self.n_states != other.n_states {
            return Err(Error::DimensionMismatch("generators over different spaces".into()));
        }
        let mut worst = 0.0f64;
        for x in 0..self.size() {
            worst = worst.max((self.diag[x] - other.diag[x]).abs());
            for (y, r) in self.row(x) {
                worst = worst.max((r - other.entry(x, y)).abs());
            }
            for (y, r) in other.row(x) {
                worst = worst.max((r - self.entry(x, y)).abs());
            }
        }
        Ok(worst)
    }

    /// Row vector product `out = p Λ`.
    pub fn left_multiply(&self, p: &[f64], out: &mut [f64]) {
        for (x, (&px, o)) in p.iter().zip(out.iter_mut()).enumerate() {
            *o = px * self.diag[x];
        }
        for (x, &px) in p.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (y, r) in self.row(x) {
                out[y] += px * r;
            }
        }
    }

    /// Full generator as `row,col,rate` triplets, diagonal included.
    pub fn triplet_csv(&self) -> String {
        let mut s = String::from("row,col,rate\n");
        for x in 0..self.size() {
            let mut diag_done = false;
            for (y, r) in self.row(x) {
                if !diag_done && y > x {
                    let _ = writeln!(s, "{x},{x},{}", self.diag[x]);
                    diag_done = true;
                }
                let _ = writeln!(s, "{x},{y},{r}");
            }
            if !diag_done {
                let _ = writeln!(s, "{x},{x},{}", self.diag[x]);
            }
        }
        s
    }

    /// `index,config` with the configuration as space-separated labels,
    /// agent 0 first.
    pub fn index_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("index,config\n");
        for x in 0..self.size() {
            let cfg: Vec<&str> = self.decode(x).iter().map(|&c| labels[c].as_str()).collect();
            let _ = writeln!(s, "{x},{}", cfg.join(" "));
        }
        s
    }

    /// Point mass on a pure configuration.
    pub fn point_distribution(&self, state: &PopulationState) -> Result<Vec<f64>> {
        if state.n_agents() != self.n_agents || state.n_states() != self.n_states {
            return Err(Error::DimensionMismatch("state does not match generator".into()));
        }
        let mut p = vec![0.0; self.size()];
        p[self.encode(state.assignment())] = 1.0;
        Ok(p)
    }

    /// Product distribution `P(x) = Π_i y_i^{x_i}` of independent agents.
    pub fn product_distribution(&self, profile: &MixedProfile) -> Result<Vec<f64>> {
        if profile.n_agents() != self.n_agents || profile.n_states() != self.n_states {
            return Err(Error::DimensionMismatch("profile does not match generator".into()));
        }
        Ok((0..self.size())
            .map(|x| {
                self.decode(x)
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| profile.agent(i)[c])
                    .product()
            })
            .collect())
    }

    /// `E[Y_av]` under a distribution over configurations.
    pub fn expected_average(&self, p: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.n_states];
        for (x, &px) in p.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for c in self.decode(x) {
                m[c] += px;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_agents as f64);
        m
    }
}

/// Generator of a population model: for each configuration `x`, agent `i`
/// in state `α` and target `β ≠ α`, the rate `r_i ρ_i^{αβ}(x̄_i)`.
pub fn build_generator(model: &PopulationModel, cap: usize) -> Result<GeneratorMatrix> {
    let n = model.n_agents();
    let s = model.n_states();
    let w = model.interaction();
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| row_entries(w.row(i))).collect();
    let policy = model.policy();
    let r = model.clock_rates();
    let mut z = StateBuf::from_elem(0.0, s);
    let mut rho = StateBuf::from_elem(0.0, s);
    GeneratorMatrix::assemble(n, s, cap, |x, config, out| {
        let mut place = 1;
        for i in 0..n {
            z.iter_mut().for_each(|v| *v = 0.0);
            for &(j, wij) in &rows[i] {
                z[config[j]] += wij;
            }
            let from = config[i];
            policy.rates(i, from, &z, &mut rho);
            for (to, &p) in rho.iter().enumerate() {
                if to != from {
                    let y = x + to * place - from * place;
                    out.push((y, r[i] * p));
                }
            }
            place *= s;
        }
    })
}

fn row_entries(row: Row<'_>) -> Vec<(usize, f64)> {
    row.iter().collect()
}

/// SIS generator written directly from a nonnegative weighted adjacency:
/// a susceptible agent `i` becomes infected at rate `b Σ_j A_ij x_j^I`, an
/// infected agent recovers at rate `γ`. States are `S = 0`, `I = 1`.
pub fn sis_generator_direct(
    adjacency: &[Vec<f64>],
    b: f64,
    gamma: f64,
    cap: usize,
) -> Result<GeneratorMatrix> {
    let n = adjacency.len();
    if adjacency.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("adjacency must be square".into()));
    }
    if !(b >= 0.0 && b.is_finite() && gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("rates must be finite and >= 0, got b={b}, gamma={gamma}")));
    }
    GeneratorMatrix::assemble(n, 2, cap, |x, config, out| {
        for i in 0..n {
            let bit = 1usize << i;
            if config[i] == INFECTED {
                out.push((x - bit, gamma));
            } else {
                let pressure: f64 = adjacency[i]
                    .iter()
                    .zip(config)
                    .filter(|(_, &c)| c == INFECTED)
                    .map(|(a, _)| a)
                    .sum();
                out.push((x + bit, b * pressure));
            }
        }
    })
}

/// Advances the row distribution `p` by time `t` with uniformization:
/// `p P(t) = Σ_k e^{−Λ̄t} (Λ̄t)^k / k! · p P_u^k`, `P_u = I + Λ/Λ̄`.
pub fn transient_distribution(gen: &GeneratorMatrix, p: &[f64], t: f64) -> Result<Vec<f64>> {
    if p.len() != gen.size() {
        return Err(Error::DimensionMismatch("distribution length differs from generator".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    let rate = gen.uniformization_rate();
    let mut cur = p.to_vec();
    if t == 0.0 || rate == 0.0 {
        return Ok(cur);
    }
    let pieces = (rate * t / MAX_POISSON_MEAN).ceil().max(1.0) as usize;
    let a = rate * t / pieces as f64;
    let mut term = vec![0.0; cur.len()];
    let mut lam = vec![0.0; cur.len()];
    let mut acc = vec![0.0; cur.len()];
    for _ in 0..pieces {
        term.copy_from_slice(&cur);
        let mut log_w = -a;
        let mut mass = log_w.exp();
        for (o, v) in acc.iter_mut().zip(&term) {
            *o = mass * v;
        }
        let mut k = 0usize;
        while 1.0 - mass > TRUNCATION_TOL {
            k += 1;
            gen.left_multiply(&term, &mut lam);
            for (v, l) in term.iter_mut().zip(&lam) {
                *v += l / rate;
            }
            log_w += a.ln() - (k as f64).ln();
            let w = log_w.exp();
            mass += w;
            for (o, v) in acc.iter_mut().zip(&term) {
                *o += w * v;
            }
            if k > 10_000 {
                return Err(Error::invalid("uniformization did not converge"));
            }
        }
        std::mem::swap(&mut cur, &mut acc);
    }
    Ok(cur)
}

/// Exact `E[Y_av(t)]` at every grid time from the initial distribution.
pub fn exact_marginals(
    gen: &GeneratorMatrix,
    init_dist: &[f64],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if init_dist.len() != gen.size() {
        return Err(Error::DimensionMismatch("distribution length differs from generator".into()));
    }
    let total: f64 = init_dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 || init_dist.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid(format!("initial distribution sums to {total}")));
    }
    check_grid(grid, f64::INFINITY)?;
    let mut p = init_dist.to_vec();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        p = transient_distribution(gen, &p, t - now)?;
        now = t;
        out.push(gen.expected_average(&p));
    }
    Ok(out)
}

/// Per-agent drift `Φ_i` at a pure configuration where agent `i` sits in
/// state `s`: `r_i ρ_i^{sα}(ȳ_i)` off the current state and minus their sum
/// on it.
fn pure_drift(model: &PopulationModel, i: usize, s: usize, ybar: &[f64], out: &mut [f64]) {
    model.policy().rates(i, s, ybar, out);
    let r = model.clock_rates()[i];
    let mut leave = 0.0;
    for (a, v) in out.iter_mut().enumerate() {
        if a == s {
            continue;
        }
        *v *= r;
        leave += *v;
    }
    out[s] = -leave;
}

/// `M_v(t) = Y_v(t) − Y_v(0) − ∫_0^t Φ_v(Y(s)) ds` with
/// `Y_v = Σ_i v_i Y_i`, `Φ_v = Σ_i v_i Φ_i`. The integrand is constant
/// between jumps, so the integral is an exact finite sum. Right-continuous
/// at jump times.
pub fn martingale_residual(
    traj: &Trajectory,
    model: &PopulationModel,
    v: &[f64],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = model.n_agents();
    let s = model.n_states();
    if v.len() != n || traj.initial.n_agents() != n || traj.initial.n_states() != s {
        return Err(Error::DimensionMismatch("weights or trajectory do not match model".into()));
    }
    if v.iter().any(|&x| !(x >= 0.0)) || v.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::invalid("weights must be nonnegative with sum at most 1"));
    }
    check_grid(grid, traj.horizon)?;
    let w = model.interaction();
    let mut state = traj.initial.clone();
    let mut yv = vec![0.0; s];
    for (i, &a) in state.assignment().iter().enumerate() {
        yv[a] += v[i];
    }
    let y0 = yv.clone();
    let mut ybar = vec![0.0; n * s];
    w.aggregate(&state.to_profile().into_vec(), s, &mut ybar);

    // v-weighted drift, maintained per agent so that updates stay local
    let mut phi = vec![0.0; n * s];
    let mut phi_v = vec![0.0; s];
    for i in (0..n).filter(|&i| v[i] > 0.0) {
        let (zi, pi) = (&ybar[i * s..(i + 1) * s], &mut phi[i * s..(i + 1) * s]);
        pure_drift(model, i, state.state(i), zi, pi);
        for (acc, p) in phi_v.iter_mut().zip(pi.iter()) {
            *acc += v[i] * p;
        }
    }

    let mut integral = vec![0.0; s];
    let mut last = 0.0;
    let mut next = 0;
    let mut out = Vec::with_capacity(grid.len());
    let mut fresh = StateBuf::from_elem(0.0, s);
    let mut touched: Vec<usize> = Vec::new();
    for &t in grid {
        while next < traj.events.len() && traj.events[next].time <= t {
            let e = traj.events[next];
            for (acc, p) in integral.iter_mut().zip(&phi_v) {
                *acc += p * (e.time - last);
            }
            last = e.time;
            yv[e.from] -= v[e.agent];
            yv[e.to] += v[e.agent];
            state.set(e.agent, e.to);
            touched.clear();
            for (i, wij) in w.column(e.agent).iter() {
                ybar[i * s + e.from] -= wij;
                ybar[i * s + e.to] += wij;
                touched.push(i);
            }
            if !touched.contains(&e.agent) {
                touched.push(e.agent);
            }
            for &i in &touched {
                if v[i] == 0.0 {
                    continue;
                }
                pure_drift(model, i, state.state(i), &ybar[i * s..(i + 1) * s], &mut fresh);
                for a in 0..s {
                    phi_v[a] += v[i] * (fresh[a] - phi[i * s + a]);
                    phi[i * s + a] = fresh[a];
                }
            }
            next += 1;
        }
        let m: Vec<f64> = (0..s)
            .map(|a| yv[a] - y0[a] - integral[a] - phi_v[a] * (t - last))
            .collect();
        out.push(m);
    }
    Ok(out)
}

/// `max_g max_α |a_g^α − b_g^α|`.
pub fn deviation_stat(avg_series: &[Vec<f64>], ode_series: &[Vec<f64>]) -> Result<f64> {
    Ok(pointwise_deviation(avg_series, ode_series)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// `max_α |a_g^α − b_g^α|` at each gridpoint.
pub fn pointwise_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "series of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.len() != y.len() {
                return Err(Error::DimensionMismatch("series of different widths".into()));
            }
            Ok(x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Sup-norm distance of one sampled `Y_av` path from the CMFA and NIMFA
/// averages on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRecord {
    pub grid: Vec<f64>,
    pub cmfa: Vec<f64>,
    pub nimfa: Vec<f64>,
    pub sup_dev_cmfa: f64,
    pub sup_dev_nimfa: f64,
}

impl DeviationRecord {
    pub fn new(
        grid: &[f64],
        avg: &[Vec<f64>],
        cmfa: &[Vec<f64>],
        nimfa: &[Vec<f64>],
    ) -> Result<Self> {
        if avg.len() != grid.len() {
            return Err(Error::GridMismatch("series length differs from grid".into()));
        }
        let cmfa = pointwise_deviation(avg, cmfa)?;
        let nimfa = pointwise_deviation(avg, nimfa)?;
        Ok(Self {
            grid: grid.to_vec(),
            sup_dev_cmfa: cmfa.iter().copied().fold(0.0, f64::max),
            sup_dev_nimfa: nimfa.iter().copied().fold(0.0, f64::max),
            cmfa,
            nimfa,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{sis_model_dense, RatePolicy, StateSpace};
    use crate::interaction::InteractionMatrix;
    use crate::simulator::{simulate_ct, Event};

    fn telegraph(c: f64) -> PopulationModel {
        PopulationModel::with_uniform_rate(
            StateSpace::new(["1", "2"]).unwrap(),
            1.0,
            RatePolicy::constant(vec![vec![0.0, c], vec![c, 0.0]]).unwrap(),
            Arc::new(InteractionMatrix::complete(1).unwrap()),
        )
        .unwrap()
    }

    fn clique(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect()
    }

    #[test]
    fn two_state_generator() {
        let g = build_generator(&telegraph(1.0), DEFAULT_CAP).unwrap();
        assert_eq!(g.entry(0, 0), -1.0);
        assert_eq!(g.entry(0, 1), 1.0);
        assert_eq!(g.entry(1, 0), 1.0);
        assert_eq!(g.entry(1, 1), -1.0);
        assert_eq!(g.uniformization_rate(), 1.0);
    }

    #[test]
    fn zero_policy_zero_generator() {
        let g = build_generator(&telegraph(0.0), DEFAULT_CAP).unwrap();
        assert_eq!(g.nnz_off_diagonal(), 0);
        assert!((0..2).all(|x| g.entry(x, x) == 0.0));
    }

    #[test]
    fn sis_three_clique_entries() {
        let g = build_generator(&sis_model_dense(&clique(3), 1.0, 1.0).unwrap(), DEFAULT_CAP).unwrap();
        let from = g.encode(&[0, 1, 1]);
        let to = g.encode(&[1, 1, 1]);
        assert!((g.entry(from, to) - 2.0).abs() < 1e-12);
        let healed = g.encode(&[0, 0, 1]);
        assert!((g.entry(from, healed) - 1.0).abs() < 1e-12);
        assert!(g.max_row_sum() < 1e-12);

        let direct = sis_generator_direct(&clique(3), 1.0, 1.0, DEFAULT_CAP).unwrap();
        assert!(g.max_abs_difference(&direct).unwrap() < 1e-12);
    }

    #[test]
    fn sis_direct_degenerate_rates() {
        let g = sis_generator_direct(&clique(3), 1.0, 0.0, DEFAULT_CAP).unwrap();
        let all = g.encode(&[1, 1, 1]);
        assert_eq!(g.row(all).count(), 0);
        assert_eq!(g.entry(all, all), 0.0);

        let g = sis_generator_direct(&clique(3), 0.0, 1.0, DEFAULT_CAP).unwrap();
        for x in 0..g.size() {
            for (y, _) in g.row(x) {
                assert!(y < x, "b = 0 only allows recoveries");
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = sis_generator_direct(&clique(17), 1.0, 1.0, DEFAULT_CAP).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { required: 131_072, cap: 65_536 }));
    }

    #[test]
    fn encoding_round_trip_and_csv() {
        let g = sis_generator_direct(&clique(3), 1.0, 1.0, DEFAULT_CAP).unwrap();
        for x in 0..g.size() {
            assert_eq!(g.encode(&g.decode(x)), x);
        }
        assert_eq!(g.decode(1), vec![1, 0, 0]);
        let labels = vec!["S".to_string(), "I".to_string()];
        let idx = g.index_csv(&labels);
        assert!(idx.starts_with("index,config\n0,S S S\n1,I S S\n"));
        let trip = g.triplet_csv();
        assert!(trip.starts_with("row,col,rate\n0,0,0\n1,0,1\n1,1,-3\n"));
    }

    #[test]
    fn telegraph_marginal() {
        let g = build_generator(&telegraph(1.0), DEFAULT_CAP).unwrap();
        let m = exact_marginals(&g, &[1.0, 0.0], &[0.0, 1.0, 50.0]).unwrap();
        assert_eq!(m[0], vec![1.0, 0.0]);
        let exact = 0.5 + 0.5 * (-2.0f64).exp();
        assert!((m[1][0] - exact).abs() < 1e-12);
        assert!((m[2][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn marginals_validate_input() {
        let g = build_generator(&telegraph(1.0), DEFAULT_CAP).unwrap();
        assert!(exact_marginals(&g, &[0.5, 0.4], &[1.0]).is_err());
        assert!(exact_marginals(&g, &[1.0], &[1.0]).is_err());
        assert!(exact_marginals(&g, &[1.0, 0.0], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn product_distribution_sums_to_one() {
        let g = sis_generator_direct(&clique(3), 1.0, 1.0, DEFAULT_CAP).unwrap();
        let prof = MixedProfile::new(3, 2, vec![0.8, 0.2, 0.5, 0.5, 0.1, 0.9]).unwrap();
        let p = g.product_distribution(&prof).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m = g.expected_average(&p);
        assert!((m[1] - (0.2 + 0.5 + 0.9) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn residual_zero_without_dynamics() {
        let m = telegraph(0.0);
        let init = PopulationState::new(vec![0], 2).unwrap();
        let traj = simulate_ct(&m, &init, 3.0, 1).unwrap();
        let r = martingale_residual(&traj, &m, &[1.0], &[0.0, 1.5, 3.0]).unwrap();
        assert!(r.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn residual_unrolled_single_agent() {
        // telegraph with rate c: Φ = c (e_other − e_current)
        let m = telegraph(0.5);
        let init = PopulationState::new(vec![0], 2).unwrap();
        let traj = Trajectory {
            initial: init,
            events: vec![Event {
                time: 1.0,
                agent: 0,
                from: 0,
                to: 1,
            }],
            horizon: 3.0,
            seed: 0,
            rings: 1,
        };
        let r = martingale_residual(&traj, &m, &[0.5], &[0.5, 1.0, 3.0]).unwrap();
        // before the jump: −v Φ t with Φ = (−0.5, 0.5)
        assert!((r[0][0] - 0.125).abs() < 1e-15);
        assert!((r[0][1] + 0.125).abs() < 1e-15);
        // at the jump: ±v plus accumulated drift
        assert!((r[1][0] - (-0.5 + 0.25)).abs() < 1e-15);
        assert!((r[1][1] - (0.5 - 0.25)).abs() < 1e-15);
        // after: drift reverses
        assert!((r[2][0] - (-0.25 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn residual_rejects_bad_weights() {
        let m = telegraph(1.0);
        let init = PopulationState::new(vec![0], 2).unwrap();
        let traj = simulate_ct(&m, &init, 1.0, 1).unwrap();
        assert!(martingale_residual(&traj, &m, &[1.5], &[1.0]).is_err());
        assert!(martingale_residual(&traj, &m, &[-0.1], &[1.0]).is_err());
    }

    #[test]
    fn deviation_examples() {
        let a = vec![vec![0.2, 0.8], vec![0.3, 0.7]];
        assert_eq!(deviation_stat(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec<f64>> = a.iter().map(|x| vec![x[0] + 0.03, x[1]]).collect();
        assert!((deviation_stat(&a, &b).unwrap() - 0.03).abs() < 1e-15);
        assert!(matches!(deviation_stat(&a, &b[..1]), Err(Error::GridMismatch(_))));
        let rec = DeviationRecord::new(&[0.0, 1.0], &a, &b, &a).unwrap();
        assert_eq!(rec.sup_dev_nimfa, 0.0);
        assert_eq!(rec.sup_dev_cmfa, rec.cmfa.iter().copied().fold(0.0, f64::max));
    }
}
