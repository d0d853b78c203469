//! Classical (CMFA) and N-intertwined (NIMFA) mean-field approximations,
//! a fixed-step RK4 integrator that keeps states on the simplex, and the
//! error term separating the two approximations.
//!
//! CMFA: `φ^α(x) = r Σ_β (x^β ρ^{βα}(x) − x^α ρ^{αβ}(x))`.
//!
//! NIMFA: `Φ_i^α(y) = r_i Σ_β (y_i^β ρ_i^{βα}(ȳ_i) − y_i^α ρ_i^{αβ}(ȳ_i))`
//! with `ȳ_i = Σ_j w_ij y_j`.

use rayon::prelude::*;

use crate::dynamics::{block_average, MixedProfile, PopulationModel, RatePolicy, StateBuf};
use crate::error::{Error, Result};

/// Largest simplex repair accepted without flagging the run.
pub const PROJECTION_LIMIT: f64 = 1e-6;

const DRIFT_THRESHOLD: f64 = 1e-12;
const MAX_STEPS: f64 = 1e8;
const PAR_CHUNK_AGENTS: usize = 256;

/// Time-gridded ODE solution. Each stored state holds `n_blocks` simplex
/// vectors of length `block` (one block for the CMFA, one per agent for the
/// NIMFA).
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub block: usize,
    pub step: f64,
    pub max_projection_correction: f64,
}

impl OdeSolution {
    pub fn n_blocks(&self) -> usize {
        self.states.first().map_or(0, |s| s.len() / self.block)
    }

    /// Whether simplex repairs stayed at rounding scale.
    pub fn is_accepted(&self) -> bool {
        self.max_projection_correction < PROJECTION_LIMIT
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `t,<label0>,<label1>,...` with the block average at each gridpoint.
    pub fn average_csv(&self, labels: &[String]) -> String {
        let mut s = format!("t,{}\n", labels.join(","));
        for (t, x) in self.grid.iter().zip(nimfa_average(self)) {
            let vals: Vec<String> = x.iter().map(f64::to_string).collect();
            s.push_str(&format!("{t},{}\n", vals.join(",")));
        }
        s
    }

    /// Long format `t,agent,<labels...>`, keeping every `thin`-th gridpoint
    /// (and the last one).
    pub fn long_csv(&self, labels: &[String], thin: usize) -> String {
        let thin = thin.max(1);
        let mut s = format!("t,agent,{}\n", labels.join(","));
        let last = self.grid.len().saturating_sub(1);
        for (k, (t, y)) in self.grid.iter().zip(&self.states).enumerate() {
            if k % thin != 0 && k != last {
                continue;
            }
            for (i, yi) in y.chunks_exact(self.block).enumerate() {
                let vals: Vec<String> = yi.iter().map(f64::to_string).collect();
                s.push_str(&format!("{t},{i},{}\n", vals.join(",")));
            }
        }
        s
    }
}

/// Default RK4 step `1e-3 · min(1, 1/r_max)`.
pub fn default_step(model: &PopulationModel) -> f64 {
    1e-3 * (1.0f64).min(1.0 / model.max_rate())
}

/// CMFA vector field at `x` for a homogeneous policy and clock rate `r`.
pub fn cmfa_rhs(policy: &RatePolicy, r: f64, x: &[f64]) -> Result<Vec<f64>> {
    if !policy.is_homogeneous() {
        return Err(Error::NonHomogeneousPolicy);
    }
    if x.len() != policy.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for {} states",
            x.len(),
            policy.n_states()
        )));
    }
    let mut out = vec![0.0; x.len()];
    let mut rho = StateBuf::from_elem(0.0, x.len());
    agent_drift(policy, 0, r, x, x, &mut rho, &mut out);
    Ok(out)
}

/// `out = r Σ_β (y^β ρ^{β·}(z) − y^· ρ^{·β}(z))` for a single agent.
#[inline]
fn agent_drift(
    policy: &RatePolicy,
    agent: usize,
    r: f64,
    y: &[f64],
    z: &[f64],
    rho: &mut [f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (from, &mass) in y.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        policy.rates(agent, from, z, rho);
        for (to, &p) in rho.iter().enumerate() {
            if to == from {
                continue;
            }
            let flow = r * mass * p;
            out[to] += flow;
            out[from] -= flow;
        }
    }
}

/// Reusable evaluator of the NIMFA vector field.
pub struct NimfaField<'a> {
    model: &'a PopulationModel,
    ybar: Vec<f64>,
}

impl<'a> NimfaField<'a> {
    pub fn new(model: &'a PopulationModel) -> Self {
        Self {
            model,
            ybar: vec![0.0; model.n_agents() * model.n_states()],
        }
    }

    pub fn eval(&mut self, y: &[f64], out: &mut [f64]) {
        let s = self.model.n_states();
        let w = self.model.interaction();
        w.aggregate(y, s, &mut self.ybar);
        let policy = self.model.policy();
        let rates = self.model.clock_rates();
        let ybar = &self.ybar;
        out.par_chunks_mut(s * PAR_CHUNK_AGENTS)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut rho = StateBuf::from_elem(0.0, s);
                for (k, oi) in chunk.chunks_exact_mut(s).enumerate() {
                    let i = c * PAR_CHUNK_AGENTS + k;
                    let yi = &y[i * s..(i + 1) * s];
                    let zi = &ybar[i * s..(i + 1) * s];
                    agent_drift(policy, i, rates[i], yi, zi, &mut rho, oi);
                }
            });
    }
}

/// NIMFA vector field `Φ(y)`, one block per agent.
pub fn nimfa_rhs(model: &PopulationModel, y: &MixedProfile) -> Result<Vec<f64>> {
    if y.n_agents() != model.n_agents() || y.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch("profile does not match model".into()));
    }
    let mut out = vec![0.0; y.as_slice().len()];
    NimfaField::new(model).eval(y.as_slice(), &mut out);
    Ok(out)
}

/// Fixed-step classical RK4 on `[0, horizon]` with step `step` (the last
/// step is shortened so the solution ends exactly at `horizon`).
///
/// `init` holds consecutive simplex blocks of length `block`. After each
/// step any block that drifted off the simplex by more than 1e-12 is
/// clipped to `[0, 1]` and renormalized; the largest repair is reported in
/// `max_projection_correction`. States are recorded every `record_every`
/// steps and at the final time.
pub fn integrate<F>(
    mut rhs: F,
    init: Vec<f64>,
    block: usize,
    horizon: f64,
    step: f64,
    record_every: usize,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    if horizon / step > MAX_STEPS {
        return Err(Error::invalid(format!(
            "horizon/step = {} exceeds {MAX_STEPS}",
            horizon / step
        )));
    }
    if block == 0 || !init.len().is_multiple_of(block) {
        return Err(Error::DimensionMismatch("state length is not a multiple of block".into()));
    }
    let record_every = record_every.max(1);
    let n_steps = step_count(horizon, step);
    let dim = init.len();
    let mut y = init;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    let mut grid = vec![0.0];
    let mut states = vec![y.clone()];
    let mut max_corr = 0.0f64;

    let eval = |rhs: &mut F, t: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        rhs(t, x, out)?;
        if let Some(c) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: t, component: c });
        }
        Ok(())
    };

    for k in 0..n_steps {
        let t = k as f64 * step;
        let h = if k + 1 == n_steps { horizon - t } else { step };
        eval(&mut rhs, t, &y, &mut k1)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        eval(&mut rhs, t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        eval(&mut rhs, t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        eval(&mut rhs, t + h, &tmp, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(c) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time: t + h,
                component: c,
            });
        }
        for b in y.chunks_exact_mut(block) {
            max_corr = max_corr.max(repair_simplex(b));
        }
        if let Some(t) = recorded_time(k + 1, n_steps, horizon, step, record_every) {
            grid.push(t);
            states.push(y.clone());
        }
    }
    Ok(OdeSolution {
        grid,
        states,
        block,
        step,
        max_projection_correction: max_corr,
    })
}

fn step_count(horizon: f64, step: f64) -> usize {
    ((horizon / step) - 1e-9).ceil().max(0.0) as usize
}

fn recorded_time(
    step_no: usize,
    n_steps: usize,
    horizon: f64,
    step: f64,
    record_every: usize,
) -> Option<f64> {
    if step_no == n_steps {
        Some(horizon)
    } else if step_no.is_multiple_of(record_every) {
        Some(step_no as f64 * step)
    } else {
        None
    }
}

/// The times at which [`integrate`] records states for the same
/// `horizon`, `step` and `record_every`.
pub fn recorded_times(horizon: f64, step: f64, record_every: usize) -> Vec<f64> {
    let record_every = record_every.max(1);
    let n_steps = step_count(horizon, step);
    std::iter::once(0.0)
        .chain((1..=n_steps).filter_map(|k| recorded_time(k, n_steps, horizon, step, record_every)))
        .collect()
}

/// Clip-and-renormalize when the block drifted off the simplex; returns the
/// largest entrywise change.
fn repair_simplex(b: &mut [f64]) -> f64 {
    let sum: f64 = b.iter().sum();
    let off = b.iter().any(|&v| !(-DRIFT_THRESHOLD..=1.0 + DRIFT_THRESHOLD).contains(&v));
    if !off && (sum - 1.0).abs() <= DRIFT_THRESHOLD {
        return 0.0;
    }
    let old: StateBuf = b.iter().copied().collect();
    b.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let total: f64 = b.iter().sum();
    if total > 0.0 {
        b.iter_mut().for_each(|v| *v /= total);
    } else {
        let u = 1.0 / b.len() as f64;
        b.iter_mut().for_each(|v| *v = u);
    }
    old.iter()
        .zip(b.iter())
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max)
}

/// Integrates the CMFA from `x0` with clock rate `r`.
pub fn solve_cmfa(
    policy: &RatePolicy,
    r: f64,
    x0: &[f64],
    horizon: f64,
    step: f64,
    record_every: usize,
) -> Result<OdeSolution> {
    if !policy.is_homogeneous() {
        return Err(Error::NonHomogeneousPolicy);
    }
    let s = x0.len();
    let mut rho = StateBuf::from_elem(0.0, s);
    integrate(
        |_, x, out| {
            agent_drift(policy, 0, r, x, x, &mut rho, out);
            Ok(())
        },
        x0.to_vec(),
        s,
        horizon,
        step,
        record_every,
    )
}

/// Integrates the NIMFA from `y0`.
pub fn solve_nimfa(
    model: &PopulationModel,
    y0: &MixedProfile,
    horizon: f64,
    step: f64,
    record_every: usize,
) -> Result<OdeSolution> {
    if y0.n_agents() != model.n_agents() || y0.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch("profile does not match model".into()));
    }
    let mut field = NimfaField::new(model);
    integrate(
        |_, y, out| {
            field.eval(y, out);
            Ok(())
        },
        y0.as_slice().to_vec(),
        model.n_states(),
        horizon,
        step,
        record_every,
    )
}

/// `y_av(t) = (1/N) Σ_i y_i(t)` at every gridpoint.
pub fn nimfa_average(sol: &OdeSolution) -> Vec<Vec<f64>> {
    sol.states
        .iter()
        .map(|y| block_average(y, sol.block))
        .collect()
}

/// The term `err(y)` with `(1/N) Σ_i Φ_i(y) = φ(y_av) + err(y)`, for
/// identical agents with common clock rate `r`:
///
/// `err^α = (r/N) Σ_i Σ_β { y_i^β (ρ^{βα}(ȳ_i) − ρ^{βα}(y_av)) − y_i^α (ρ^{αβ}(ȳ_i) − ρ^{αβ}(y_av)) }`.
pub fn cmfa_error_term(model: &PopulationModel, y: &MixedProfile) -> Result<Vec<f64>> {
    let r = match (model.policy().is_homogeneous(), model.uniform_rate()) {
        (true, Some(r)) => r,
        _ => return Err(Error::NonHomogeneousPolicy),
    };
    if y.n_agents() != model.n_agents() || y.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch("profile does not match model".into()));
    }
    let s = model.n_states();
    let n = model.n_agents();
    let policy = model.policy();
    let yav = y.average();
    let mut ybar = vec![0.0; n * s];
    model.interaction().aggregate(y.as_slice(), s, &mut ybar);

    // ρ^{βα}(y_av) for all β, α
    let mut rho_av = vec![vec![0.0; s]; s];
    for (from, row) in rho_av.iter_mut().enumerate() {
        policy.rates(0, from, &yav, row);
    }
    let mut local = vec![vec![0.0; s]; s];
    let mut err = vec![0.0; s];
    for i in 0..n {
        let yi = y.agent(i);
        let zi = &ybar[i * s..(i + 1) * s];
        for (from, row) in local.iter_mut().enumerate() {
            policy.rates(i, from, zi, row);
        }
        for alpha in 0..s {
            for beta in 0..s {
                if alpha == beta {
                    continue;
                }
                err[alpha] += yi[beta] * (local[beta][alpha] - rho_av[beta][alpha])
                    - yi[alpha] * (local[alpha][beta] - rho_av[alpha][beta]);
            }
        }
    }
    err.iter_mut().for_each(|e| *e *= r / n as f64);
    Ok(err)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dynamics::{
        coordination_utility, logit_policy, sis_model_dense, PopulationState, StateSpace,
    };
    use crate::interaction::InteractionMatrix;

    fn constant(c: f64) -> RatePolicy {
        RatePolicy::constant(vec![vec![0.0, c], vec![c, 0.0]]).unwrap()
    }

    fn logit_model(w: InteractionMatrix) -> PopulationModel {
        PopulationModel::with_uniform_rate(
            StateSpace::new(["1", "2"]).unwrap(),
            1.0,
            logit_policy(coordination_utility(), 0.1).unwrap(),
            Arc::new(w),
        )
        .unwrap()
    }

    fn clique(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect()
    }

    #[test]
    fn cmfa_constant_rates() {
        let phi = cmfa_rhs(&constant(0.3), 1.0, &[0.5, 0.5]).unwrap();
        assert_eq!(phi, vec![0.0, 0.0]);
        let phi = cmfa_rhs(&constant(1.0), 1.0, &[0.8, 0.2]).unwrap();
        assert!((phi[0] + 0.6).abs() < 1e-15);
        assert!((phi[0] + phi[1]).abs() < 1e-15);
    }

    #[test]
    fn cmfa_logit_target_only_form() {
        let p = logit_policy(coordination_utility(), 0.1).unwrap();
        let phi = cmfa_rhs(&p, 1.0, &[0.8, 0.2]).unwrap();
        let expect = 1.0 / (1.0 + (-4.0f64).exp()) - 0.8;
        assert!((phi[0] - expect).abs() < 1e-14);
        assert!((phi[0] - 0.182014).abs() < 1e-6);
    }

    #[test]
    fn cmfa_rejects_heterogeneous_policy() {
        let sis = sis_model_dense(&clique(3), 1.0, 1.0).unwrap();
        assert!(matches!(
            cmfa_rhs(sis.policy(), 1.0, &[0.5, 0.5]),
            Err(Error::NonHomogeneousPolicy)
        ));
        let y = MixedProfile::identical(3, &[0.5, 0.5]).unwrap();
        assert!(cmfa_error_term(&sis, &y).is_err());
    }

    #[test]
    fn nimfa_sis_examples() {
        let sis = sis_model_dense(&clique(3), 1.0, 1.0).unwrap();
        let healthy = MixedProfile::identical(3, &[1.0, 0.0]).unwrap();
        assert!(nimfa_rhs(&sis, &healthy).unwrap().iter().all(|&v| v == 0.0));

        let y = PopulationState::new(vec![1, 0, 0], 2).unwrap().to_profile();
        let d = nimfa_rhs(&sis, &y).unwrap();
        // ẏ_i^I = b y_i^S Σ_j A_ij y_j^I − γ y_i^I
        assert!((d[1] + 1.0).abs() < 1e-14);
        assert!((d[3] - 1.0).abs() < 1e-14);
        assert!((d[5] - 1.0).abs() < 1e-14);
        for i in 0..3 {
            assert!((d[2 * i] + d[2 * i + 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn nimfa_reduces_to_cmfa_on_homogeneous_interactions() {
        let m = logit_model(InteractionMatrix::complete(7).unwrap());
        let x = [0.3, 0.7];
        let y = MixedProfile::identical(7, &x).unwrap();
        let phi = cmfa_rhs(m.policy(), 1.0, &x).unwrap();
        let big = nimfa_rhs(&m, &y).unwrap();
        for yi in big.chunks_exact(2) {
            assert!((yi[0] - phi[0]).abs() < 1e-15);
            assert!((yi[1] - phi[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn rhs_zero_keeps_solution_constant() {
        let sol = integrate(
            |_, _, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                Ok(())
            },
            vec![0.25, 0.75],
            2,
            1.0,
            0.1,
            1,
        )
        .unwrap();
        assert!(sol.states.iter().all(|s| s == &vec![0.25, 0.75]));
        assert_eq!(*sol.grid.last().unwrap(), 1.0);
    }

    #[test]
    fn partial_last_step_lands_on_horizon() {
        let sol = solve_cmfa(&constant(1.0), 1.0, &[1.0, 0.0], 1.05, 0.1, 1).unwrap();
        assert_eq!(sol.grid.len(), 12);
        assert_eq!(*sol.grid.last().unwrap(), 1.05);
        let exact = 0.5 + 0.5 * (-2.0f64 * 1.05).exp();
        assert!((sol.final_state()[0] - exact).abs() < 1e-5);
    }

    #[test]
    fn telegraph_closed_form() {
        let sol = solve_cmfa(&constant(1.0), 1.0, &[1.0, 0.0], 1.0, 1e-3, 1000).unwrap();
        let exact = 0.5 + 0.5 * (-2.0f64).exp();
        assert!((sol.final_state()[0] - exact).abs() < 1e-8);
        assert!((exact - 0.56767).abs() < 1e-5);
        assert_eq!(sol.grid, vec![0.0, 1.0]);
    }

    #[test]
    fn non_finite_derivative_aborts() {
        let err = integrate(
            |t, _, out| {
                out[0] = if t > 0.25 { f64::NAN } else { 0.0 };
                out[1] = 0.0;
                Ok(())
            },
            vec![0.5, 0.5],
            2,
            1.0,
            0.1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { component: 0, .. }));
    }

    #[test]
    fn large_drift_is_repaired_and_flagged() {
        let sol = integrate(
            |_, _, out| {
                out[0] = 1.0;
                out[1] = 0.0;
                Ok(())
            },
            vec![0.5, 0.5],
            2,
            0.1,
            0.1,
            1,
        )
        .unwrap();
        assert!(!sol.is_accepted());
        let last = sol.final_state();
        assert!(((last[0] + last[1]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nimfa_average_examples() {
        let sol = OdeSolution {
            grid: vec![0.0],
            states: vec![vec![1.0, 0.0, 0.0, 1.0]],
            block: 2,
            step: 0.1,
            max_projection_correction: 0.0,
        };
        assert_eq!(nimfa_average(&sol), vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn error_term_vanishes_for_homogeneous_or_identical() {
        let m = logit_model(InteractionMatrix::complete(6).unwrap());
        let y = MixedProfile::new(
            6,
            2,
            vec![1.0, 0.0, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0, 0.9, 0.1, 0.3, 0.7],
        )
        .unwrap();
        assert!(cmfa_error_term(&m, &y).unwrap().iter().all(|e| e.abs() < 1e-15));

        let ring = logit_model(InteractionMatrix::nearest_neighbor(30, 0.2).unwrap());
        let y = MixedProfile::identical(30, &[0.35, 0.65]).unwrap();
        assert!(cmfa_error_term(&ring, &y).unwrap().iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn error_term_identity_on_ring() {
        let m = logit_model(InteractionMatrix::nearest_neighbor(200, 0.1).unwrap());
        let assignment = (0..200).map(|i| usize::from(i < 40)).collect();
        let y = PopulationState::new(assignment, 2).unwrap().to_profile();
        let err = cmfa_error_term(&m, &y).unwrap();
        let big = nimfa_rhs(&m, &y).unwrap();
        let avg = block_average(&big, 2);
        let phi = cmfa_rhs(m.policy(), 1.0, &y.average()).unwrap();
        for a in 0..2 {
            assert!((avg[a] - phi[a] - err[a]).abs() < 1e-12);
        }
        assert!(err[0].abs() > 1e-3);
    }

    #[test]
    fn csv_exports() {
        let sol = OdeSolution {
            grid: vec![0.0, 0.5, 1.0],
            states: vec![vec![1.0, 0.0, 0.0, 1.0]; 3],
            block: 2,
            step: 0.5,
            max_projection_correction: 0.0,
        };
        let labels = vec!["a".to_string(), "b".to_string()];
        assert_eq!(sol.average_csv(&labels), "t,a,b\n0,0.5,0.5\n0.5,0.5,0.5\n1,0.5,0.5\n");
        let long = sol.long_csv(&labels, 2);
        assert_eq!(long.lines().count(), 1 + 2 * 2);
        assert!(long.starts_with("t,agent,a,b\n0,0,1,0\n0,1,0,1\n1,0,"));
    }
}
