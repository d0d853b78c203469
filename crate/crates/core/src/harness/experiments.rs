//! The experiments behind the CLI subcommands. Each writes its CSV and SVG
//! files through an [`Output`] and returns a [`Summary`].

use std::fmt::Write as _;

use crate::dynamics::{MixedProfile, PopulationModel, PopulationState};
use crate::error::{Error, Result};
use crate::harness::config::{
    build_interaction, build_model, init_clustered, init_random, read_init_file, ExperimentConfig,
    InitSpec, InteractionSpec, NimfaInit, Reference,
};
use crate::harness::svg::{Band, Plot, Series, PALETTE};
use crate::harness::Output;
use crate::interaction::{circulant_spectrum, DensityReport, InteractionMatrix};
use crate::meanfield::{
    default_step, nimfa_average, recorded_times, solve_cmfa, solve_nimfa, OdeSolution,
};
use crate::oracle::{build_generator, exact_marginals, DeviationRecord, GeneratorMatrix};
use crate::simulator::{
    derive_seed_list, replicate_map, sample_average, simulate_ct, simulate_dt, EnsembleStats,
    InitialCondition,
};

pub const LAMBDA_TOL: f64 = 1e-13;
pub const LAMBDA_MAX_ITER: usize = 200_000;

/// Differences smaller than this are ignored when looking for turning
/// points of a curve.
pub const MONOTONE_TOL: f64 = 1e-9;

/// Largest configuration space for which `dt-convergence` uses the exact
/// generator as its continuous-time reference.
pub const EXACT_REFERENCE_LIMIT: usize = 4096;

/// Scalar results of a run, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub values: Vec<(String, f64)>,
    pub deviations: Vec<DeviationRecord>,
    pub density: Vec<DensityReport>,
}

impl Summary {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.values.push((key.into(), value));
    }

    fn csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// `(ode_step, record_every)` such that recorded ODE states fall on the
/// sampling grid.
fn steps(cfg: &ExperimentConfig, model: &PopulationModel) -> Result<(f64, usize)> {
    let h = cfg.ode_step.unwrap_or_else(|| default_step(model));
    let every = (cfg.grid_step / h).round().max(1.0);
    if (every * h - cfg.grid_step).abs() > 1e-9 * cfg.grid_step {
        return Err(Error::Config(format!(
            "grid_step {} is not a multiple of ode_step {h}",
            cfg.grid_step
        )));
    }
    Ok((h, every as usize))
}

fn fixed_init(cfg: &ExperimentConfig, model: &PopulationModel) -> Result<Option<PopulationState>> {
    let n = model.n_agents();
    let s = model.n_states();
    Ok(match &cfg.init {
        InitSpec::Clustered { fraction } => Some(init_clustered(n, *fraction, s)?),
        InitSpec::File { path } => Some(read_init_file(path, model.state_space(), n)?),
        InitSpec::Random { .. } => None,
    })
}

/// Mean-field runs and a stochastic ensemble sampled on a common grid.
struct Comparison {
    grid: Vec<f64>,
    stats: EnsembleStats,
    nimfa: Option<Vec<Vec<f64>>>,
    cmfa: Option<Vec<Vec<f64>>>,
    records: Vec<DeviationRecord>,
    max_projection: f64,
}

fn cmfa_available(model: &PopulationModel) -> bool {
    model.policy().is_homogeneous() && model.uniform_rate().is_some()
}

fn cmfa_series(model: &PopulationModel, x0: &[f64], cfg: &ExperimentConfig) -> Result<OdeSolution> {
    let (h, every) = steps(cfg, model)?;
    let r = model.uniform_rate().ok_or(Error::NonHomogeneousPolicy)?;
    solve_cmfa(model.policy(), r, x0, cfg.horizon, h, every)
}

fn nimfa_series(model: &PopulationModel, y0: &MixedProfile, cfg: &ExperimentConfig) -> Result<OdeSolution> {
    let (h, every) = steps(cfg, model)?;
    solve_nimfa(model, y0, cfg.horizon, h, every)
}

fn compare_core(
    cfg: &ExperimentConfig,
    model: &PopulationModel,
    want_nimfa: bool,
    want_cmfa: bool,
) -> Result<Comparison> {
    let want_cmfa = want_cmfa && cmfa_available(model);
    let n = model.n_agents();
    let s = model.n_states();
    let fixed = fixed_init(cfg, model)?;
    let p = match cfg.init {
        InitSpec::Random { p } => p,
        _ => 0.0,
    };
    let sampler = move |seed: u64| init_random(n, p, seed, s);
    let init = match &fixed {
        Some(st) => InitialCondition::Fixed(st),
        None => InitialCondition::Sampled(&sampler),
    };
    let nimfa_mode = match (&fixed, cfg.nimfa_init) {
        (Some(_), _) => NimfaInit::Mean,
        (None, Some(mode)) => mode,
        (None, None) => NimfaInit::Mean,
    };

    let shared_nimfa = if want_nimfa && nimfa_mode == NimfaInit::Mean {
        let y0 = match &fixed {
            Some(st) => st.to_profile(),
            None => {
                let mut x = vec![0.0; s];
                x[0] = p;
                x[1] = 1.0 - p;
                MixedProfile::identical(n, &x)?
            }
        };
        Some(nimfa_series(model, &y0, cfg)?)
    } else {
        None
    };
    let shared_cmfa = match (&fixed, want_cmfa) {
        (Some(st), true) => Some(cmfa_series(model, &st.average(), cfg)?),
        _ => None,
    };
    let grid = {
        let (h, every) = steps(cfg, model)?;
        recorded_times(cfg.horizon, h, every)
    };
    let shared_nimfa_avg = shared_nimfa.as_ref().map(nimfa_average);
    let mut max_projection = shared_nimfa
        .iter()
        .chain(&shared_cmfa)
        .map(|s| s.max_projection_correction)
        .fold(0.0, f64::max);

    let outcomes = replicate_map(cfg.replicates, cfg.seed, |_, seed| {
        let start = init.draw(seed)?;
        let traj = simulate_ct(model, &start, cfg.horizon, seed)?;
        let avg = sample_average(&traj, &grid)?;
        let mut proj = 0.0f64;
        let own_cmfa = match (&shared_cmfa, want_cmfa) {
            (Some(sol), _) => Some(sol.states.clone()),
            (None, true) => {
                let sol = cmfa_series(model, &start.average(), cfg)?;
                proj = proj.max(sol.max_projection_correction);
                Some(sol.states)
            }
            _ => None,
        };
        let own_nimfa = match (&shared_nimfa_avg, want_nimfa) {
            (Some(a), _) => Some(a.clone()),
            (None, true) => {
                let sol = nimfa_series(model, &start.to_profile(), cfg)?;
                proj = proj.max(sol.max_projection_correction);
                Some(nimfa_average(&sol))
            }
            _ => None,
        };
        let nan = vec![vec![f64::NAN; s]; grid.len()];
        let mut rec = DeviationRecord::new(
            &grid,
            &avg,
            own_cmfa.as_deref().unwrap_or(&nan),
            own_nimfa.as_deref().unwrap_or(&nan),
        )?;
        if own_cmfa.is_none() {
            rec.sup_dev_cmfa = f64::NAN;
        }
        if own_nimfa.is_none() {
            rec.sup_dev_nimfa = f64::NAN;
        }
        Ok((avg, rec, proj, start.average()))
    })?;

    let mut series = Vec::with_capacity(outcomes.len());
    let mut records = Vec::with_capacity(outcomes.len());
    let mut mean_start = vec![0.0; s];
    for (avg, rec, proj, x0) in outcomes {
        series.push(avg);
        records.push(rec);
        max_projection = max_projection.max(proj);
        for (m, v) in mean_start.iter_mut().zip(x0) {
            *m += v / cfg.replicates as f64;
        }
    }
    let seeds = derive_seed_list(cfg.seed, cfg.replicates);
    let stats = EnsembleStats::from_series(grid.clone(), series, seeds)?;
    let cmfa = match (shared_cmfa, want_cmfa) {
        (Some(sol), _) => Some(sol.states),
        (None, true) => Some(cmfa_series(model, &mean_start, cfg)?.states),
        _ => None,
    };
    let nimfa = match (shared_nimfa_avg, want_nimfa) {
        (Some(a), _) => Some(a),
        (None, true) => {
            // per-replicate NIMFAs: plot the one started from the mean profile
            let y0 = MixedProfile::identical(n, &mean_start)?;
            Some(nimfa_average(&nimfa_series(model, &y0, cfg)?))
        }
        _ => None,
    };
    Ok(Comparison {
        grid,
        stats,
        nimfa,
        cmfa,
        records,
        max_projection,
    })
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn timeseries_header(labels: &[String], prefix: &str) -> String {
    let mut s = String::from(prefix);
    s.push('t');
    for kind in ["mean", "var", "nimfa", "cmfa"] {
        for l in labels {
            let _ = write!(s, ",{kind}_{l}");
        }
    }
    s.push_str(",m\n");
    s
}

fn timeseries_rows(c: &Comparison, prefix: &str, out: &mut String) {
    let s = c.stats.mean.first().map_or(0, Vec::len);
    for (g, t) in c.grid.iter().enumerate() {
        let _ = write!(out, "{prefix}{t}");
        for v in &c.stats.mean[g] {
            let _ = write!(out, ",{v}");
        }
        for v in &c.stats.variance[g] {
            let _ = write!(out, ",{v}");
        }
        for curve in [&c.nimfa, &c.cmfa] {
            for a in 0..s {
                let v = curve.as_ref().map_or(f64::NAN, |x| x[g][a]);
                let _ = write!(out, ",{}", fmt_opt(v));
            }
        }
        let _ = writeln!(out, ",{}", c.stats.m);
    }
}

fn deviation_rows(c: &Comparison, prefix: &str, out: &mut String) {
    for (k, (rec, seed)) in c.records.iter().zip(&c.stats.seeds).enumerate() {
        let _ = writeln!(
            out,
            "{prefix}{k},{seed},{},{}",
            fmt_opt(rec.sup_dev_cmfa),
            fmt_opt(rec.sup_dev_nimfa)
        );
    }
}

/// Index of the state whose share is plotted and checked.
fn focus_state(model: &PopulationModel) -> usize {
    1.min(model.n_states() - 1)
}

fn comparison_plot(c: &Comparison, model: &PopulationModel, title: String) -> Plot {
    let a = focus_state(model);
    let label = &model.state_space().labels()[a];
    let mean: Vec<(f64, f64)> = c.grid.iter().zip(&c.stats.mean).map(|(&t, m)| (t, m[a])).collect();
    let se: Vec<f64> = (0..c.grid.len()).map(|g| c.stats.standard_error(g, a)).collect();
    let mut series = vec![Series::line(format!("mean Y_av [{label}]"), mean.clone(), PALETTE[0])];
    if let Some(n) = &c.nimfa {
        series.push(Series::line(
            "NIMFA average",
            c.grid.iter().zip(n).map(|(&t, y)| (t, y[a])).collect(),
            PALETTE[1],
        ));
    }
    if let Some(x) = &c.cmfa {
        series.push(
            Series::line(
                "CMFA",
                c.grid.iter().zip(x).map(|(&t, y)| (t, y[a])).collect(),
                PALETTE[2],
            )
            .dashed(),
        );
    }
    Plot {
        title,
        x_label: "t".into(),
        y_label: format!("share in state {label}"),
        series,
        bands: vec![Band {
            x: c.grid.clone(),
            lower: mean.iter().zip(&se).map(|(p, e)| p.1 - 2.0 * e).collect(),
            upper: mean.iter().zip(&se).map(|(p, e)| p.1 + 2.0 * e).collect(),
            color: PALETTE[0].into(),
        }],
        ..Default::default()
    }
}

/// Number of strict direction changes of a sampled curve, ignoring steps
/// smaller than `tol`.
pub fn turning_points(values: &[f64], tol: f64) -> usize {
    let signs: Vec<bool> = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| d.abs() > tol)
        .map(|d| d > 0.0)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Median and 95th percentile (linear interpolation between order
/// statistics) of the finite values.
pub fn quantiles(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.95))
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn density_header() -> &'static str {
    "label,n,theta,lambda,max_col_sum,lambda_iterations,lambda_residual,lambda_circulant\n"
}

fn density_row(label: &str, w: &InteractionMatrix, circulant: Option<f64>, out: &mut String) -> Result<DensityReport> {
    let rep = w.density_report(LAMBDA_TOL, LAMBDA_MAX_ITER)?;
    let _ = writeln!(
        out,
        "{label},{},{},{},{},{},{},{}",
        w.n(),
        rep.theta,
        rep.lambda,
        rep.max_col_sum,
        rep.lambda_iterations,
        rep.lambda_residual,
        circulant.map_or(String::new(), |c| c.to_string())
    );
    Ok(rep)
}

/// `max_{k≥1} |μ_k|` of the nearest-neighbor circulant.
pub fn circulant_lambda(n: usize, density: f64) -> Result<f64> {
    Ok(circulant_spectrum(n, density)?
        .into_iter()
        .skip(1)
        .map(f64::abs)
        .fold(0.0, f64::max))
}

fn circulant_of(spec: &InteractionSpec) -> Result<Option<f64>> {
    match spec {
        InteractionSpec::NearestNeighbor { n, density } => Ok(Some(circulant_lambda(*n, *density)?)),
        _ => Ok(None),
    }
}

fn interaction_label(spec: &InteractionSpec) -> String {
    match spec {
        InteractionSpec::Complete { .. } => "complete".into(),
        InteractionSpec::NearestNeighbor { density, .. } => format!("nearest_neighbor:{density}"),
        InteractionSpec::EdgeList { path, .. } => format!("edge_list:{}", path.display()),
        InteractionSpec::LinkFailures { path, .. } => format!("link_failures:{}", path.display()),
    }
}

pub fn run_density(cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    let mut summary = Summary::default();
    let mut csv = String::from(density_header());
    let specs: Vec<InteractionSpec> = match &cfg.fig {
        Some(fig) => {
            let n = cfg.n_agents()?;
            fig.densities
                .iter()
                .map(|&density| InteractionSpec::NearestNeighbor { n, density })
                .collect()
        }
        None => vec![cfg.model.interaction.clone()],
    };
    for spec in &specs {
        let w = build_interaction(spec)?;
        let circ = circulant_of(spec)?;
        let rep = density_row(&interaction_label(spec), &w, circ, &mut csv)?;
        let tag = interaction_label(spec);
        summary.put(format!("theta@{tag}"), rep.theta);
        summary.put(format!("lambda@{tag}"), rep.lambda);
        summary.put(format!("max_col_sum@{tag}"), rep.max_col_sum);
        summary.density.push(rep);
    }
    out.write("density.csv", &csv)?;
    Ok(summary)
}

fn compare_summary(c: &Comparison, model: &PopulationModel, tag: &str, summary: &mut Summary) {
    let cm: Vec<f64> = c.records.iter().map(|r| r.sup_dev_cmfa).collect();
    let ni: Vec<f64> = c.records.iter().map(|r| r.sup_dev_nimfa).collect();
    let (cm_med, cm_p95) = quantiles(&cm);
    let (ni_med, ni_p95) = quantiles(&ni);
    summary.put(format!("median_sup_dev_cmfa{tag}"), cm_med);
    summary.put(format!("p95_sup_dev_cmfa{tag}"), cm_p95);
    summary.put(format!("median_sup_dev_nimfa{tag}"), ni_med);
    summary.put(format!("p95_sup_dev_nimfa{tag}"), ni_p95);
    let better = c
        .records
        .iter()
        .filter(|r| r.sup_dev_nimfa < r.sup_dev_cmfa)
        .count();
    summary.put(format!("fraction_nimfa_better{tag}"), better as f64 / c.records.len() as f64);
    if let Some(nimfa) = &c.nimfa {
        let a = focus_state(model);
        let curve: Vec<f64> = nimfa.iter().map(|y| y[a]).collect();
        summary.put(format!("nimfa_turning_points{tag}"), turning_points(&curve, MONOTONE_TOL) as f64);
    }
    summary.put(format!("max_projection_correction{tag}"), c.max_projection);
    summary.deviations.extend(c.records.iter().cloned());
}

pub fn run_compare(cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    let model = build_model(&cfg.model)?;
    let c = compare_core(cfg, &model, true, true)?;
    let labels = model.state_space().labels();
    let mut ts = timeseries_header(labels, "");
    timeseries_rows(&c, "", &mut ts);
    out.write("timeseries.csv", &ts)?;
    let mut dev = String::from("replicate,seed,sup_dev_cmfa,sup_dev_nimfa\n");
    deviation_rows(&c, "", &mut dev);
    out.write("deviations.csv", &dev)?;
    let mut dens = String::from(density_header());
    let mut summary = Summary::default();
    let rep = density_row(
        &interaction_label(&cfg.model.interaction),
        model.interaction(),
        circulant_of(&cfg.model.interaction)?,
        &mut dens,
    )?;
    summary.density.push(rep);
    out.write("density.csv", &dens)?;
    compare_summary(&c, &model, "", &mut summary);
    out.write("summary.csv", &summary.csv())?;
    out.write_svg(
        "plot_compare.svg",
        &comparison_plot(&c, &model, format!("N = {}, M = {}", model.n_agents(), c.stats.m)).render(),
    )?;
    Ok(summary)
}

/// fig1 and fig2: one comparison per nearest-neighbor density.
pub fn run_figure(name: &str, cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    let densities = match (&cfg.fig, name) {
        (Some(f), _) => f.densities.clone(),
        (None, "fig1") => vec![0.1, 0.5],
        (None, _) => vec![0.2, 0.5, 0.8],
    };
    let mut summary = Summary::default();
    let mut ts = String::new();
    let mut dev = String::from("density,replicate,seed,sup_dev_cmfa,sup_dev_nimfa\n");
    let mut dens = String::from(density_header());
    let mut medians = Vec::new();
    for &d in &densities {
        let c_cfg = cfg.with_density(d)?;
        let model = build_model(&c_cfg.model)?;
        let c = compare_core(&c_cfg, &model, true, true)?;
        if ts.is_empty() {
            ts = timeseries_header(model.state_space().labels(), "density,");
        }
        timeseries_rows(&c, &format!("{d},"), &mut ts);
        deviation_rows(&c, &format!("{d},"), &mut dev);
        let rep = density_row(
            &interaction_label(&c_cfg.model.interaction),
            model.interaction(),
            circulant_of(&c_cfg.model.interaction)?,
            &mut dens,
        )?;
        summary.density.push(rep);
        compare_summary(&c, &model, &format!("@{d}"), &mut summary);
        medians.push(summary.get(&format!("median_sup_dev_cmfa@{d}")).unwrap_or(f64::NAN));
        out.write_svg(
            &format!("plot_{name}_density_{d}.svg"),
            &comparison_plot(
                &c,
                &model,
                format!("{name}: N = {}, density = {d}, M = {}", model.n_agents(), c.stats.m),
            )
            .render(),
        )?;
    }
    let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    summary.put("median_sup_dev_cmfa_max_over_min", hi / lo);
    out.write("timeseries.csv", &ts)?;
    out.write("deviations.csv", &dev)?;
    out.write("density.csv", &dens)?;
    out.write("summary.csv", &summary.csv())?;
    Ok(summary)
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let mut summary = Summary::default();
    let mut dev = String::from("n,replicate,seed,sup_dev\n");
    let mut table = String::from("n,log_n,median,log_median,p95,m\n");
    let (mut ns, mut meds, mut p95s) = (Vec::new(), Vec::new(), Vec::new());
    for &n in &sweep.ns {
        let c_cfg = cfg.with_n(n)?;
        let model = build_model(&c_cfg.model)?;
        let nimfa = sweep.reference == Reference::Nimfa;
        if !nimfa && !cmfa_available(&model) {
            return Err(Error::NonHomogeneousPolicy);
        }
        let c = compare_core(&c_cfg, &model, nimfa, !nimfa)?;
        let devs: Vec<f64> = c
            .records
            .iter()
            .map(|r| if nimfa { r.sup_dev_nimfa } else { r.sup_dev_cmfa })
            .collect();
        for (k, (d, seed)) in devs.iter().zip(&c.stats.seeds).enumerate() {
            let _ = writeln!(dev, "{n},{k},{seed},{d}");
        }
        let (med, p95) = quantiles(&devs);
        let _ = writeln!(
            table,
            "{n},{},{med},{},{p95},{}",
            (n as f64).ln(),
            med.ln(),
            c.stats.m
        );
        summary.put(format!("median_sup_dev@{n}"), med);
        summary.put(format!("p95_sup_dev@{n}"), p95);
        summary.deviations.extend(c.records);
        ns.push(n as f64);
        meds.push(med);
        p95s.push(p95);
    }
    let slope = loglog_slope(&ns, &meds);
    summary.put("slope_median", slope);
    summary.put("slope_p95", loglog_slope(&ns, &p95s));
    out.write("deviations.csv", &dev)?;
    out.write("sweep.csv", &table)?;
    out.write("summary.csv", &summary.csv())?;

    // fitted line through the centroid
    let k = ns.len() as f64;
    let mx = ns.iter().map(|x| x.ln()).sum::<f64>() / k;
    let my = meds.iter().map(|y| y.ln()).sum::<f64>() / k;
    let fit = |x: f64| (my + slope * (x.ln() - mx)).exp();
    let plot = Plot {
        title: format!("sup-deviation vs N (slope {slope:.3})"),
        x_label: "N".into(),
        y_label: "sup deviation".into(),
        series: vec![
            Series::line("median", ns.iter().copied().zip(meds.iter().copied()).collect(), PALETTE[0]).with_markers(),
            Series::line("95th percentile", ns.iter().copied().zip(p95s.iter().copied()).collect(), PALETTE[1]).with_markers(),
            Series::line("fit", ns.iter().map(|&x| (x, fit(x))).collect(), PALETTE[0]).dashed(),
        ],
        log_x: true,
        log_y: true,
        ..Default::default()
    };
    out.write_svg("plot_sweep.svg", &plot.render())?;
    Ok(summary)
}

/// Distribution of the discretized chain after `steps` steps:
/// `p (I + ξ Λ)^steps`.
pub fn dt_distribution(gen: &GeneratorMatrix, p0: &[f64], xi: f64, steps: usize) -> Vec<f64> {
    let mut p = p0.to_vec();
    let mut lam = vec![0.0; p.len()];
    for _ in 0..steps {
        gen.left_multiply(&p, &mut lam);
        for (a, l) in p.iter_mut().zip(&lam) {
            *a += xi * l;
        }
    }
    p
}

fn terminal_stats(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = values.len() as f64;
    let s = values[0].len();
    let mut mean = vec![0.0; s];
    for v in values {
        for (a, x) in mean.iter_mut().zip(v) {
            *a += x / m;
        }
    }
    let mut var = vec![0.0; s];
    if values.len() > 1 {
        for v in values {
            for ((a, x), mu) in var.iter_mut().zip(v).zip(&mean) {
                *a += (x - mu) * (x - mu) / (m - 1.0);
            }
        }
    }
    let se = var.iter().map(|v| (v / m).sqrt()).collect();
    (mean, se)
}

pub fn run_dt_convergence(cfg: &ExperimentConfig, out: &mut Output) -> Result<Summary> {
    let xis = cfg
        .dt
        .as_ref()
        .ok_or_else(|| Error::Config("dt-convergence needs a [dt] section".into()))?
        .xis
        .clone();
    let model = build_model(&cfg.model)?;
    let s = model.n_states();
    let n = model.n_agents();
    let t = cfg.horizon;
    for &xi in &xis {
        let steps = t / xi;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!("horizon {t} is not a multiple of xi = {xi}")));
        }
        if xi * model.total_rate() > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "xi = {xi} violates xi * sum(r) <= 1 (sum(r) = {})",
                model.total_rate()
            )));
        }
    }
    let fixed = fixed_init(cfg, &model)?;
    let p = match cfg.init {
        InitSpec::Random { p } => p,
        _ => 0.0,
    };
    let sampler = move |seed: u64| init_random(n, p, seed, s);
    let init = match &fixed {
        Some(st) => InitialCondition::Fixed(st),
        None => InitialCondition::Sampled(&sampler),
    };

    // exact references when the configuration space is small
    let exact = match build_generator(&model, EXACT_REFERENCE_LIMIT) {
        Ok(gen) => {
            let p0 = match &fixed {
                Some(st) => gen.point_distribution(st)?,
                None => {
                    let mut x = vec![0.0; s];
                    x[0] = p;
                    x[1] = 1.0 - p;
                    gen.product_distribution(&MixedProfile::identical(n, &x)?)?
                }
            };
            Some((gen, p0))
        }
        Err(Error::CapExceeded { .. }) => None,
        Err(e) => return Err(e),
    };

    let (ct_mean, ct_se) = match &exact {
        Some((gen, p0)) => (exact_marginals(gen, p0, &[t])?.remove(0), vec![0.0; s]),
        None => {
            let finals = replicate_map(cfg.replicates, cfg.seed, |_, seed| {
                let start = init.draw(seed)?;
                Ok(simulate_ct(&model, &start, t, seed)?.final_state().average())
            })?;
            terminal_stats(&finals)
        }
    };

    let labels = model.state_space().labels();
    let mut csv = String::from("xi,state,dt_mean,dt_se,ct_reference,ct_se,gap,ratio_to_previous,exact_dt\n");
    let mut summary = Summary::default();
    let mut prev_gap: Option<Vec<f64>> = None;
    let mut gaps_for_plot = Vec::new();
    for &xi in &xis {
        let finals = replicate_map(cfg.replicates, cfg.seed, |_, seed| {
            let start = init.draw(seed)?;
            Ok(simulate_dt(&model, &start, t, xi, seed)?.final_state().average())
        })?;
        let (mean, se) = terminal_stats(&finals);
        let exact_dt = exact.as_ref().map(|(gen, p0)| {
            let steps = (t / xi).round() as usize;
            gen.expected_average(&dt_distribution(gen, p0, xi, steps))
        });
        let gap: Vec<f64> = mean.iter().zip(&ct_mean).map(|(a, b)| (a - b).abs()).collect();
        for a in 0..s {
            let ratio = prev_gap.as_ref().map_or(f64::NAN, |g| g[a] / gap[a]);
            let _ = writeln!(
                csv,
                "{xi},{},{},{},{},{},{},{},{}",
                labels[a],
                mean[a],
                se[a],
                ct_mean[a],
                ct_se[a],
                gap[a],
                fmt_opt(ratio),
                exact_dt.as_ref().map_or(String::new(), |e| e[a].to_string())
            );
        }
        let a = focus_state(&model);
        summary.put(format!("gap@{xi}"), gap[a]);
        summary.put(format!("se@{xi}"), (se[a] * se[a] + ct_se[a] * ct_se[a]).sqrt());
        if let Some(e) = &exact_dt {
            summary.put(format!("exact_gap@{xi}"), (e[a] - ct_mean[a]).abs());
        }
        gaps_for_plot.push((xi, gap[a]));
        prev_gap = Some(gap);
    }
    out.write("dt.csv", &csv)?;
    out.write("summary.csv", &summary.csv())?;
    let label = &labels[focus_state(&model)];
    let plot = Plot {
        title: format!("terminal-mean gap, state {label}"),
        x_label: "xi".into(),
        y_label: "|E_DT - E_CT|".into(),
        series: vec![Series::line("gap", gaps_for_plot, PALETTE[0]).with_markers()],
        log_x: true,
        log_y: true,
        ..Default::default()
    };
    out.write_svg("plot_dt.svg", &plot.render())?;
    Ok(summary)
}
