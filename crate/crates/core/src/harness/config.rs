//! Experiment configuration files (TOML) and model construction from them.
//!
//! Relative paths inside a configuration are resolved against the directory
//! of the file. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    coordination_utility, logit_policy, sis_model, PopulationModel, PopulationState, StateSpace,
};
use crate::error::{Error, Result};
use crate::interaction::{read_edge_list, InteractionMatrix, WeightedEdge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// RK4 step; defaults to `1e-3 · min(1, 1/r_max)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_step: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Which initial profile the NIMFA starts from when the initial
    /// condition is sampled per replicate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nimfa_init: Option<NimfaInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig: Option<FigSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<DtSpec>,
}

fn default_init() -> InitSpec {
    InitSpec::Clustered { fraction: 0.2 }
}

fn default_horizon() -> f64 {
    10.0
}

fn default_grid_step() -> f64 {
    0.1
}

fn default_replicates() -> usize {
    1
}

fn default_states() -> Vec<String> {
    vec!["1".into(), "2".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_states")]
    pub states: Vec<String>,
    /// Scalar or per-agent list; not allowed for SIS, whose rates are
    /// derived from the adjacency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_rate: Option<ClockRate>,
    /// Required by everything except density reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    pub interaction: InteractionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClockRate {
    Uniform(f64),
    PerAgent(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityName {
    Coordination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Logit {
        eta: f64,
        utility: UtilityName,
    },
    /// `adjacency` is a weighted edge list; without it the graph of the
    /// interaction section is used.
    Sis {
        b: f64,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjacency: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    Complete {
        n: usize,
    },
    NearestNeighbor {
        n: usize,
        density: f64,
    },
    EdgeList {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    /// Complete graph where each line `i j` of the file removes `j` from the
    /// neighborhood of `i`.
    LinkFailures {
        path: PathBuf,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// The first `⌊fraction·N⌋` agents start in the second state.
    Clustered { fraction: f64 },
    /// Each agent starts in the first state with probability `p`.
    Random { p: f64 },
    /// CSV `agent,state` with state labels.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NimfaInit {
    /// One NIMFA per replicate, from that replicate's `Y(0)`.
    Replicate,
    /// One NIMFA from the expected initial profile.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Cmfa,
    Nimfa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigSpec {
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtSpec {
    pub xis: Vec<f64>,
}

impl ExperimentConfig {
    /// Reads a configuration file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.model.interaction {
            InteractionSpec::EdgeList { path, .. } | InteractionSpec::LinkFailures { path, .. } => {
                fix(path)
            }
            _ => {}
        }
        if let Some(PolicySpec::Sis {
            adjacency: Some(p), ..
        }) = &mut self.model.policy
        {
            fix(p);
        }
        if let InitSpec::File { path } = &mut self.init {
            fix(path);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= self.horizon) {
            return bad(format!("grid_step must lie in (0, horizon], got {}", self.grid_step));
        }
        if let Some(h) = self.ode_step {
            if !(h > 0.0 && h <= self.grid_step) {
                return bad(format!("ode_step must lie in (0, grid_step], got {h}"));
            }
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.model.states.len() < 2 {
            return bad("a model needs at least two states".into());
        }
        match self.init {
            InitSpec::Clustered { fraction } if !(0.0..=1.0).contains(&fraction) => {
                return bad(format!("clustered fraction {fraction} outside [0, 1]"));
            }
            InitSpec::Random { p } if !(0.0..=1.0).contains(&p) => {
                return bad(format!("random init probability {p} outside [0, 1]"));
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if s.ns.len() < 3 {
                return bad("sweep needs at least three sizes".into());
            }
        }
        if let Some(f) = &self.fig {
            if f.densities.is_empty() || f.densities.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
                return bad("fig densities must be non-empty and lie in (0, 1]".into());
            }
        }
        if let Some(d) = &self.dt {
            if d.xis.is_empty() || d.xis.iter().any(|x| !(*x > 0.0)) {
                return bad("dt xis must be non-empty and positive".into());
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> Result<usize> {
        Ok(match &self.model.interaction {
            InteractionSpec::Complete { n }
            | InteractionSpec::NearestNeighbor { n, .. }
            | InteractionSpec::LinkFailures { n, .. } => *n,
            InteractionSpec::EdgeList { n: Some(n), .. } => *n,
            InteractionSpec::EdgeList { path, n: None } => edge_count_hint(&read_edge_list(path)?),
        })
    }

    /// Copy with the interaction size replaced (complete and
    /// nearest-neighbor only).
    pub fn with_n(&self, n: usize) -> Result<Self> {
        let mut c = self.clone();
        match &mut c.model.interaction {
            InteractionSpec::Complete { n: m } | InteractionSpec::NearestNeighbor { n: m, .. } => *m = n,
            _ => {
                return Err(Error::Config(
                    "only complete and nearest_neighbor interactions can be resized".into(),
                ))
            }
        }
        Ok(c)
    }

    /// Copy on a nearest-neighbor interaction of the given density.
    pub fn with_density(&self, density: f64) -> Result<Self> {
        let n = self.n_agents()?;
        let mut c = self.clone();
        c.model.interaction = InteractionSpec::NearestNeighbor { n, density };
        Ok(c)
    }
}

fn edge_count_hint(edges: &[WeightedEdge]) -> usize {
    edges.iter().map(|e| e.u.max(e.v) + 1).max().unwrap_or(0)
}

/// Builds the interaction matrix described by `spec`.
pub fn build_interaction(spec: &InteractionSpec) -> Result<InteractionMatrix> {
    match spec {
        InteractionSpec::Complete { n } => InteractionMatrix::complete(*n),
        InteractionSpec::NearestNeighbor { n, density } => {
            InteractionMatrix::nearest_neighbor(*n, *density)
        }
        InteractionSpec::EdgeList { path, n } => {
            let edges = read_edge_list(path)?;
            let n = n.unwrap_or_else(|| edge_count_hint(&edges));
            if edges.iter().all(|e| e.weight == 1.0) {
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.u, e.v)).collect();
                InteractionMatrix::from_adjacency(&pairs, n)
            } else {
                let rows = weighted_adjacency(&edges, n)?
                    .into_iter()
                    .map(|row| {
                        let total: f64 = row.iter().map(|&(_, a)| a).sum();
                        row.into_iter().map(|(j, a)| (j, a / total)).collect()
                    })
                    .enumerate()
                    .map(|(i, row): (usize, Vec<(usize, f64)>)| {
                        if row.is_empty() {
                            Err(Error::DegreeZero { vertex: i })
                        } else {
                            Ok(row)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                InteractionMatrix::from_rows(n, rows)
            }
        }
        InteractionSpec::LinkFailures { path, n } => {
            let mut failures = vec![Vec::new(); *n];
            for e in read_edge_list(path)? {
                if e.u >= *n {
                    return Err(Error::invalid(format!("failed link ({}, {}) out of range", e.u, e.v)));
                }
                failures[e.u].push(e.v);
            }
            InteractionMatrix::with_link_failures(*n, &failures)
        }
    }
}

/// Symmetric weighted adjacency rows from an undirected edge list.
pub fn weighted_adjacency(edges: &[WeightedEdge], n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut rows = vec![Vec::new(); n];
    for e in edges {
        if e.u >= n || e.v >= n {
            return Err(Error::invalid(format!("edge ({}, {}) out of range for n = {n}", e.u, e.v)));
        }
        if e.u == e.v {
            return Err(Error::invalid(format!("self-loop at vertex {}", e.u)));
        }
        if e.weight > 0.0 {
            rows[e.u].push((e.v, e.weight));
            rows[e.v].push((e.u, e.weight));
        }
    }
    for row in &mut rows {
        row.sort_by_key(|&(j, _)| j);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate edge in adjacency"));
        }
    }
    Ok(rows)
}

/// Unit-weight adjacency of the graph underlying an interaction spec.
fn graph_adjacency(spec: &InteractionSpec) -> Result<Vec<Vec<(usize, f64)>>> {
    match spec {
        InteractionSpec::Complete { n } => Ok((0..*n)
            .map(|i| (0..*n).filter(|&j| j != i).map(|j| (j, 1.0)).collect())
            .collect()),
        InteractionSpec::NearestNeighbor { n, density } => {
            let w = InteractionMatrix::nearest_neighbor(*n, *density)?;
            Ok((0..*n)
                .map(|i| {
                    let mut row: Vec<(usize, f64)> = w.row(i).iter().map(|(j, _)| (j, 1.0)).collect();
                    row.sort_by_key(|&(j, _)| j);
                    row
                })
                .collect())
        }
        InteractionSpec::EdgeList { path, n } => {
            let edges = read_edge_list(path)?;
            let n = n.unwrap_or_else(|| edge_count_hint(&edges));
            weighted_adjacency(&edges, n)
        }
        InteractionSpec::LinkFailures { .. } => Err(Error::Config(
            "SIS models need an undirected graph; link_failures is not supported".into(),
        )),
    }
}

/// Builds the population model described by `spec`.
pub fn build_model(spec: &ModelSpec) -> Result<PopulationModel> {
    let policy = spec
        .policy
        .as_ref()
        .ok_or_else(|| Error::Config("model.policy is required".into()))?;
    match policy {
        PolicySpec::Logit { eta, utility } => {
            if spec.states.len() != 2 {
                return Err(Error::Config("the coordination game has exactly two states".into()));
            }
            let u = match utility {
                UtilityName::Coordination => coordination_utility(),
            };
            let policy = logit_policy(u, *eta)?;
            let w = build_interaction(&spec.interaction)?;
            let n = w.n();
            let rates = match &spec.clock_rate {
                None => vec![1.0; n],
                Some(ClockRate::Uniform(r)) => vec![*r; n],
                Some(ClockRate::PerAgent(r)) => r.clone(),
            };
            PopulationModel::new(StateSpace::new(spec.states.clone())?, rates, policy, Arc::new(w))
        }
        PolicySpec::Sis { b, gamma, adjacency } => {
            if spec.clock_rate.is_some() {
                return Err(Error::Config("SIS clock rates are derived; remove clock_rate".into()));
            }
            if spec.states.len() != 2 {
                return Err(Error::Config("SIS has exactly two states".into()));
            }
            let adj = match adjacency {
                Some(path) => {
                    let edges = read_edge_list(path)?;
                    weighted_adjacency(&edges, edge_count_hint(&edges))?
                }
                None => graph_adjacency(&spec.interaction)?,
            };
            let m = sis_model(&adj, *b, *gamma)?;
            let labels = StateSpace::new(spec.states.clone())?;
            PopulationModel::new(
                labels,
                m.clock_rates().to_vec(),
                m.policy().clone(),
                m.interaction_arc().clone(),
            )
        }
    }
}

/// Agents `0..⌊fraction·n⌋` in state 1 (the second label), the rest in
/// state 0.
pub fn init_clustered(n: usize, fraction: f64, n_states: usize) -> Result<PopulationState> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    PopulationState::new((0..n).map(|i| usize::from(i < k.min(n))).collect(), n_states)
}

/// Independent assignment: state 0 with probability `p`, else state 1.
pub fn init_random(n: usize, p: f64, seed: u64, n_states: usize) -> Result<PopulationState> {
    use rand::Rng;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let assignment = (0..n)
        .map(|_| usize::from(rng.random::<f64>() >= p))
        .collect();
    PopulationState::new(assignment, n_states)
}

/// Reads an `agent,state` CSV (the trajectory sidecar format).
pub fn read_init_file(path: &Path, space: &StateSpace, n: usize) -> Result<PopulationState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut assignment = vec![None; n];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "agent,state") {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let (a, s) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `agent,state`, got `{line}`")))?;
        let agent: usize = a
            .trim()
            .parse()
            .map_err(|e| err(format!("bad agent `{a}`: {e}")))?;
        let state = space
            .index_of(s.trim())
            .ok_or_else(|| err(format!("unknown state `{s}`")))?;
        if agent >= n {
            return Err(err(format!("agent {agent} out of range for n = {n}")));
        }
        if assignment[agent].replace(state).is_some() {
            return Err(err(format!("agent {agent} listed twice")));
        }
    }
    let assignment = assignment
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Config(format!("agent {i} missing from {}", path.display()))))
        .collect::<Result<Vec<_>>>()?;
    PopulationState::new(assignment, space.size())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"
horizon = 10.0
grid_step = 0.1
replicates = 4
seed = 3

[model]
states = ["1", "2"]
clock_rate = 1.0
policy = { kind = "logit", eta = 0.1, utility = "coordination" }
interaction = { kind = "nearest_neighbor", n = 1000, density = 0.1 }

[init]
kind = "clustered"
fraction = 0.2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(FIG1).unwrap();
        assert_eq!(cfg.replicates, 4);
        assert_eq!(cfg.init, InitSpec::Clustered { fraction: 0.2 });
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let model = build_model(&cfg.model).unwrap();
        assert_eq!(model.n_agents(), 1000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = FIG1.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
        let text = FIG1.replace("eta = 0.1", "eta = 0.1, temperature = 2");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let text = FIG1.replace("fraction = 0.2", "fraction = 1.5");
        assert!(ExperimentConfig::parse(&text).unwrap_err().is_validation());
        let text = FIG1.replace("replicates = 4", "replicates = 0");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn clustered_examples() {
        let s = init_clustered(10, 0.2, 2).unwrap();
        assert_eq!(s.assignment(), &[1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(init_clustered(10, 0.0, 2).unwrap().counts(), &[10, 0]);
        assert_eq!(init_clustered(10, 1.0, 2).unwrap().counts(), &[0, 10]);
    }

    #[test]
    fn random_examples() {
        assert_eq!(init_random(50, 1.0, 9, 2).unwrap().counts(), &[50, 0]);
        let a = init_random(1000, 0.8, 9, 2).unwrap();
        let ones = a.counts()[0] as f64;
        assert!((ones - 800.0).abs() <= 4.0 * (1000.0f64 * 0.16).sqrt());
        assert_eq!(a, init_random(1000, 0.8, 9, 2).unwrap());
    }

    #[test]
    fn sis_from_interaction_graph() {
        let spec = ModelSpec {
            states: vec!["S".into(), "I".into()],
            clock_rate: None,
            policy: Some(PolicySpec::Sis {
                b: 1.0,
                gamma: 1.0,
                adjacency: None,
            }),
            interaction: InteractionSpec::Complete { n: 3 },
        };
        let m = build_model(&spec).unwrap();
        assert_eq!(m.clock_rates(), &[3.0, 3.0, 3.0]);
        assert_eq!(m.interaction().entry(0, 0), 0.0);
        assert_eq!(m.interaction().entry(0, 1), 0.5);
    }

    #[test]
    fn init_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.csv");
        std::fs::write(&path, "agent,state\n0,2\n2,1\n1,2\n").unwrap();
        let space = StateSpace::new(["1", "2"]).unwrap();
        let s = read_init_file(&path, &space, 3).unwrap();
        assert_eq!(s.assignment(), &[1, 1, 0]);
        std::fs::write(&path, "agent,state\n0,2\n").unwrap();
        assert!(read_init_file(&path, &space, 3).is_err());
    }
}
