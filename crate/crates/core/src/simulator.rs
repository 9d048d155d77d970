//! Event-driven stochastic SIR with one-step contact tracing.
//!
//! Every infected node draws its removal time and the contact times along its
//! downstream edges at the moment it is infected; contacts falling after the
//! removal never happen. Events are processed in time order from a heap, and
//! events of nodes removed early by tracing are discarded when popped.
//!
//! On a tree the downstream children are created lazily on infection. On a
//! configuration-model graph "downstream" means every neighbour except the
//! infector, so a neighbour may have been infected along another path; such
//! index cases are flagged as having outside infections.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::degree::DegreeModel;
use crate::error::{Error, Result};
use crate::inference::DetecteeHistogram;
use crate::kernels::EpidemicParams;
use crate::mixture::TracingMode;

pub const DEFAULT_MAX_INFECTED: usize = 100_000;
pub const DEFAULT_GRAPH_NODES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GraphKind {
    Tree,
    /// Static configuration-model graph on `n_nodes` nodes.
    Configuration { n_nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_infected_ever: Option<usize>,
    pub max_index_cases: Option<usize>,
    pub max_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: EpidemicParams,
    pub degree: DegreeModel,
    pub graph: GraphKind,
    pub mode: TracingMode,
    pub stop: StopCriteria,
    /// Index cases diagnosed in `[t0, t1]` are recorded.
    pub window: (f64, f64),
    pub seed: u64,
}

impl SimConfig {
    /// A tree run with the default infection cap and an unbounded window.
    pub fn tree(params: EpidemicParams, degree: DegreeModel, mode: TracingMode, seed: u64) -> Self {
        Self {
            params,
            degree,
            graph: GraphKind::Tree,
            mode,
            stop: StopCriteria {
                max_infected_ever: Some(DEFAULT_MAX_INFECTED),
                max_index_cases: None,
                max_time: None,
            },
            window: (0.0, f64::INFINITY),
            seed,
        }
    }

    /// A configuration-model run over the window `[0, t1]`.
    pub fn configuration(
        params: EpidemicParams,
        degree: DegreeModel,
        n_nodes: usize,
        mode: TracingMode,
        t1: f64,
        seed: u64,
    ) -> Self {
        Self {
            params,
            degree,
            graph: GraphKind::Configuration { n_nodes },
            mode,
            stop: StopCriteria {
                max_infected_ever: None,
                max_index_cases: None,
                max_time: Some(t1),
            },
            window: (0.0, t1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stop;
        let finite_stop = s.max_infected_ever.is_some()
            || s.max_index_cases.is_some()
            || s.max_time.is_some_and(f64::is_finite)
            || self.window.1.is_finite();
        if !finite_stop {
            return Err(Error::Config("at least one stop criterion must be finite".into()));
        }
        if !(self.window.0 < self.window.1) || self.window.0.is_nan() {
            return Err(Error::Config(format!(
                "observation window [{}, {}] is empty",
                self.window.0, self.window.1
            )));
        }
        if let DegreeModel::RandomMixingLimit = self.degree {
            return Err(Error::Config("the random-mixing limit cannot be simulated".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexCaseRecord {
    pub node: u64,
    pub infection_time: f64,
    pub diagnosis_time: f64,
    pub age: f64,
    pub downstream_infected: u32,
    pub forward_detected: u32,
    pub backward_detected: bool,
    pub total_detected: u32,
    pub outside_infection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Removal {
    Recovered,
    Diagnosed,
    Traced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub infector: Option<u32>,
    pub infection_time: f64,
    pub removal: Option<(Removal, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Extinct,
    MaxInfected,
    MaxIndexCases,
    MaxTime,
    WindowClosed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub infections: u64,
    pub recoveries: u64,
    pub diagnoses: u64,
    pub traced: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub records: Vec<IndexCaseRecord>,
    pub counts: EventCounts,
    pub stop_reason: StopReason,
    /// True when the run ended without recording any index case.
    pub no_index_cases: bool,
    /// Fraction of recorded index cases with an outside infection (graphs only).
    pub outside_fraction: Option<f64>,
    /// Per infected node, indexed by node id.
    pub nodes: Vec<NodeSummary>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Susceptible,
    Infectious,
    Removed,
}

#[derive(Clone, Copy)]
enum EventKind {
    /// Contact along an edge; `target` is `None` for a fresh tree child.
    Contact { from: u32, target: Option<u32> },
    Removal { node: u32, diagnosis: bool },
}

struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: the heap pops the earliest event, ties by insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Seeded generator for replicate `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

enum Topology {
    Tree { sampler: crate::degree::DegreeSampler },
    Graph { adjacency: Vec<Vec<u32>> },
}

struct Engine<'a> {
    config: &'a SimConfig,
    rng: ChaCha20Rng,
    topology: Topology,
    state: Vec<State>,
    nodes: Vec<NodeSummary>,
    /// Infected children per node (tree runs).
    children: Vec<Vec<u32>>,
    heap: BinaryHeap<Event>,
    seq: u64,
    counts: EventCounts,
    contact: Exp<f64>,
    removal: Exp<f64>,
}

impl Engine<'_> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    /// Infects `node` (already allocated) at time `t` and schedules its events.
    fn infect(&mut self, node: u32, infector: Option<u32>, t: f64) {
        let idx = node as usize;
        self.state[idx] = State::Infectious;
        self.nodes[idx] = NodeSummary {
            infector,
            infection_time: t,
            removal: None,
        };
        self.counts.infections += 1;
        let params = self.config.params;
        let life = self.removal.sample(&mut self.rng);
        let diagnosis = self.rng.random::<f64>() * params.removal_rate() < params.sigma;
        match &self.topology {
            Topology::Tree { sampler } => {
                let k = sampler.sample(&mut self.rng);
                for _ in 0..k {
                    let e = self.contact.sample(&mut self.rng);
                    if e < life {
                        self.push(t + e, EventKind::Contact { from: node, target: None });
                    }
                }
            }
            Topology::Graph { adjacency } => {
                let targets: Vec<u32> = adjacency[idx].iter().copied().filter(|&v| Some(v) != infector).collect();
                for v in targets {
                    let e = self.contact.sample(&mut self.rng);
                    if e < life {
                        self.push(t + e, EventKind::Contact { from: node, target: Some(v) });
                    }
                }
            }
        }
        self.push(t + life, EventKind::Removal { node, diagnosis });
    }

    fn new_tree_node(&mut self) -> u32 {
        let id = self.state.len() as u32;
        self.state.push(State::Susceptible);
        self.nodes.push(NodeSummary {
            infector: None,
            infection_time: f64::NAN,
            removal: None,
        });
        self.children.push(Vec::new());
        id
    }

    fn remove(&mut self, node: u32, how: Removal, t: f64) {
        self.state[node as usize] = State::Removed;
        self.nodes[node as usize].removal = Some((how, t));
    }

    /// Downstream neighbours that are currently infectious.
    fn infectious_downstream(&self, node: u32) -> Vec<u32> {
        let idx = node as usize;
        match &self.topology {
            Topology::Tree { .. } => self.children[idx]
                .iter()
                .copied()
                .filter(|&c| self.state[c as usize] == State::Infectious)
                .collect(),
            Topology::Graph { adjacency } => {
                let infector = self.nodes[idx].infector;
                adjacency[idx]
                    .iter()
                    .copied()
                    .filter(|&v| Some(v) != infector && self.state[v as usize] == State::Infectious)
                    .collect()
            }
        }
    }

    fn diagnose(&mut self, node: u32, t: f64) -> IndexCaseRecord {
        self.counts.diagnoses += 1;
        self.remove(node, Removal::Diagnosed, t);
        let p = self.config.params.p;
        let downstream = self.infectious_downstream(node);
        let outside = matches!(self.topology, Topology::Graph { .. })
            && downstream.iter().any(|&v| self.nodes[v as usize].infector != Some(node));
        let mut forward = 0u32;
        for &v in &downstream {
            if self.rng.random::<f64>() < p {
                forward += 1;
                self.counts.traced += 1;
                self.remove(v, Removal::Traced, t);
            }
        }
        let mut backward = false;
        if self.config.mode == TracingMode::Full {
            if let Some(parent) = self.nodes[node as usize].infector {
                if self.state[parent as usize] == State::Infectious && self.rng.random::<f64>() < p {
                    backward = true;
                    self.counts.traced += 1;
                    self.remove(parent, Removal::Traced, t);
                }
            }
        }
        let infection_time = self.nodes[node as usize].infection_time;
        IndexCaseRecord {
            node: node as u64,
            infection_time,
            diagnosis_time: t,
            age: t - infection_time,
            downstream_infected: downstream.len() as u32,
            forward_detected: forward,
            backward_detected: backward,
            total_detected: forward + backward as u32,
            outside_infection: outside,
        }
    }

    fn run(mut self, first: u32) -> SimOutcome {
        let config = self.config;
        let stop = config.stop;
        let (t0, t1) = config.window;
        let max_time = stop.max_time.unwrap_or(f64::INFINITY);
        let mut records = Vec::new();
        self.infect(first, None, 0.0);
        let stop_reason = loop {
            let Some(ev) = self.heap.pop() else {
                break StopReason::Extinct;
            };
            if ev.time > max_time {
                break StopReason::MaxTime;
            }
            if ev.time > t1 {
                break StopReason::WindowClosed;
            }
            match ev.kind {
                EventKind::Contact { from, target } => {
                    if self.state[from as usize] != State::Infectious {
                        continue;
                    }
                    if stop.max_infected_ever.is_some_and(|m| self.counts.infections as usize >= m) {
                        break StopReason::MaxInfected;
                    }
                    let child = match target {
                        None => {
                            let c = self.new_tree_node();
                            self.children[from as usize].push(c);
                            c
                        }
                        Some(v) if self.state[v as usize] == State::Susceptible => v,
                        Some(_) => continue,
                    };
                    self.infect(child, Some(from), ev.time);
                }
                EventKind::Removal { node, diagnosis } => {
                    if self.state[node as usize] != State::Infectious {
                        continue;
                    }
                    if diagnosis {
                        let rec = self.diagnose(node, ev.time);
                        if ev.time >= t0 {
                            records.push(rec);
                            if stop.max_index_cases.is_some_and(|m| records.len() >= m) {
                                break StopReason::MaxIndexCases;
                            }
                        }
                    } else {
                        self.counts.recoveries += 1;
                        self.remove(node, Removal::Recovered, ev.time);
                    }
                }
            }
        };
        let outside_fraction = match self.topology {
            Topology::Graph { .. } if !records.is_empty() => Some(
                records.iter().filter(|r: &&IndexCaseRecord| r.outside_infection).count() as f64
                    / records.len() as f64,
            ),
            Topology::Graph { .. } => Some(0.0),
            Topology::Tree { .. } => None,
        };
        SimOutcome {
            no_index_cases: records.is_empty(),
            records,
            counts: self.counts,
            stop_reason,
            outside_fraction,
            nodes: self.nodes,
        }
    }
}

fn engine(config: &SimConfig, topology: Topology, rng: ChaCha20Rng, n_nodes: usize) -> Result<Engine<'_>> {
    let params = config.params;
    Ok(Engine {
        config,
        rng,
        topology,
        state: vec![State::Susceptible; n_nodes],
        nodes: vec![
            NodeSummary {
                infector: None,
                infection_time: f64::NAN,
                removal: None,
            };
            n_nodes
        ],
        children: vec![Vec::new(); n_nodes],
        heap: BinaryHeap::new(),
        seq: 0,
        counts: EventCounts::default(),
        contact: Exp::new(params.beta).map_err(|e| Error::Config(e.to_string()))?,
        removal: Exp::new(params.removal_rate()).map_err(|e| Error::Config(e.to_string()))?,
    })
}

/// Simulates the process on a lazily grown rooted random tree.
pub fn simulate_tree(config: &SimConfig) -> Result<SimOutcome> {
    simulate_tree_stream(config, 0)
}

/// As [`simulate_tree`] with an explicit RNG stream, for replicates sharing a seed.
pub fn simulate_tree_stream(config: &SimConfig, stream: u64) -> Result<SimOutcome> {
    config.validate()?;
    if config.graph != GraphKind::Tree {
        return Err(Error::Config("simulate_tree needs a tree graph kind".into()));
    }
    let sampler = config.degree.sampler()?;
    let mut eng = engine(config, Topology::Tree { sampler }, rng_for(config.seed, stream), 0)?;
    let root = eng.new_tree_node();
    Ok(eng.run(root))
}

/// Index cases pooled over replicates on streams `0, 1, 2, ...` of the
/// configured seed until at least `target` have been recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRecords {
    pub records: Vec<IndexCaseRecord>,
    pub replicates: u64,
}

pub fn simulate_tree_pooled(config: &SimConfig, target: usize, max_replicates: u64) -> Result<PooledRecords> {
    let mut records = Vec::with_capacity(target);
    let mut replicates = 0;
    while records.len() < target {
        if replicates >= max_replicates {
            return Err(Error::Config(format!(
                "only {} of {target} index cases after {max_replicates} replicates",
                records.len()
            )));
        }
        let out = simulate_tree_stream(config, replicates)?;
        replicates += 1;
        let need = target - records.len();
        records.extend(out.records.into_iter().take(need));
    }
    Ok(PooledRecords { records, replicates })
}

/// Builds a configuration-model graph: uniform stub matching, self-loops
/// dropped and multi-edges collapsed.
///
/// A fixed downstream degree `k` gives every node degree `k + 1`; a Poisson
/// excess degree with mean `m` gives Poisson(`m`) degrees.
pub fn configuration_graph<R: Rng + ?Sized>(degree: &DegreeModel, n_nodes: usize, rng: &mut R) -> Result<Vec<Vec<u32>>> {
    if n_nodes < 2 || n_nodes > u32::MAX as usize {
        return Err(Error::Config(format!("graph needs between 2 and 2^32 nodes, got {n_nodes}")));
    }
    let mut degrees: Vec<u32> = match *degree {
        DegreeModel::Fixed { k } => vec![k + 1; n_nodes],
        DegreeModel::Poisson { mean } => {
            let pois = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?;
            (0..n_nodes).map(|_| pois.sample(rng) as u32).collect()
        }
        ref other => {
            return Err(Error::Config(format!(
                "configuration graphs support fixed or poisson excess degree, got {other}"
            )))
        }
    };
    let mut total: u64 = degrees.iter().map(|&d| d as u64).sum();
    while total % 2 == 1 {
        let v = rng.random_range(0..n_nodes);
        let old = degrees[v];
        degrees[v] = match *degree {
            DegreeModel::Poisson { mean } => {
                Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(rng) as u32
            }
            _ => old.saturating_sub(1),
        };
        total = total - old as u64 + degrees[v] as u64;
    }
    let mut stubs: Vec<u32> = Vec::with_capacity(total as usize);
    for (v, &d) in degrees.iter().enumerate() {
        stubs.extend(std::iter::repeat_n(v as u32, d as usize));
    }
    // Fisher-Yates shuffle, then pair consecutive stubs
    for i in (1..stubs.len()).rev() {
        let j = rng.random_range(0..=i);
        stubs.swap(i, j);
    }
    let mut adjacency = vec![Vec::new(); n_nodes];
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        if a != b {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Ok(adjacency)
}

/// Simulates the process on a static configuration-model graph.
pub fn simulate_configuration(config: &SimConfig) -> Result<SimOutcome> {
    simulate_configuration_stream(config, 0)
}

pub fn simulate_configuration_stream(config: &SimConfig, stream: u64) -> Result<SimOutcome> {
    config.validate()?;
    let GraphKind::Configuration { n_nodes } = config.graph else {
        return Err(Error::Config("simulate_configuration needs a configuration graph kind".into()));
    };
    let mut rng = rng_for(config.seed, stream);
    let adjacency = configuration_graph(&config.degree, n_nodes, &mut rng)?;
    if adjacency.iter().all(|l| l.is_empty()) {
        return Err(Error::Config("configuration graph has no edges".into()));
    }
    let first = loop {
        let v = rng.random_range(0..n_nodes);
        if !adjacency[v].is_empty() {
            break v as u32;
        }
    };
    let eng = engine(config, Topology::Graph { adjacency }, rng, n_nodes)?;
    Ok(eng.run(first))
}

/// Dispatches on the configured graph kind.
pub fn simulate(config: &SimConfig) -> Result<SimOutcome> {
    match config.graph {
        GraphKind::Tree => simulate_tree(config),
        GraphKind::Configuration { .. } => simulate_configuration(config),
    }
}

/// Replicate `stream` of the configured run.
pub fn simulate_stream(config: &SimConfig, stream: u64) -> Result<SimOutcome> {
    match config.graph {
        GraphKind::Tree => simulate_tree_stream(config, stream),
        GraphKind::Configuration { .. } => simulate_configuration_stream(config, stream),
    }
}

/// Histogram of total (full) or forward (forward-only) detectees.
pub fn records_to_histogram(records: &[IndexCaseRecord], mode: TracingMode) -> Result<DetecteeHistogram> {
    DetecteeHistogram::from_pairs(records.iter().map(|r| {
        let i = match mode {
            TracingMode::Full => r.total_detected,
            TracingMode::ForwardOnly => r.forward_detected,
        };
        (i, 1)
    }))
}

pub const RECORDS_HEADER: &str =
    "node,infection_time,diagnosis_time,age,downstream_infected,forward_detected,backward_detected,total_detected,outside_infection";

pub fn records_to_csv(records: &[IndexCaseRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(RECORDS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.node,
            r.infection_time,
            r.diagnosis_time,
            r.age,
            r.downstream_infected,
            r.forward_detected,
            r.backward_detected,
            r.total_detected,
            r.outside_infection
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64) -> EpidemicParams {
        EpidemicParams::new(1.5, 0.5, 0.5, p).unwrap()
    }

    fn poisson4() -> DegreeModel {
        DegreeModel::poisson(4.0).unwrap()
    }

    #[test]
    fn no_tracing_means_no_detectees() {
        let c = SimConfig::tree(params(0.0), poisson4(), TracingMode::Full, 3);
        let out = simulate_tree_pooled(&c, 2000, 100).unwrap();
        assert!(out.records.iter().all(|r| r.total_detected == 0));
        let h = records_to_histogram(&out.records, TracingMode::Full).unwrap();
        assert_eq!(h.entries(), &[(0, out.records.len() as u64)]);
    }

    #[test]
    fn no_diagnosis_means_no_index_cases() {
        let c = SimConfig::tree(EpidemicParams::new(1.5, 1.0, 0.0, 0.6).unwrap(), poisson4(), TracingMode::Full, 4);
        let out = simulate_tree(&c).unwrap();
        assert!(out.no_index_cases && out.records.is_empty());
        assert!(records_to_histogram(&out.records, TracingMode::Full).is_err());
    }

    #[test]
    fn record_invariants_and_event_order() {
        let c = SimConfig::tree(params(0.6), poisson4(), TracingMode::Full, 5);
        let out = (0..).map(|s| simulate_tree_stream(&c, s).unwrap()).find(|o| o.records.len() > 1000).unwrap();
        for r in &out.records {
            assert!(r.age > 0.0 && r.infection_time < r.diagnosis_time);
            assert!(r.forward_detected <= r.downstream_infected);
            assert!(r.total_detected <= r.forward_detected + 1);
            assert!(!r.outside_infection);
            let node = &out.nodes[r.node as usize];
            if r.backward_detected {
                let parent = &out.nodes[node.infector.unwrap() as usize];
                assert_eq!(parent.removal, Some((Removal::Traced, r.diagnosis_time)));
            }
        }
        for n in &out.nodes {
            if let Some(parent) = n.infector {
                assert!(n.infection_time > out.nodes[parent as usize].infection_time);
            }
        }
    }

    #[test]
    fn reruns_are_identical() {
        let c = SimConfig::tree(params(0.6), poisson4(), TracingMode::ForwardOnly, 11);
        let a = records_to_csv(&simulate_tree(&c).unwrap().records);
        let b = records_to_csv(&simulate_tree(&c).unwrap().records);
        assert_eq!(a, b);
        let mut other = c.clone();
        other.seed = 12;
        assert_ne!(a, records_to_csv(&simulate_tree(&other).unwrap().records));
    }

    #[test]
    fn diagnosed_fraction_matches_p_obs() {
        let c = SimConfig::tree(params(0.0), poisson4(), TracingMode::ForwardOnly, 21);
        let out = simulate_tree(&c).unwrap();
        let removals = (out.counts.diagnoses + out.counts.recoveries) as f64;
        assert!(removals > 1e4);
        let frac = out.counts.diagnoses as f64 / removals;
        let se = (0.25 / removals).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "{frac}");
    }

    #[test]
    fn window_and_stop_criteria() {
        let mut c = SimConfig::tree(params(0.6), poisson4(), TracingMode::Full, 8);
        c.window = (1.0, 2.0);
        let out = simulate_tree(&c).unwrap();
        assert!(out.records.iter().all(|r| (1.0..=2.0).contains(&r.diagnosis_time)));
        c.window = (0.0, f64::INFINITY);
        c.stop.max_index_cases = Some(50);
        assert_eq!(simulate_tree(&c).unwrap().records.len(), 50);
        c.window = (2.0, 1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn configuration_graph_properties() {
        let mut rng = rng_for(1, 0);
        let g = configuration_graph(&DegreeModel::fixed(4).unwrap(), 1001, &mut rng).unwrap();
        for (v, l) in g.iter().enumerate() {
            assert!(l.len() <= 5);
            assert!(!l.contains(&(v as u32)));
            assert!(l.windows(2).all(|w| w[0] < w[1]));
            for &u in l {
                assert!(g[u as usize].contains(&(v as u32)));
            }
        }
        let mean = g.iter().map(|l| l.len()).sum::<usize>() as f64 / 1001.0;
        assert!(mean > 4.9);
        assert!(configuration_graph(&DegreeModel::geometric(3.0).unwrap(), 10, &mut rng).is_err());
    }

    #[test]
    fn configuration_run_without_tracing() {
        let c = SimConfig::configuration(params(0.0), poisson4(), 20_000, TracingMode::ForwardOnly, 2.0, 2);
        let out = simulate_configuration(&c).unwrap();
        assert!(out.records.iter().all(|r| r.total_detected == 0));
        let f = out.outside_fraction.unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn csv_layout() {
        let c = SimConfig::tree(params(0.6), poisson4(), TracingMode::Full, 1);
        let mut c2 = c.clone();
        c2.stop.max_index_cases = Some(3);
        let csv = records_to_csv(&simulate_tree(&c2).unwrap().records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RECORDS_HEADER);
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn histogram_from_records() {
        let rec = |n| IndexCaseRecord {
            node: 0,
            infection_time: 0.0,
            diagnosis_time: 1.0,
            age: 1.0,
            downstream_infected: n,
            forward_detected: n,
            backward_detected: false,
            total_detected: n,
            outside_infection: false,
        };
        let h = records_to_histogram(&[rec(0), rec(0), rec(2)], TracingMode::ForwardOnly).unwrap();
        assert_eq!(h.entries(), &[(0, 2), (2, 1)]);
        assert_eq!(h.total(), 3);
    }
}
