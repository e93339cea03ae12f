//! Built-in performance models, true input laws and the preset catalog.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::data::{InputDataset, Inputs, PerformanceModel, Sample};
use crate::error::{Error, Result};
use crate::sampling::StreamKey;

fn scalar_non_negative(obs: &[f64], what: &str) -> std::result::Result<(), String> {
    match obs {
        [x] if *x >= 0.0 => Ok(()),
        [x] => Err(format!("{what} must be non-negative, got {x}")),
        _ => Err(format!(
            "{what} must be scalar, got {} components",
            obs.len()
        )),
    }
}

/// Waiting time of the 10th customer of an initially empty single-server
/// FIFO queue, by the Lindley recursion `W_{t+1} = max(W_t + S_t - A_t, 0)`.
/// Input model 0 holds inter-arrival times, model 1 service times.
#[derive(Debug, Clone)]
pub struct Mm1Waiting {
    run_lengths: [usize; 2],
}

impl Mm1Waiting {
    pub const CUSTOMER: usize = 10;

    pub fn new() -> Self {
        Self {
            run_lengths: [Self::CUSTOMER - 1; 2],
        }
    }

    /// Lindley recursion on explicit inter-arrival and service sequences.
    pub fn waiting_time(arrivals: &[f64], services: &[f64]) -> f64 {
        arrivals
            .iter()
            .zip(services)
            .fold(0.0, |w, (a, s)| (w + s - a).max(0.0))
    }
}

impl Default for Mm1Waiting {
    fn default() -> Self {
        Self::new()
    }
}

impl PerformanceModel for Mm1Waiting {
    fn name(&self) -> &str {
        "mm1"
    }

    fn run_lengths(&self) -> &[usize] {
        &self.run_lengths
    }

    fn evaluate(&self, inputs: &Inputs<'_>) -> std::result::Result<f64, String> {
        let mut w = 0.0f64;
        for t in 0..self.run_lengths[0] {
            let a = inputs.value(0, t);
            let s = inputs.value(1, t);
            if a < 0.0 || s < 0.0 {
                return Err(format!(
                    "negative time at step {t}: arrival gap {a}, service {s}"
                ));
            }
            w = (w + s - a).max(0.0);
        }
        Ok(w)
    }

    fn natural_range(&self) -> Option<(f64, f64)> {
        Some((0.0, f64::INFINITY))
    }

    fn check_observation(&self, model: usize, obs: &[f64]) -> std::result::Result<(), String> {
        scalar_non_negative(
            obs,
            if model == 0 {
                "inter-arrival time"
            } else {
                "service time"
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    /// Input model supplying the edge length.
    pub model: usize,
}

/// Directed acyclic activity network; all indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: usize,
    pub source: usize,
    pub sink: usize,
    pub edges: Vec<DagEdge>,
}

impl DagSpec {
    /// Builds a network from 1-based `(from, to, model)` triples.
    pub fn from_one_based(
        nodes: usize,
        source: usize,
        sink: usize,
        edges: &[(usize, usize, usize)],
    ) -> Result<Self> {
        let dec = |x: usize, what: &str| {
            x.checked_sub(1).ok_or_else(|| {
                Error::Graph(format!("{what} index 0 is invalid (indices are 1-based)"))
            })
        };
        let edges = edges
            .iter()
            .map(|&(f, t, m)| {
                Ok(DagEdge {
                    from: dec(f, "node")?,
                    to: dec(t, "node")?,
                    model: dec(m, "model")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            nodes,
            source: dec(source, "source")?,
            sink: dec(sink, "sink")?,
            edges,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses the edge-list format: a header `nodes=<k> source=<s> sink=<t>`
    /// followed by one `<from> <to> <model_index>` line per edge (1-based).
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or((1, "empty network file".to_string()))?;
        let (mut nodes, mut source, mut sink) = (None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or((
                hline,
                format!("expected key=value in header, found '{field}'"),
            ))?;
            let value: usize = value
                .parse()
                .map_err(|_| (hline, format!("invalid number in '{field}'")))?;
            match key {
                "nodes" => nodes = Some(value),
                "source" => source = Some(value),
                "sink" => sink = Some(value),
                other => return Err((hline, format!("unknown header key '{other}'"))),
            }
        }
        let missing = |k: &str| (hline, format!("header is missing '{k}'"));
        let nodes = nodes.ok_or_else(|| missing("nodes"))?;
        let source = source.ok_or_else(|| missing("source"))?;
        let sink = sink.ok_or_else(|| missing("sink"))?;

        let mut edges = Vec::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err((
                    ln,
                    format!("expected '<from> <to> <model_index>', found '{line}'"),
                ));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| (ln, format!("invalid index '{s}'")))
            };
            edges.push((num(parts[0])?, num(parts[1])?, num(parts[2])?));
        }
        Self::from_one_based(nodes, source, sink, &edges).map_err(|e| (0, e.to_string()))
    }

    pub fn num_models(&self) -> usize {
        self.edges.iter().map(|e| e.model + 1).max().unwrap_or(0)
    }

    /// Checks index ranges, model coverage, acyclicity and that the sink is
    /// reachable from the source.
    pub fn validate(&self) -> Result<()> {
        self.topological_order().map(|_| ())
    }

    fn topological_order(&self) -> Result<Vec<usize>> {
        let k = self.nodes;
        if k < 2 {
            return Err(Error::Graph(format!(
                "network needs at least 2 nodes, has {k}"
            )));
        }
        if self.source >= k || self.sink >= k {
            return Err(Error::Graph(format!("source/sink outside 1..={k}")));
        }
        if self.edges.is_empty() {
            return Err(Error::Graph("network has no edges".into()));
        }
        let m = self.num_models();
        let mut used = vec![false; m];
        let mut indegree = vec![0usize; k];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); k];
        for e in &self.edges {
            if e.from >= k || e.to >= k {
                return Err(Error::Graph(format!(
                    "edge {} -> {} references a node outside 1..={k}",
                    e.from + 1,
                    e.to + 1
                )));
            }
            used[e.model] = true;
            indegree[e.to] += 1;
            out[e.from].push(e.to);
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::Graph(format!(
                "input model {} is not attached to any edge",
                i + 1
            )));
        }

        let mut queue: VecDeque<usize> = (0..k).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(k);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if order.len() != k {
            return Err(Error::Graph("network contains a cycle".into()));
        }

        let mut reach = vec![false; k];
        reach[self.source] = true;
        for &v in &order {
            if reach[v] {
                out[v].iter().for_each(|&w| reach[w] = true);
            }
        }
        if !reach[self.sink] {
            return Err(Error::Graph(format!(
                "sink {} is not reachable from source {}",
                self.sink + 1,
                self.source + 1
            )));
        }
        Ok(order)
    }

    /// Five-task network: 1->2 (X1), 2->3 (X2), 1->3 (X3), 2->4 (X4), 3->4 (X5).
    pub fn san5() -> Self {
        Self::from_one_based(
            4,
            1,
            4,
            &[(1, 2, 1), (2, 3, 2), (1, 3, 3), (2, 4, 4), (3, 4, 5)],
        )
        .expect("valid network")
    }

    /// Fourteen-task network from node 1 to node 10.
    pub fn san14() -> Self {
        Self::from_one_based(
            10,
            1,
            10,
            &[
                (1, 2, 1),
                (1, 3, 2),
                (1, 4, 3),
                (2, 5, 4),
                (2, 6, 5),
                (3, 5, 6),
                (3, 6, 7),
                (4, 7, 8),
                (4, 8, 9),
                (5, 9, 10),
                (6, 9, 11),
                (7, 10, 12),
                (8, 10, 13),
                (9, 10, 14),
            ],
        )
        .expect("valid network")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SanMode {
    CompletionTime,
    /// Indicator that the completion time exceeds the threshold.
    TailIndicator {
        threshold: f64,
    },
}

/// Stochastic activity network: `h` is the longest source-to-sink path, with
/// edge lengths drawn one per input model.
#[derive(Debug, Clone)]
pub struct San {
    name: String,
    source: usize,
    sink: usize,
    nodes: usize,
    /// Edges sorted by the topological position of their tail.
    edges: Vec<DagEdge>,
    run_lengths: Vec<usize>,
    mode: SanMode,
}

impl San {
    pub fn new(name: impl Into<String>, dag: &DagSpec, mode: SanMode) -> Result<Self> {
        let order = dag.topological_order()?;
        let mut position = vec![0; dag.nodes];
        order.iter().enumerate().for_each(|(p, &v)| position[v] = p);
        let mut edges = dag.edges.clone();
        edges.sort_by_key(|e| position[e.from]);
        Ok(Self {
            name: name.into(),
            source: dag.source,
            sink: dag.sink,
            nodes: dag.nodes,
            edges,
            run_lengths: vec![1; dag.num_models()],
            mode,
        })
    }

    pub fn mode(&self) -> SanMode {
        self.mode
    }

    /// Longest path for explicit edge lengths, indexed by input model.
    pub fn longest_path(&self, lengths: &[f64]) -> f64 {
        let mut dist = [f64::NEG_INFINITY; 64];
        let mut heap;
        let dist: &mut [f64] = if self.nodes <= dist.len() {
            &mut dist[..self.nodes]
        } else {
            heap = vec![f64::NEG_INFINITY; self.nodes];
            &mut heap
        };
        dist[self.source] = 0.0;
        for e in &self.edges {
            let cand = dist[e.from] + lengths[e.model];
            if cand > dist[e.to] {
                dist[e.to] = cand;
            }
        }
        dist[self.sink]
    }
}

impl PerformanceModel for San {
    fn name(&self) -> &str {
        &self.name
    }

    fn run_lengths(&self) -> &[usize] {
        &self.run_lengths
    }

    fn evaluate(&self, inputs: &Inputs<'_>) -> std::result::Result<f64, String> {
        let mut buf = [0.0; 64];
        let m = self.run_lengths.len();
        let mut heap;
        let lengths: &mut [f64] = if m <= buf.len() {
            &mut buf[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        for (i, x) in lengths.iter_mut().enumerate() {
            *x = inputs.value(i, 0);
            if *x < 0.0 {
                return Err(format!("negative duration {x} for task {}", i + 1));
            }
        }
        let t = self.longest_path(lengths);
        Ok(match self.mode {
            SanMode::CompletionTime => t,
            SanMode::TailIndicator { threshold } => f64::from(u8::from(t > threshold)),
        })
    }

    fn natural_range(&self) -> Option<(f64, f64)> {
        match self.mode {
            SanMode::CompletionTime => Some((0.0, f64::INFINITY)),
            SanMode::TailIndicator { .. } => Some((0.0, 1.0)),
        }
    }

    fn check_observation(&self, _model: usize, obs: &[f64]) -> std::result::Result<(), String> {
        scalar_non_negative(obs, "task duration")
    }
}

/// Parametric law of one input model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InputLaw {
    Exponential { rate: f64 },
}

impl InputLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InputLaw::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InputLaw::Exponential { rate } => 1.0 / rate,
        }
    }
}

/// True input distributions, one law per input model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrueInputSpec {
    pub laws: Vec<InputLaw>,
}

impl TrueInputSpec {
    pub fn new(laws: Vec<InputLaw>) -> Result<Self> {
        for (i, law) in laws.iter().enumerate() {
            match *law {
                InputLaw::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                    return Err(Error::InvalidArgument(format!(
                        "input model {}: rate {rate} must be positive",
                        i + 1
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { laws })
    }

    pub fn exponential(rates: &[f64]) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .map(|&rate| InputLaw::Exponential { rate })
                .collect(),
        )
    }

    pub fn num_models(&self) -> usize {
        self.laws.len()
    }

    /// Draws `sizes[i]` observations of each input model; model `i` uses the
    /// stream `key / ("input", i)`.
    pub fn draw_dataset(&self, sizes: &[usize], key: &StreamKey) -> Result<InputDataset> {
        if sizes.len() != self.laws.len() {
            return Err(Error::ArityMismatch {
                expected: self.laws.len(),
                found: sizes.len(),
            });
        }
        let samples = self
            .laws
            .iter()
            .zip(sizes)
            .enumerate()
            .map(|(i, (law, &n))| {
                let mut rng = key.child("input", i as u64).stream();
                Sample::scalar((0..n).map(|_| law.sample(&mut rng)).collect())
            })
            .collect();
        InputDataset::new(samples)
    }
}

pub const SAN14_TAIL_THRESHOLD: f64 = 1.5;

/// One experiment table of a preset: data sizes and budget rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableSetup {
    pub table: &'static str,
    pub sizes: Vec<usize>,
    pub total_budget: usize,
    /// `(R1, R2)` rows shared by BEL, EEL and FEL.
    pub el_rows: Vec<(usize, usize)>,
    /// `(B, R_b)` rows of the percentile bootstrap.
    pub boot_rows: Vec<(usize, usize)>,
    pub delta_rd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelKind {
    Mm1,
    San { dag: DagSpec, mode: SanMode },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub kind: ModelKind,
    pub truth_laws: TrueInputSpec,
    pub tables: Vec<TableSetup>,
}

impl Preset {
    pub fn build_model(&self) -> Box<dyn PerformanceModel> {
        match &self.kind {
            ModelKind::Mm1 => Box::new(Mm1Waiting::new()),
            ModelKind::San { dag, mode } => {
                Box::new(San::new(self.name, dag, *mode).expect("built-in network is valid"))
            }
        }
    }

    pub fn table(&self, label: &str) -> Option<&TableSetup> {
        self.tables.iter().find(|t| t.table == label)
    }
}

const MM1_RATES: [f64; 2] = [0.95, 1.0];
const SAN5_RATES: [f64; 5] = [10.0, 5.0, 12.0, 11.0, 5.0];
const SAN14_RATES: [f64; 14] = [
    10.0, 5.0, 12.0, 11.0, 5.0, 8.0, 4.0, 9.0, 13.0, 7.0, 6.0, 9.0, 10.0, 6.0,
];

fn split_sizes(first: usize, second: usize) -> Vec<usize> {
    [vec![first; 7], vec![second; 7]].concat()
}

fn setup(
    table: &'static str,
    sizes: Vec<usize>,
    total: usize,
    r2s: &[usize],
    rbs: &[usize],
) -> TableSetup {
    let el_rows = r2s.iter().map(|&r2| (total - 2 * r2, r2)).collect();
    let boot_rows = [50, 100, 400, 1000]
        .iter()
        .zip(rbs)
        .map(|(&b, &rb)| (b, rb))
        .collect();
    TableSetup {
        table,
        sizes,
        total_budget: total,
        el_rows,
        boot_rows,
        delta_rd: total,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["mm1", "san5", "san14", "san14_tail"];

/// Built-in presets with the experiment tables that use them.
pub fn builtin_specs() -> Vec<Preset> {
    let el_small = [500, 250, 100, 50];
    let el_large = [2000, 500, 100, 50];
    vec![
        Preset {
            name: "mm1",
            kind: ModelKind::Mm1,
            truth_laws: TrueInputSpec::exponential(&MM1_RATES).expect("positive rates"),
            tables: vec![
                setup("table1", vec![30, 25], 2000, &el_small, &[40, 20, 5, 2]),
                setup("table2", vec![120, 100], 8000, &el_large, &[160, 80, 20, 8]),
            ],
        },
        Preset {
            name: "san5",
            kind: ModelKind::San {
                dag: DagSpec::san5(),
                mode: SanMode::CompletionTime,
            },
            truth_laws: TrueInputSpec::exponential(&SAN5_RATES).expect("positive rates"),
            tables: vec![setup(
                "table3",
                vec![200, 200, 30, 30, 30],
                8000,
                &el_large,
                &[160, 80, 20, 8],
            )],
        },
        Preset {
            name: "san14",
            kind: ModelKind::San {
                dag: DagSpec::san14(),
                mode: SanMode::CompletionTime,
            },
            truth_laws: TrueInputSpec::exponential(&SAN14_RATES).expect("positive rates"),
            tables: vec![setup(
                "table4",
                split_sizes(30, 25),
                4000,
                &el_small,
                &[80, 40, 10, 4],
            )],
        },
        Preset {
            name: "san14_tail",
            kind: ModelKind::San {
                dag: DagSpec::san14(),
                mode: SanMode::TailIndicator {
                    threshold: SAN14_TAIL_THRESHOLD,
                },
            },
            truth_laws: TrueInputSpec::exponential(&SAN14_RATES).expect("positive rates"),
            tables: vec![
                setup(
                    "table5",
                    split_sizes(120, 100),
                    16000,
                    &el_small,
                    &[320, 160, 40, 16],
                ),
                setup(
                    "table6",
                    split_sizes(480, 400),
                    60000,
                    &el_small,
                    &[1200, 600, 150, 60],
                ),
            ],
        },
    ]
}

pub fn preset(name: &str) -> Result<Preset> {
    builtin_specs()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            valid: PRESET_NAMES.join(", "),
        })
}
