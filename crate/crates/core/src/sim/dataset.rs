use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Axis, SimError, Simulator};
use crate::assignment::FrequencyAssignment;
use crate::graph::{compute_hop_distances, CouplingGraph, NamedGraph, DEFAULT_MAX_ORDER};

pub const LOG_ERR_MIN: f64 = -4.0;
pub const LOG_ERR_MAX: f64 = -1.0;
/// Graphs up to this size are simulated whole; larger ones in local windows.
const WHOLE_GRAPH_LIMIT: usize = 8;

/// `(clamped, raw)` base-10 logarithm of a linear error.
pub fn clamp_log_error(err: f64) -> (f64, f64) {
    let raw = err.max(1e-300).log10();
    (raw.clamp(LOG_ERR_MIN, LOG_ERR_MAX), raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Rx,
    Ry,
    Rxy,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Rx, OpKind::Ry, OpKind::Rxy];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Rx => "rx",
            OpKind::Ry => "ry",
            OpKind::Rxy => "rxy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rx" => Some(OpKind::Rx),
            "ry" => Some(OpKind::Ry),
            "rxy" => Some(OpKind::Rxy),
            _ => None,
        }
    }

    pub fn is_single(self) -> bool {
        !matches!(self, OpKind::Rxy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFreqs {
    pub i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ij: Option<f64>,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDists {
    pub ik: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jk: Option<u32>,
}

/// One simulated (operation, source, target) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkSample {
    pub op: OpKind,
    pub graph: String,
    pub source: Vec<usize>,
    pub target: usize,
    pub freqs: SampleFreqs,
    pub dists: SampleDists,
    /// log10 of the error, clamped to `[-4, -1]`.
    pub log_err: f64,
    /// Unclamped log10 of the error.
    pub raw_log_err: f64,
}

impl CrosstalkSample {
    pub fn max_distance(&self) -> u32 {
        self.dists.ik.max(self.dists.jk.unwrap_or(0))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<CrosstalkSample>,
}

#[derive(Debug, Clone, Default)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, op: OpKind) -> usize {
        self.samples.iter().filter(|s| s.op == op).count()
    }

    pub fn of_op(&self, op: OpKind) -> Vec<&CrosstalkSample> {
        self.samples.iter().filter(|s| s.op == op).collect()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.samples.extend(other.samples);
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, String> {
        let mut samples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
        }
        Ok(Self { samples })
    }

    /// Seeded per-operation split; `fractions` are the train and validation
    /// shares, the rest is test.
    pub fn split(&self, fractions: (f64, f64), seed: u64) -> SplitDataset {
        let mut out = SplitDataset::default();
        for (o, op) in OpKind::ALL.into_iter().enumerate() {
            let mut items = self.of_op(op);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + o as u64));
            items.shuffle(&mut rng);
            let n = items.len();
            let n_train = (n as f64 * fractions.0).round() as usize;
            let n_val = ((n as f64 * fractions.1).round() as usize).min(n - n_train);
            for (t, s) in items.into_iter().enumerate() {
                let part = if t < n_train {
                    &mut out.train
                } else if t < n_train + n_val {
                    &mut out.val
                } else {
                    &mut out.test
                };
                part.samples.push(s.clone());
            }
        }
        out
    }

    /// Seeded per-operation random subset of the given fraction.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Dataset {
        let mut out = Dataset::default();
        for (o, op) in OpKind::ALL.into_iter().enumerate() {
            let mut items = self.of_op(op);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xabc0_0000 + o as u64));
            items.shuffle(&mut rng);
            let keep = (items.len() as f64 * fraction).round() as usize;
            out.samples.extend(items.into_iter().take(keep).cloned());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Records per operation type per graph.
    pub samples_per_graph: usize,
    pub seed: u64,
    pub ops: Vec<OpKind>,
}

impl DatasetConfig {
    pub fn new(samples_per_graph: usize, seed: u64) -> Self {
        Self {
            samples_per_graph,
            seed,
            ops: OpKind::ALL.to_vec(),
        }
    }

    /// Training-set size of the full-scale preset: 25,600 records per
    /// operation per graph, of which 80% train across three graphs.
    pub fn paper_preset(seed: u64) -> Self {
        Self::new(25_600, seed)
    }
}

/// Nodes within `radius` hops of any source, sorted, with their induced
/// subgraph.
pub fn local_window(graph: &CouplingGraph, sources: &[usize], radius: u32) -> (Vec<usize>, CouplingGraph) {
    let mut best = vec![u32::MAX; graph.node_count()];
    for &s in sources {
        for (v, d) in graph.bfs_distances(s).into_iter().enumerate() {
            best[v] = best[v].min(d);
        }
    }
    let nodes: Vec<usize> = (0..graph.node_count()).filter(|&v| best[v] <= radius).collect();
    let sub = graph.induced(&nodes);
    (nodes, sub)
}

fn restrict(graph: &CouplingGraph, assignment: &FrequencyAssignment, nodes: &[usize]) -> FrequencyAssignment {
    let mut inside = vec![false; graph.node_count()];
    for &n in nodes {
        inside[n] = true;
    }
    FrequencyAssignment {
        node_ghz: nodes.iter().map(|&n| assignment.node_ghz[n]).collect(),
        edge_ghz: graph
            .edges()
            .iter()
            .zip(&assignment.edge_ghz)
            .filter(|(&(a, b), _)| inside[a] && inside[b])
            .map(|(_, &f)| f)
            .collect(),
    }
}

/// Simulates one operation's source, returning the error on every node of
/// the full graph (NaN outside the simulated region).
fn source_errors(
    sim: &Simulator,
    graph: &CouplingGraph,
    assignment: &FrequencyAssignment,
    op: OpKind,
    source: &[usize],
) -> Result<Vec<f64>, SimError> {
    let run = |g: &CouplingGraph, a: &FrequencyAssignment, src: &[usize]| match op {
        OpKind::Rx => sim.single_excitations(g, a, src[0], Axis::X),
        OpKind::Ry => sim.single_excitations(g, a, src[0], Axis::Y),
        OpKind::Rxy => sim.two_excitations(g, a, src[0], src[1]),
    };
    if graph.node_count() <= WHOLE_GRAPH_LIMIT {
        return run(graph, assignment, source);
    }
    let (nodes, sub) = local_window(graph, source, DEFAULT_MAX_ORDER as u32);
    let local_src: Vec<usize> = source
        .iter()
        .map(|s| nodes.binary_search(s).expect("source inside its window"))
        .collect();
    let local = run(&sub, &restrict(graph, assignment, &nodes), &local_src)?;
    let mut out = vec![f64::NAN; graph.node_count()];
    for (t, &n) in nodes.iter().enumerate() {
        out[n] = local[t];
    }
    Ok(out)
}

/// Records of one operation type for one assignment, sources in order.
fn assignment_records(
    sim: &Simulator,
    name: &str,
    graph: &CouplingGraph,
    assignment: &FrequencyAssignment,
    op: OpKind,
) -> Result<Vec<CrosstalkSample>, SimError> {
    let max_d = DEFAULT_MAX_ORDER as u32;
    let powers = compute_hop_distances(graph, DEFAULT_MAX_ORDER);
    let mut out = Vec::new();
    let n = graph.node_count();
    let mut record = |source: Vec<usize>, k: usize, err: f64, freqs: SampleFreqs, dists: SampleDists| {
        let (log_err, raw_log_err) = clamp_log_error(err);
        out.push(CrosstalkSample {
            op,
            graph: name.to_string(),
            source,
            target: k,
            freqs,
            dists,
            log_err,
            raw_log_err,
        });
    };
    if op.is_single() {
        for i in 0..n {
            let errs = source_errors(sim, graph, assignment, op, &[i])?;
            for k in 0..n {
                let d = powers.dist(i, k);
                if k == i || d > max_d {
                    continue;
                }
                let freqs = SampleFreqs {
                    i: assignment.node_ghz[i],
                    j: None,
                    ij: None,
                    k: assignment.node_ghz[k],
                };
                record(vec![i], k, errs[k], freqs, SampleDists { ik: d, jk: None });
            }
        }
    } else {
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let errs = match source_errors(sim, graph, assignment, op, &[i, j]) {
                Ok(v) => v,
                Err(SimError::GateCouplingTooSmall { g_ghz }) => {
                    log::warn!("skipping gate {i}-{j} on {name}: coupling {g_ghz:e} GHz");
                    continue;
                }
                Err(other) => return Err(other),
            };
            for k in 0..n {
                let (dik, djk) = (powers.dist(i, k), powers.dist(j, k));
                if k == i || k == j || dik.max(djk) > max_d {
                    continue;
                }
                let freqs = SampleFreqs {
                    i: assignment.node_ghz[i],
                    j: Some(assignment.node_ghz[j]),
                    ij: Some(assignment.edge_ghz[e]),
                    k: assignment.node_ghz[k],
                };
                record(
                    vec![i, j],
                    k,
                    errs[k],
                    freqs,
                    SampleDists {
                        ik: dik,
                        jk: Some(djk),
                    },
                );
            }
        }
    }
    Ok(out)
}

fn assignment_rng(seed: u64, graph_idx: usize, assignment_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((graph_idx as u64) << 32) | assignment_idx as u64);
    rng
}

fn generate_for_graph(
    sim: &Simulator,
    graph_idx: usize,
    named: &NamedGraph,
    config: &DatasetConfig,
) -> Result<Dataset, SimError> {
    let band = sim.params().qubit_band;
    let quota = config.samples_per_graph;
    let mut buckets: Vec<(OpKind, Vec<CrosstalkSample>)> = config.ops.iter().map(|&op| (op, Vec::new())).collect();
    let mut idx = 0;
    while buckets.iter().any(|(_, b)| b.len() < quota) {
        let mut rng = assignment_rng(config.seed, graph_idx, idx);
        let assignment = FrequencyAssignment::uniform(&named.graph, band, &mut rng);
        let mut progressed = false;
        for (op, bucket) in buckets.iter_mut() {
            if bucket.len() >= quota {
                continue;
            }
            let recs = assignment_records(sim, &named.name, &named.graph, &assignment, *op)?;
            progressed |= !recs.is_empty();
            bucket.extend(recs);
        }
        if !progressed {
            log::warn!("graph {} yields no further records; stopping early", named.name);
            break;
        }
        idx += 1;
    }
    let mut out = Dataset::default();
    for (_, mut bucket) in buckets {
        bucket.truncate(quota);
        out.samples.extend(bucket);
    }
    Ok(out)
}

/// Labeled crosstalk records on small graphs: for each uniformly sampled
/// assignment, every source/target pair within 4 hops for every operation
/// type, until each operation has `samples_per_graph` records per graph.
pub fn generate_dataset(sim: &Simulator, graphs: &[NamedGraph], config: &DatasetConfig) -> Result<Dataset, SimError> {
    let mut out = Dataset::default();
    for (gi, g) in graphs.iter().enumerate() {
        if g.graph.node_count() > WHOLE_GRAPH_LIMIT {
            return Err(SimError::TooLarge {
                nodes: g.graph.node_count(),
                limit: WHOLE_GRAPH_LIMIT,
            });
        }
        out.extend(generate_for_graph(sim, gi, g, config)?);
    }
    Ok(out)
}

/// Records on a long chain, each source simulated inside the window of
/// qubits within 4 hops of it.
pub fn scale_holdout_dataset(
    sim: &Simulator,
    chain_len: usize,
    samples_per_op: usize,
    seed: u64,
) -> Result<Dataset, SimError> {
    let named = NamedGraph {
        name: format!("chain{chain_len}"),
        role: crate::graph::GraphRole::ScaleHoldout,
        graph: CouplingGraph::chain(chain_len),
    };
    generate_for_graph(sim, usize::MAX >> 32, &named, &DatasetConfig::new(samples_per_op, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_rule() {
        assert_eq!(clamp_log_error(1e-6).0, -4.0);
        assert_eq!(clamp_log_error(0.5).0, -1.0);
        assert!((clamp_log_error(1e-2).0 + 2.0).abs() < 1e-12);
        assert!((clamp_log_error(1e-6).1 + 6.0).abs() < 1e-12);
    }

    #[test]
    fn window_on_chain() {
        let g = CouplingGraph::chain(30);
        let (nodes, sub) = local_window(&g, &[10], 4);
        assert_eq!(nodes, (6..=14).collect::<Vec<_>>());
        assert_eq!(sub.edge_count(), 8);
    }
}
