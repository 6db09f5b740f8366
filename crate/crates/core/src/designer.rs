//! Graph network that proposes a full frequency assignment for any coupling
//! graph, trained without labels by descending the evaluator's loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{FrequencyAssignment, DEFAULT_BAND};
use crate::evaluator::{graph_loss, graph_loss_tape, EvalError, Evaluator, LossTerms, LossWeights, Mlp};
use crate::graph::{compute_hop_distances, normalize_adjacency, CouplingGraph, GraphError, MediumGraphSpec, NormalizedAdjacency};
use crate::tensor::{Adam, Tape, Tensor, TensorError, Var, WeightManifest};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("training loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("expected {expected} trial inputs, got {got}")]
    TrialLength { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One high-order graph convolution: `Σ_p Ã^p F W^p + b` for `p = 0..=order`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weights: Vec<Tensor>,
    pub bias: Tensor,
}

impl GcnLayer {
    pub fn new(order: usize, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input * (order + 1)) as f64).sqrt();
        Self {
            weights: (0..=order)
                .map(|_| Tensor::from_fn(input, output, |_, _| rng.gen_range(-bound..bound)))
                .collect(),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>() + self.bias.len()
    }

    fn register(&self, tape: &mut Tape<'_>, trainable: bool) -> Vec<Var> {
        let mut v: Vec<Var> = self.weights.iter().map(|w| leaf(tape, w, trainable)).collect();
        v.push(leaf(tape, &self.bias, trainable));
        v
    }

    /// Layer on a tape; `vars` are the registered weights followed by the bias.
    pub fn forward_tape<'a>(&self, tape: &mut Tape<'a>, adj: &'a NormalizedAdjacency, x: Var, vars: &[Var], relu: bool) -> Result<Var, DesignError> {
        if adj.order() < self.order() {
            return Err(DesignError::Config(format!("adjacency order {} below layer order {}", adj.order(), self.order())));
        }
        let mut acc: Option<Var> = None;
        for p in 0..=self.order() {
            let mixed = if p == 0 { x } else { tape.sparse_matmul(adj.get(p), x)? };
            let term = tape.matmul(mixed, vars[p])?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        let out = tape.add_broadcast_row(acc.expect("order 0 term"), vars[self.order() + 1])?;
        Ok(if relu { tape.relu(out) } else { out })
    }

    /// Plain evaluation of [`Self::forward_tape`].
    pub fn forward(&self, adj: &NormalizedAdjacency, x: &Tensor, relu: bool) -> Result<Tensor, DesignError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward_tape(&mut tape, adj, xv, &vars, relu)?;
        Ok(tape.value(out).clone())
    }
}

fn leaf(tape: &mut Tape<'_>, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Layer counts and widths of the two graph stacks and their heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignerArch {
    pub order: usize,
    pub node_layers: usize,
    pub node_width: usize,
    pub head_width: usize,
    pub edge_layers: usize,
    pub edge_width: usize,
    pub scorer_width: usize,
}

impl DesignerArch {
    /// Twelve 256-wide node layers and three 64-wide edge layers.
    pub fn paper() -> Self {
        Self {
            order: 3,
            node_layers: 12,
            node_width: 256,
            head_width: 32,
            edge_layers: 3,
            edge_width: 64,
            scorer_width: 32,
        }
    }

    /// Laptop-sized variant with the same structure.
    pub fn desk() -> Self {
        Self {
            order: 3,
            node_layers: 4,
            node_width: 32,
            head_width: 16,
            edge_layers: 2,
            edge_width: 16,
            scorer_width: 16,
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.node_layers == 0 || self.edge_layers == 0 || [self.node_width, self.head_width, self.edge_width, self.scorer_width].contains(&0) {
            return Err(DesignError::Config(format!("all layer counts and widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Node stack → per-node sigmoid head → band; edge stack on the designed
/// frequencies → shared endpoint scorer → convex edge frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Designer {
    pub arch: DesignerArch,
    pub band: (f64, f64),
    pub node_stack: Vec<GcnLayer>,
    pub node_head: Mlp,
    pub edge_stack: Vec<GcnLayer>,
    pub scorer: Mlp,
}

/// Registered designer parameters, in [`Designer::tensors`] order.
struct DesignerVars {
    node_stack: Vec<Vec<Var>>,
    node_head: Vec<(Var, Var)>,
    edge_stack: Vec<Vec<Var>>,
    scorer: Vec<(Var, Var)>,
}

impl DesignerVars {
    fn flat(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in &self.node_stack {
            v.extend(l);
        }
        v.extend(self.node_head.iter().flat_map(|&(w, b)| [w, b]));
        for l in &self.edge_stack {
            v.extend(l);
        }
        v.extend(self.scorer.iter().flat_map(|&(w, b)| [w, b]));
        v
    }
}

/// Designed frequencies on a tape: `node` is N×1, `edge` is E×1 (GHz).
#[derive(Debug, Clone, Copy)]
pub struct DesignVars {
    pub node: Var,
    pub edge: Var,
}

impl Designer {
    pub fn new(arch: DesignerArch, band: (f64, f64), seed: u64) -> Result<Self, DesignError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = |rng: &mut ChaCha8Rng, input: usize, width: usize, layers: usize| -> Vec<GcnLayer> {
            (0..layers)
                .map(|l| GcnLayer::new(arch.order, if l == 0 { input } else { width }, width, rng))
                .collect()
        };
        let node_stack = stack(&mut rng, 1, arch.node_width, arch.node_layers);
        let node_head = Mlp::new(&[arch.node_width, arch.head_width, 1], &mut rng);
        let edge_stack = stack(&mut rng, 2, arch.edge_width, arch.edge_layers);
        let scorer = Mlp::new(&[2 * arch.edge_width, arch.scorer_width, 1], &mut rng);
        Ok(Self {
            arch,
            band,
            node_stack,
            node_head,
            edge_stack,
            scorer,
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for l in &self.node_stack {
            out.extend(l.weights.iter().cloned());
            out.push(l.bias.clone());
        }
        out.extend(self.node_head.tensors());
        for l in &self.edge_stack {
            out.extend(l.weights.iter().cloned());
            out.push(l.bias.clone());
        }
        out.extend(self.scorer.tensors());
        out
    }

    pub fn set_tensors(&mut self, ts: &[Tensor]) {
        let mut at = 0;
        let mut take = |k: usize| {
            at += k;
            &ts[at - k..at]
        };
        for l in self.node_stack.iter_mut() {
            let t = take(l.weights.len() + 1);
            l.weights = t[..t.len() - 1].to_vec();
            l.bias = t[t.len() - 1].clone();
        }
        self.node_head.set_tensors(take(2 * self.node_head.layers.len()));
        for l in self.edge_stack.iter_mut() {
            let t = take(l.weights.len() + 1);
            l.weights = t[..t.len() - 1].to_vec();
            l.bias = t[t.len() - 1].clone();
        }
        self.scorer.set_tensors(take(2 * self.scorer.layers.len()));
    }

    fn register(&self, tape: &mut Tape<'_>, trainable: bool) -> DesignerVars {
        DesignerVars {
            node_stack: self.node_stack.iter().map(|l| l.register(tape, trainable)).collect(),
            node_head: self.node_head.register(tape, trainable),
            edge_stack: self.edge_stack.iter().map(|l| l.register(tape, trainable)).collect(),
            scorer: self.scorer.register(tape, trainable),
        }
    }

    /// Adjacency operators the model needs for `graph`.
    pub fn adjacency(&self, graph: &CouplingGraph) -> NormalizedAdjacency {
        normalize_adjacency(&compute_hop_distances(graph, self.arch.order), self.arch.order)
    }

    fn forward_with<'a>(
        &self,
        tape: &mut Tape<'a>,
        vars: &DesignerVars,
        adj: &'a NormalizedAdjacency,
        edges: &[(usize, usize)],
        trials: Var,
    ) -> Result<DesignVars, DesignError> {
        // centred so first-layer units switch on for some nodes and off for others
        let doubled = tape.scale(trials, 2.0);
        let centred = tape.add_scalar(doubled, -1.0);
        let mut h = centred;
        for (layer, v) in self.node_stack.iter().zip(&vars.node_stack) {
            h = layer.forward_tape(tape, adj, h, v, true)?;
        }
        let z = self.node_head.forward_tape(tape, h, &vars.node_head)?;
        let u = tape.sigmoid(z);
        let span = self.band.1 - self.band.0;
        let scaled = tape.scale(u, span);
        let node = tape.add_scalar(scaled, self.band.0);
        if edges.is_empty() {
            let edge = tape.constant(Tensor::zeros(0, 1));
            return Ok(DesignVars { node, edge });
        }
        let mut g = tape.concat_cols(&[u, centred])?;
        for (layer, v) in self.edge_stack.iter().zip(&vars.edge_stack) {
            g = layer.forward_tape(tape, adj, g, v, true)?;
        }
        let a: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let b: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let ga = tape.gather_rows(g, &a)?;
        let gb = tape.gather_rows(g, &b)?;
        let ab = tape.concat_cols(&[ga, gb])?;
        let ba = tape.concat_cols(&[gb, ga])?;
        let la = self.scorer.forward_tape(tape, ab, &vars.scorer)?;
        let lb = self.scorer.forward_tape(tape, ba, &vars.scorer)?;
        let dab = tape.sub(la, lb)?;
        let dba = tape.sub(lb, la)?;
        let pa = tape.sigmoid(dab);
        let pb = tape.sigmoid(dba);
        let wa = tape.gather_rows(node, &a)?;
        let wb = tape.gather_rows(node, &b)?;
        let ta = tape.mul(pa, wa)?;
        let tb = tape.mul(pb, wb)?;
        let edge = tape.add(ta, tb)?;
        Ok(DesignVars { node, edge })
    }

    /// Frozen forward pass on a tape (gradients flow only to `trials` if it
    /// is a parameter).
    pub fn forward_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        adj: &'a NormalizedAdjacency,
        edges: &[(usize, usize)],
        trials: Var,
    ) -> Result<DesignVars, DesignError> {
        let vars = self.register(tape, false);
        self.forward_with(tape, &vars, adj, edges, trials)
    }

    /// Assignment for one trial vector (one value in `[0, 1]` per node).
    pub fn design(&self, graph: &CouplingGraph, trials: &[f64]) -> Result<FrequencyAssignment, DesignError> {
        let adj = self.adjacency(graph);
        Ok(self.design_many(graph, &adj, &[trials.to_vec()])?.remove(0))
    }

    /// Designs several trials in one block-diagonal pass.
    pub fn design_many(&self, graph: &CouplingGraph, adj: &NormalizedAdjacency, trials: &[Vec<f64>]) -> Result<Vec<FrequencyAssignment>, DesignError> {
        let n = graph.node_count();
        for t in trials {
            if t.len() != n {
                return Err(DesignError::TrialLength { expected: n, got: t.len() });
            }
        }
        let copies: Vec<&NormalizedAdjacency> = vec![adj; trials.len()];
        let big = NormalizedAdjacency::block_diag(&copies);
        let edges: Vec<(usize, usize)> = (0..trials.len())
            .flat_map(|b| graph.edges().iter().map(move |&(i, j)| (i + b * n, j + b * n)))
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(trials.concat()));
        let out = self.forward_tape(&mut tape, &big, &edges, x)?;
        let (node, edge) = (tape.value(out.node).data(), tape.value(out.edge).data());
        let m = graph.edge_count();
        Ok((0..trials.len())
            .map(|b| FrequencyAssignment {
                node_ghz: node[b * n..(b + 1) * n].to_vec(),
                edge_ghz: edge[b * m..(b + 1) * m].to_vec(),
            })
            .collect())
    }

    pub fn to_manifest(&self) -> WeightManifest {
        let mut m = WeightManifest::default();
        let a = &self.arch;
        m.push(
            "meta.arch",
            Tensor::row_vector(
                [a.order, a.node_layers, a.node_width, a.head_width, a.edge_layers, a.edge_width, a.scorer_width]
                    .map(|v| v as f64)
                    .to_vec(),
            ),
        );
        m.push("meta.band", Tensor::row_vector(vec![self.band.0, self.band.1]));
        for (k, t) in self.tensors().into_iter().enumerate() {
            m.push(format!("p{k:04}"), t);
        }
        m
    }

    pub fn from_manifest(m: &WeightManifest) -> Result<Self, DesignError> {
        let bad = |what: &str| DesignError::Config(format!("designer file: {what}"));
        let arch = m.get("meta.arch").filter(|t| t.shape() == (1, 7)).ok_or_else(|| bad("missing architecture"))?;
        let d: Vec<usize> = arch.data().iter().map(|&v| v as usize).collect();
        let arch = DesignerArch {
            order: d[0],
            node_layers: d[1],
            node_width: d[2],
            head_width: d[3],
            edge_layers: d[4],
            edge_width: d[5],
            scorer_width: d[6],
        };
        let band = m.get("meta.band").filter(|t| t.shape() == (1, 2)).ok_or_else(|| bad("missing band"))?;
        let mut model = Self::new(arch, (band.data()[0], band.data()[1]), 0)?;
        let expected = model.tensors();
        let mut ts = Vec::with_capacity(expected.len());
        for (k, e) in expected.iter().enumerate() {
            let t = m.get(&format!("p{k:04}")).ok_or_else(|| bad(&format!("missing tensor {k}")))?;
            if t.shape() != e.shape() {
                return Err(bad(&format!("tensor {k} has shape {:?}, expected {:?}", t.shape(), e.shape())));
            }
            ts.push(t.clone());
        }
        model.set_tensors(&ts);
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        self.to_manifest().to_json()
    }

    pub fn from_json(doc: &str) -> Result<Self, DesignError> {
        Self::from_manifest(&WeightManifest::from_json(doc)?)
    }
}

/// Trial vector `index` of the stream for `seed`; any batch size draws a
/// prefix of the same sequence.
pub fn trial_inputs(n: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Best of `batch` designs by evaluator loss, with its loss.
pub fn batched_design(
    model: &Designer,
    graph: &CouplingGraph,
    ev: &Evaluator,
    weights: &LossWeights,
    batch: usize,
    seed: u64,
) -> Result<(FrequencyAssignment, f64), DesignError> {
    if batch == 0 {
        return Err(DesignError::Config("batch must be at least 1".into()));
    }
    let n = graph.node_count();
    let adj = model.adjacency(graph);
    let terms = LossTerms::new(graph);
    let chunk = (32_768 / n.max(1)).clamp(1, 256);
    let mut best: Option<(FrequencyAssignment, f64)> = None;
    let mut start = 0;
    while start < batch {
        let end = (start + chunk).min(batch);
        let trials: Vec<Vec<f64>> = (start..end).map(|t| trial_inputs(n, seed, t as u64)).collect();
        for a in model.design_many(graph, &adj, &trials)? {
            let loss = graph_loss(&terms, &a, ev, weights)?;
            if best.as_ref().map_or(true, |b| loss < b.1) {
                best = Some((a, loss));
            }
        }
        start = end;
    }
    Ok(best.expect("batch ≥ 1"))
}

/// Default best-of-N batch for a mean graph size.
pub fn default_batch_for(mean_nodes: usize) -> usize {
    match mean_nodes {
        0..=40 => 512,
        41..=75 => 512,
        76..=150 => 512,
        151..=300 => 64,
        301..=600 => 8,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignerTrainConfig {
    pub arch: DesignerArch,
    /// Mean node counts of the training graphs, cycled step by step.
    pub sizes: Vec<usize>,
    /// Graphs per step.
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Held-out graphs per training size used to pick the best checkpoint.
    pub val_graphs: usize,
    pub val_every: usize,
}

impl Default for DesignerTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DesignerTrainConfig {
    pub fn desk() -> Self {
        Self {
            arch: DesignerArch::desk(),
            sizes: vec![16, 24, 32],
            batch: 32,
            steps: 2000,
            lr: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            val_graphs: 2,
            val_every: 100,
        }
    }

    pub fn paper() -> Self {
        Self {
            arch: DesignerArch::paper(),
            sizes: vec![54, 103, 218],
            batch: 288,
            steps: 700_000,
            val_every: 1000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        self.arch.validate()?;
        self.weights.validate()?;
        if self.sizes.is_empty() || self.sizes.contains(&0) || self.batch == 0 {
            return Err(DesignError::Config("sizes and batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(DesignError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val: f64,
    pub best_val: f64,
    pub best_step: usize,
    pub trace: Vec<TracePoint>,
}

impl TrainReport {
    /// Mean training loss over the final `fraction` of recorded steps.
    pub fn trailing_train_loss(&self, fraction: f64) -> f64 {
        let k = ((self.trace.len() as f64 * fraction).ceil() as usize).clamp(1, self.trace.len().max(1));
        let tail = &self.trace[self.trace.len().saturating_sub(k)..];
        tail.iter().map(|p| p.train_loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 31;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 29)
}

/// Random graph of the given mean size; redraws the rare degenerate sample.
pub fn sample_graph(mean_nodes: usize, seed: u64) -> Result<CouplingGraph, DesignError> {
    sample_graph_with(&MediumGraphSpec::for_mean_nodes(mean_nodes), seed)
}

/// [`sample_graph`] for an explicit lattice recipe.
pub fn sample_graph_with(spec: &MediumGraphSpec, seed: u64) -> Result<CouplingGraph, DesignError> {
    let mut last = None;
    for attempt in 0..16 {
        match spec.sample(mix(seed, attempt, 0x51)) {
            Ok(g) => return Ok(g),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt").into())
}

struct Batch {
    graphs: Vec<CouplingGraph>,
    trials: Vec<f64>,
}

impl Batch {
    fn draw(sizes: &[usize], count: usize, seed: u64, tag: u64) -> Result<Self, DesignError> {
        let mut graphs = Vec::with_capacity(count);
        let mut trials = Vec::new();
        for (g, &size) in (0..count).zip(sizes.iter().cycle()) {
            let graph = sample_graph(size, mix(seed, tag, g as u64))?;
            trials.extend(trial_inputs(graph.node_count(), mix(seed, tag, g as u64 + 0x10000), 0));
            graphs.push(graph);
        }
        Ok(Self { graphs, trials })
    }

    fn operators(&self, order: usize) -> (NormalizedAdjacency, Vec<(usize, usize)>, LossTerms) {
        let parts: Vec<NormalizedAdjacency> = self
            .graphs
            .iter()
            .map(|g| normalize_adjacency(&compute_hop_distances(g, order), order))
            .collect();
        let refs: Vec<&NormalizedAdjacency> = parts.iter().collect();
        let mut edges = Vec::new();
        let mut offset = 0;
        for g in &self.graphs {
            edges.extend(g.edges().iter().map(|&(a, b)| (a + offset, b + offset)));
            offset += g.node_count();
        }
        let grefs: Vec<&CouplingGraph> = self.graphs.iter().collect();
        (NormalizedAdjacency::block_diag(&refs), edges, LossTerms::batch(&grefs))
    }
}

/// Mean loss over a batch of graphs; with `train`, also the parameter gradients.
fn batch_loss(
    model: &Designer,
    ev: &Evaluator,
    weights: &LossWeights,
    batch: &Batch,
    train: bool,
) -> Result<(f64, Option<Vec<Tensor>>), DesignError> {
    let (adj, edges, terms) = batch.operators(model.arch.order);
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, train);
    let x = tape.constant(Tensor::column(batch.trials.clone()));
    let out = model.forward_with(&mut tape, &vars, &adj, &edges, x)?;
    let loss = graph_loss_tape(&mut tape, &terms, out.node, out.edge, ev, weights)?;
    let value = tape.value(loss).item();
    if !train {
        return Ok((value, None));
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, Some(vars.flat().into_iter().map(|v| grads.take(v)).collect())))
}

/// Adam on the mean batch loss, graphs resampled every step; returns the
/// checkpoint with the lowest held-out loss.
pub fn train_designer(config: &DesignerTrainConfig, ev: &Evaluator, band: (f64, f64)) -> Result<(Designer, TrainReport), DesignError> {
    config.validate()?;
    let mut model = Designer::new(config.arch, band, config.seed)?;
    let val = Batch::draw(&config.sizes, config.val_graphs.max(1) * config.sizes.len(), config.seed, u64::MAX)?;
    let evaluate = |m: &Designer| batch_loss(m, ev, &config.weights, &val, false).map(|r| r.0);
    let initial_val = evaluate(&model)?;
    let mut params = model.tensors();
    let mut opt = Adam::new(&params, config.lr);
    let mut best = (initial_val, 0, params.clone());
    let mut trace = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let size = config.sizes[(step - 1) % config.sizes.len()];
        let batch = Batch::draw(&[size], config.batch, config.seed, step as u64)?;
        let (loss, grads) = batch_loss(&model, ev, &config.weights, &batch, true)?;
        let grads = grads.expect("training pass returns gradients");
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(DesignError::Diverged { step });
        }
        opt.step(&mut params, &grads)?;
        model.set_tensors(&params);
        let val_loss = if step % config.val_every.max(1) == 0 || step == config.steps {
            let v = evaluate(&model)?;
            if v < best.0 {
                best = (v, step, params.clone());
            }
            log::debug!("designer step {step}: train {loss:.5} val {v:.5}");
            Some(v)
        } else {
            None
        };
        trace.push(TracePoint {
            step,
            train_loss: loss,
            val_loss,
        });
    }
    model.set_tensors(&best.2);
    Ok((
        model,
        TrainReport {
            initial_val,
            best_val: best.0,
            best_step: best.1,
            trace,
        },
    ))
}

/// Result of training one GCN order in the order comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub order: usize,
    pub node_width: usize,
    pub params: usize,
    pub final_train_loss: f64,
    pub best_val: f64,
}

/// Node width for `order` whose parameter count is closest to `target`.
pub fn width_for_params(base: &DesignerArch, order: usize, target: usize) -> usize {
    let count = |w: usize| {
        Designer::new(DesignerArch { order, node_width: w, ..*base }, DEFAULT_BAND, 0)
            .map(|d| d.param_count())
            .unwrap_or(usize::MAX)
    };
    (1..=4 * base.node_width.max(8))
        .min_by_key(|&w| (count(w) as i64 - target as i64).unsigned_abs())
        .expect("nonempty range")
}

/// Trains each order with identical data and seeds, widening lower orders so
/// every variant has about as many parameters as the highest-order one.
pub fn compare_gcn_orders(orders: &[usize], config: &DesignerTrainConfig, ev: &Evaluator, band: (f64, f64)) -> Result<Vec<OrderResult>, DesignError> {
    let top = *orders.iter().max().ok_or_else(|| DesignError::Config("no orders given".into()))?;
    let reference = Designer::new(DesignerArch { order: top, ..config.arch }, band, 0)?.param_count();
    let mut out = Vec::new();
    for &order in orders {
        let node_width = width_for_params(&config.arch, order, reference);
        let cfg = DesignerTrainConfig {
            arch: DesignerArch { order, node_width, ..config.arch },
            ..config.clone()
        };
        let (model, report) = train_designer(&cfg, ev, band)?;
        out.push(OrderResult {
            order,
            node_width,
            params: model.param_count(),
            final_train_loss: report.trailing_train_loss(0.05),
            best_val: report.best_val,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensors_round_trip_through_setter() {
        let d = Designer::new(DesignerArch::desk(), DEFAULT_BAND, 3).unwrap();
        let mut e = Designer::new(DesignerArch::desk(), DEFAULT_BAND, 4).unwrap();
        assert_ne!(d, e);
        e.set_tensors(&d.tensors());
        assert_eq!(d, e);
    }

    #[test]
    fn trial_streams_are_nested() {
        assert_eq!(trial_inputs(5, 9, 3), trial_inputs(5, 9, 3));
        assert_ne!(trial_inputs(5, 9, 3), trial_inputs(5, 9, 4));
    }

    #[test]
    fn default_batches_follow_scale() {
        let got: Vec<usize> = [32, 54, 103, 218, 450, 870].map(default_batch_for).to_vec();
        assert_eq!(got, vec![512, 512, 512, 64, 8, 2]);
    }
}
