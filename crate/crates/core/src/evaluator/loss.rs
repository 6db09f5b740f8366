use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use super::features::{featurize_single, featurize_two, FeatureScale, SINGLE_FEATURES, TWO_FEATURES};
use super::{EvalError, Evaluator};
use crate::assignment::FrequencyAssignment;
use crate::graph::{compute_hop_distances, CouplingGraph, DEFAULT_MAX_ORDER};
use crate::sim::OpKind;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub x: f64,
    pub y: f64,
    pub xy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { x: 1.0, y: 1.0, xy: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), EvalError> {
        if [self.x, self.y, self.xy].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(EvalError::Assignment(format!("loss weights must be nonnegative, got {self:?}")))
        }
    }
}

/// Node `source` driven, node `target` watched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleTerm {
    pub source: usize,
    pub target: usize,
    pub dist: u32,
    pub coef: f64,
}

/// Gate on `edge = (i, j)`, node `target` watched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTerm {
    pub edge: usize,
    pub i: usize,
    pub j: usize,
    pub target: usize,
    pub dik: u32,
    pub djk: u32,
    pub coef: f64,
}

/// Every (source, target) pair within four hops, with per-term averaging
/// coefficients and reverse indices from nodes and edges to the terms they
/// influence. Several graphs can share one term list (block batching); each
/// graph's terms are then additionally divided by the number of graphs.
#[derive(Debug, Clone)]
pub struct LossTerms {
    nodes: usize,
    edges: usize,
    pub single: Vec<SingleTerm>,
    pub two: Vec<TwoTerm>,
    node_single: Vec<Vec<usize>>,
    node_two: Vec<Vec<usize>>,
    edge_two: Vec<Vec<usize>>,
}

/// Unweighted per-operation averages; the loss is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rx: f64,
    pub ry: f64,
    pub rxy: f64,
}

impl LossBreakdown {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.x * self.rx + w.y * self.ry + w.xy * self.rxy
    }
}

impl LossTerms {
    pub fn new(graph: &CouplingGraph) -> Self {
        Self::batch(&[graph])
    }

    /// Terms of the disjoint union of `graphs`, nodes and edges numbered
    /// graph by graph.
    pub fn batch(graphs: &[&CouplingGraph]) -> Self {
        let share = 1.0 / graphs.len().max(1) as f64;
        let mut out = Self {
            nodes: 0,
            edges: 0,
            single: Vec::new(),
            two: Vec::new(),
            node_single: Vec::new(),
            node_two: Vec::new(),
            edge_two: Vec::new(),
        };
        let max = DEFAULT_MAX_ORDER as u32;
        for g in graphs {
            let (n0, e0) = (out.nodes, out.edges);
            let n = g.node_count();
            let powers = compute_hop_distances(g, DEFAULT_MAX_ORDER);
            let c1 = share / n.max(1) as f64;
            for i in 0..n {
                for k in 0..n {
                    let d = powers.dist(i, k);
                    if k != i && d <= max {
                        out.single.push(SingleTerm {
                            source: n0 + i,
                            target: n0 + k,
                            dist: d,
                            coef: c1,
                        });
                    }
                }
            }
            let c2 = share / g.edge_count().max(1) as f64;
            for (e, &(i, j)) in g.edges().iter().enumerate() {
                for k in 0..n {
                    let (dik, djk) = (powers.dist(i, k), powers.dist(j, k));
                    if k != i && k != j && dik.max(djk) <= max {
                        out.two.push(TwoTerm {
                            edge: e0 + e,
                            i: n0 + i,
                            j: n0 + j,
                            target: n0 + k,
                            dik,
                            djk,
                            coef: c2,
                        });
                    }
                }
            }
            out.nodes += n;
            out.edges += g.edge_count();
        }
        out.node_single = vec![Vec::new(); out.nodes];
        out.node_two = vec![Vec::new(); out.nodes];
        out.edge_two = vec![Vec::new(); out.edges];
        for (t, s) in out.single.iter().enumerate() {
            out.node_single[s.source].push(t);
            out.node_single[s.target].push(t);
        }
        for (t, s) in out.two.iter().enumerate() {
            for v in [s.i, s.j, s.target] {
                out.node_two[v].push(t);
            }
            out.edge_two[s.edge].push(t);
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    fn check(&self, a: &FrequencyAssignment) -> Result<(), EvalError> {
        if a.node_ghz.len() != self.nodes || a.edge_ghz.len() != self.edges {
            return Err(EvalError::Assignment(format!(
                "need {} node and {} edge frequencies, got {} and {}",
                self.nodes,
                self.edges,
                a.node_ghz.len(),
                a.edge_ghz.len()
            )));
        }
        Ok(())
    }

    fn single_rows(&self, idx: &[usize], a: &FrequencyAssignment, scale: &FeatureScale) -> Result<Tensor, EvalError> {
        let mut data = Vec::with_capacity(idx.len() * SINGLE_FEATURES);
        for &t in idx {
            let s = &self.single[t];
            data.extend(featurize_single(scale, a.node_ghz[s.source], a.node_ghz[s.target], s.dist)?);
        }
        Ok(Tensor::new(idx.len(), SINGLE_FEATURES, data)?)
    }

    fn two_rows(&self, idx: &[usize], a: &FrequencyAssignment, scale: &FeatureScale, swapped: bool) -> Result<Tensor, EvalError> {
        let mut data = Vec::with_capacity(idx.len() * TWO_FEATURES);
        for &t in idx {
            let s = &self.two[t];
            let (wi, wj, wij, wk) = (a.node_ghz[s.i], a.node_ghz[s.j], a.edge_ghz[s.edge], a.node_ghz[s.target]);
            data.extend(if swapped {
                featurize_two(scale, wj, wi, wij, wk, s.djk, s.dik)?
            } else {
                featurize_two(scale, wi, wj, wij, wk, s.dik, s.djk)?
            });
        }
        Ok(Tensor::new(idx.len(), TWO_FEATURES, data)?)
    }

    /// Linear errors of the listed single terms under `op`.
    fn single_linear(&self, ev: &Evaluator, op: OpKind, idx: &[usize], a: &FrequencyAssignment) -> Result<Vec<f64>, EvalError> {
        if idx.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.single_rows(idx, a, &ev.scale)?;
        Ok(ev.predict(op, &x)?.into_iter().map(to_linear).collect())
    }

    /// Linear gate errors, averaged over both endpoint orders because edges
    /// carry no orientation.
    fn two_linear(&self, ev: &Evaluator, idx: &[usize], a: &FrequencyAssignment) -> Result<Vec<f64>, EvalError> {
        if idx.is_empty() {
            return Ok(Vec::new());
        }
        let fwd = ev.predict(OpKind::Rxy, &self.two_rows(idx, a, &ev.scale, false)?)?;
        let rev = ev.predict(OpKind::Rxy, &self.two_rows(idx, a, &ev.scale, true)?)?;
        Ok(fwd.into_iter().zip(rev).map(|(p, q)| (to_linear(p) + to_linear(q)) * 0.5).collect())
    }

    /// Indices of the single and gate terms whose nodes all lie in `region`.
    pub fn terms_within(&self, region: &[bool]) -> (Vec<usize>, Vec<usize>) {
        let single = (0..self.single.len())
            .filter(|&t| region[self.single[t].source] && region[self.single[t].target])
            .collect();
        let two = (0..self.two.len())
            .filter(|&t| {
                let s = &self.two[t];
                region[s.i] && region[s.j] && region[s.target]
            })
            .collect();
        (single, two)
    }

    /// Weighted loss over the listed terms only.
    pub fn partial_loss(&self, single: &[usize], two: &[usize], a: &FrequencyAssignment, ev: &Evaluator, w: &LossWeights) -> Result<f64, EvalError> {
        self.check(a)?;
        let x = self.single_linear(ev, OpKind::Rx, single, a)?;
        let y = self.single_linear(ev, OpKind::Ry, single, a)?;
        let xy = self.two_linear(ev, two, a)?;
        let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
        for (k, &t) in single.iter().enumerate() {
            sx += self.single[t].coef * x[k];
            sy += self.single[t].coef * y[k];
        }
        for (k, &t) in two.iter().enumerate() {
            sxy += self.two[t].coef * xy[k];
        }
        Ok(LossBreakdown { rx: sx, ry: sy, rxy: sxy }.total(w))
    }

    pub fn breakdown(&self, a: &FrequencyAssignment, ev: &Evaluator) -> Result<LossBreakdown, EvalError> {
        self.check(a)?;
        let all1: Vec<usize> = (0..self.single.len()).collect();
        let all2: Vec<usize> = (0..self.two.len()).collect();
        let weigh1 = |lin: Vec<f64>| lin.iter().zip(&self.single).map(|(l, s)| s.coef * l).sum::<f64>();
        Ok(LossBreakdown {
            rx: weigh1(self.single_linear(ev, OpKind::Rx, &all1, a)?),
            ry: weigh1(self.single_linear(ev, OpKind::Ry, &all1, a)?),
            rxy: self
                .two_linear(ev, &all2, a)?
                .iter()
                .zip(&self.two)
                .map(|(l, s)| s.coef * l)
                .sum(),
        })
    }
}

fn to_linear(log10: f64) -> f64 {
    (log10 * LN_10).exp()
}

/// Weighted average crosstalk over every operation and nearby target.
pub fn graph_loss(terms: &LossTerms, a: &FrequencyAssignment, ev: &Evaluator, w: &LossWeights) -> Result<f64, EvalError> {
    Ok(terms.breakdown(a, ev)?.total(w))
}

/// Differentiable [`graph_loss`]: `node_ghz` is N×1, `edge_ghz` is E×1.
pub fn graph_loss_tape<'a>(
    tape: &mut Tape<'a>,
    terms: &LossTerms,
    node_ghz: Var,
    edge_ghz: Var,
    ev: &Evaluator,
    w: &LossWeights,
) -> Result<Var, EvalError> {
    if tape.shape(node_ghz) != (terms.nodes, 1) || tape.shape(edge_ghz) != (terms.edges, 1) {
        return Err(EvalError::Assignment(format!(
            "need {}×1 node and {}×1 edge tensors, got {:?} and {:?}",
            terms.nodes,
            terms.edges,
            tape.shape(node_ghz),
            tape.shape(edge_ghz)
        )));
    }
    let scale = ev.scale;
    let inv = scale.inv_span();
    let freq = |tape: &mut Tape<'a>, v: Var| {
        let shifted = tape.add_scalar(v, -scale.lo);
        tape.scale(shifted, inv)
    };
    let delta = |tape: &mut Tape<'a>, a: Var, b: Var| -> Result<Var, EvalError> {
        let d = tape.sub(a, b)?;
        Ok(tape.scale(d, inv))
    };
    let onehot = |dists: &[u32]| Tensor::from_fn(dists.len(), 4, |r, c| if dists[r] as usize == c + 1 { 1.0 } else { 0.0 });
    let linear = |tape: &mut Tape<'a>, op: OpKind, x: Var| -> Result<Var, EvalError> {
        let p = ev.predict_tape(tape, op, x)?;
        let p = tape.scale(p, LN_10);
        Ok(tape.exp(p))
    };
    let weighted_sum = |tape: &mut Tape<'a>, lin: Var, coefs: Vec<f64>| -> Result<Var, EvalError> {
        let c = tape.constant(Tensor::column(coefs));
        let m = tape.mul(lin, c)?;
        Ok(tape.sum_all(m))
    };

    let mut parts = Vec::new();
    if !terms.single.is_empty() {
        let src: Vec<usize> = terms.single.iter().map(|s| s.source).collect();
        let tgt: Vec<usize> = terms.single.iter().map(|s| s.target).collect();
        let dist: Vec<u32> = terms.single.iter().map(|s| s.dist).collect();
        let coefs: Vec<f64> = terms.single.iter().map(|s| s.coef).collect();
        let fi = tape.gather_rows(node_ghz, &src)?;
        let fk = tape.gather_rows(node_ghz, &tgt)?;
        let c0 = freq(tape, fi);
        let c1 = freq(tape, fk);
        let c2 = delta(tape, fi, fk)?;
        let oh = tape.constant(onehot(&dist));
        let x = tape.concat_cols(&[c0, c1, c2, oh])?;
        for (op, weight) in [(OpKind::Rx, w.x), (OpKind::Ry, w.y)] {
            let lin = linear(tape, op, x)?;
            let s = weighted_sum(tape, lin, coefs.clone())?;
            parts.push(tape.scale(s, weight));
        }
    }
    if !terms.two.is_empty() {
        let pick = |f: fn(&TwoTerm) -> usize| terms.two.iter().map(f).collect::<Vec<_>>();
        let wi = tape.gather_rows(node_ghz, &pick(|s| s.i))?;
        let wj = tape.gather_rows(node_ghz, &pick(|s| s.j))?;
        let wk = tape.gather_rows(node_ghz, &pick(|s| s.target))?;
        let wij = tape.gather_rows(edge_ghz, &pick(|s| s.edge))?;
        let dik: Vec<u32> = terms.two.iter().map(|s| s.dik).collect();
        let djk: Vec<u32> = terms.two.iter().map(|s| s.djk).collect();
        let (ni, nj, nij, nk) = (freq(tape, wi), freq(tape, wj), freq(tape, wij), freq(tape, wk));
        let d_ij = delta(tape, wi, wj)?;
        let d_ji = delta(tape, wj, wi)?;
        let d_ik = delta(tape, wi, wk)?;
        let d_jk = delta(tape, wj, wk)?;
        let d_iji = delta(tape, wij, wi)?;
        let d_ijj = delta(tape, wij, wj)?;
        let d_ijk = delta(tape, wij, wk)?;
        let oh_i = tape.constant(onehot(&dik));
        let oh_j = tape.constant(onehot(&djk));
        let fwd = tape.concat_cols(&[ni, nj, nij, nk, d_ij, d_ik, d_jk, d_iji, d_ijj, d_ijk, oh_i, oh_j])?;
        let rev = tape.concat_cols(&[nj, ni, nij, nk, d_ji, d_jk, d_ik, d_ijj, d_iji, d_ijk, oh_j, oh_i])?;
        let lf = linear(tape, OpKind::Rxy, fwd)?;
        let lr = linear(tape, OpKind::Rxy, rev)?;
        let both = tape.add(lf, lr)?;
        let lin = tape.scale(both, 0.5);
        let s = weighted_sum(tape, lin, terms.two.iter().map(|s| s.coef).collect())?;
        parts.push(tape.scale(s, w.xy));
    }
    let mut total = match parts.first() {
        Some(&p) => p,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    for &p in parts.iter().skip(1) {
        total = tape.add(total, p)?;
    }
    Ok(total)
}

/// Pending re-evaluation of the terms touched by a candidate move.
#[derive(Debug, Clone)]
pub struct Trial {
    pub total: f64,
    single: Vec<usize>,
    x: Vec<f64>,
    y: Vec<f64>,
    two: Vec<usize>,
    xy: Vec<f64>,
}

/// Loss bookkeeping for local search: re-evaluates only the terms that read
/// a changed node or edge.
#[derive(Debug, Clone)]
pub struct IncrementalLoss<'a> {
    terms: &'a LossTerms,
    ev: &'a Evaluator,
    weights: LossWeights,
    current: FrequencyAssignment,
    lin_x: Vec<f64>,
    lin_y: Vec<f64>,
    lin_xy: Vec<f64>,
    total: f64,
    mark1: Vec<u64>,
    mark2: Vec<u64>,
    stamp: u64,
    evaluations: usize,
}

impl<'a> IncrementalLoss<'a> {
    pub fn new(terms: &'a LossTerms, ev: &'a Evaluator, weights: LossWeights, start: FrequencyAssignment) -> Result<Self, EvalError> {
        terms.check(&start)?;
        let all1: Vec<usize> = (0..terms.single.len()).collect();
        let all2: Vec<usize> = (0..terms.two.len()).collect();
        let mut out = Self {
            terms,
            ev,
            weights,
            lin_x: terms.single_linear(ev, OpKind::Rx, &all1, &start)?,
            lin_y: terms.single_linear(ev, OpKind::Ry, &all1, &start)?,
            lin_xy: terms.two_linear(ev, &all2, &start)?,
            current: start,
            total: 0.0,
            mark1: vec![0; terms.single.len()],
            mark2: vec![0; terms.two.len()],
            stamp: 0,
            evaluations: 1,
        };
        out.total = out.recompute();
        Ok(out)
    }

    fn recompute(&self) -> f64 {
        let t = self.terms;
        let (mut x, mut y, mut xy) = (0.0, 0.0, 0.0);
        for (k, s) in t.single.iter().enumerate() {
            x += s.coef * self.lin_x[k];
            y += s.coef * self.lin_y[k];
        }
        for (k, s) in t.two.iter().enumerate() {
            xy += s.coef * self.lin_xy[k];
        }
        LossBreakdown { rx: x, ry: y, rxy: xy }.total(&self.weights)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn assignment(&self) -> &FrequencyAssignment {
        &self.current
    }

    pub fn into_assignment(self) -> FrequencyAssignment {
        self.current
    }

    /// Number of (full or partial) loss evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Loss of `candidate`, which must differ from the current assignment
    /// only at `nodes` and `edges`.
    pub fn trial(&mut self, candidate: &FrequencyAssignment, nodes: &[usize], edges: &[usize]) -> Result<Trial, EvalError> {
        self.terms.check(candidate)?;
        self.stamp += 1;
        let stamp = self.stamp;
        let mut single = Vec::new();
        let mut two = Vec::new();
        for &n in nodes {
            for &t in &self.terms.node_single[n] {
                if self.mark1[t] != stamp {
                    self.mark1[t] = stamp;
                    single.push(t);
                }
            }
            for &t in &self.terms.node_two[n] {
                if self.mark2[t] != stamp {
                    self.mark2[t] = stamp;
                    two.push(t);
                }
            }
        }
        for &e in edges {
            for &t in &self.terms.edge_two[e] {
                if self.mark2[t] != stamp {
                    self.mark2[t] = stamp;
                    two.push(t);
                }
            }
        }
        let x = self.terms.single_linear(self.ev, OpKind::Rx, &single, candidate)?;
        let y = self.terms.single_linear(self.ev, OpKind::Ry, &single, candidate)?;
        let xy = self.terms.two_linear(self.ev, &two, candidate)?;
        let w = &self.weights;
        let mut delta = 0.0;
        for (k, &t) in single.iter().enumerate() {
            let c = self.terms.single[t].coef;
            delta += c * (w.x * (x[k] - self.lin_x[t]) + w.y * (y[k] - self.lin_y[t]));
        }
        for (k, &t) in two.iter().enumerate() {
            delta += self.terms.two[t].coef * w.xy * (xy[k] - self.lin_xy[t]);
        }
        self.evaluations += 1;
        Ok(Trial {
            total: self.total + delta,
            single,
            x,
            y,
            two,
            xy,
        })
    }

    pub fn commit(&mut self, candidate: FrequencyAssignment, trial: Trial) {
        for (k, &t) in trial.single.iter().enumerate() {
            self.lin_x[t] = trial.x[k];
            self.lin_y[t] = trial.y[k];
        }
        for (k, &t) in trial.two.iter().enumerate() {
            self.lin_xy[t] = trial.xy[k];
        }
        self.current = candidate;
        self.total = self.recompute();
    }
}
