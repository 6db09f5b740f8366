//! Node and edge frequencies for one coupling graph.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CouplingGraph;

/// Default tunable range of the qubits, GHz.
pub const DEFAULT_BAND: (f64, f64) = (4.9, 5.1);

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("expected {expected} node frequencies, got {got}")]
    NodeCount { expected: usize, got: usize },
    #[error("expected {expected} edge frequencies, got {got}")]
    EdgeCount { expected: usize, got: usize },
    #[error("node {node} frequency {freq} GHz outside band [{lo}, {hi}]")]
    NodeOutOfBand { node: usize, freq: f64, lo: f64, hi: f64 },
    #[error("edge {a}-{b} frequency {freq} GHz outside its endpoint interval")]
    EdgeOutOfRange { a: usize, b: usize, freq: f64 },
    #[error("missing frequency for edge {0}")]
    MissingEdge(String),
    #[error("malformed edge key `{0}`")]
    BadKey(String),
    #[error("assignment json: {0}")]
    Json(String),
}

/// `node_ghz[i]` is the idle frequency of qubit `i`; `edge_ghz[e]` is the
/// common frequency both endpoints of `graph.edges()[e]` tune to for a gate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyAssignment {
    pub node_ghz: Vec<f64>,
    pub edge_ghz: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentJson {
    node_ghz: Vec<f64>,
    edge_ghz: BTreeMap<String, f64>,
}

impl FrequencyAssignment {
    /// Nodes uniform in the band, each edge uniform between its endpoints.
    pub fn uniform(graph: &CouplingGraph, band: (f64, f64), rng: &mut impl Rng) -> Self {
        let node_ghz: Vec<f64> = (0..graph.node_count()).map(|_| rng.gen_range(band.0..=band.1)).collect();
        let edge_ghz = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let t: f64 = rng.gen();
                node_ghz[a] + t * (node_ghz[b] - node_ghz[a])
            })
            .collect();
        Self { node_ghz, edge_ghz }
    }

    /// Builds an assignment from normalized coordinates: node values are
    /// fractions of the band, edge values convex weights toward the second
    /// endpoint. Inputs are clipped to `[0, 1]`.
    pub fn from_unit(graph: &CouplingGraph, band: (f64, f64), node_u: &[f64], edge_t: &[f64]) -> Self {
        let node_ghz: Vec<f64> = node_u.iter().map(|u| band.0 + (band.1 - band.0) * u.clamp(0.0, 1.0)).collect();
        let edge_ghz = graph
            .edges()
            .iter()
            .zip(edge_t)
            .map(|(&(a, b), t)| {
                let t = t.clamp(0.0, 1.0);
                (1.0 - t) * node_ghz[a] + t * node_ghz[b]
            })
            .collect();
        Self { node_ghz, edge_ghz }
    }

    pub fn validate(&self, graph: &CouplingGraph, band: (f64, f64)) -> Result<(), AssignmentError> {
        self.check_shape(graph)?;
        const TOL: f64 = 1e-12;
        for (node, &freq) in self.node_ghz.iter().enumerate() {
            if !(freq >= band.0 - TOL && freq <= band.1 + TOL) {
                return Err(AssignmentError::NodeOutOfBand {
                    node,
                    freq,
                    lo: band.0,
                    hi: band.1,
                });
            }
        }
        for (&(a, b), &freq) in graph.edges().iter().zip(&self.edge_ghz) {
            let (lo, hi) = min_max(self.node_ghz[a], self.node_ghz[b]);
            if !(freq >= lo - TOL && freq <= hi + TOL) {
                return Err(AssignmentError::EdgeOutOfRange { a, b, freq });
            }
        }
        Ok(())
    }

    pub fn check_shape(&self, graph: &CouplingGraph) -> Result<(), AssignmentError> {
        if self.node_ghz.len() != graph.node_count() {
            return Err(AssignmentError::NodeCount {
                expected: graph.node_count(),
                got: self.node_ghz.len(),
            });
        }
        if self.edge_ghz.len() != graph.edge_count() {
            return Err(AssignmentError::EdgeCount {
                expected: graph.edge_count(),
                got: self.edge_ghz.len(),
            });
        }
        Ok(())
    }

    /// Assignment for `graph.relabel(perm)`, which keeps edge order.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut node_ghz = vec![0.0; self.node_ghz.len()];
        for (old, &new) in perm.iter().enumerate() {
            node_ghz[new] = self.node_ghz[old];
        }
        Self {
            node_ghz,
            edge_ghz: self.edge_ghz.clone(),
        }
    }

    pub fn to_json(&self, graph: &CouplingGraph) -> String {
        let doc = AssignmentJson {
            node_ghz: self.node_ghz.clone(),
            edge_ghz: graph
                .edges()
                .iter()
                .zip(&self.edge_ghz)
                .map(|(&(a, b), &f)| (format!("{a}-{b}"), f))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("assignment serializes")
    }

    pub fn from_json(graph: &CouplingGraph, doc: &str) -> Result<Self, AssignmentError> {
        let parsed: AssignmentJson = serde_json::from_str(doc).map_err(|e| AssignmentError::Json(e.to_string()))?;
        let mut lookup = BTreeMap::new();
        for (key, f) in &parsed.edge_ghz {
            let (a, b) = key.split_once('-').ok_or_else(|| AssignmentError::BadKey(key.clone()))?;
            let a: usize = a.trim().parse().map_err(|_| AssignmentError::BadKey(key.clone()))?;
            let b: usize = b.trim().parse().map_err(|_| AssignmentError::BadKey(key.clone()))?;
            lookup.insert((a.min(b), a.max(b)), *f);
        }
        let edge_ghz = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                lookup
                    .get(&(a.min(b), a.max(b)))
                    .copied()
                    .ok_or_else(|| AssignmentError::MissingEdge(format!("{a}-{b}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let out = Self {
            node_ghz: parsed.node_ghz,
            edge_ghz,
        };
        out.check_shape(graph)?;
        Ok(out)
    }
}

pub(crate) fn min_max(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_assignment_is_valid() {
        let g = CouplingGraph::grid(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = FrequencyAssignment::uniform(&g, DEFAULT_BAND, &mut rng);
        a.validate(&g, DEFAULT_BAND).unwrap();
    }

    #[test]
    fn json_round_trip() {
        let g = CouplingGraph::chain(3);
        let a = FrequencyAssignment {
            node_ghz: vec![4.95, 5.0, 5.05],
            edge_ghz: vec![4.97, 5.02],
        };
        let doc = a.to_json(&g);
        assert!(doc.contains("\"0-1\""));
        assert_eq!(FrequencyAssignment::from_json(&g, &doc).unwrap(), a);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let g = CouplingGraph::chain(2);
        let a = FrequencyAssignment {
            node_ghz: vec![4.95, 5.0],
            edge_ghz: vec![5.01],
        };
        assert!(matches!(a.validate(&g, DEFAULT_BAND), Err(AssignmentError::EdgeOutOfRange { .. })));
    }
}
