use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{BenchSection, HarnessError};
use crate::baselines::{direct_optim, grad_alg, snake, SnakeSettings, WindowScoring};
use crate::designer::{batched_design, default_batch_for, sample_graph_with, Designer};
use crate::evaluator::{Evaluator, EvaluatorKind, LossWeights};
use crate::graph::MediumGraphSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Designer,
    Snake,
    /// Snake with incremental window scoring.
    SnakeIncremental,
    Direct,
    Grad,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Designer => "designer",
            Method::Snake => "snake",
            Method::SnakeIncremental => "snake_incremental",
            Method::Direct => "direct",
            Method::Grad => "grad",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Designer, Method::Snake, Method::SnakeIncremental, Method::Direct, Method::Grad]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// One (method, graph) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub scale: usize,
    pub seed: u64,
    pub nodes: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Summary of one method at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub scale: usize,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub mean_loss: Option<f64>,
    pub std_loss: Option<f64>,
    pub mean_wall_ms: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub evaluator: EvaluatorKind,
    pub weights: LossWeights,
    pub recipes: Vec<(usize, MediumGraphSpec)>,
    pub cells: Vec<BenchCell>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn cell(&self, method: Method, scale: usize) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.method == method && c.scale == scale)
    }
}

fn graph_seed(seed: u64, scale: usize, repeat: usize) -> u64 {
    seed.wrapping_mul(1_000_003) ^ ((scale as u64) << 32) ^ repeat as u64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Every enabled method on the same graphs, evaluator and weights. Cells
/// run one after another so timings do not interfere.
pub fn benchmark(
    cfg: &BenchSection,
    weights: &LossWeights,
    ev: &Evaluator,
    designer: Option<&Designer>,
    band: (f64, f64),
    seed: u64,
) -> Result<BenchReport, HarnessError> {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut recipes = Vec::new();
    for &scale in &cfg.scales {
        let recipe = cfg.recipe(scale);
        recipes.push((scale, recipe));
        let seeds: Vec<u64> = (0..cfg.repeats).map(|r| graph_seed(seed, scale, r)).collect();
        let graphs = seeds
            .iter()
            .map(|&s| sample_graph_with(&recipe, s))
            .collect::<Result<Vec<_>, _>>()?;
        for &method in &cfg.methods {
            let skip = match method {
                Method::Designer if designer.is_none() => Some("no trained designer supplied".to_string()),
                Method::Direct | Method::Grad => graphs
                    .iter()
                    .map(|g| g.node_count())
                    .max()
                    .filter(|&n| n > cfg.node_cap)
                    .map(|n| format!("graph with {n} nodes exceeds the node cap of {}", cfg.node_cap)),
                _ => None,
            };
            if let Some(reason) = skip {
                cells.push(BenchCell {
                    method,
                    scale,
                    repeats: cfg.repeats,
                    seeds: seeds.clone(),
                    mean_loss: None,
                    std_loss: None,
                    mean_wall_ms: None,
                    skipped: Some(reason),
                });
                continue;
            }
            let mut losses = Vec::new();
            let mut walls = Vec::new();
            for (r, (g, &s)) in graphs.iter().zip(&seeds).enumerate() {
                let run_seed = r as u64;
                let (loss, wall_ms) = match method {
                    Method::Designer => {
                        let model = designer.expect("checked above");
                        let batch = cfg.design_batch.unwrap_or_else(|| default_batch_for(scale));
                        let clock = Instant::now();
                        let (_, loss) = batched_design(model, g, ev, weights, batch, run_seed)?;
                        (loss, clock.elapsed().as_secs_f64() * 1e3)
                    }
                    Method::Snake | Method::SnakeIncremental => {
                        let settings = SnakeSettings {
                            scoring: if method == Method::Snake { cfg.snake.scoring } else { WindowScoring::Incremental },
                            ..cfg.snake.clone()
                        };
                        let (out, _) = snake(g, ev, weights, band, run_seed, &settings)?;
                        (out.loss, out.wall_ms)
                    }
                    Method::Direct => {
                        let out = direct_optim(g, ev, weights, band, run_seed, &cfg.powell)?;
                        (out.loss, out.wall_ms)
                    }
                    Method::Grad => {
                        let out = grad_alg(g, ev, weights, band, run_seed, &cfg.grad)?;
                        (out.loss, out.wall_ms)
                    }
                };
                log::info!("bench {} scale {scale} graph {s}: loss {loss:.5} in {wall_ms:.0} ms", method.name());
                losses.push(loss);
                walls.push(wall_ms);
                rows.push(BenchRow {
                    method,
                    scale,
                    seed: s,
                    nodes: g.node_count(),
                    loss,
                    wall_ms,
                });
            }
            let (m, sd) = mean_std(&losses);
            cells.push(BenchCell {
                method,
                scale,
                repeats: cfg.repeats,
                seeds: seeds.clone(),
                mean_loss: Some(m),
                std_loss: Some(sd),
                mean_wall_ms: Some(mean_std(&walls).0),
                skipped: None,
            });
        }
    }
    Ok(BenchReport {
        evaluator: ev.kind(),
        weights: *weights,
        recipes,
        cells,
        rows,
    })
}
