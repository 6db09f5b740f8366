use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qfreq::assignment::FrequencyAssignment;
use qfreq::baselines::{direct_optim, grad_alg, snake, BaselineOutcome};
use qfreq::designer::{batched_design, default_batch_for, sample_graph_with, Designer};
use qfreq::evaluator::{graph_loss, Evaluator, LossTerms};
use qfreq::graph::{parse_any, to_json, CouplingGraph};
use qfreq::harness::{self, Artifacts, Pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "qfreq", version, about = "Crosstalk-aware frequency allocation for coupled qubits")]
struct Cli {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "qfreq-out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Direct,
    Grad,
    Snake,
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    ZzScan,
    Additivity,
    Locality,
    Resonance,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Rx3,
    Rxy5,
}

#[derive(Clone, Copy, ValueEnum)]
enum Export {
    Bench,
    Trace,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample random benchmark graphs into <out>/graphs.
    GenGraphs {
        #[arg(long, value_delimiter = ',', default_value = "32,54")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Simulate the evaluator datasets.
    GenDataset,
    /// Fit the evaluator on the datasets (simulating them if needed).
    TrainEvaluator,
    /// Train the designer against the evaluator.
    TrainDesigner,
    /// Best-of-N design for one graph.
    Design {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        designer: Option<PathBuf>,
        #[arg(long)]
        evaluator: Option<PathBuf>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Run one conventional allocator on one graph.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        evaluator: Option<PathBuf>,
    },
    /// Benchmark matrix over the configured scales and methods.
    Bench,
    /// Physics scans behind the supporting figures, as CSV.
    Probe {
        #[arg(long, value_enum)]
        kind: Probe,
        #[arg(long, value_enum, default_value = "rx3")]
        protocol: Protocol,
        #[arg(long, default_value_t = 21)]
        points: usize,
        /// Detuning half-range in GHz for additivity and resonance scans.
        #[arg(long, default_value_t = 0.05)]
        span: f64,
        /// Dataset for the locality table; defaults to the run's dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Tidy CSV from a finished run.
    Export {
        #[arg(long, value_enum)]
        what: Export,
    },
    /// Every stage in order, reusing artifacts whose inputs are unchanged.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": e.to_string(), "causes": causes }));
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_graph(path: &Path) -> Result<CouplingGraph> {
    Ok(parse_any(&harness::read_text(path)?)?)
}

fn artifact(out: &Path, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join(name))
}

fn emit(out: &Path, name: &str, graph: &CouplingGraph, a: &FrequencyAssignment, summary: serde_json::Value) -> Result<()> {
    let path = out.join(name);
    harness::write_text(&path, &a.to_json(graph))?;
    println!("{}", json!({ "assignment": path, "summary": summary }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.cmd {
        Cmd::GenGraphs { scales, count } => {
            for scale in scales {
                let recipe = cfg.bench.recipe(scale);
                for k in 0..count {
                    let g = sample_graph_with(&recipe, cfg.seed.wrapping_add(k as u64) ^ ((scale as u64) << 32))?;
                    let path = out.join("graphs").join(format!("graph_{scale}_{k}.json"));
                    harness::write_text(&path, &to_json(&g))?;
                    println!("{}", json!({ "path": path, "nodes": g.node_count(), "edges": g.edge_count() }));
                }
            }
        }
        Cmd::GenDataset => {
            let mut p = Pipeline::open(cfg, &out)?;
            let (d, _) = p.datasets()?;
            println!(
                "{}",
                json!({ "train": d.train.len(), "new_structure": d.new_structure.len(), "holdout": d.holdout.len(), "stages": p.records() })
            );
        }
        Cmd::TrainEvaluator => {
            let mut p = Pipeline::open(cfg, &out)?;
            let (_, metrics, _) = p.evaluator()?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Cmd::TrainDesigner => {
            let mut p = Pipeline::open(cfg, &out)?;
            let (model, report, _, _) = p.designer()?;
            let summary = report.map(|r| json!({ "initial_val": r.initial_val, "best_val": r.best_val, "best_step": r.best_step }));
            println!("{}", json!({ "params": model.param_count(), "training": summary, "stages": p.records() }));
        }
        Cmd::Design {
            graph,
            designer,
            evaluator,
            batch,
        } => {
            let g = load_graph(&graph)?;
            let model = Designer::from_json(&harness::read_text(&artifact(&out, &designer, Artifacts::DESIGNER))?)?;
            let ev = Evaluator::from_json(&harness::read_text(&artifact(&out, &evaluator, Artifacts::EVALUATOR))?)?;
            let batch = batch.unwrap_or_else(|| default_batch_for(g.node_count()));
            let clock = Instant::now();
            let (a, loss) = batched_design(&model, &g, &ev, &cfg.weights, batch, cfg.seed)?;
            let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            emit(&out, "design.json", &g, &a, json!({ "loss": loss, "wall_ms": wall_ms, "batch": batch }))?;
        }
        Cmd::Baseline { method, graph, evaluator } => {
            let g = load_graph(&graph)?;
            let ev = Evaluator::from_json(&harness::read_text(&artifact(&out, &evaluator, Artifacts::EVALUATOR))?)?;
            let band = cfg.physics.qubit_band;
            let b = &cfg.bench;
            let outcome: BaselineOutcome = match method {
                BaselineMethod::Direct => direct_optim(&g, &ev, &cfg.weights, band, cfg.seed, &b.powell)?,
                BaselineMethod::Grad => grad_alg(&g, &ev, &cfg.weights, band, cfg.seed, &b.grad)?,
                BaselineMethod::Snake => snake(&g, &ev, &cfg.weights, band, cfg.seed, &b.snake)?.0,
            };
            let check = graph_loss(&LossTerms::new(&g), &outcome.assignment, &ev, &cfg.weights)?;
            if (check - outcome.loss).abs() > 1e-9 * check.abs().max(1e-12) {
                bail!("reported loss {} disagrees with re-evaluation {check}", outcome.loss);
            }
            let summary: serde_json::Value = serde_json::from_str(&outcome.summary_json())?;
            emit(&out, "baseline.json", &g, &outcome.assignment, summary)?;
        }
        Cmd::Bench => {
            let mut p = Pipeline::open(cfg, &out)?;
            let report = p.bench()?;
            println!("{}", serde_json::to_string_pretty(&report.cells)?);
        }
        Cmd::Probe {
            kind,
            protocol,
            points,
            span,
            dataset,
        } => {
            let params = &cfg.physics;
            let (name, csv) = match kind {
                Probe::ZzScan => ("zz_scan", harness::to_csv(&harness::zz_scan(params, points))?),
                Probe::Additivity => {
                    let proto = match protocol {
                        Protocol::Rx3 => harness::AdditivityProtocol::Rx3,
                        Protocol::Rxy5 => harness::AdditivityProtocol::Rxy5,
                    };
                    ("additivity", harness::to_csv(&harness::additivity_scan(params, proto, span, points)?)?)
                }
                Probe::Resonance => ("resonance", harness::to_csv(&harness::resonance_scan(params, span, points)?)?),
                Probe::Locality => {
                    let path = artifact(&out, &dataset, Artifacts::DATASET);
                    if !path.exists() {
                        return Err(anyhow!("no dataset at {}; run gen-dataset first", path.display()));
                    }
                    ("locality", harness::to_csv(&harness::locality_table(&harness::load_dataset(&path)?))?)
                }
            };
            let path = out.join(format!("probe_{name}.csv"));
            harness::write_text(&path, &csv)?;
            print!("{csv}");
        }
        Cmd::Export { what } => {
            let (src, dst, csv) = match what {
                Export::Bench => {
                    let src = out.join(Artifacts::BENCH);
                    let report: harness::BenchReport = harness::read_json(&src)?;
                    (src, out.join(Artifacts::BENCH_CSV), harness::to_csv(&report.rows)?)
                }
                Export::Trace => {
                    let src = out.join(Artifacts::DESIGNER_REPORT);
                    let report: qfreq::designer::TrainReport = harness::read_json(&src)?;
                    (src, out.join(Artifacts::DESIGNER_TRACE), harness::to_csv(&harness::trace_rows(&report))?)
                }
            };
            harness::write_text(&dst, &csv)?;
            println!("{}", json!({ "from": src, "csv": dst }));
        }
        Cmd::Run => {
            let mut p = Pipeline::open(cfg, &out)?;
            let records = p.run_all()?;
            println!("{}", serde_json::to_string_pretty(&records)?);
        }
    }
    Ok(())
}
