//! Staged, resumable run: datasets → evaluator → designer → benchmark.
//! Each stage records a key (hash of its settings and upstream artifacts)
//! and the hashes of its outputs; a stage whose key and outputs match the
//! manifest is reused instead of recomputed.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{bench, hash_file, io_err, read_json, read_text, sha256_hex, trace_rows, write_csv, write_text, HarnessError, RunConfig};
use crate::designer::{train_designer, Designer, TrainReport};
use crate::evaluator::{train_evaluator, Evaluator, EvaluatorKind, FeatureScale, MetricsReport};
use crate::graph::{small_training_graphs, GraphRole, NamedGraph};
use crate::sim::{generate_dataset, scale_holdout_dataset, Dataset, DatasetConfig, Simulator, SplitDataset};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub key: String,
    /// Output file name → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageEntry {
    key: String,
    outputs: BTreeMap<String, String>,
}

/// Artifact file names inside the output directory.
pub struct Artifacts;

impl Artifacts {
    pub const DATASET: &'static str = "dataset.jsonl";
    pub const DATASET_NEW: &'static str = "dataset_new.jsonl";
    pub const DATASET_HOLDOUT: &'static str = "dataset_holdout.jsonl";
    pub const EVALUATOR: &'static str = "evaluator.json";
    pub const EVALUATOR_METRICS: &'static str = "evaluator_metrics.json";
    pub const DESIGNER: &'static str = "designer.json";
    pub const DESIGNER_REPORT: &'static str = "designer_report.json";
    pub const DESIGNER_TRACE: &'static str = "designer_trace.csv";
    pub const BENCH: &'static str = "bench.json";
    pub const BENCH_CSV: &'static str = "bench.csv";
}

/// Datasets of one run: training graphs, held-out structures, long chain.
#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub train: Dataset,
    pub new_structure: Dataset,
    pub holdout: Dataset,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    manifest: Manifest,
    records: Vec<StageRecord>,
}

impl Pipeline {
    pub fn open(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        config.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|source| io_err(&out, source))?;
        let path = out.join(MANIFEST);
        let manifest = if path.exists() { read_json(&path)? } else { Manifest::default() };
        Ok(Self {
            config,
            out,
            manifest,
            records: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Stages executed or reused so far, in order.
    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    /// All four stages in order.
    pub fn run_all(&mut self) -> Result<Vec<StageRecord>, HarnessError> {
        self.bench()?;
        Ok(self.records.clone())
    }

    fn reusable(&self, stage: &str, key: &str) -> bool {
        let Some(entry) = self.manifest.stages.get(stage) else {
            return false;
        };
        entry.key == key
            && entry
                .outputs
                .iter()
                .all(|(name, hash)| hash_file(&self.path(name)).map_or(false, |h| &h == hash))
    }

    fn finish(&mut self, stage: &str, key: String, files: &[&str], status: StageStatus) -> Result<String, HarnessError> {
        let mut outputs = BTreeMap::new();
        for f in files {
            outputs.insert(f.to_string(), hash_file(&self.path(f))?);
        }
        self.manifest.stages.insert(
            stage.to_string(),
            StageEntry {
                key: key.clone(),
                outputs: outputs.clone(),
            },
        );
        write_text(&self.path(MANIFEST), &serde_json::to_string_pretty(&self.manifest)?)?;
        self.records.retain(|r| r.stage != stage);
        self.records.push(StageRecord {
            stage: stage.to_string(),
            status,
            key,
            outputs: outputs.clone(),
        });
        log::info!("stage {stage}: {status:?}");
        Ok(sha256_hex(serde_json::to_string(&outputs)?.as_bytes()))
    }

    fn key(&self, parts: &[&str]) -> String {
        sha256_hex(parts.join("\u{1f}").as_bytes())
    }

    /// Simulated datasets; returns them with the stage's output digest.
    pub fn datasets(&mut self) -> Result<(Datasets, String), HarnessError> {
        self.datasets_inner().map_err(|e| e.in_stage("dataset"))
    }

    fn datasets_inner(&mut self) -> Result<(Datasets, String), HarnessError> {
        let c = &self.config;
        let key = self.key(&[
            "dataset",
            &serde_json::to_string(&c.physics)?,
            &serde_json::to_string(&c.dataset)?,
            &c.seed.to_string(),
        ]);
        let mut files = vec![Artifacts::DATASET, Artifacts::DATASET_NEW];
        if c.dataset.holdout_samples > 0 {
            files.push(Artifacts::DATASET_HOLDOUT);
        }
        if self.reusable("dataset", &key) {
            let load = |name: &str| -> Result<Dataset, HarnessError> {
                if !files.contains(&name) {
                    return Ok(Dataset::default());
                }
                let path = self.path(name);
                let f = std::fs::File::open(&path).map_err(|source| io_err(&path, source))?;
                Dataset::read_jsonl(BufReader::new(f)).map_err(|message| HarnessError::Artifact { path, message })
            };
            let data = Datasets {
                train: load(Artifacts::DATASET)?,
                new_structure: load(Artifacts::DATASET_NEW)?,
                holdout: load(Artifacts::DATASET_HOLDOUT)?,
            };
            let digest = self.finish("dataset", key, &files, StageStatus::Reused)?;
            return Ok((data, digest));
        }
        let sim = Simulator::new(c.physics.clone());
        let graphs = small_training_graphs();
        let by_role = |role: GraphRole| -> Vec<NamedGraph> { graphs.iter().filter(|g| g.role == role).cloned().collect() };
        let train = generate_dataset(&sim, &by_role(GraphRole::Train), &DatasetConfig::new(c.dataset.samples_per_graph, c.seed))?;
        let new_structure = generate_dataset(
            &sim,
            &by_role(GraphRole::NewStructure),
            &DatasetConfig::new(c.dataset.new_structure_samples.max(1), c.seed.wrapping_add(1)),
        )?;
        let holdout = if c.dataset.holdout_samples > 0 {
            scale_holdout_dataset(&sim, c.dataset.holdout_chain, c.dataset.holdout_samples, c.seed.wrapping_add(2))?
        } else {
            Dataset::default()
        };
        write_text(&self.path(Artifacts::DATASET), &train.to_jsonl())?;
        write_text(&self.path(Artifacts::DATASET_NEW), &new_structure.to_jsonl())?;
        if c.dataset.holdout_samples > 0 {
            write_text(&self.path(Artifacts::DATASET_HOLDOUT), &holdout.to_jsonl())?;
        }
        let digest = self.finish("dataset", key, &files, StageStatus::Ran)?;
        Ok((
            Datasets {
                train,
                new_structure,
                holdout,
            },
            digest,
        ))
    }

    /// Trained (or supplied) evaluator with its metrics.
    pub fn evaluator(&mut self) -> Result<(Evaluator, MetricsReport, String), HarnessError> {
        self.evaluator_inner().map_err(|e| e.in_stage("evaluator"))
    }

    fn evaluator_inner(&mut self) -> Result<(Evaluator, MetricsReport, String), HarnessError> {
        let files = [Artifacts::EVALUATOR, Artifacts::EVALUATOR_METRICS];
        if let Some(src) = self.config.evaluator.pretrained.clone() {
            let text = read_text(&src)?;
            let ev = Evaluator::from_json(&text)?;
            let key = self.key(&["evaluator", "pretrained", &sha256_hex(text.as_bytes())]);
            write_text(&self.path(Artifacts::EVALUATOR), &text)?;
            write_text(&self.path(Artifacts::EVALUATOR_METRICS), "{}")?;
            let status = if self.reusable("evaluator", &key) { StageStatus::Reused } else { StageStatus::Ran };
            let digest = self.finish("evaluator", key, &files, status)?;
            return Ok((ev, MetricsReport::new(), digest));
        }
        let (data, upstream) = self.datasets()?;
        let c = &self.config;
        let key = self.key(&["evaluator", &serde_json::to_string(&c.evaluator)?, &c.seed.to_string(), &upstream]);
        if self.reusable("evaluator", &key) {
            let ev = Evaluator::from_json(&read_text(&self.path(Artifacts::EVALUATOR))?)?;
            let metrics: MetricsReport = read_json(&self.path(Artifacts::EVALUATOR_METRICS))?;
            let digest = self.finish("evaluator", key, &files, StageStatus::Reused)?;
            return Ok((ev, metrics, digest));
        }
        let mut split = data.train.split(c.dataset.split, c.seed.wrapping_add(3));
        if c.evaluator.kind == EvaluatorKind::Theory && c.evaluator.theory_fraction < 1.0 {
            split = SplitDataset {
                train: split.train.subsample(c.evaluator.theory_fraction, c.seed.wrapping_add(4)),
                ..split
            };
        }
        let mut extra: Vec<(&str, &Dataset)> = vec![("new_structure", &data.new_structure)];
        if !data.holdout.is_empty() {
            extra.push(("holdout_chain", &data.holdout));
        }
        let scale = FeatureScale::from_band(c.physics.qubit_band);
        let (ev, metrics) = train_evaluator(c.evaluator.kind, &split, &extra, scale, &c.evaluator.mlp, &c.evaluator.theory)?;
        write_text(&self.path(Artifacts::EVALUATOR), &ev.to_json())?;
        write_text(&self.path(Artifacts::EVALUATOR_METRICS), &serde_json::to_string_pretty(&metrics)?)?;
        let digest = self.finish("evaluator", key, &files, StageStatus::Ran)?;
        Ok((ev, metrics, digest))
    }

    /// Trained (or supplied) designer; the report is absent for a supplied model.
    pub fn designer(&mut self) -> Result<(Designer, Option<TrainReport>, Evaluator, String), HarnessError> {
        self.designer_inner().map_err(|e| e.in_stage("designer"))
    }

    fn designer_inner(&mut self) -> Result<(Designer, Option<TrainReport>, Evaluator, String), HarnessError> {
        let (ev, _, upstream) = self.evaluator()?;
        if let Some(src) = self.config.designer.pretrained.clone() {
            let text = read_text(&src)?;
            let model = Designer::from_json(&text)?;
            let key = self.key(&["designer", "pretrained", &sha256_hex(text.as_bytes())]);
            write_text(&self.path(Artifacts::DESIGNER), &text)?;
            let status = if self.reusable("designer", &key) { StageStatus::Reused } else { StageStatus::Ran };
            let digest = self.finish("designer", key, &[Artifacts::DESIGNER], status)?;
            return Ok((model, None, ev, digest));
        }
        let cfg = self.config.designer_train_config();
        let band = self.config.physics.qubit_band;
        let key = self.key(&["designer", &serde_json::to_string(&cfg)?, &serde_json::to_string(&band)?, &upstream]);
        let files = [Artifacts::DESIGNER, Artifacts::DESIGNER_REPORT, Artifacts::DESIGNER_TRACE];
        if self.reusable("designer", &key) {
            let model = Designer::from_json(&read_text(&self.path(Artifacts::DESIGNER))?)?;
            let report: TrainReport = read_json(&self.path(Artifacts::DESIGNER_REPORT))?;
            let digest = self.finish("designer", key, &files, StageStatus::Reused)?;
            return Ok((model, Some(report), ev, digest));
        }
        let (model, report) = train_designer(&cfg, &ev, band)?;
        write_text(&self.path(Artifacts::DESIGNER), &model.to_json())?;
        write_text(&self.path(Artifacts::DESIGNER_REPORT), &serde_json::to_string_pretty(&report)?)?;
        write_csv(&self.path(Artifacts::DESIGNER_TRACE), &trace_rows(&report))?;
        let digest = self.finish("designer", key, &files, StageStatus::Ran)?;
        Ok((model, Some(report), ev, digest))
    }

    /// Benchmark report over the configured scales and methods.
    pub fn bench(&mut self) -> Result<bench::BenchReport, HarnessError> {
        self.bench_inner().map_err(|e| e.in_stage("bench"))
    }

    fn bench_inner(&mut self) -> Result<bench::BenchReport, HarnessError> {
        let (model, _, ev, upstream) = self.designer()?;
        let c = &self.config;
        let key = self.key(&[
            "bench",
            &serde_json::to_string(&c.bench)?,
            &serde_json::to_string(&c.weights)?,
            &c.seed.to_string(),
            &upstream,
        ]);
        let files = [Artifacts::BENCH, Artifacts::BENCH_CSV];
        if self.reusable("bench", &key) {
            let report: bench::BenchReport = read_json(&self.path(Artifacts::BENCH))?;
            self.finish("bench", key, &files, StageStatus::Reused)?;
            return Ok(report);
        }
        let report = bench::benchmark(&c.bench, &c.weights, &ev, Some(&model), c.physics.qubit_band, c.seed)?;
        write_text(&self.path(Artifacts::BENCH), &serde_json::to_string_pretty(&report)?)?;
        write_csv(&self.path(Artifacts::BENCH_CSV), &report.rows)?;
        self.finish("bench", key, &files, StageStatus::Ran)?;
        Ok(report)
    }
}

/// Loads a dataset file written by the pipeline.
pub fn load_dataset(path: &Path) -> Result<Dataset, HarnessError> {
    let f = std::fs::File::open(path).map_err(|source| io_err(path, source))?;
    Dataset::read_jsonl(BufReader::new(f)).map_err(|message| HarnessError::Artifact {
        path: path.to_path_buf(),
        message,
    })
}
