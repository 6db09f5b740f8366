//! End-to-end driver: run configuration, resumable pipeline stages,
//! benchmark matrix, physics probes and tidy CSV exports.

mod bench;
mod pipeline;
mod probe;

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{BaselineError, GradSettings, PowellSettings, SnakeSettings};
use crate::designer::{DesignError, DesignerTrainConfig};
use crate::evaluator::{EvalError, EvaluatorKind, LossWeights, MlpTrainConfig, TheoryTrainConfig};
use crate::graph::{GraphError, MediumGraphSpec};
use crate::sim::{PhysicalParams, SimError};

pub use bench::{benchmark, BenchCell, BenchReport, BenchRow, Method};
pub use pipeline::{load_dataset, Artifacts, Datasets, Pipeline, StageRecord, StageStatus};
pub use probe::{
    additivity_scan, locality_table, resonance_scan, zz_scan, AdditivityProtocol, AdditivityRow, LocalityRow, ProbeKind, ResonanceRow,
    ZzRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Box<HarnessError> },
}

impl HarnessError {
    fn in_stage(self, stage: &'static str) -> Self {
        match self {
            HarnessError::Stage { .. } => self,
            other => HarnessError::Stage { stage, source: Box::new(other) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignerPreset {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Records per operation per training graph.
    pub samples_per_graph: usize,
    /// Records per operation per held-out structure (star, T-shape).
    pub new_structure_samples: usize,
    pub holdout_chain: usize,
    /// Records per operation on the long holdout chain; 0 skips it.
    pub holdout_samples: usize,
    /// Train and validation fractions; the rest is test.
    pub split: (f64, f64),
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            samples_per_graph: 2700,
            new_structure_samples: 500,
            holdout_chain: 30,
            holdout_samples: 200,
            split: (0.8, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSection {
    pub kind: EvaluatorKind,
    /// Share of the training split the Lorentzian fit sees.
    pub theory_fraction: f64,
    pub mlp: MlpTrainConfig,
    pub theory: TheoryTrainConfig,
    /// Use this model file instead of training.
    pub pretrained: Option<PathBuf>,
}

impl Default for EvaluatorSection {
    fn default() -> Self {
        Self {
            kind: EvaluatorKind::Mlp,
            theory_fraction: 0.25,
            mlp: MlpTrainConfig::default(),
            theory: TheoryTrainConfig::default(),
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignerSection {
    pub preset: DesignerPreset,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub val_every: Option<usize>,
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Mean node counts, ascending.
    pub scales: Vec<usize>,
    pub repeats: usize,
    pub methods: Vec<Method>,
    /// DirectOptim and GradAlg are skipped above this many nodes.
    pub node_cap: usize,
    /// Best-of-N batch; defaults by graph size.
    pub design_batch: Option<usize>,
    pub node_removal_prob: f64,
    pub edge_removal_prob: f64,
    pub snake: SnakeSettings,
    pub grad: GradSettings,
    pub powell: PowellSettings,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            scales: vec![32, 54, 103],
            repeats: 5,
            methods: vec![Method::Designer, Method::Snake, Method::Direct, Method::Grad],
            node_cap: 120,
            design_batch: None,
            node_removal_prob: MediumGraphSpec::NODE_REMOVAL,
            edge_removal_prob: MediumGraphSpec::EDGE_REMOVAL,
            snake: SnakeSettings::default(),
            grad: GradSettings::default(),
            powell: PowellSettings::default(),
        }
    }
}

impl BenchSection {
    /// Lattice recipe for a scale. Shapes are calibrated for the default
    /// removal probabilities; other values shift the mean size.
    pub fn recipe(&self, scale: usize) -> MediumGraphSpec {
        MediumGraphSpec {
            node_removal_prob: self.node_removal_prob,
            edge_removal_prob: self.edge_removal_prob,
            ..MediumGraphSpec::for_mean_nodes(scale)
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub physics: PhysicalParams,
    pub dataset: DatasetSection,
    pub evaluator: EvaluatorSection,
    pub designer: DesignerSection,
    pub bench: BenchSection,
    pub weights: LossWeights,
}

impl RunConfig {
    pub fn from_toml(doc: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.physics.validate()?;
        self.weights.validate()?;
        let (tr, va) = self.dataset.split;
        if !(tr > 0.0 && va >= 0.0 && tr + va < 1.0) {
            return bad(format!("split fractions {:?} must leave a test share", self.dataset.split));
        }
        if self.dataset.samples_per_graph == 0 {
            return bad("samples_per_graph must be positive".into());
        }
        if !(self.evaluator.theory_fraction > 0.0 && self.evaluator.theory_fraction <= 1.0) {
            return bad(format!("theory_fraction {} must lie in (0, 1]", self.evaluator.theory_fraction));
        }
        for p in [&self.evaluator.pretrained, &self.designer.pretrained].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        let b = &self.bench;
        if b.scales.is_empty() || b.scales.contains(&0) {
            return bad("bench scales must be nonempty and positive".into());
        }
        if b.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("bench scales {:?} must be strictly ascending", b.scales));
        }
        if b.repeats == 0 {
            return bad("bench repeats must be at least 1".into());
        }
        if b.design_batch == Some(0) {
            return bad("design_batch must be at least 1".into());
        }
        self.designer_train_config().validate()?;
        Ok(())
    }

    /// Designer training settings after applying the overrides to the preset.
    pub fn designer_train_config(&self) -> DesignerTrainConfig {
        let d = &self.designer;
        let mut cfg = match d.preset {
            DesignerPreset::Desk => DesignerTrainConfig::desk(),
            DesignerPreset::Paper => DesignerTrainConfig::paper(),
        };
        if let Some(v) = d.steps {
            cfg.steps = v;
        }
        if let Some(v) = d.batch {
            cfg.batch = v;
        }
        if let Some(v) = &d.sizes {
            cfg.sizes = v.clone();
        }
        if let Some(v) = d.lr {
            cfg.lr = v;
        }
        if let Some(v) = d.val_every {
            cfg.val_every = v;
        }
        cfg.weights = self.weights;
        cfg.seed = self.seed;
        cfg
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, HarnessError> {
    let mut f = std::fs::File::open(path).map_err(|source| io_err(path, source))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|source| io_err(path, source))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| io_err(path, source))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;
    }
    std::fs::write(path, text).map_err(|source| io_err(path, source))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| HarnessError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rows as CSV with a header taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| io_err(Path::new("<csv>"), source))?;
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv<T: DeserializeOwned>(doc: &str) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_reader(doc.as_bytes());
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    write_text(path, &to_csv(rows)?)
}

/// One training-trace observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn trace_rows(report: &crate::designer::TrainReport) -> Vec<TraceRow> {
    report
        .trace
        .iter()
        .map(|p| TraceRow {
            step: p.step,
            train_loss: p.train_loss,
            val_loss: p.val_loss,
        })
        .collect()
}

/// Machine-readable error document for the command line.
pub fn error_json(err: &dyn std::error::Error) -> String {
    let mut chain = Vec::new();
    let mut cur = err.source();
    while let Some(e) = cur {
        chain.push(e.to_string());
        cur = e.source();
    }
    serde_json::json!({ "error": err.to_string(), "causes": chain }).to_string()
}
