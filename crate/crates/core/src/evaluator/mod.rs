//! Learned crosstalk error estimators and the graph-level loss built on them.
//!
//! Every estimator maps a feature row to a clamped `log10` error. Two model
//! families share the feature layout: per-operation MLPs and a Lorentzian
//! line-shape model with a handful of positive parameters.

mod features;
mod loss;
mod mlp;
mod theory;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Dataset, OpKind, SplitDataset};
use crate::tensor::{Tape, Tensor, TensorError, Var, WeightManifest};

pub use features::{
    featurize_single, featurize_two, sample_features, swap_two_features, FeatureScale, SINGLE_FEATURES,
    TWO_FEATURES,
};
pub use loss::{graph_loss, graph_loss_tape, IncrementalLoss, LossBreakdown, LossTerms, LossWeights, SingleTerm, Trial, TwoTerm};
pub use mlp::{train_mlp_evaluator, Mlp, MlpEvaluator, MlpTrainConfig, HIDDEN_LAYERS, HIDDEN_WIDTH};
pub use theory::{train_theory_evaluator, TheoryEvaluator, TheoryTrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("hop distance {0} outside 1..=4")]
    Distance(u32),
    #[error("feature width {got} does not match model input {expected}")]
    Width { expected: usize, got: usize },
    #[error("{0} split is empty")]
    EmptySplit(String),
    #[error("r² needs at least two targets with nonzero variance")]
    ZeroVariance,
    #[error("model file does not describe a {0} evaluator")]
    WrongKind(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("assignment: {0}")]
    Assignment(String),
}

pub const LOG_MIN: f64 = crate::sim::LOG_ERR_MIN;
pub const LOG_MAX: f64 = crate::sim::LOG_ERR_MAX;

/// `1 − SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    if target.len() < 2 || pred.len() != target.len() {
        return Err(EvalError::ZeroVariance);
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Mlp,
    Theory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalModel {
    Mlp { rx: MlpEvaluator, ry: MlpEvaluator, rxy: MlpEvaluator },
    Theory(TheoryEvaluator),
}

/// A complete estimator for all three operation types.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub scale: FeatureScale,
    pub model: EvalModel,
}

/// Metrics keyed by operation name, then evaluation-set name.
pub type MetricsReport = BTreeMap<String, BTreeMap<String, SplitMetrics>>;

impl Evaluator {
    /// Randomly initialized MLPs; useful as a smooth stand-in estimator.
    pub fn untrained_mlp(scale: FeatureScale, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            scale,
            model: EvalModel::Mlp {
                rx: MlpEvaluator::new(OpKind::Rx, &mut rng),
                ry: MlpEvaluator::new(OpKind::Ry, &mut rng),
                rxy: MlpEvaluator::new(OpKind::Rxy, &mut rng),
            },
        }
    }

    pub fn theory(scale: FeatureScale, model: TheoryEvaluator) -> Self {
        Self {
            scale,
            model: EvalModel::Theory(model),
        }
    }

    pub fn kind(&self) -> EvaluatorKind {
        match self.model {
            EvalModel::Mlp { .. } => EvaluatorKind::Mlp,
            EvalModel::Theory(_) => EvaluatorKind::Theory,
        }
    }

    /// Clamped log10 errors for a matrix of feature rows.
    pub fn predict(&self, op: OpKind, features: &Tensor) -> Result<Vec<f64>, EvalError> {
        match &self.model {
            EvalModel::Mlp { rx, ry, rxy } => {
                let m = match op {
                    OpKind::Rx => rx,
                    OpKind::Ry => ry,
                    OpKind::Rxy => rxy,
                };
                m.predict_rows(features)
            }
            EvalModel::Theory(t) => t.predict_rows(op, &self.scale, features),
        }
    }

    /// Same as [`Self::predict`] on a tape, with the evaluator's own
    /// parameters held constant.
    pub fn predict_tape<'a>(&self, tape: &mut Tape<'a>, op: OpKind, features: Var) -> Result<Var, EvalError> {
        match &self.model {
            EvalModel::Mlp { rx, ry, rxy } => {
                let m = match op {
                    OpKind::Rx => rx,
                    OpKind::Ry => ry,
                    OpKind::Rxy => rxy,
                };
                m.predict_tape_frozen(tape, features)
            }
            EvalModel::Theory(t) => t.predict_tape_frozen(tape, op, &self.scale, features),
        }
    }

    pub fn to_manifest(&self) -> WeightManifest {
        let mut m = WeightManifest::default();
        m.push("meta.scale", Tensor::row_vector(vec![self.scale.lo, self.scale.span]));
        match &self.model {
            EvalModel::Mlp { rx, ry, rxy } => {
                m.push("meta.kind.mlp", Tensor::scalar(0.0));
                for (name, e) in [("rx", rx), ("ry", ry), ("rxy", rxy)] {
                    e.net.write_manifest(&format!("{name}."), &mut m);
                }
            }
            EvalModel::Theory(t) => {
                m.push("meta.kind.theory", Tensor::scalar(0.0));
                t.write_manifest(&mut m);
            }
        }
        m
    }

    pub fn from_manifest(m: &WeightManifest) -> Result<Self, EvalError> {
        let scale_t = m
            .get("meta.scale")
            .ok_or_else(|| EvalError::WrongKind("scaled".into()))?;
        if scale_t.shape() != (1, 2) {
            return Err(EvalError::WrongKind("scaled".into()));
        }
        let scale = FeatureScale {
            lo: scale_t.data()[0],
            span: scale_t.data()[1],
        };
        let model = if m.get("meta.kind.mlp").is_some() {
            let load = |op: OpKind, width: usize| -> Result<MlpEvaluator, EvalError> {
                let net = Mlp::read_manifest(&format!("{}.", op.name()), &MlpEvaluator::layer_sizes(width), m)?;
                Ok(MlpEvaluator { op, net })
            };
            EvalModel::Mlp {
                rx: load(OpKind::Rx, SINGLE_FEATURES)?,
                ry: load(OpKind::Ry, SINGLE_FEATURES)?,
                rxy: load(OpKind::Rxy, TWO_FEATURES)?,
            }
        } else if m.get("meta.kind.theory").is_some() {
            EvalModel::Theory(TheoryEvaluator::read_manifest(m)?)
        } else {
            return Err(EvalError::WrongKind("known".into()));
        };
        Ok(Self { scale, model })
    }

    pub fn to_json(&self) -> String {
        self.to_manifest().to_json()
    }

    pub fn from_json(doc: &str) -> Result<Self, EvalError> {
        Self::from_manifest(&WeightManifest::from_json(doc)?)
    }
}

/// Fits all three operations of the requested kind on `data.train`, early
/// stopping on `data.val`, and reports train/val/test plus `extra` sets.
pub fn train_evaluator(
    kind: EvaluatorKind,
    data: &SplitDataset,
    extra: &[(&str, &Dataset)],
    scale: FeatureScale,
    mlp: &MlpTrainConfig,
    theory: &TheoryTrainConfig,
) -> Result<(Evaluator, MetricsReport), EvalError> {
    let mut sets: Vec<(&str, &Dataset)> = vec![("train", &data.train), ("val", &data.val), ("test", &data.test)];
    sets.extend_from_slice(extra);
    match kind {
        EvaluatorKind::Mlp => {
            let mut report = MetricsReport::new();
            let mut nets = Vec::new();
            for op in OpKind::ALL {
                let (net, m) = train_mlp_evaluator(op, &data.train, &data.val, &sets, &scale, mlp)?;
                log::info!("{} evaluator: {:?}", op.name(), m.get("test"));
                report.insert(op.name().to_string(), m);
                nets.push(net);
            }
            let rxy = nets.pop().expect("three nets");
            let ry = nets.pop().expect("three nets");
            let rx = nets.pop().expect("three nets");
            Ok((
                Evaluator {
                    scale,
                    model: EvalModel::Mlp { rx, ry, rxy },
                },
                report,
            ))
        }
        EvaluatorKind::Theory => {
            let (t, report) = train_theory_evaluator(&data.train, &data.val, &sets, &scale, theory)?;
            Ok((Evaluator::theory(scale, t), report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_reference_values() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.5; 4], &t).unwrap(), 0.0);
        assert!(r_squared(&[4.0, 3.0, 2.0, 1.0], &t).unwrap() < 0.0);
        assert_eq!(r_squared(&[1.0, 1.0], &[2.0, 2.0]), Err(EvalError::ZeroVariance));
    }
}
