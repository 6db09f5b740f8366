use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{sample_features, swap_two_features, FeatureScale, SINGLE_FEATURES, TWO_FEATURES};
use super::{mse, r_squared, EvalError, SplitMetrics, LOG_MAX, LOG_MIN};
use crate::sim::{Dataset, OpKind};
use crate::tensor::{Adam, Tape, Tensor, Var, WeightManifest};

pub const HIDDEN_WIDTH: usize = 32;
pub const HIDDEN_LAYERS: usize = 4;

/// Fully connected network: relu on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weight = Tensor::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..bound));
                (weight, Tensor::zeros(1, w[1]))
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].0.rows()];
        s.extend(self.layers.iter().map(|l| l.0.cols()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, EvalError> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            if h.cols() != w.rows() {
                return Err(EvalError::Width {
                    expected: w.rows(),
                    got: h.cols(),
                });
            }
            h = h.matmul(w)?;
            let cols = h.cols();
            for row in h.data_mut().chunks_mut(cols) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            if l < last {
                for v in h.data_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        Ok(h)
    }

    pub fn register(&self, tape: &mut Tape<'_>, trainable: bool) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| {
                if trainable {
                    (tape.param(w.clone()), tape.param(b.clone()))
                } else {
                    (tape.constant(w.clone()), tape.constant(b.clone()))
                }
            })
            .collect()
    }

    pub fn forward_tape(&self, tape: &mut Tape<'_>, x: Var, vars: &[(Var, Var)]) -> Result<Var, EvalError> {
        let (_, cols) = tape.shape(x);
        if cols != self.layers[0].0.rows() {
            return Err(EvalError::Width {
                expected: self.layers[0].0.rows(),
                got: cols,
            });
        }
        let last = vars.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in vars.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_broadcast_row(h, b)?;
            if l < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }

    pub fn set_tensors(&mut self, ts: &[Tensor]) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.0 = ts[2 * l].clone();
            layer.1 = ts[2 * l + 1].clone();
        }
    }

    pub fn write_manifest(&self, prefix: &str, m: &mut WeightManifest) {
        for (l, (w, b)) in self.layers.iter().enumerate() {
            m.push(format!("{prefix}w{l}"), w.clone());
            m.push(format!("{prefix}b{l}"), b.clone());
        }
    }

    pub fn read_manifest(prefix: &str, sizes: &[usize], m: &WeightManifest) -> Result<Self, EvalError> {
        let mut layers = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let get = |name: String, shape: (usize, usize)| -> Result<Tensor, EvalError> {
                let t = m
                    .get(&name)
                    .ok_or_else(|| crate::tensor::TensorError::Manifest(format!("missing tensor `{name}`")))?;
                if t.shape() != shape {
                    return Err(crate::tensor::TensorError::Manifest(format!(
                        "tensor `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    ))
                    .into());
                }
                Ok(t.clone())
            };
            layers.push((get(format!("{prefix}w{l}"), (w[0], w[1]))?, get(format!("{prefix}b{l}"), (1, w[1]))?));
        }
        Ok(Self { layers })
    }
}

/// Per-operation estimator `input → 32 → 32 → 32 → 32 → 1`, output clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEvaluator {
    pub op: OpKind,
    pub net: Mlp,
}

impl MlpEvaluator {
    pub fn input_width(op: OpKind) -> usize {
        if op.is_single() {
            SINGLE_FEATURES
        } else {
            TWO_FEATURES
        }
    }

    pub fn layer_sizes(input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        s.push(1);
        s
    }

    /// Random initialization with the output bias at the middle of the
    /// clamp range, so training starts with live gradients.
    pub fn new(op: OpKind, rng: &mut impl Rng) -> Self {
        let mut net = Mlp::new(&Self::layer_sizes(Self::input_width(op)), rng);
        let last = net.layers.len() - 1;
        net.layers[last].1 = Tensor::scalar(0.5 * (LOG_MIN + LOG_MAX));
        Self { op, net }
    }

    pub fn predict_rows(&self, features: &Tensor) -> Result<Vec<f64>, EvalError> {
        Ok(self
            .net
            .forward(features)?
            .into_data()
            .into_iter()
            .map(|v| v.clamp(LOG_MIN, LOG_MAX))
            .collect())
    }

    pub fn predict_log_error(&self, features: &[f64]) -> Result<f64, EvalError> {
        let t = Tensor::row_vector(features.to_vec());
        Ok(self.predict_rows(&t)?[0])
    }

    pub fn predict_tape_frozen(&self, tape: &mut Tape<'_>, features: Var) -> Result<Var, EvalError> {
        let vars = self.net.register(tape, false);
        let out = self.net.forward_tape(tape, features, &vars)?;
        Ok(tape.clamp(out, LOG_MIN, LOG_MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            max_epochs: 400,
            patience: 20,
            lr: 1e-3,
            seed: 0,
        }
    }
}

pub(crate) fn design_matrix(op: OpKind, data: &Dataset, scale: &FeatureScale, augment: bool) -> Result<(Tensor, Vec<f64>), EvalError> {
    let width = MlpEvaluator::input_width(op);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for s in data.samples.iter().filter(|s| s.op == op) {
        let f = sample_features(scale, s)?;
        if augment && op == OpKind::Rxy {
            rows.extend_from_slice(&swap_two_features(&f));
            targets.push(s.log_err);
        }
        rows.extend(f);
        targets.push(s.log_err);
    }
    Ok((Tensor::new(targets.len(), width, rows)?, targets))
}

fn rows_of(x: &Tensor, idx: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(idx.len(), x.cols(), data).expect("rows of a valid tensor")
}

pub(crate) fn metrics_for(pred: &[f64], target: &[f64]) -> Option<SplitMetrics> {
    let r2 = r_squared(pred, target).ok()?;
    Some(SplitMetrics {
        mse: mse(pred, target),
        r2,
    })
}

/// Minibatch Adam on mean squared log error with early stopping on the
/// validation split; returns the best-validation weights and metrics for
/// every named evaluation set that has data for `op`.
pub fn train_mlp_evaluator(
    op: OpKind,
    train: &Dataset,
    val: &Dataset,
    eval_sets: &[(&str, &Dataset)],
    scale: &FeatureScale,
    config: &MlpTrainConfig,
) -> Result<(MlpEvaluator, BTreeMap<String, SplitMetrics>), EvalError> {
    let (x_train, y_train) = design_matrix(op, train, scale, true)?;
    let (x_val, y_val) = design_matrix(op, val, scale, false)?;
    if y_train.is_empty() {
        return Err(EvalError::EmptySplit(format!("{} train", op.name())));
    }
    if y_val.is_empty() {
        return Err(EvalError::EmptySplit(format!("{} validation", op.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (op as u64 + 1) * 0x9e37_79b9);
    let mut model = MlpEvaluator::new(op, &mut rng);
    let mut params = model.net.tensors();
    let mut opt = Adam::new(&params, config.lr);
    let mut best = (model.predict_rows(&x_val).map(|p| mse(&p, &y_val))?, params.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..y_train.len()).collect();
    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch.max(1)) {
            let xb = rows_of(&x_train, chunk);
            let yb = Tensor::column(chunk.iter().map(|&i| y_train[i]).collect());
            model.net.set_tensors(&params);
            let mut tape = Tape::new();
            let vars = model.net.register(&mut tape, true);
            let x = tape.constant(xb);
            let y = tape.constant(yb);
            let out = model.net.forward_tape(&mut tape, x, &vars)?;
            let out = tape.clamp(out, LOG_MIN, LOG_MAX);
            let loss = tape.squared_error_mean(out, y)?;
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.iter().flat_map(|&(w, b)| [grads.take(w), grads.take(b)]).collect();
            opt.step(&mut params, &g)?;
        }
        model.net.set_tensors(&params);
        let val_mse = mse(&model.predict_rows(&x_val)?, &y_val);
        if val_mse < best.0 {
            best = (val_mse, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.net.set_tensors(&best.1);
    let mut metrics = BTreeMap::new();
    for (name, set) in eval_sets {
        let (x, y) = design_matrix(op, set, scale, false)?;
        if y.len() < 2 {
            continue;
        }
        if let Some(m) = metrics_for(&model.predict_rows(&x)?, &y) {
            metrics.insert(name.to_string(), m);
        }
    }
    Ok((model, metrics))
}
