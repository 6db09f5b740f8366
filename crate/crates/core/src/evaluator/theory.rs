use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use super::features::FeatureScale;
use super::mlp::{design_matrix, metrics_for};
use super::{EvalError, SplitMetrics, LOG_MAX, LOG_MIN};
use crate::sim::{Dataset, OpKind};
use crate::tensor::{softplus, Adam, Tape, Tensor, TensorError, Var, WeightManifest};

const FLOOR: f64 = 1e-30;

/// Lorentzian line shapes `J_d² / (Δ² + J_d²)` with one coupling scale per
/// hop distance and operation. Gates mix three lines: gate point vs target
/// and each idle endpoint vs target. All parameters are stored raw and
/// mapped through softplus, so they stay positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryEvaluator {
    pub j_raw: [[f64; 4]; 3],
    pub w_raw: [f64; 3],
}

fn inv_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn op_index(op: OpKind) -> usize {
    match op {
        OpKind::Rx => 0,
        OpKind::Ry => 1,
        OpKind::Rxy => 2,
    }
}

fn hop(onehot: &[f64]) -> usize {
    onehot.iter().position(|&v| v > 0.5).unwrap_or(onehot.len() - 1)
}

fn lorentz(delta: f64, j: f64) -> f64 {
    let j2 = j * j;
    j2 / (delta * delta + j2)
}

impl Default for TheoryEvaluator {
    fn default() -> Self {
        let j = [1e-3, 1e-4, 1e-5, 1e-6].map(inv_softplus);
        Self {
            j_raw: [j; 3],
            w_raw: [inv_softplus(1.0 / 3.0); 3],
        }
    }
}

impl TheoryEvaluator {
    /// Coupling scales `J_1..J_4` in GHz.
    pub fn j(&self, op: OpKind) -> [f64; 4] {
        self.j_raw[op_index(op)].map(softplus)
    }

    /// Mixture weights of the gate-point, first-endpoint and second-endpoint lines.
    pub fn weights(&self) -> [f64; 3] {
        self.w_raw.map(softplus)
    }

    /// Linear (unclamped, unlogged) line-shape value of one feature row.
    pub fn linear(&self, op: OpKind, scale: &FeatureScale, f: &[f64]) -> f64 {
        let j = self.j(op);
        if op.is_single() {
            lorentz(f[2] * scale.span, j[hop(&f[3..7])])
        } else {
            let (dik, djk) = (hop(&f[10..14]), hop(&f[14..18]));
            let w = self.weights();
            w[0] * lorentz(f[9] * scale.span, j[dik.min(djk)])
                + w[1] * lorentz(f[5] * scale.span, j[dik])
                + w[2] * lorentz(f[6] * scale.span, j[djk])
        }
    }

    pub fn predict_rows(&self, op: OpKind, scale: &FeatureScale, features: &Tensor) -> Result<Vec<f64>, EvalError> {
        let width = super::MlpEvaluator::input_width(op);
        if features.cols() != width {
            return Err(EvalError::Width {
                expected: width,
                got: features.cols(),
            });
        }
        Ok((0..features.rows())
            .map(|r| {
                let lin = self.linear(op, scale, features.row(r));
                ((lin + FLOOR).ln() * (1.0 / LN_10)).clamp(LOG_MIN, LOG_MAX)
            })
            .collect())
    }

    pub fn predict_tape_frozen(&self, tape: &mut Tape<'_>, op: OpKind, scale: &FeatureScale, features: Var) -> Result<Var, EvalError> {
        let j = tape.constant(Tensor::column(self.j_raw[op_index(op)].to_vec()));
        let w = tape.constant(Tensor::column(self.w_raw.to_vec()));
        self.forward_tape(tape, op, scale, features, j, w)
    }

    /// Shared graph for prediction and fitting; `j_raw` is 4×1, `w_raw` 3×1.
    fn forward_tape(&self, tape: &mut Tape<'_>, op: OpKind, scale: &FeatureScale, features: Var, j_raw: Var, w_raw: Var) -> Result<Var, EvalError> {
        let width = super::MlpEvaluator::input_width(op);
        let (rows, cols) = tape.shape(features);
        if cols != width {
            return Err(EvalError::Width { expected: width, got: cols });
        }
        let x = tape.value(features).clone();
        let j = tape.softplus(j_raw);
        let line = |tape: &mut Tape<'_>, col: usize, pick: &dyn Fn(&[f64]) -> usize| -> Result<Var, TensorError> {
            let sel = tape.constant(Tensor::from_fn(width, 1, |r, _| if r == col { 1.0 } else { 0.0 }));
            let delta = tape.matmul(features, sel)?;
            let delta = tape.scale(delta, scale.span);
            let onehot = tape.constant(Tensor::from_fn(rows, 4, |r, c| if pick(x.row(r)) == c { 1.0 } else { 0.0 }));
            let jr = tape.matmul(onehot, j)?;
            let j2 = tape.mul(jr, jr)?;
            let d2 = tape.mul(delta, delta)?;
            let den = tape.add(d2, j2)?;
            tape.div(j2, den)
        };
        let lin = if op.is_single() {
            line(tape, 2, &|f| hop(&f[3..7]))?
        } else {
            let le = line(tape, 9, &|f| hop(&f[10..14]).min(hop(&f[14..18])))?;
            let li = line(tape, 5, &|f| hop(&f[10..14]))?;
            let lj = line(tape, 6, &|f| hop(&f[14..18]))?;
            let stack = tape.concat_cols(&[le, li, lj])?;
            let w = tape.softplus(w_raw);
            tape.matmul(stack, w)?
        };
        let lin = tape.add_scalar(lin, FLOOR);
        let log = tape.ln(lin);
        let log = tape.scale(log, 1.0 / LN_10);
        Ok(tape.clamp(log, LOG_MIN, LOG_MAX))
    }

    pub fn write_manifest(&self, m: &mut WeightManifest) {
        for op in OpKind::ALL {
            m.push(format!("theory.{}.j", op.name()), Tensor::row_vector(self.j_raw[op_index(op)].to_vec()));
        }
        m.push("theory.rxy.w", Tensor::row_vector(self.w_raw.to_vec()));
    }

    pub fn read_manifest(m: &WeightManifest) -> Result<Self, EvalError> {
        let get = |name: &str, len: usize| -> Result<Vec<f64>, EvalError> {
            let t = m
                .get(name)
                .ok_or_else(|| TensorError::Manifest(format!("missing tensor `{name}`")))?;
            if t.shape() != (1, len) {
                return Err(TensorError::Manifest(format!("tensor `{name}` has shape {:?}", t.shape())).into());
            }
            Ok(t.data().to_vec())
        };
        let mut out = Self::default();
        for op in OpKind::ALL {
            let v = get(&format!("theory.{}.j", op.name()), 4)?;
            out.j_raw[op_index(op)].copy_from_slice(&v);
        }
        out.w_raw.copy_from_slice(&get("theory.rxy.w", 3)?);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryTrainConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for TheoryTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, lr: 0.02 }
    }
}

/// Full-batch Adam fit of every operation's line parameters; keeps the
/// best-validation iterate per operation. Metrics are keyed by op, then set.
pub fn train_theory_evaluator(
    train: &Dataset,
    val: &Dataset,
    eval_sets: &[(&str, &Dataset)],
    scale: &FeatureScale,
    config: &TheoryTrainConfig,
) -> Result<(TheoryEvaluator, BTreeMap<String, BTreeMap<String, SplitMetrics>>), EvalError> {
    let mut model = TheoryEvaluator::default();
    let mut report = BTreeMap::new();
    for op in OpKind::ALL {
        let (x_train, y_train) = design_matrix(op, train, scale, false)?;
        let (x_val, y_val) = design_matrix(op, val, scale, false)?;
        if y_train.is_empty() {
            return Err(EvalError::EmptySplit(format!("{} train", op.name())));
        }
        if y_val.is_empty() {
            return Err(EvalError::EmptySplit(format!("{} validation", op.name())));
        }
        let k = op_index(op);
        let mut params = vec![Tensor::column(model.j_raw[k].to_vec()), Tensor::column(model.w_raw.to_vec())];
        let mut opt = Adam::new(&params, config.lr);
        let val_mse = |m: &TheoryEvaluator| -> Result<f64, EvalError> { Ok(super::mse(&m.predict_rows(op, scale, &x_val)?, &y_val)) };
        let mut best = (val_mse(&model)?, model.clone());
        let target = Tensor::column(y_train.clone());
        for _ in 0..config.steps {
            let mut tape = Tape::new();
            let j = tape.param(params[0].clone());
            let w = tape.param(params[1].clone());
            let x = tape.constant(x_train.clone());
            let y = tape.constant(target.clone());
            let out = model.forward_tape(&mut tape, op, scale, x, j, w)?;
            let loss = tape.squared_error_mean(out, y)?;
            let mut grads = tape.backward(loss)?;
            let g = [grads.take(j), grads.take(w)];
            opt.step(&mut params, &g)?;
            model.j_raw[k].copy_from_slice(params[0].data());
            if !op.is_single() {
                model.w_raw.copy_from_slice(params[1].data());
            }
            let v = val_mse(&model)?;
            if v < best.0 {
                best = (v, model.clone());
            }
        }
        model = best.1;
        let mut metrics = BTreeMap::new();
        for (name, set) in eval_sets {
            let (x, y) = design_matrix(op, set, scale, false)?;
            if y.len() < 2 {
                continue;
            }
            if let Some(m) = metrics_for(&model.predict_rows(op, scale, &x)?, &y) {
                metrics.insert(name.to_string(), m);
            }
        }
        report.insert(op.name().to_string(), metrics);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::featurize_single;

    #[test]
    fn reference_line_values() {
        let t = TheoryEvaluator::default();
        let s = FeatureScale::default();
        let j1 = t.j(OpKind::Rx)[0];
        let on = featurize_single(&s, 5.0, 5.0, 1).unwrap();
        let at_j = featurize_single(&s, 5.0, 5.0 - j1, 1).unwrap();
        let far = featurize_single(&s, 5.0 + 10.0 * j1, 5.0, 1).unwrap();
        let x = Tensor::new(3, 7, [on, at_j, far].concat()).unwrap();
        let p = t.predict_rows(OpKind::Rx, &s, &x).unwrap();
        assert_eq!(p[0], -1.0);
        assert_eq!(p[1], -1.0);
        assert!((p[2] - (1.0f64 / 101.0).log10()).abs() < 1e-6, "{}", p[2]);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-6, 1e-3, 0.3, 2.0] {
            assert!((softplus(inv_softplus(y)) / y - 1.0).abs() < 1e-9);
        }
    }
}
