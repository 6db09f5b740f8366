use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sim::{CrosstalkSample, OpKind};

pub const SINGLE_FEATURES: usize = 7;
pub const TWO_FEATURES: usize = 18;

/// Affine map of the qubit band onto `[0, 1]`; differences are measured in
/// band widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub lo: f64,
    pub span: f64,
}

impl FeatureScale {
    pub fn from_band(band: (f64, f64)) -> Self {
        Self {
            lo: band.0,
            span: band.1 - band.0,
        }
    }

    pub fn inv_span(&self) -> f64 {
        1.0 / self.span
    }

    pub fn freq(&self, w: f64) -> f64 {
        (w + -self.lo) * self.inv_span()
    }

    pub fn delta(&self, dw: f64) -> f64 {
        dw * self.inv_span()
    }
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self::from_band(crate::assignment::DEFAULT_BAND)
    }
}

fn one_hot(d: u32, out: &mut [f64]) -> Result<(), EvalError> {
    if !(1..=4).contains(&d) {
        return Err(EvalError::Distance(d));
    }
    out[(d - 1) as usize] = 1.0;
    Ok(())
}

/// `[ω_i, ω_k, ω_i − ω_k, onehot(d)]`, normalized.
pub fn featurize_single(scale: &FeatureScale, wi: f64, wk: f64, d: u32) -> Result<[f64; SINGLE_FEATURES], EvalError> {
    let mut f = [0.0; SINGLE_FEATURES];
    f[0] = scale.freq(wi);
    f[1] = scale.freq(wk);
    f[2] = scale.delta(wi - wk);
    one_hot(d, &mut f[3..7])?;
    Ok(f)
}

/// `[ω_i, ω_j, ω_ij, ω_k, six deltas, onehot(d_ik), onehot(d_jk)]`, normalized.
/// A zero distance (target on the gate) is rejected like any out-of-range one.
pub fn featurize_two(
    scale: &FeatureScale,
    wi: f64,
    wj: f64,
    wij: f64,
    wk: f64,
    dik: u32,
    djk: u32,
) -> Result<[f64; TWO_FEATURES], EvalError> {
    let mut f = [0.0; TWO_FEATURES];
    f[0] = scale.freq(wi);
    f[1] = scale.freq(wj);
    f[2] = scale.freq(wij);
    f[3] = scale.freq(wk);
    f[4] = scale.delta(wi - wj);
    f[5] = scale.delta(wi - wk);
    f[6] = scale.delta(wj - wk);
    f[7] = scale.delta(wij - wi);
    f[8] = scale.delta(wij - wj);
    f[9] = scale.delta(wij - wk);
    one_hot(dik, &mut f[10..14])?;
    one_hot(djk, &mut f[14..18])?;
    Ok(f)
}

/// Features of the same record with the gate endpoints exchanged.
pub fn swap_two_features(f: &[f64]) -> [f64; TWO_FEATURES] {
    let mut g = [0.0; TWO_FEATURES];
    g[0] = f[1];
    g[1] = f[0];
    g[2] = f[2];
    g[3] = f[3];
    g[4] = -f[4];
    g[5] = f[6];
    g[6] = f[5];
    g[7] = f[8];
    g[8] = f[7];
    g[9] = f[9];
    g[10..14].copy_from_slice(&f[14..18]);
    g[14..18].copy_from_slice(&f[10..14]);
    g
}

pub fn sample_features(scale: &FeatureScale, s: &CrosstalkSample) -> Result<Vec<f64>, EvalError> {
    match s.op {
        OpKind::Rx | OpKind::Ry => Ok(featurize_single(scale, s.freqs.i, s.freqs.k, s.dists.ik)?.to_vec()),
        OpKind::Rxy => {
            let (wj, wij, djk) = (
                s.freqs.j.unwrap_or(s.freqs.i),
                s.freqs.ij.unwrap_or(s.freqs.i),
                s.dists.jk.unwrap_or(s.dists.ik),
            );
            Ok(featurize_two(scale, s.freqs.i, wj, wij, s.freqs.k, s.dists.ik, djk)?.to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_feature_examples() {
        let s = FeatureScale::default();
        let f = featurize_single(&s, 5.0, 5.0, 2).unwrap();
        assert_eq!(f[2], 0.0);
        assert_eq!(&f[3..], &[0.0, 1.0, 0.0, 0.0]);
        let g = featurize_single(&s, 4.9, 5.1, 1).unwrap();
        assert!((g[0] - 0.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12 && (g[2] + 1.0).abs() < 1e-12);
        assert_eq!(featurize_single(&s, 5.0, 5.0, 5), Err(EvalError::Distance(5)));
        assert_eq!(featurize_single(&s, 5.0, 5.0, 0), Err(EvalError::Distance(0)));
    }

    #[test]
    fn two_feature_examples() {
        let s = FeatureScale::default();
        let f = featurize_two(&s, 5.0, 5.0, 5.0, 4.95, 1, 2).unwrap();
        let zeros = f[4..10].iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 3);
        let all = featurize_two(&s, 5.0, 5.0, 5.0, 5.0, 1, 2).unwrap();
        assert!(all[4..10].iter().all(|&v| v == 0.0));
        let a = featurize_two(&s, 4.93, 5.07, 5.0, 4.95, 1, 2).unwrap();
        let b = featurize_two(&s, 5.07, 4.93, 5.0, 4.95, 2, 1).unwrap();
        assert_eq!(swap_two_features(&a), b);
    }
}
