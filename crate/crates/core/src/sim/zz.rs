use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, SymmetricEigen};

use super::hamiltonian::BuildingBlock;
use super::{FockBasis, PhysicalParams, SimError};

/// Spacing of the coarse coupler scan that brackets the ZZ-free root.
const SCAN_STEP: f64 = 0.01;
/// Coupler detuning, in units of `g_qc`, below which the perturbative
/// exchange formula is refused.
const MIN_DETUNING_RATIO: f64 = 5.0;

fn eigen_pairs(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = h.nrows();
    let is_diagonal = (0..d).all(|r| (0..d).all(|c| r == c || h[(r, c)] == 0.0));
    if is_diagonal {
        return ((0..d).map(|i| h[(i, i)]).collect(), DMatrix::identity(d, d));
    }
    let eig = SymmetricEigen::new(h);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Conditional frequency shift `(E110 − E100) − (E010 − E000)` of a block,
/// state labels ordered (q0, q1, coupler).
///
/// `|000⟩` and `|110⟩` are matched to dressed states by maximum overlap. The
/// single-excitation pair enters only through its sum, taken as the two
/// eigenvalues with the largest weight on span{|100⟩, |010⟩}; this stays
/// well defined when the qubits are resonant and hybridize.
pub fn g_zz_eff(block: &BuildingBlock, params: &PhysicalParams) -> Result<f64, SimError> {
    let basis = FockBasis::full(3, params.levels_per_mode);
    let h = block.mode_system(params).real_hamiltonian(&basis);
    let (energies, vecs) = eigen_pairs(h);
    let d = energies.len();
    let idx = |s: [u8; 3]| basis.index(&s).expect("state in full basis");
    let matched = |bare: usize, label: &'static str| -> Result<f64, SimError> {
        let (col, w) = (0..d)
            .map(|c| (c, vecs[(bare, c)].powi(2)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty basis");
        if w < 0.5 {
            return Err(SimError::Degeneracy { state: label, overlap: w });
        }
        Ok(energies[col])
    };
    let e000 = matched(idx([0, 0, 0]), "|000>")?;
    let e110 = matched(idx([1, 1, 0]), "|110>")?;
    let (i100, i010) = (idx([1, 0, 0]), idx([0, 1, 0]));
    let mut weights: Vec<(usize, f64)> = (0..d)
        .map(|c| (c, vecs[(i100, c)].powi(2) + vecs[(i010, c)].powi(2)))
        .collect();
    weights.sort_by(|a, b| b.1.total_cmp(&a.1));
    for &(_, w) in &weights[..2] {
        if w < 0.5 {
            return Err(SimError::Degeneracy {
                state: "single excitation",
                overlap: w,
            });
        }
    }
    let singles = energies[weights[0].0] + energies[weights[1].0];
    Ok(e110 + e000 - singles)
}

fn gzz_at(w0: f64, w1: f64, wc: f64, params: &PhysicalParams) -> Result<f64, SimError> {
    g_zz_eff(
        &BuildingBlock {
            omega_q0: w0,
            omega_q1: w1,
            omega_c: wc,
        },
        params,
    )
}

/// Coupler frequency in the search window where the ZZ coupling vanishes.
/// Among several sign changes the one closest to `coupler_guess` wins.
pub fn solve_zz_free(omega_q0: f64, omega_q1: f64, params: &PhysicalParams) -> Result<f64, SimError> {
    // Solve in a canonical qubit order so the result is exactly symmetric.
    let (w0, w1) = if omega_q0 <= omega_q1 {
        (omega_q0, omega_q1)
    } else {
        (omega_q1, omega_q0)
    };
    let (lo, hi) = params.coupler_window;
    let steps = ((hi - lo) / SCAN_STEP).round() as usize;
    let scan: Vec<(f64, Option<f64>)> = (0..=steps)
        .map(|s| {
            let wc = lo + (hi - lo) * s as f64 / steps as f64;
            (wc, gzz_at(w0, w1, wc, params).ok())
        })
        .collect();
    let mut brackets = Vec::new();
    for pair in scan.windows(2) {
        if let ((a, Some(fa)), (b, Some(fb))) = (pair[0], pair[1]) {
            if fa == 0.0 {
                return Ok(a);
            }
            if fa * fb < 0.0 {
                brackets.push((a, fa, b, fb));
            }
        }
    }
    brackets.sort_by(|x, y| {
        let dx = (0.5 * (x.0 + x.2) - params.coupler_guess).abs();
        let dy = (0.5 * (y.0 + y.2) - params.coupler_guess).abs();
        dx.total_cmp(&dy)
    });
    for (a, fa, b, fb) in brackets {
        if let Some(root) = refine_root(|wc| gzz_at(w0, w1, wc, params), a, fa, b, fb) {
            return Ok(root);
        }
    }
    Err(SimError::NoZzFreePoint { omega_q0, omega_q1 })
}

/// Illinois-modified regula falsi inside a sign-change bracket. Returns
/// `None` for brackets that straddle a pole rather than a root.
fn refine_root(
    f: impl Fn(f64) -> Result<f64, SimError>,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
) -> Option<f64> {
    let mut side = 0;
    for _ in 0..200 {
        let c = if fa != fb { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        let c = if c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let fc = f(c).ok()?;
        if fc.abs() < 1e-12 || (b - a).abs() < 1e-13 {
            return (fc.abs() < 1e-6).then_some(c);
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            side = 0;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let (c, fc) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    (fc.abs() < 1e-6).then_some(c)
}

/// Second-order effective exchange coupling between the two qubits once
/// the coupler is eliminated.
pub fn g_xy_eff(omega_q0: f64, omega_q1: f64, omega_c: f64, params: &PhysicalParams) -> Result<f64, SimError> {
    let d0 = omega_c - omega_q0;
    let d1 = omega_c - omega_q1;
    let detuning = d0.abs().min(d1.abs());
    if !(detuning > MIN_DETUNING_RATIO * params.g_qc) {
        return Err(SimError::PerturbationInvalid { omega_c, detuning });
    }
    Ok(params.g_qq - 0.5 * params.g_qc * params.g_qc * (1.0 / d0 + 1.0 / d1))
}

/// Memoized ZZ-free solutions and the exchange coupling they leave behind.
#[derive(Debug)]
pub struct ZzSolver {
    params: PhysicalParams,
    cache: Mutex<HashMap<(u64, u64), Result<f64, SimError>>>,
}

impl ZzSolver {
    pub fn new(params: PhysicalParams) -> Self {
        Self {
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn coupler_frequency(&self, w0: f64, w1: f64) -> Result<f64, SimError> {
        let key = if w0 <= w1 {
            (w0.to_bits(), w1.to_bits())
        } else {
            (w1.to_bits(), w0.to_bits())
        };
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let res = solve_zz_free(w0, w1, &self.params);
        self.cache.lock().expect("cache lock").insert(key, res.clone());
        res
    }

    /// Exchange coupling of an edge whose coupler sits on the ZZ-free line.
    pub fn exchange(&self, w0: f64, w1: f64) -> Result<f64, SimError> {
        let wc = self.coupler_frequency(w0, w1)?;
        g_xy_eff(w0, w1, wc, &self.params)
    }

    pub fn cached_solutions(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncoupled_block_has_no_zz() {
        let params = PhysicalParams {
            g_qq: 0.0,
            g_qc: 0.0,
            ..Default::default()
        };
        let g = gzz_at(5.0, 4.93, 6.0, &params).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn exchange_formula_substitutions() {
        let p = PhysicalParams::default();
        assert!(g_xy_eff(5.0, 5.0, 6.0, &p).unwrap().abs() < 1e-15);
        assert!((g_xy_eff(5.0, 5.0, 5.8, &p).unwrap() + 0.0025).abs() < 1e-12);
        let free = PhysicalParams { g_qc: 0.0, ..p.clone() };
        assert_eq!(g_xy_eff(5.0, 5.1, 5.4, &free).unwrap(), 0.010);
        assert!(matches!(
            g_xy_eff(5.0, 5.0, 5.3, &p),
            Err(SimError::PerturbationInvalid { .. })
        ));
    }

    #[test]
    fn zz_free_root_meets_contract_and_is_symmetric() {
        let p = PhysicalParams::default();
        let a = solve_zz_free(4.93, 5.06, &p).unwrap();
        let b = solve_zz_free(5.06, 4.93, &p).unwrap();
        assert_eq!(a, b);
        assert!(gzz_at(4.93, 5.06, a, &p).unwrap().abs() < 1e-6);
        assert!(a > 5.3 && a < 7.0);
    }
}
