use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::{FockBasis, PhysicalParams, SimError};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Resonant-frame drive on one mode. `phase` (radians) rotates the drive
/// axis; it is how a drive at a different carrier appears in a common frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub mode: usize,
    pub strength: f64,
    pub axis: Axis,
    pub phase: f64,
}

impl Drive {
    /// Coefficient multiplying the raising operator.
    fn raising_coeff(&self) -> C64 {
        let half = 0.5 * self.strength;
        let base = match self.axis {
            Axis::X => C64::new(half, 0.0),
            Axis::Y => C64::new(0.0, -half),
        };
        base * C64::from_polar(1.0, -self.phase)
    }
}

/// Coupled anharmonic oscillators in a frame rotating at `frame` GHz:
/// `Σ (ω_m − frame) n_m + (α_m/2) n_m(n_m − 1) + Σ g (a†b + h.c.) + drives`.
#[derive(Debug, Clone, Default)]
pub struct ModeSystem {
    pub freqs: Vec<f64>,
    pub alphas: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
    pub drives: Vec<Drive>,
    pub frame: f64,
}

impl ModeSystem {
    pub fn diagonal(&self, basis: &FockBasis) -> Vec<f64> {
        basis
            .states()
            .iter()
            .map(|s| {
                let mut e = 0.0;
                for (m, &occ) in s.iter().enumerate() {
                    let n = occ as f64;
                    e += (self.freqs[m] - self.frame) * n + 0.5 * self.alphas[m] * n * (n - 1.0);
                }
                e
            })
            .collect()
    }

    /// Real matrix of the drive-free part.
    pub fn real_hamiltonian(&self, basis: &FockBasis) -> DMatrix<f64> {
        let d = basis.dim();
        let mut h = DMatrix::zeros(d, d);
        for (n, e) in self.diagonal(basis).into_iter().enumerate() {
            h[(n, n)] = e;
        }
        for n in 0..d {
            for &(i, j, g) in &self.couplings {
                if g == 0.0 {
                    continue;
                }
                // a_i† a_j |n>
                let sj = basis.state(n)[j];
                let si = basis.state(n)[i];
                if sj == 0 {
                    continue;
                }
                let Some(mid) = basis.shifted(n, j, -1) else { continue };
                let Some(m) = basis.shifted(mid, i, 1) else { continue };
                let val = g * (sj as f64).sqrt() * (si as f64 + 1.0).sqrt();
                h[(m, n)] += val;
                h[(n, m)] += val;
            }
        }
        h
    }

    pub fn hamiltonian(&self, basis: &FockBasis) -> DMatrix<C64> {
        let mut h = self.real_hamiltonian(basis).map(|v| C64::new(v, 0.0));
        self.add_drives(basis, &self.drives, &mut h);
        h
    }

    pub fn add_drives(&self, basis: &FockBasis, drives: &[Drive], h: &mut DMatrix<C64>) {
        for drive in drives {
            if drive.strength == 0.0 {
                continue;
            }
            let c = drive.raising_coeff();
            for n in 0..basis.dim() {
                let s = basis.state(n)[drive.mode];
                let Some(m) = basis.shifted(n, drive.mode, 1) else { continue };
                let val = c * (s as f64 + 1.0).sqrt();
                h[(m, n)] += val;
                h[(n, m)] += val.conj();
            }
        }
    }
}

pub fn hermitian_deviation(h: &DMatrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..h.nrows() {
        for c in r..h.ncols() {
            worst = worst.max((h[(r, c)] - h[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Two qubits joined through a coupler. Mode order: q0, q1, coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildingBlock {
    pub omega_q0: f64,
    pub omega_q1: f64,
    pub omega_c: f64,
}

/// Drive on one block mode (0 = q0, 1 = q1, 2 = coupler).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDrive {
    pub mode: usize,
    pub strength: f64,
    pub axis: Axis,
    pub frame: f64,
}

impl BuildingBlock {
    pub fn mode_system(&self, params: &PhysicalParams) -> ModeSystem {
        ModeSystem {
            freqs: vec![self.omega_q0, self.omega_q1, self.omega_c],
            alphas: vec![params.alpha; 3],
            couplings: vec![(0, 2, params.g_qc), (1, 2, params.g_qc), (0, 1, params.g_qq)],
            drives: Vec::new(),
            frame: 0.0,
        }
    }
}

/// Full `levels³` block Hamiltonian, in the lab frame or, with a drive, in
/// the frame of the drive carrier.
pub fn build_block_hamiltonian(
    block: &BuildingBlock,
    params: &PhysicalParams,
    drive: Option<BlockDrive>,
) -> Result<DMatrix<C64>, SimError> {
    let basis = FockBasis::full(3, params.levels_per_mode);
    let mut sys = block.mode_system(params);
    if let Some(d) = drive {
        if d.mode > 2 {
            return Err(SimError::Invalid(format!("block has 3 modes, drive on mode {}", d.mode)));
        }
        sys.frame = d.frame;
        sys.drives.push(Drive {
            mode: d.mode,
            strength: d.strength,
            axis: d.axis,
            phase: 0.0,
        });
    }
    let h = sys.hamiltonian(&basis);
    let dev = hermitian_deviation(&h);
    if dev > 1e-12 {
        return Err(SimError::NotHermitian(dev));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncoupled_block_is_diagonal() {
        let params = PhysicalParams {
            g_qq: 0.0,
            g_qc: 0.0,
            ..Default::default()
        };
        let block = BuildingBlock {
            omega_q0: 5.0,
            omega_q1: 4.95,
            omega_c: 6.0,
        };
        let h = build_block_hamiltonian(&block, &params, None).unwrap();
        let basis = FockBasis::full(3, 3);
        for r in 0..27 {
            for c in 0..27 {
                if r != c {
                    assert_eq!(h[(r, c)], C64::new(0.0, 0.0));
                }
            }
            let s = basis.state(r);
            let expect: f64 = (0..3)
                .map(|m| {
                    let n = s[m] as f64;
                    [5.0, 4.95, 6.0][m] * n - 0.15 * n * (n - 1.0)
                })
                .sum();
            assert!((h[(r, r)].re - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn two_level_resonant_x_drive_is_sigma_x() {
        let sys = ModeSystem {
            freqs: vec![5.0],
            alphas: vec![-0.3],
            couplings: vec![],
            drives: vec![Drive {
                mode: 0,
                strength: 0.025,
                axis: Axis::X,
                phase: 0.0,
            }],
            frame: 5.0,
        };
        let h = sys.hamiltonian(&FockBasis::full(1, 2));
        assert_eq!(h[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(h[(1, 1)], C64::new(0.0, 0.0));
        assert_eq!(h[(0, 1)], C64::new(0.0125, 0.0));
        assert_eq!(h[(1, 0)], C64::new(0.0125, 0.0));
    }

    #[test]
    fn y_drive_is_hermitian_with_expected_phase() {
        let block = BuildingBlock {
            omega_q0: 5.0,
            omega_q1: 5.05,
            omega_c: 6.1,
        };
        let drive = BlockDrive {
            mode: 0,
            strength: 0.025,
            axis: Axis::Y,
            frame: 5.0,
        };
        let h = build_block_hamiltonian(&block, &PhysicalParams::default(), Some(drive)).unwrap();
        let basis = FockBasis::full(3, 3);
        let g = basis.index(&[0, 0, 0]).unwrap();
        let e = basis.index(&[1, 0, 0]).unwrap();
        // (iΩ/2)(a − a†): <1|H|0> = −iΩ/2
        assert!((h[(e, g)] - C64::new(0.0, -0.0125)).norm() < 1e-15);
        assert!(hermitian_deviation(&h) < 1e-15);
    }
}
