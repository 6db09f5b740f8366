use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::hamiltonian::C64;
use super::SimError;

/// Spectral decomposition of a static Hermitian Hamiltonian, reused for
/// many evolution times.
#[derive(Debug, Clone)]
pub struct Propagator {
    energies: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl Propagator {
    pub fn new(h: &DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        Self {
            energies: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn from_real(h: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        Self {
            energies: eig.eigenvalues,
            vectors: eig.eigenvectors.map(|v| C64::new(v, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn vectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    /// Eigenbasis coefficients of `psi`.
    pub fn coefficients(&self, psi: &DVector<C64>) -> DVector<C64> {
        self.vectors.ad_mul(psi)
    }

    /// State at time `t` from eigenbasis coefficients.
    pub fn state_at(&self, coeffs: &DVector<C64>, t: f64) -> DVector<C64> {
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(self.energies.iter())
                .map(|(c, &e)| c * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * e * t)),
        );
        &self.vectors * phased
    }

    pub fn evolve(&self, psi: &DVector<C64>, t: f64) -> DVector<C64> {
        self.state_at(&self.coefficients(psi), t)
    }
}

/// `exp(−i 2π H t) ψ0` for a static Hermitian `H`.
pub fn evolve(h: &DMatrix<C64>, psi0: &DVector<C64>, t: f64) -> Result<DVector<C64>, SimError> {
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(SimError::NotNormalized(norm));
    }
    if h.nrows() != psi0.len() || h.ncols() != psi0.len() {
        return Err(SimError::Invalid(format!(
            "Hamiltonian {}x{} does not match state of length {}",
            h.nrows(),
            h.ncols(),
            psi0.len()
        )));
    }
    Ok(Propagator::new(h).evolve(psi0, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let h = DMatrix::from_element(2, 2, c(0.0));
        let psi = DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8)]);
        let out = evolve(&h, &psi, 3.7).unwrap();
        assert!((out - psi).norm() < 1e-15);
    }

    #[test]
    fn pi_pulse_flips_population() {
        let omega = 0.025;
        let h = DMatrix::from_row_slice(2, 2, &[c(0.0), c(omega / 2.0), c(omega / 2.0), c(0.0)]);
        let psi = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let out = evolve(&h, &psi, 1.0 / (2.0 * omega)).unwrap();
        assert!((out[1].norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let h = DMatrix::from_element(1, 1, c(1.0));
        let psi = DVector::from_vec(vec![c(2.0)]);
        assert!(matches!(evolve(&h, &psi, 1.0), Err(SimError::NotNormalized(_))));
    }
}
