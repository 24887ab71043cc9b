//! Hybrid beamformer: one analog matrix shared by every subcarrier and one digital matrix per subcarrier.

use crate::error::{Error, Result};
use crate::linalg::{c, frob_sq, CMat, CVec};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer {
    /// `N_t x N_RF`.
    pub analog: CMat,
    /// `N_RF x N_s` per subcarrier.
    pub digital: Vec<CMat>,
}

impl HybridBeamformer {
    pub fn new(analog: CMat, digital: Vec<CMat>) -> Result<Self> {
        let n_rf = analog.ncols();
        let n_s = digital.first().map(|d| d.ncols()).unwrap_or(0);
        if digital.is_empty()
            || digital
                .iter()
                .any(|d| d.nrows() != n_rf || d.ncols() != n_s)
        {
            return Err(Error::DimensionMismatch(format!(
                "digital blocks must all be {n_rf} x {n_s} and at least one must exist"
            )));
        }
        Ok(Self { analog, digital })
    }

    pub fn n_t(&self) -> usize {
        self.analog.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.analog.ncols()
    }

    pub fn n_s(&self) -> usize {
        self.digital[0].ncols()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.digital.len()
    }

    /// `F_RF F_BB,k`.
    pub fn effective(&self, k: usize) -> CMat {
        &self.analog * &self.digital[k]
    }

    pub fn effective_all(&self) -> Vec<CMat> {
        (0..self.digital.len()).map(|k| self.effective(k)).collect()
    }

    /// `||F_RF F_BB,k||_F^2`.
    pub fn power(&self, k: usize) -> f64 {
        frob_sq(&self.effective(k))
    }

    /// `a^H F_k F_k^H a`.
    pub fn target_gain(&self, k: usize, a: &CVec) -> f64 {
        let u = self.analog.ad_mul(a);
        self.digital[k].ad_mul(&u).norm_squared()
    }

    /// Smallest gain toward `a` over subcarriers.
    pub fn min_target_gain(&self, a: &CVec) -> f64 {
        (0..self.digital.len())
            .map(|k| self.target_gain(k, a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_modulus_error(&self) -> f64 {
        self.analog
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Rescale every digital block to `||F_RF F_BB,k||_F^2 = n_s`.
    pub fn normalize_power(&mut self, n_s: usize) {
        let target = (n_s as f64).sqrt();
        for fb in &mut self.digital {
            let p = frob_sq(&(&self.analog * &*fb)).sqrt();
            if p > 0.0 {
                *fb *= c(target / p);
            }
        }
    }
}
