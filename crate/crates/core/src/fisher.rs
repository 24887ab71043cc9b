//! Fisher information of one bistatic path, equivalent FIM, Cramer-Rao bounds and
//! the almost-diagonal ratio of the receive-angle block.
//!
//! Parameters are ordered `[theta_r, phi_r, theta_t, phi_t, tau, beta_re, beta_im]`.

use nalgebra::{DMatrix, Matrix3, SMatrix};
use num_complex::Complex64;

use crate::array::{wavenumber_derivatives, ArrayGeometry, Direction};
use crate::channel::{PathParams, SubcarrierGrid};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, J};

pub type Matrix7 = SMatrix<f64, 7, 7>;

pub const THETA_R: usize = 0;
pub const PHI_R: usize = 1;
pub const THETA_T: usize = 2;
pub const PHI_T: usize = 3;
pub const TAU: usize = 4;
pub const BETA_RE: usize = 5;
pub const BETA_IM: usize = 6;

/// Permutation placing `[theta_r, phi_r, tau]` first, nuisance parameters after.
pub const POSITION_ORDER: [usize; 7] = [THETA_R, PHI_R, TAU, THETA_T, PHI_T, BETA_RE, BETA_IM];

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Per-path information matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FimBundle {
    pub fim7: Matrix7,
    /// `gamma = 2 N_r N_t E0 M / (sigma^2 N_s)`.
    pub snr_factor: f64,
    /// EFIM of `[theta_r, phi_r, tau]`.
    pub efim3: Matrix3<f64>,
}

/// How the 3x3 equivalent FIM is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfimMode {
    /// Diagonal of the full FIM, neglecting the nuisance coupling.
    Diagonal,
    /// Exact Schur complement.
    Schur,
}

impl FimBundle {
    pub fn compute(
        path: &PathParams,
        tx: &ArrayGeometry,
        rx: &ArrayGeometry,
        grid: &SubcarrierGrid,
        precoders: &[CMat],
        snr_factor: f64,
        mode: EfimMode,
    ) -> Result<Self> {
        let fim7 = fim_submatrix(path, tx, rx, grid, precoders, snr_factor)?;
        let efim3 = match mode {
            EfimMode::Diagonal => efim_diag(&fim7),
            EfimMode::Schur => {
                let e = efim(&reorder(&fim7, &POSITION_ORDER), 3)?;
                Matrix3::from_fn(|i, j| e[(i, j)])
            }
        };
        Ok(Self {
            fim7,
            snr_factor,
            efim3,
        })
    }
}

fn check_precoders(tx: &ArrayGeometry, grid: &SubcarrierGrid, precoders: &[CMat]) -> Result<()> {
    if precoders.len() != grid.num_subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "{} precoders for {} subcarriers",
            precoders.len(),
            grid.num_subcarriers
        )));
    }
    if let Some(f) = precoders.iter().find(|f| f.nrows() != tx.len()) {
        return Err(Error::DimensionMismatch(format!(
            "precoder has {} rows, array has {}",
            f.nrows(),
            tx.len()
        )));
    }
    Ok(())
}

/// Closed-form 7x7 FIM of one path given the per-subcarrier precoders `F_k` (`N_t x N_s`).
pub fn fim_submatrix(
    path: &PathParams,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    grid: &SubcarrierGrid,
    precoders: &[CMat],
    snr_factor: f64,
) -> Result<Matrix7> {
    check_precoders(tx, grid, precoders)?;
    let a = tx.steering_vector(path.aod);
    let (at, ap) = tx.steering_derivatives(path.aod);
    let b = rx.steering_vector(path.aoa);
    let (bt, bp) = rx.steering_derivatives(path.aoa);

    // Receive-side inner products.
    let bb = b.dotc(&b);
    let btt = bt.dotc(&bt);
    let bpp = bp.dotc(&bp);
    let btp = bt.dotc(&bp);
    let btb = bt.dotc(&b);
    let bpb = bp.dotc(&b);

    // Transmit-side sums over subcarriers; `xy` stands for sum_k x^H F_k F_k^H y.
    let zero = Complex64::new(0.0, 0.0);
    let (mut aa, mut ta, mut pa, mut tt, mut pp, mut pt) = (zero, zero, zero, zero, zero, zero);
    let (mut faa, mut ffaa, mut fat, mut fap) = (zero, zero, zero, zero);
    for (k, f) in precoders.iter().enumerate() {
        let w = TWO_PI * grid.freq(k);
        let u = f.ad_mul(&a);
        let ut = f.ad_mul(&at);
        let up = f.ad_mul(&ap);
        let uu = u.dotc(&u);
        aa += uu;
        faa += uu * w;
        ffaa += uu * w * w;
        ta += ut.dotc(&u);
        pa += up.dotc(&u);
        tt += ut.dotc(&ut);
        pp += up.dotc(&up);
        pt += up.dotc(&ut);
        let aut = u.dotc(&ut);
        let aup = u.dotc(&up);
        fat += aut * w;
        fap += aup * w;
    }

    let beta = path.gain;
    let bc = beta.conj();
    let b2 = beta.norm_sqr();
    let mut m = Matrix7::zeros();
    let mut set = |i: usize, j: usize, v: Complex64| {
        m[(i, j)] = snr_factor * v.re;
        m[(j, i)] = snr_factor * v.re;
    };

    set(THETA_R, THETA_R, btt * aa * b2);
    set(THETA_R, PHI_R, btp * aa * b2);
    set(THETA_R, THETA_T, -btb * ta * b2);
    set(THETA_R, PHI_T, -btb * pa * b2);
    set(THETA_R, TAU, btb * faa * b2);
    set(THETA_R, BETA_RE, J * bc * btb * aa);
    set(THETA_R, BETA_IM, -bc * btb * aa);

    set(PHI_R, PHI_R, bpp * aa * b2);
    set(PHI_R, THETA_T, -bpb * ta * b2);
    set(PHI_R, PHI_T, -bpb * pa * b2);
    set(PHI_R, TAU, bpb * faa * b2);
    set(PHI_R, BETA_RE, J * bc * bpb * aa);
    set(PHI_R, BETA_IM, -bc * bpb * aa);

    set(THETA_T, THETA_T, bb * tt * b2);
    set(THETA_T, PHI_T, bb * pt * b2);
    set(THETA_T, TAU, -bb * fat * b2);
    set(THETA_T, BETA_RE, -J * bc * bb * ta.conj());
    set(THETA_T, BETA_IM, bc * bb * ta.conj());

    set(PHI_T, PHI_T, bb * pp * b2);
    set(PHI_T, TAU, -bb * fap * b2);
    set(PHI_T, BETA_RE, -J * bc * bb * pa.conj());
    set(PHI_T, BETA_IM, bc * bb * pa.conj());

    set(TAU, TAU, bb * ffaa * b2);
    set(TAU, BETA_RE, J * bc * bb * faa);
    set(TAU, BETA_IM, -bc * bb * faa);

    set(BETA_RE, BETA_RE, bb * aa);
    set(BETA_RE, BETA_IM, J * bb * aa);
    set(BETA_IM, BETA_IM, bb * aa);
    Ok(m)
}

/// Symmetric permutation `P M P^T` with `order[i]` the source index of row `i`.
pub fn reorder(m: &Matrix7, order: &[usize; 7]) -> DMatrix<f64> {
    DMatrix::from_fn(7, 7, |i, j| m[(order[i], order[j])])
}

/// Schur complement `A - B A_d^{-1} B^T` keeping the leading `keep` parameters.
pub fn efim(fim: &DMatrix<f64>, keep: usize) -> Result<DMatrix<f64>> {
    let n = fim.nrows();
    if fim.ncols() != n || keep == 0 || keep > n {
        return Err(Error::DimensionMismatch(format!(
            "cannot keep {keep} of a {:?} matrix",
            fim.shape()
        )));
    }
    let a = fim.view((0, 0), (keep, keep)).into_owned();
    if keep == n {
        return Ok(a);
    }
    let b = fim.view((0, keep), (keep, n - keep)).into_owned();
    let d = fim.view((keep, keep), (n - keep, n - keep)).into_owned();
    // Nuisance entries differ by many orders of magnitude; test and solve the Jacobi-scaled block.
    let diag = d.diagonal();
    if diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NuisanceSingular);
    }
    let s = diag.map(|v| 1.0 / v.sqrt());
    let ds = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)] * s[i] * s[j]);
    let min_eig = ds.clone().symmetric_eigenvalues().min();
    if min_eig <= 1e-12 {
        return Err(Error::NuisanceSingular);
    }
    let bs = DMatrix::from_fn(keep, n - keep, |i, j| b[(i, j)] * s[j]);
    let x = ds
        .cholesky()
        .ok_or(Error::NuisanceSingular)?
        .solve(&bs.transpose());
    Ok(a - bs * x)
}

/// Diagonal EFIM `diag(J11, J22, J55)`.
pub fn efim_diag(fim7: &Matrix7) -> Matrix3<f64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(
        fim7[(THETA_R, THETA_R)],
        fim7[(PHI_R, PHI_R)],
        fim7[(TAU, TAU)],
    ))
}

/// Cramer-Rao bounds of the position-relevant parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crbs {
    pub theta: f64,
    pub phi: f64,
    pub tau: f64,
}

fn recip(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        f64::INFINITY
    }
}

/// Reciprocals of the EFIM diagonal; non-positive entries map to `+inf`.
pub fn crbs(efim3: &Matrix3<f64>) -> Crbs {
    Crbs {
        theta: recip(efim3[(0, 0)]),
        phi: recip(efim3[(1, 1)]),
        tau: recip(efim3[(2, 2)]),
    }
}

/// TOA bound convention when every subcarrier delivers the same gain `G` toward the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ToaBound {
    /// Exact `sum_k f_k^2`.
    #[default]
    ExactSum,
    /// Large-K limit `sum_k f_k^2 ~ B^2 K / 12`.
    LargeK,
}

/// Receive-angle curvature `(b_theta^H b_theta, b_phi^H b_phi)` at the AOA.
pub fn receive_curvatures(rx: &ArrayGeometry, aoa: Direction) -> (f64, f64) {
    let (bt, bp) = rx.steering_derivatives(aoa);
    (bt.norm_squared(), bp.norm_squared())
}

/// `sum_k 4 pi^2 f_k^2` under the chosen convention.
pub fn freq_weight(grid: &SubcarrierGrid, mode: ToaBound) -> f64 {
    let b = grid.bandwidth();
    match mode {
        ToaBound::ExactSum => TWO_PI * TWO_PI * grid.sum_freq_sq(),
        ToaBound::LargeK => {
            std::f64::consts::PI.powi(2) * b * b * grid.num_subcarriers as f64 / 3.0
        }
    }
}

/// CRBs under equal per-subcarrier gain `g = a^H F_k F_k^H a`.
pub fn crbs_equal_gain(
    rx: &ArrayGeometry,
    aoa: Direction,
    grid: &SubcarrierGrid,
    snr_factor: f64,
    gain_sq: f64,
    g: f64,
    mode: ToaBound,
) -> Crbs {
    let (btt, bpp) = receive_curvatures(rx, aoa);
    let k = grid.num_subcarriers as f64;
    let s = snr_factor * gain_sq * g;
    Crbs {
        theta: recip(s * btt * k),
        phi: recip(s * bpp * k),
        tau: recip(s * freq_weight(grid, mode)),
    }
}

/// Almost-diagonal ratio `|2 b_theta^H b_phi| / (b_theta^H b_theta + b_phi^H b_phi)` from array moments.
pub fn ad_ratio(rx: &ArrayGeometry, aoa: Direction) -> Result<f64> {
    if aoa.theta.sin() == 0.0 {
        return Err(Error::PolarSingularity(aoa.theta));
    }
    // Second-moment matrix sum_n p_n p_n^T of the centered array.
    let c0 = rx.centroid();
    let mut u = Matrix3::zeros();
    for p in rx.coords() {
        let q = p - c0;
        u += q * q.transpose();
    }
    let (kt, kp) = wavenumber_derivatives(aoa, rx.wavelength());
    let tt = kt.dot(&(u * kt));
    let pp = kp.dot(&(u * kp));
    let tp = kt.dot(&(u * kp));
    let den = tt + pp;
    if !(den > 0.0) {
        return Err(Error::PolarSingularity(aoa.theta));
    }
    Ok((2.0 * tp / den).abs())
}

/// Same ratio evaluated from the raw derivative vectors.
pub fn ad_ratio_from_vectors(bt: &CVec, bp: &CVec) -> f64 {
    let den = bt.norm_squared() + bp.norm_squared();
    (2.0 * bt.dotc(bp).re / den).abs()
}
