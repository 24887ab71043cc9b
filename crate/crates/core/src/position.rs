//! Hybrid AOA/TOA positioning: position reconstruction, its Jacobian, the geometric
//! coefficients of the squared position error bound, and the per-target gain threshold.
//!
//! The receiver sits at the origin and the transmitter at `(0, D, 0)`.

use nalgebra::{Matrix3, Vector3};

use crate::array::{ArrayGeometry, Direction};
use crate::channel::{PathParams, SubcarrierGrid, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::fisher::{
    crbs, crbs_equal_gain, freq_weight, receive_curvatures, Crbs, EfimMode, FimBundle, ToaBound,
};
use crate::linalg::CMat;

const C: f64 = SPEED_OF_LIGHT;

fn omega_tol(range: f64, baseline: f64) -> f64 {
    1e-12 * range.max(baseline)
}

/// Target position from the AOA at the receiver and the bistatic TOA.
pub fn position_from_aoa_toa(aoa: Direction, toa: f64, baseline: f64) -> Result<Vector3<f64>> {
    let range = C * toa;
    if range <= baseline {
        return Err(Error::InfeasibleDelay { range, baseline });
    }
    let omega = range - baseline * aoa.theta.sin() * aoa.phi.sin();
    if omega <= omega_tol(range, baseline) {
        return Err(Error::BaselineSingularity(omega));
    }
    let d = (range * range - baseline * baseline) / (2.0 * omega);
    Ok(aoa.unit_vector() * d)
}

/// Coefficients of the squared position error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomCoeffs {
    /// `c tau - D sin(theta) sin(phi)`, meters.
    pub omega: f64,
    pub o: f64,
    pub p: f64,
    pub q: f64,
    /// `c (c^2 tau^2 - 2 c tau D sin(theta) sin(phi) + D^2)`, with `q = upsilon^2`.
    pub upsilon: f64,
}

pub fn geometric_coeffs(aoa: Direction, toa: f64, baseline: f64) -> GeomCoeffs {
    let st = aoa.theta.sin();
    let (sp, cp) = aoa.phi.sin_cos();
    let r = C * toa;
    let d = baseline;
    let omega = r - d * st * sp;
    let a = r * r - d * d;
    let o = a * a * (r * r + d * d * sp * sp - 2.0 * r * d * st * sp);
    let p = a
        * a
        * st
        * st
        * (r * r + d * d * st * st * sp * sp - 2.0 * r * d * st * sp + d * d * cp * cp);
    let upsilon = C * (r * r - 2.0 * r * d * st * sp + d * d);
    GeomCoeffs {
        omega,
        o,
        p,
        q: upsilon * upsilon,
        upsilon,
    }
}

/// Jacobian of [`position_from_aoa_toa`] with columns `(d/dtheta, d/dphi, d/dtau)`.
pub fn position_jacobian(aoa: Direction, toa: f64, baseline: f64) -> Result<Matrix3<f64>> {
    let g = geometric_coeffs(aoa, toa, baseline);
    if g.omega.abs() <= omega_tol(C * toa, baseline) {
        return Err(Error::BaselineSingularity(g.omega));
    }
    let (st, ct) = aoa.theta.sin_cos();
    let (sp, cp) = aoa.phi.sin_cos();
    let r = C * toa;
    let a = r * r - baseline * baseline;
    let w2 = 2.0 * g.omega * g.omega;
    let u = aoa.unit_vector();
    let u_t = Vector3::new(ct * cp, ct * sp, -st);
    let u_p = Vector3::new(-st * sp, st * cp, 0.0);
    let dist = a / (2.0 * g.omega);
    let col_t = u * (a * baseline * ct * sp / w2) + u_t * dist;
    let col_p = u * (a * baseline * st * cp / w2) + u_p * dist;
    let col_tau = u * (g.upsilon / w2);
    Ok(Matrix3::from_columns(&[col_t, col_p, col_tau]))
}

/// `(o CRB_theta + p CRB_phi + q CRB_tau) / (4 omega^4)`; `+inf` on the singular set.
pub fn speb_from_crbs(c: &Crbs, g: &GeomCoeffs) -> f64 {
    let w4 = 4.0 * g.omega.powi(4);
    if !(w4 > 0.0) {
        return f64::INFINITY;
    }
    let mut s = 0.0;
    for (coef, crb) in [(g.o, c.theta), (g.p, c.phi), (g.q, c.tau)] {
        if coef > 0.0 {
            s += coef * crb;
        }
    }
    s / w4
}

/// `tr(Y J^{-1} Y^T)` with `Y` the position Jacobian; `+inf` when singular.
pub fn speb_from_efim(efim3: &Matrix3<f64>, aoa: Direction, toa: f64, baseline: f64) -> f64 {
    let Ok(y) = position_jacobian(aoa, toa, baseline) else {
        return f64::INFINITY;
    };
    match efim3.try_inverse() {
        Some(inv) => (y * inv * y.transpose()).trace(),
        None => f64::INFINITY,
    }
}

/// Squared and root position error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peb {
    pub speb: f64,
    pub peb: f64,
}

impl Peb {
    fn from_speb(speb: f64) -> Self {
        Self {
            speb,
            peb: speb.sqrt(),
        }
    }
}

/// Everything needed to evaluate position bounds of one sensing link.
#[derive(Debug, Clone)]
pub struct SensingLink {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub grid: SubcarrierGrid,
    /// `gamma = 2 N_r N_t E0 M / (sigma^2 N_s)`.
    pub snr_factor: f64,
    pub baseline: f64,
}

impl SensingLink {
    pub fn fim(&self, path: &PathParams, precoders: &[CMat], mode: EfimMode) -> Result<FimBundle> {
        FimBundle::compute(
            path,
            &self.tx,
            &self.rx,
            &self.grid,
            precoders,
            self.snr_factor,
            mode,
        )
    }

    /// Closed-form bound with the diagonal EFIM.
    pub fn speb(&self, path: &PathParams, precoders: &[CMat]) -> Result<Peb> {
        let fb = self.fim(path, precoders, EfimMode::Diagonal)?;
        let g = geometric_coeffs(path.aoa, path.toa, self.baseline);
        Ok(Peb::from_speb(speb_from_crbs(&crbs(&fb.efim3), &g)))
    }

    /// Bound through the exact Schur-complement EFIM and the full Jacobian.
    pub fn speb_exact(&self, path: &PathParams, precoders: &[CMat]) -> Result<Peb> {
        let fb = match self.fim(path, precoders, EfimMode::Schur) {
            Ok(fb) => fb,
            Err(Error::NuisanceSingular) => return Ok(Peb::from_speb(f64::INFINITY)),
            Err(e) => return Err(e),
        };
        Ok(Peb::from_speb(speb_from_efim(
            &fb.efim3,
            path.aoa,
            path.toa,
            self.baseline,
        )))
    }

    /// Bound when every subcarrier delivers gain `g = a^H F_k F_k^H a` toward the target.
    pub fn speb_equal_gain(&self, path: &PathParams, g: f64, mode: ToaBound) -> Peb {
        let c = crbs_equal_gain(
            &self.rx,
            path.aoa,
            &self.grid,
            self.snr_factor,
            path.gain.norm_sqr(),
            g,
            mode,
        );
        let gc = geometric_coeffs(path.aoa, path.toa, self.baseline);
        Peb::from_speb(speb_from_crbs(&c, &gc))
    }

    /// Minimum per-subcarrier gain toward the target that keeps its PEB below `gamma_peb`.
    pub fn kappa(&self, path: &PathParams, gamma_peb: f64, mode: ToaBound) -> Result<f64> {
        kappa_threshold(
            path,
            &self.rx,
            &self.grid,
            self.snr_factor,
            gamma_peb,
            self.baseline,
            mode,
        )
    }
}

/// Per-target threshold on `a^H F_k F_k^H a` guaranteeing `PEB <= gamma_peb`.
pub fn kappa_threshold(
    path: &PathParams,
    rx: &ArrayGeometry,
    grid: &SubcarrierGrid,
    snr_factor: f64,
    gamma_peb: f64,
    baseline: f64,
    mode: ToaBound,
) -> Result<f64> {
    if !(gamma_peb > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PEB threshold must be positive, got {gamma_peb}"
        )));
    }
    let g = geometric_coeffs(path.aoa, path.toa, baseline);
    if g.omega.abs() <= omega_tol(C * path.toa, baseline) {
        return Err(Error::BaselineSingularity(g.omega));
    }
    let (btt, bpp) = receive_curvatures(rx, path.aoa);
    let k = grid.num_subcarriers as f64;
    let lead =
        1.0 / (4.0 * g.omega.powi(4) * snr_factor * path.gain.norm_sqr() * gamma_peb * gamma_peb);
    let mut s = g.q / freq_weight(grid, mode);
    if g.o > 0.0 {
        s += g.o / (btt * k);
    }
    if g.p > 0.0 {
        s += g.p / (bpp * k);
    }
    Ok(lead * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: f64 = 200.0;

    fn measure(p: Vector3<f64>) -> (Direction, f64) {
        let tx = Vector3::new(0.0, D, 0.0);
        (
            Direction::from_vector(&p).unwrap(),
            (p.norm() + (p - tx).norm()) / C,
        )
    }

    #[test]
    fn reconstruct_on_axis() {
        let tau = (100.0 + 50_000f64.sqrt()) / C;
        let p = position_from_aoa_toa(Direction::new(0.0, 0.0), tau, D).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 100.0)).norm() < 1e-9);
    }

    #[test]
    fn reconstruct_scatterer() {
        let target = Vector3::new(60.0, 100.0, -10.0);
        let (aoa, tau) = measure(target);
        let p = position_from_aoa_toa(aoa, tau, D).unwrap();
        assert!((p - target).norm() < 1e-9);
    }

    #[test]
    fn degenerate_delays_rejected() {
        let aoa = Direction::new(1.0, 0.3);
        assert!(matches!(
            position_from_aoa_toa(aoa, D / C, D),
            Err(Error::InfeasibleDelay { .. })
        ));
    }

    #[test]
    fn omega_is_range_when_sin_product_vanishes() {
        let g = geometric_coeffs(Direction::new(0.0, 0.7), 1e-6, D);
        assert_eq!(g.omega, C * 1e-6);
        let g = geometric_coeffs(Direction::new(1.0, 0.0), 1e-6, D);
        assert_eq!(g.omega, C * 1e-6);
    }

    #[test]
    fn on_axis_tau_column_structure() {
        let tau = (100.0 + 50_000f64.sqrt()) / C;
        let j = position_jacobian(Direction::new(0.0, 0.4), tau, D).unwrap();
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(1, 2)], 0.0);
    }

    fn fd_jacobian(aoa: Direction, tau: f64) -> Matrix3<f64> {
        let h = [1e-7, 1e-7, 1e-7 / C];
        let f = |t: f64, p: f64, s: f64| position_from_aoa_toa(Direction::new(t, p), s, D).unwrap();
        let cols = [
            (f(aoa.theta + h[0], aoa.phi, tau) - f(aoa.theta - h[0], aoa.phi, tau)) / (2.0 * h[0]),
            (f(aoa.theta, aoa.phi + h[1], tau) - f(aoa.theta, aoa.phi - h[1], tau)) / (2.0 * h[1]),
            (f(aoa.theta, aoa.phi, tau + h[2]) - f(aoa.theta, aoa.phi, tau - h[2])) / (2.0 * h[2]),
        ];
        Matrix3::from_columns(&cols)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for ix in 0..5 {
            for iz in 0..10 {
                let p = Vector3::new(
                    -90.0 + 40.0 * ix as f64,
                    60.0 + 9.0 * iz as f64,
                    -20.0 + 5.0 * iz as f64,
                );
                let (aoa, tau) = measure(p);
                let j = position_jacobian(aoa, tau, D).unwrap();
                let fd = fd_jacobian(aoa, tau);
                for col in 0..3 {
                    let scale = fd.column(col).norm();
                    for row in 0..3 {
                        let err = (j[(row, col)] - fd[(row, col)]).abs() / scale;
                        assert!(err < 1e-5, "point {p:?} entry ({row},{col}) error {err}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn column_norms_match_coefficients(x in -150.0f64..150.0, y in 10.0f64..190.0, z in -40.0f64..40.0) {
            prop_assume!(x.abs() > 5.0);
            let (aoa, tau) = measure(Vector3::new(x, y, z));
            let g = geometric_coeffs(aoa, tau, D);
            let j = position_jacobian(aoa, tau, D).unwrap();
            let w4 = 4.0 * g.omega.powi(4);
            prop_assert!((j.column(0).norm_squared() * w4 / g.o - 1.0).abs() < 1e-8);
            prop_assert!((j.column(1).norm_squared() * w4 / g.p - 1.0).abs() < 1e-8);
            prop_assert!((j.column(2).norm_squared() * w4 / g.q - 1.0).abs() < 1e-8);
            prop_assert!(g.o >= 0.0 && g.p >= 0.0 && g.q >= 0.0);
        }

        #[test]
        fn closed_form_speb_equals_trace(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vector3<f64> = Vector3::new(rng.random_range(-150.0..150.0), rng.random_range(-50.0..250.0), rng.random_range(-40.0..40.0));
            prop_assume!(p.x.abs() > 1.0);
            let (aoa, tau) = measure(p);
            let d: Vector3<f64> = Vector3::new(rng.random_range(0.1..10.0), rng.random_range(0.1..10.0), rng.random_range(1e10..1e14));
            let j = Matrix3::from_diagonal(&d);
            let cf = speb_from_crbs(&crbs(&j), &geometric_coeffs(aoa, tau, D));
            let tr = speb_from_efim(&j, aoa, tau, D);
            prop_assert!((cf / tr - 1.0).abs() < 1e-8);
        }
    }

    fn link(nt: usize, k: usize) -> SensingLink {
        let grid = SubcarrierGrid::new(k, 240e3, 28e9).unwrap();
        SensingLink {
            tx: ArrayGeometry::uspa_xz(nt, grid.wavelength()).unwrap(),
            rx: ArrayGeometry::uspa_xz(nt, grid.wavelength()).unwrap(),
            grid,
            snr_factor: 2.0 * (nt * nt) as f64 * 1e12 * 30.0 / 2.0,
            baseline: D,
        }
    }

    fn target_path(p: Vector3<f64>, beta_sq: f64) -> PathParams {
        let (aoa, toa) = measure(p);
        let aod = Direction::from_vector(&(p - Vector3::new(0.0, D, 0.0))).unwrap();
        PathParams {
            aoa,
            aod,
            toa,
            gain: Complex64::from_polar(beta_sq.sqrt(), 0.3),
        }
    }

    /// Precoder sending gain exactly `g` toward the AOD on every subcarrier.
    fn equal_gain_precoders(l: &SensingLink, path: &PathParams, g: f64) -> Vec<CMat> {
        let a = l.tx.steering_vector(path.aod);
        let f = CMat::from_columns(&[a * c(g.sqrt())]);
        vec![f; l.grid.num_subcarriers]
    }

    #[test]
    fn kappa_round_trip() {
        let l = link(36, 16);
        let path = target_path(Vector3::new(60.0, 100.0, -10.0), 1e-14);
        for mode in [ToaBound::ExactSum, ToaBound::LargeK] {
            let kappa = l.kappa(&path, 0.1, mode).unwrap();
            let f = equal_gain_precoders(&l, &path, kappa);
            let peb = l.speb(&path, &f).unwrap().peb;
            let tol = match mode {
                ToaBound::ExactSum => 1e-6,
                ToaBound::LargeK => 2.0 / 256.0,
            };
            assert!((peb / 0.1 - 1.0).abs() < tol, "{mode:?}: {peb}");
            let k2 = l.kappa(&path, 0.2, mode).unwrap();
            assert!((k2 * 4.0 / kappa - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_gain_halves_speb() {
        let l = link(16, 8);
        let path = target_path(Vector3::new(-60.0, 150.0, 30.0), 1e-14);
        let s1 = l
            .speb(&path, &equal_gain_precoders(&l, &path, 1.0))
            .unwrap()
            .speb;
        let s2 = l
            .speb(&path, &equal_gain_precoders(&l, &path, 2.0))
            .unwrap()
            .speb;
        assert!((s1 / s2 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn singular_geometry_is_infinite() {
        let l = link(16, 8);
        let p = Vector3::new(0.0, 80.0, 0.0);
        let path = target_path(p, 1e-14);
        let f = equal_gain_precoders(&l, &path, 1.0);
        assert_eq!(l.speb(&path, &f).unwrap().speb, f64::INFINITY);
        assert!(l.kappa(&path, 0.1, ToaBound::ExactSum).is_err());
    }

    #[test]
    fn diagonal_efim_close_to_exact_at_large_arrays() {
        let l = link(100, 64);
        let path = target_path(Vector3::new(60.0, 100.0, -10.0), 1e-14);
        // A single steering column leaves the AOD information at zero; add a second stream.
        let a = l.tx.steering_vector(path.aod);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = CMat::from_fn(l.tx.len(), 1, |_, _| {
            Complex64::from_polar(0.1, rng.random_range(0.0..6.3))
        });
        let f = vec![
            CMat::from_columns(&[a * c(2f64.sqrt())]).insert_column(1, c(0.0))
                + w.insert_column(0, c(0.0));
            l.grid.num_subcarriers
        ];
        let d = l.fim(&path, &f, EfimMode::Diagonal).unwrap().efim3;
        let e = l.fim(&path, &f, EfimMode::Schur).unwrap().efim3;
        assert!((d - e).norm() / e.norm() < 0.05);
    }

    #[test]
    fn peb_invariant_under_rotation_about_baseline_axis() {
        // Rotating target and both arrays about the y axis leaves the bound unchanged.
        let base = link(16, 8);
        let p = Vector3::new(50.0, 90.0, -20.0);
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7);
        let mut turned = base.clone();
        turned.tx = base.tx.rotated(&rot);
        turned.rx = base.rx.rotated(&rot);
        let eval = |l: &SensingLink, q: Vector3<f64>| {
            let path = target_path(q, 1e-14);
            let a = l.tx.steering_vector(path.aod);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let w = CMat::from_fn(l.tx.len(), 2, |_, _| {
                Complex64::from_polar(0.2, rng.random_range(0.0..6.0))
            });
            let f = CMat::from_columns(&[a.clone(), a * c(0.5)]) + w;
            let fk = vec![f; l.grid.num_subcarriers];
            l.speb_exact(&path, &fk).unwrap().peb
        };
        let p0 = eval(&base, p);
        let p1 = eval(&turned, rot * p);
        assert!((p0 / p1 - 1.0).abs() < 1e-6, "{p0} vs {p1}");
    }
}
