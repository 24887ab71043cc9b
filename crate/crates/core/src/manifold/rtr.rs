use rand::Rng;

use super::{
    penalty_loop, riemannian_gradient, riemannian_hessian_apply, tcg_solve, AnalogOutcome,
    CirclePoint, CostFunction, InnerOutcome, PenaltyState, QuadData,
};
use crate::error::{Error, Result};

/// Riemannian trust-region settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionConfig {
    pub delta0: f64,
    pub delta_max: f64,
    pub accept_threshold: f64,
    /// Stop an inner run once the gradient norm falls below this fraction of its initial value.
    pub grad_tol: f64,
    /// Penalty rounds.
    pub max_outer: usize,
    /// Trust-region iterations per penalty round.
    pub max_inner: usize,
    /// Truncated CG iterations per subproblem.
    pub max_inner_cg: usize,
    pub penalty_growth: f64,
}

impl TrustRegionConfig {
    /// Defaults scaled to `dim = N_t * N_RF`.
    pub fn for_dimension(dim: usize) -> Self {
        let s = (dim.max(1) as f64).sqrt();
        Self {
            delta0: 0.1 * s,
            delta_max: s,
            accept_threshold: 0.1,
            grad_tol: 1e-6,
            max_outer: 30,
            max_inner: 200,
            max_inner_cg: 2 * dim.max(1),
            penalty_growth: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0 < self.delta_max) {
            return Err(Error::InvalidParameter(format!(
                "trust region radii must satisfy 0 < {} < {}",
                self.delta0, self.delta_max
            )));
        }
        if !(0.0..0.25).contains(&self.accept_threshold) {
            return Err(Error::InvalidParameter(format!(
                "acceptance threshold {} not in [0, 0.25)",
                self.accept_threshold
            )));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty growth {} must exceed 1",
                self.penalty_growth
            )));
        }
        Ok(())
    }
}

/// Minimize `f` on the circle manifold from `x0` with the Riemannian trust-region method.
pub fn rtr_minimize<F: CostFunction + ?Sized>(
    f: &F,
    x0: CirclePoint,
    cfg: &TrustRegionConfig,
) -> InnerOutcome {
    let mut x = x0;
    let mut fx = f.cost(x.as_vec());
    let mut radius = cfg.delta0;
    let mut trace = vec![fx];
    let mut eg = f.egrad(x.as_vec());
    let mut g = riemannian_gradient(&x, &eg);
    let g0 = g.norm();
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        if g.norm() <= cfg.grad_tol * g0 || g.norm() == 0.0 {
            break;
        }
        iterations += 1;
        let sub = tcg_solve(
            &g,
            |d| riemannian_hessian_apply(f, &x, &eg, d),
            radius,
            cfg.max_inner_cg,
        );
        let predicted = -sub.model_change(&g);
        let candidate = match x.retract(&sub.step) {
            Ok(p) => p,
            Err(_) => {
                radius *= 0.25;
                continue;
            }
        };
        let f_new = f.cost(candidate.as_vec());
        let actual = fx - f_new;
        if !(predicted > 0.0) {
            break;
        }
        let ratio = actual / predicted;
        if ratio < 0.25 {
            radius *= 0.25;
        } else if ratio > 0.75 && sub.at_boundary() {
            radius = (2.0 * radius).min(cfg.delta_max);
        }
        if ratio > cfg.accept_threshold && f_new <= fx {
            x = candidate;
            fx = f_new;
            trace.push(fx);
            eg = f.egrad(x.as_vec());
            g = riemannian_gradient(&x, &eg);
        }
        if radius < 1e-14 * cfg.delta_max {
            break;
        }
    }
    InnerOutcome {
        point: x,
        cost: fx,
        grad_norm: g.norm(),
        iterations,
        trace,
    }
}

/// Penalized analog design (trust-region inner solver).
pub fn rtr_analog_design(
    data: &QuadData,
    x0: CirclePoint,
    penalty: &mut PenaltyState,
    cfg: &TrustRegionConfig,
) -> Result<AnalogOutcome> {
    cfg.validate()?;
    check_start(data, &x0)?;
    Ok(penalty_loop(data, x0, penalty, cfg.max_outer, |obj, x| {
        rtr_minimize(obj, x, cfg)
    }))
}

pub(super) fn check_start(data: &QuadData, x0: &CirclePoint) -> Result<()> {
    let (n_t, n_rf) = data.dims();
    if x0.len() != n_t * n_rf {
        return Err(Error::DimensionMismatch(format!(
            "start point has {} entries, expected {}",
            x0.len(),
            n_t * n_rf
        )));
    }
    Ok(())
}

/// Random-phase start point for the given data.
pub fn random_start<R: Rng>(data: &QuadData, rng: &mut R) -> CirclePoint {
    let (n_t, n_rf) = data.dims();
    CirclePoint::random(n_t * n_rf, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, CMat, CVec};
    use crate::manifold::{rsd_analog_design, rsd_minimize, PenalizedObjective, RsdConfig};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn instance(seed: u64, nt: usize, nrf: usize, k: usize, kappas: &[f64]) -> QuadData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fb: Vec<CMat> = (0..k)
            .map(|_| CMat::from_fn(nrf, 2, |_, _| cn(&mut rng)))
            .collect();
        let fo: Vec<CMat> = (0..k)
            .map(|_| CMat::from_fn(nt, 2, |_, _| cn(&mut rng)))
            .collect();
        let a: Vec<CVec> = kappas
            .iter()
            .map(|_| {
                let v = CVec::from_fn(nt, |_, _| cn(&mut rng));
                let n = v.norm();
                v / c(n)
            })
            .collect();
        QuadData::new(&fb, &fo, &a, kappas).unwrap()
    }

    #[test]
    fn config_validation() {
        let cfg = TrustRegionConfig::for_dimension(64);
        assert!(cfg.validate().is_ok());
        assert!((cfg.delta_max - 8.0).abs() < 1e-15);
        let mut bad = cfg.clone();
        bad.delta0 = 10.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.accept_threshold = 0.3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn accepted_iterates_are_monotone_and_on_manifold() {
        let qd = instance(1, 8, 3, 4, &[0.5, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_start(&qd, &mut rng);
        let penalty = PenaltyState::new(qd.kappas(), qd.num_subcarriers(), 10.0);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &penalty,
        };
        let out = rtr_minimize(&obj, x0, &TrustRegionConfig::for_dimension(24));
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(out
            .point
            .as_vec()
            .iter()
            .all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert!(out.trace.len() > 1);
    }

    #[test]
    fn unconstrained_rtr_beats_fifty_descent_steps() {
        for seed in 0..5 {
            let qd = instance(10 + seed, 16, 4, 8, &[]);
            let x0 = random_start(&qd, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut p = PenaltyState::new(&[], 8, 10.0);
            let rtr = rtr_analog_design(
                &qd,
                x0.clone(),
                &mut p,
                &TrustRegionConfig::for_dimension(64),
            )
            .unwrap();
            let mut rsd_cfg = RsdConfig::for_dimension(64);
            rsd_cfg.max_inner = 50;
            let rsd = rsd_analog_design(&qd, x0, &mut p, &rsd_cfg).unwrap();
            assert!(rtr.feasible);
            assert!(
                rtr.distance <= rsd.distance * (1.0 + 1e-12),
                "seed {seed}: {} vs {}",
                rtr.distance,
                rsd.distance
            );
        }
    }

    #[test]
    fn solvers_agree_on_benign_instance() {
        // F_BB = I: the optimum is the entrywise phase of F_opt.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fo = vec![CMat::from_fn(10, 3, |_, _| cn(&mut rng))];
        let qd = QuadData::new(&[CMat::identity(3, 3)], &fo, &[], &[]).unwrap();
        let x0 = random_start(&qd, &mut rng);
        let mut p = PenaltyState::new(&[], 1, 10.0);
        let rtr = rtr_analog_design(
            &qd,
            x0.clone(),
            &mut p,
            &TrustRegionConfig::for_dimension(30),
        )
        .unwrap();
        let mut cfg = RsdConfig::for_dimension(30);
        cfg.max_inner = 2000;
        let rsd = rsd_analog_design(&qd, x0, &mut p, &cfg).unwrap();
        let best: f64 = fo[0].iter().map(|z| (z.norm() - 1.0).powi(2)).sum();
        assert!((rtr.distance - best).abs() < 1e-6 * best);
        assert!((rsd.distance - rtr.distance).abs() <= 1e-3 * rtr.distance);
    }

    #[test]
    fn descent_stopping_contract_and_determinism() {
        let qd = instance(5, 8, 2, 3, &[0.4]);
        let cfg = RsdConfig::for_dimension(16);
        let p = PenaltyState::new(qd.kappas(), 3, 10.0);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let x0 = random_start(&qd, &mut ChaCha8Rng::seed_from_u64(4));
        let a = rsd_minimize(&obj, x0.clone(), &cfg);
        let b = rsd_minimize(&obj, x0.clone(), &cfg);
        assert_eq!(a.point, b.point);
        assert_eq!(a.trace, b.trace);
        let g0 = crate::manifold::riemannian_gradient(
            &x0,
            &crate::manifold::CostFunction::egrad(&obj, x0.as_vec()),
        )
        .norm();
        assert!(
            a.grad_norm <= cfg.grad_tol * g0
                || a.iterations == cfg.max_inner
                || a.trace.len() == a.iterations
        );
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn penalties_drive_feasibility() {
        let qd0 = instance(6, 16, 4, 4, &[0.0]);
        let x0 = random_start(&qd0, &mut ChaCha8Rng::seed_from_u64(6));
        let (nt, nrf) = qd0.dims();
        let base: f64 = (0..4)
            .map(|k| qd0.sigma_quad(k, 0, x0.as_vec()))
            .fold(f64::INFINITY, f64::min);
        let kappa = 3.0 * base.max(0.1);
        let qd = instance(6, 16, 4, 4, &[kappa]);
        let mut p = PenaltyState::new(qd.kappas(), 4, 10.0);
        let start = p.clone();
        let out = rtr_analog_design(&qd, x0, &mut p, &TrustRegionConfig::for_dimension(nt * nrf))
            .unwrap();
        assert!(out.feasible, "max violation {}", out.max_violation);
        assert!(out.max_violation < p.feas_tol);
        for (a, b) in start.rho.iter().flatten().zip(p.rho.iter().flatten()) {
            assert!(b >= a && b.is_finite());
        }
        assert!(out.analog.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn start_point_dimension_checked() {
        let qd = instance(7, 4, 2, 1, &[]);
        let mut p = PenaltyState::new(&[], 1, 10.0);
        let x0 = CirclePoint::random(5, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(rtr_analog_design(&qd, x0, &mut p, &TrustRegionConfig::for_dimension(8)).is_err());
    }
}
