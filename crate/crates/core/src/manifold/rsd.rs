use super::rtr::check_start;
use super::{
    penalty_loop, riemannian_gradient, AnalogOutcome, CirclePoint, CostFunction, InnerOutcome,
    PenaltyState, QuadData,
};
use crate::error::{Error, Result};
use crate::linalg::{c, re_inner};

/// Riemannian steepest-descent settings (baseline solver).
#[derive(Debug, Clone, PartialEq)]
pub struct RsdConfig {
    /// Length of the first trial step.
    pub initial_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub grad_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_growth: f64,
}

impl RsdConfig {
    pub fn for_dimension(dim: usize) -> Self {
        Self {
            initial_step: 0.1 * (dim.max(1) as f64).sqrt(),
            armijo: 1e-4,
            max_backtracks: 60,
            grad_tol: 1e-6,
            max_outer: 30,
            max_inner: 200,
            penalty_growth: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0)
            || !(self.armijo > 0.0 && self.armijo < 1.0)
            || !(self.penalty_growth > 1.0)
        {
            return Err(Error::InvalidParameter(
                "invalid steepest-descent settings".into(),
            ));
        }
        Ok(())
    }
}

/// Steepest descent with Armijo backtracking (halving) along the retraction.
pub fn rsd_minimize<F: CostFunction + ?Sized>(
    f: &F,
    x0: CirclePoint,
    cfg: &RsdConfig,
) -> InnerOutcome {
    let mut x = x0;
    let mut fx = f.cost(x.as_vec());
    let mut trace = vec![fx];
    let mut g = riemannian_gradient(&x, &f.egrad(x.as_vec()));
    let g0 = g.norm();
    let mut step_len = cfg.initial_step;
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        let gn = g.norm();
        if gn == 0.0 || gn <= cfg.grad_tol * g0 {
            break;
        }
        iterations += 1;
        let gg = re_inner(&g, &g);
        let mut t = step_len / gn;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            if let Ok(cand) = x.retract(&(&g * c(-t))) {
                let fc = f.cost(cand.as_vec());
                if fc <= fx - cfg.armijo * t * gg {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        x = cand;
        fx = fc;
        trace.push(fx);
        step_len = 2.0 * t * gn;
        g = riemannian_gradient(&x, &f.egrad(x.as_vec()));
    }
    InnerOutcome {
        point: x,
        cost: fx,
        grad_norm: g.norm(),
        iterations,
        trace,
    }
}

/// Penalized analog design (steepest-descent inner solver).
pub fn rsd_analog_design(
    data: &QuadData,
    x0: CirclePoint,
    penalty: &mut PenaltyState,
    cfg: &RsdConfig,
) -> Result<AnalogOutcome> {
    cfg.validate()?;
    check_start(data, &x0)?;
    Ok(penalty_loop(data, x0, penalty, cfg.max_outer, |obj, x| {
        rsd_minimize(obj, x, cfg)
    }))
}
