use crate::linalg::{c, re_inner, CVec};

/// Why truncated CG stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcgStop {
    Converged,
    NegativeCurvature,
    Boundary,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct TcgOutcome {
    pub step: CVec,
    /// Hessian applied to `step`, accumulated alongside it.
    pub hess_step: CVec,
    pub stop: TcgStop,
    pub iterations: usize,
}

impl TcgOutcome {
    /// Model decrease relative to the current point: `<g, d> + 1/2 <H d, d>`.
    pub fn model_change(&self, grad: &CVec) -> f64 {
        re_inner(grad, &self.step) + 0.5 * re_inner(&self.hess_step, &self.step)
    }

    pub fn at_boundary(&self) -> bool {
        matches!(self.stop, TcgStop::Boundary | TcgStop::NegativeCurvature)
    }
}

/// Largest `tau >= 0` with `||eta + tau * delta|| = radius`.
fn boundary_tau(eta: &CVec, delta: &CVec, radius: f64) -> f64 {
    let ed = re_inner(eta, delta);
    let dd = re_inner(delta, delta);
    let ee = re_inner(eta, eta);
    let disc = (ed * ed + dd * (radius * radius - ee)).max(0.0);
    (-ed + disc.sqrt()) / dd
}

/// Steihaug-Toint truncated conjugate gradient for `min <g,d> + 1/2 <Hd,d>` over `||d|| <= radius`.
pub fn tcg_solve<H>(grad: &CVec, mut hess: H, radius: f64, max_iter: usize) -> TcgOutcome
where
    H: FnMut(&CVec) -> CVec,
{
    let n = grad.len();
    let mut eta = CVec::zeros(n);
    let mut h_eta = CVec::zeros(n);
    let mut r = grad.clone();
    let mut rr = re_inner(&r, &r);
    let g_norm = rr.sqrt();
    let tol = 0.1 * g_norm.min(g_norm.powf(1.5));
    let mut delta = -&r;
    let mut stop = TcgStop::MaxIterations;
    let mut iterations = 0;
    if g_norm == 0.0 {
        return TcgOutcome {
            step: eta,
            hess_step: h_eta,
            stop: TcgStop::Converged,
            iterations,
        };
    }
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let h_delta = hess(&delta);
        let curv = re_inner(&delta, &h_delta);
        let alpha = rr / curv;
        let trial = &eta + &delta * c(alpha);
        if curv <= 0.0 || trial.norm() >= radius {
            let tau = boundary_tau(&eta, &delta, radius);
            eta += &delta * c(tau);
            h_eta += &h_delta * c(tau);
            stop = if curv <= 0.0 {
                TcgStop::NegativeCurvature
            } else {
                TcgStop::Boundary
            };
            break;
        }
        eta = trial;
        h_eta += &h_delta * c(alpha);
        r += &h_delta * c(alpha);
        let rr_new = re_inner(&r, &r);
        if rr_new.sqrt() <= tol {
            stop = TcgStop::Converged;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        delta = &delta * c(beta) - &r;
    }
    TcgOutcome {
        step: eta,
        hess_step: h_eta,
        stop,
        iterations,
    }
}
