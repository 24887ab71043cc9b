//! Digital beamformer design by successive convex approximation, and the
//! alternation between digital (SCA) and analog (manifold) updates.
//!
//! With `F` the `N_RF x N_s` digital block of one subcarrier, the subproblem is
//! `min tr(F^H B F) - 2 Re tr(F^H C)` subject to `||u_n^H F||^2 >= kappa_n`, where
//! `B = F_RF^H F_RF`, `C = F_RF^H F_opt` and `u_n = F_RF^H a_n`. This is the
//! vectorized form `f^H R1 f - 2 Re{f^H R2 f_opt}`, `f^H R3 f >= kappa` with
//! `R1 = I kron B`, `R2 = I kron F_RF^H`, `R3 = I kron u u^H`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beamformer::HybridBeamformer;
use crate::error::{Error, Result};
use crate::linalg::{c, pinv, unvectorize, CMat, CVec};
use crate::manifold::{
    random_start, rsd_analog_design, rtr_analog_design, AnalogOutcome, PenaltyState, QuadData,
    RsdConfig, TrustRegionConfig,
};

/// `Re tr(A^H B)`.
fn re_dot(a: &CMat, b: &CMat) -> f64 {
    a.zip_fold(b, 0.0, |acc, x, y| acc + (x.conj() * y).re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaConfig {
    /// Stop once `|O_m - O_{m-1}| <= tol * max(1, |O_{m-1}|)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Feasibility and multiplier-sign tolerance of the QP solver.
    pub qp_tol: f64,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
            qp_tol: 1e-9,
        }
    }
}

/// Per-subcarrier data of the digital subproblem.
#[derive(Debug, Clone)]
pub struct QpData {
    pub gram: CMat,
    pub cross: CMat,
    pub projections: Vec<CVec>,
    pub kappas: Vec<f64>,
}

impl QpData {
    pub fn new(analog: &CMat, f_opt: &CMat, targets: &[CVec], kappas: &[f64]) -> Result<Self> {
        if analog.nrows() != f_opt.nrows() || targets.iter().any(|a| a.len() != analog.nrows()) {
            return Err(Error::DimensionMismatch(
                "analog, optimal beamformer and targets disagree in N_t".into(),
            ));
        }
        if targets.len() != kappas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets vs {} thresholds",
                targets.len(),
                kappas.len()
            )));
        }
        Ok(Self {
            gram: analog.ad_mul(analog),
            cross: analog.ad_mul(f_opt),
            projections: targets.iter().map(|a| analog.ad_mul(a)).collect(),
            kappas: kappas.to_vec(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.gram.nrows(), self.cross.ncols())
    }

    /// `tr(F^H B F) - 2 Re tr(F^H C)`.
    pub fn objective(&self, f: &CMat) -> f64 {
        re_dot(f, &(&self.gram * f)) - 2.0 * re_dot(f, &self.cross)
    }

    /// `||u_n^H F||^2`.
    pub fn constraint_value(&self, n: usize, f: &CMat) -> f64 {
        f.ad_mul(&self.projections[n]).norm_squared()
    }

    pub fn is_feasible(&self, f: &CMat, rel_tol: f64) -> bool {
        self.kappas
            .iter()
            .enumerate()
            .all(|(n, &k)| k <= 0.0 || self.constraint_value(n, f) >= k * (1.0 - rel_tol))
    }

    /// Smallest change making `f` satisfy every constraint: directions with a vanishing
    /// projection get a component along `u_n`, then the block is scaled up.
    pub fn restore_feasibility(&self, f: &CMat) -> Result<CMat> {
        let mut out = f.clone();
        for (n, (&k, u)) in self.kappas.iter().zip(&self.projections).enumerate() {
            if k <= 0.0 || self.constraint_value(n, &out) > 0.0 {
                continue;
            }
            let uu = u.norm_squared();
            if uu == 0.0 {
                return Err(Error::ScaInfeasible(format!(
                    "target {n} is orthogonal to the analog beamformer"
                )));
            }
            for i in 0..out.nrows() {
                out[(i, 0)] += u[i] * c(k.sqrt() / uu);
            }
        }
        let scale = self
            .kappas
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0.0)
            .map(|(n, &k)| (k / self.constraint_value(n, &out)).sqrt())
            .fold(1.0, f64::max);
        if scale > 1.0 {
            out *= c(scale * (1.0 + 1e-12));
        }
        Ok(out)
    }
}

/// `Re tr(normal^H F) >= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub normal: CMat,
    pub offset: f64,
}

impl AffineConstraint {
    pub fn value(&self, f: &CMat) -> f64 {
        re_dot(&self.normal, f)
    }
}

/// First-order minorant `2 Re{u^H F (u^H F_i)^H} - ||u^H F_i||^2 >= kappa` of `||u^H F||^2 >= kappa` at `F_i`.
pub fn sca_linearize(f_current: &CMat, projection: &CVec, kappa: f64) -> AffineConstraint {
    let w = f_current.ad_mul(projection);
    AffineConstraint {
        normal: projection * w.adjoint() * c(2.0),
        offset: kappa + w.norm_squared(),
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub digital: CMat,
    pub multipliers: Vec<f64>,
    pub objective: f64,
}

fn regularized_solver(
    gram: &CMat,
) -> Result<nalgebra::Cholesky<num_complex::Complex64, nalgebra::Dyn>> {
    if let Some(ch) = gram.clone().cholesky() {
        return Ok(ch);
    }
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)].re).fold(0.0, f64::max).max(1.0);
    (gram + CMat::identity(n, n) * c(1e-10 * scale))
        .cholesky()
        .ok_or_else(|| Error::ScaInfeasible("analog Gram matrix is not positive definite".into()))
}

/// Convex QP `min tr(F^H B F) - 2 Re tr(F^H C)` under affine constraints, by active-set enumeration of the KKT system.
pub fn qp_solve(qp: &QpData, constraints: &[AffineConstraint], qp_tol: f64) -> Result<QpSolution> {
    let chol = regularized_solver(&qp.gram)?;
    let f0 = chol.solve(&qp.cross);
    let z: Vec<CMat> = constraints.iter().map(|a| chol.solve(&a.normal)).collect();
    let m = constraints.len();
    if m > 16 {
        return Err(Error::InvalidParameter(format!(
            "{m} constraints exceed the enumeration limit"
        )));
    }
    let base: Vec<f64> = constraints.iter().map(|a| a.value(&f0)).collect();
    let gmat = DMatrix::from_fn(m, m, |i, j| 0.5 * re_dot(&constraints[i].normal, &z[j]));
    let tol_of = |b: f64| qp_tol * b.abs().max(1.0);
    let mut masks: Vec<u32> = (0..(1u32 << m)).collect();
    masks.sort_by_key(|s| s.count_ones());
    for mask in masks {
        let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut mu = vec![0.0; m];
        if !idx.is_empty() {
            let g = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gmat[(idx[a], idx[b])]);
            let rhs = DVector::from_iterator(
                idx.len(),
                idx.iter().map(|&i| constraints[i].offset - base[i]),
            );
            let Some(sol) = g.clone().lu().solve(&rhs) else {
                continue;
            };
            if (&g * &sol - &rhs).norm() > 1e-9 * rhs.norm().max(1.0) {
                continue;
            }
            for (a, &i) in idx.iter().enumerate() {
                mu[i] = sol[a];
            }
        }
        if mu.iter().any(|&v| v < -qp_tol) {
            continue;
        }
        let mut f = f0.clone();
        for (zi, &mi) in z.iter().zip(&mu) {
            if mi != 0.0 {
                f += zi * c(0.5 * mi);
            }
        }
        if constraints
            .iter()
            .all(|a| a.value(&f) >= a.offset - tol_of(a.offset))
        {
            let mu = mu.into_iter().map(|v| v.max(0.0)).collect();
            return Ok(QpSolution {
                objective: qp.objective(&f),
                digital: f,
                multipliers: mu,
            });
        }
    }
    Err(Error::ScaInfeasible(
        "no active set satisfies the KKT conditions".into(),
    ))
}

/// Largest violation among stationarity, primal feasibility, dual feasibility and complementary slackness.
pub fn kkt_residual(qp: &QpData, constraints: &[AffineConstraint], sol: &QpSolution) -> f64 {
    let mut grad = (&qp.gram * &sol.digital - &qp.cross) * c(2.0);
    for (a, &mu) in constraints.iter().zip(&sol.multipliers) {
        grad -= &a.normal * c(mu);
    }
    let scale = qp.cross.norm().max(1.0);
    let mut worst = grad.norm() / scale;
    for (a, &mu) in constraints.iter().zip(&sol.multipliers) {
        let slack = a.value(&sol.digital) - a.offset;
        worst = worst
            .max((-slack).max(0.0))
            .max((-mu).max(0.0))
            .max((mu * slack).abs() / scale);
    }
    worst
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub digital: CMat,
    /// Objective after each convex solve, preceded by the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Successive convex approximation for one subcarrier from a feasible start.
pub fn sca_digital_design(qp: &QpData, init: &CMat, cfg: &ScaConfig) -> Result<ScaOutcome> {
    let active: Vec<usize> = (0..qp.kappas.len())
        .filter(|&n| qp.kappas[n] > 0.0)
        .collect();
    if active.is_empty() {
        let sol = qp_solve(qp, &[], cfg.qp_tol)?;
        return Ok(ScaOutcome {
            trace: vec![qp.objective(init), sol.objective],
            digital: sol.digital,
            iterations: 1,
        });
    }
    if !qp.is_feasible(init, 1e-9) {
        return Err(Error::ScaInfeasible(
            "initial digital beamformer violates the gain constraints".into(),
        ));
    }
    let mut f = init.clone();
    let mut prev = qp.objective(&f);
    let mut trace = vec![prev];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let cons: Vec<AffineConstraint> = active
            .iter()
            .map(|&n| sca_linearize(&f, &qp.projections[n], qp.kappas[n]))
            .collect();
        let sol = qp_solve(qp, &cons, cfg.qp_tol)?;
        f = sol.digital;
        trace.push(sol.objective);
        let done = (sol.objective - prev).abs() <= cfg.tol * prev.abs().max(1.0);
        prev = sol.objective;
        if done {
            break;
        }
    }
    Ok(ScaOutcome {
        digital: f,
        trace,
        iterations,
    })
}

/// Inner solver used for the analog update.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalogSolver {
    TrustRegion(TrustRegionConfig),
    SteepestDescent(RsdConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternationConfig {
    pub solver: AnalogSolver,
    pub sca: ScaConfig,
    pub max_rounds: usize,
    /// Stop once the relative change of the Euclidean distance falls below this.
    pub rel_tol: f64,
}

impl AlternationConfig {
    pub fn trust_region(n_t: usize, n_rf: usize) -> Self {
        Self {
            solver: AnalogSolver::TrustRegion(TrustRegionConfig::for_dimension(n_t * n_rf)),
            sca: ScaConfig::default(),
            max_rounds: 30,
            rel_tol: 1e-4,
        }
    }

    pub fn steepest_descent(n_t: usize, n_rf: usize) -> Self {
        Self {
            solver: AnalogSolver::SteepestDescent(RsdConfig::for_dimension(n_t * n_rf)),
            ..Self::trust_region(n_t, n_rf)
        }
    }

    fn penalty_growth(&self) -> f64 {
        match &self.solver {
            AnalogSolver::TrustRegion(c) => c.penalty_growth,
            AnalogSolver::SteepestDescent(c) => c.penalty_growth,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    /// Power-normalized beamformer.
    pub beamformer: HybridBeamformer,
    /// Beamformer at the last iterate, before power normalization.
    pub raw: HybridBeamformer,
    /// `sum_k ||F_opt,k - F_RF F_BB,k||_F^2` after every round.
    pub objective_trace: Vec<f64>,
    /// Every gain constraint holds within the penalty tolerance at the last iterate.
    pub feasible: bool,
    pub max_violation: f64,
    pub rounds: usize,
    pub last_analog: Option<AnalogOutcome>,
}

/// Alternating hybrid design: SCA digital updates and manifold analog updates until the distance settles,
/// followed by per-subcarrier power normalization.
pub fn hybrid_design(
    f_opt: &[CMat],
    targets: &[CVec],
    kappas: &[f64],
    n_rf: usize,
    cfg: &AlternationConfig,
    seed: u64,
) -> Result<DesignOutcome> {
    let first = f_opt
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no subcarriers".into()))?;
    let (n_t, n_s) = first.shape();
    if !(n_s <= n_rf && n_rf <= n_t) {
        return Err(Error::InvalidParameter(format!(
            "need N_s <= N_RF <= N_t, got {n_s}, {n_rf}, {n_t}"
        )));
    }
    if targets.len() > n_s {
        return Err(Error::InvalidParameter(format!(
            "{} targets exceed N_s = {n_s}",
            targets.len()
        )));
    }
    if targets.len() != kappas.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets vs {} thresholds",
            targets.len(),
            kappas.len()
        )));
    }
    let num_k = f_opt.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = {
        let probe = QuadData::new(&vec![CMat::zeros(n_rf, n_s); num_k], f_opt, targets, kappas)?;
        random_start(&probe, &mut rng)
    };
    let mut analog = unvectorize(x.as_vec(), n_t, n_rf);
    let p = pinv(&analog, 1e-12);
    let mut digital: Vec<CMat> = f_opt.iter().map(|fo| &p * fo).collect();
    let mut penalty = PenaltyState::new(kappas, num_k, cfg.penalty_growth());
    let mut trace = Vec::new();
    let mut last_analog = None;
    let mut rounds = 0;
    for _ in 0..cfg.max_rounds.max(1) {
        rounds += 1;
        digital = f_opt
            .par_iter()
            .zip(digital.par_iter())
            .map(|(fo, fb)| {
                let qp = QpData::new(&analog, fo, targets, kappas)?;
                let init = qp.restore_feasibility(fb)?;
                Ok(sca_digital_design(&qp, &init, &cfg.sca)?.digital)
            })
            .collect::<Result<Vec<_>>>()?;
        let qd = QuadData::new(&digital, f_opt, targets, kappas)?;
        let out = match &cfg.solver {
            AnalogSolver::TrustRegion(c) => rtr_analog_design(&qd, x, &mut penalty, c)?,
            AnalogSolver::SteepestDescent(c) => rsd_analog_design(&qd, x, &mut penalty, c)?,
        };
        x = out.point.clone();
        analog = out.analog.clone();
        let objective = out.distance;
        last_analog = Some(out);
        let settled = trace
            .last()
            .is_some_and(|&prev: &f64| (prev - objective).abs() <= cfg.rel_tol * prev.abs());
        trace.push(objective);
        if settled {
            break;
        }
    }
    let raw = HybridBeamformer::new(analog, digital)?;
    let mut max_violation: f64 = 0.0;
    for (a, &kappa) in targets.iter().zip(kappas) {
        for k in 0..num_k {
            max_violation = max_violation.max(kappa - raw.target_gain(k, a));
        }
    }
    let feasible = max_violation < penalty.feas_tol || kappas.iter().all(|&k| k <= 0.0);
    let mut beamformer = raw.clone();
    beamformer.normalize_power(n_s);
    Ok(DesignOutcome {
        beamformer,
        raw,
        objective_trace: trace,
        feasible,
        max_violation,
        rounds,
        last_analog,
    })
}
