//! Optimization over the complex circle manifold `{x : |x_i| = 1}` for the analog
//! beamformer `x = vec(F_RF)`.
//!
//! Vectors are compared with the real inner product `<u, v> = Re{u^H v}`; Euclidean
//! gradients are taken with respect to that inner product, so the directional
//! derivative of `f` along `d` equals `<grad f, d>`.

mod rsd;
mod rtr;
mod tcg;

pub use rsd::{rsd_analog_design, rsd_minimize, RsdConfig};
pub use rtr::{random_start, rtr_analog_design, rtr_minimize, TrustRegionConfig};
pub use tcg::{tcg_solve, TcgOutcome, TcgStop};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{c, frob_sq, kron, re_inner, unvectorize, vectorize, CMat, CVec};

/// A point on the complex circle manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct CirclePoint(CVec);

impl CirclePoint {
    pub fn new(x: CVec) -> Result<Self> {
        if let Some(i) = x.iter().position(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "entry {i} is not unit modulus"
            )));
        }
        Ok(Self(x))
    }

    /// Entrywise phase normalization of an arbitrary vector with no zero entries.
    pub fn normalized(x: &CVec) -> Result<Self> {
        let mut out = x.clone();
        for (i, z) in out.iter_mut().enumerate() {
            let r = z.norm();
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::RetractionSingularity(i));
            }
            *z /= r;
        }
        Ok(Self(out))
    }

    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self(CVec::from_fn(len, |_, _| {
            Complex64::from_polar(1.0, rng.random_range(0.0..two_pi))
        }))
    }

    pub fn from_matrix(m: &CMat) -> Result<Self> {
        Self::new(vectorize(m))
    }

    pub fn as_vec(&self) -> &CVec {
        &self.0
    }

    pub fn into_vec(self) -> CVec {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tangent-space projection `g - Re{g .* conj(x)} .* x`.
    pub fn project(&self, g: &CVec) -> CVec {
        CVec::from_iterator(
            g.len(),
            g.iter()
                .zip(self.0.iter())
                .map(|(gi, xi)| gi - xi * (gi * xi.conj()).re),
        )
    }

    /// Retraction `(x + d) ./ |x + d|`.
    pub fn retract(&self, d: &CVec) -> Result<Self> {
        Self::normalized(&(&self.0 + d))
    }

    /// Largest deviation of `Re{v .* conj(x)}` from zero.
    pub fn tangency_residual(&self, v: &CVec) -> f64 {
        v.iter()
            .zip(self.0.iter())
            .map(|(vi, xi)| (vi * xi.conj()).re.abs())
            .fold(0.0, f64::max)
    }
}

/// Riemannian gradient from a Euclidean gradient.
pub fn riemannian_gradient(x: &CirclePoint, egrad: &CVec) -> CVec {
    x.project(egrad)
}

/// Data of the penalized analog-beamforming problem for fixed digital beamformers.
#[derive(Debug, Clone)]
pub struct QuadData {
    n_t: usize,
    n_rf: usize,
    /// `F_BB,k F_BB,k^H` per subcarrier.
    w: Vec<CMat>,
    w_sum: CMat,
    t1: CVec,
    targets: Vec<CVec>,
    kappas: Vec<f64>,
    opt_energy: f64,
}

impl QuadData {
    /// `digital[k]` is `N_RF x N_s`, `optimal[k]` is `N_t x N_s`, `targets[n]` the unit steering vectors.
    pub fn new(
        digital: &[CMat],
        optimal: &[CMat],
        targets: &[CVec],
        kappas: &[f64],
    ) -> Result<Self> {
        if digital.is_empty() || digital.len() != optimal.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} digital vs {} optimal beamformers",
                digital.len(),
                optimal.len()
            )));
        }
        if targets.len() != kappas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets vs {} thresholds",
                targets.len(),
                kappas.len()
            )));
        }
        let n_rf = digital[0].nrows();
        let n_t = optimal[0].nrows();
        for (fb, fo) in digital.iter().zip(optimal) {
            if fb.nrows() != n_rf || fo.nrows() != n_t || fb.ncols() != fo.ncols() {
                return Err(Error::DimensionMismatch(
                    "inconsistent beamformer shapes".into(),
                ));
            }
        }
        if targets.iter().any(|a| a.len() != n_t) {
            return Err(Error::DimensionMismatch(
                "steering vector length differs from N_t".into(),
            ));
        }
        let w: Vec<CMat> = digital.iter().map(|f| f * f.adjoint()).collect();
        let w_sum = w.iter().fold(CMat::zeros(n_rf, n_rf), |acc, m| acc + m);
        let t1m = optimal
            .iter()
            .zip(digital)
            .fold(CMat::zeros(n_t, n_rf), |acc, (fo, fb)| {
                acc + fo * fb.adjoint()
            });
        Ok(Self {
            n_t,
            n_rf,
            w,
            w_sum,
            t1: vectorize(&t1m),
            targets: targets.to_vec(),
            kappas: kappas.to_vec(),
            opt_energy: optimal.iter().map(frob_sq).sum(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_t, self.n_rf)
    }

    pub fn num_subcarriers(&self) -> usize {
        self.w.len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    pub fn t1(&self) -> &CVec {
        &self.t1
    }

    fn mat(&self, x: &CVec) -> CMat {
        unvectorize(x, self.n_t, self.n_rf)
    }

    /// `T1 x = vec(X sum_k F_BB,k F_BB,k^H)`.
    pub fn t1_apply(&self, x: &CVec) -> CVec {
        vectorize(&(self.mat(x) * &self.w_sum))
    }

    /// `Sigma_{k,n} x = vec(a a^H X F_BB,k F_BB,k^H)`.
    pub fn sigma_apply(&self, k: usize, n: usize, x: &CVec) -> CVec {
        let a = &self.targets[n];
        let y = self.mat(x).ad_mul(a);
        vectorize(&(a * (&self.w[k] * y).adjoint()))
    }

    /// `x^H Sigma_{k,n} x = a^H X W_k X^H a`.
    pub fn sigma_quad(&self, k: usize, n: usize, x: &CVec) -> f64 {
        let y = self.mat(x).ad_mul(&self.targets[n]);
        y.dotc(&(&self.w[k] * &y)).re
    }

    /// Constraint violations `g_{k,n} = max(0, kappa_n - x^H Sigma_{k,n} x)`, indexed `[n][k]`.
    pub fn violations(&self, x: &CVec) -> Vec<Vec<f64>> {
        let xm = self.mat(x);
        self.targets
            .iter()
            .zip(&self.kappas)
            .map(|(a, &kappa)| {
                let y = xm.ad_mul(a);
                self.w
                    .iter()
                    .map(|wk| (kappa - y.dotc(&(wk * &y)).re).max(0.0))
                    .collect()
            })
            .collect()
    }

    /// `sum_k ||F_opt,k - F_RF F_BB,k||_F^2`.
    pub fn distance(&self, x: &CVec) -> f64 {
        self.opt_energy + re_inner(x, &self.t1_apply(x)) - 2.0 * re_inner(x, &self.t1)
    }

    /// Dense `T1 = (sum_k W_k)^T kron I`, for verification on small instances.
    pub fn dense_t1(&self) -> CMat {
        kron(&self.w_sum.transpose(), &CMat::identity(self.n_t, self.n_t))
    }

    /// Dense `Sigma_{k,n} = W_k^T kron a a^H`.
    pub fn dense_sigma(&self, k: usize, n: usize) -> CMat {
        let a = &self.targets[n];
        kron(&self.w[k].transpose(), &(a * a.adjoint()))
    }
}

/// Per-(target, subcarrier) penalty coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    /// `rho[n][k]`.
    pub rho: Vec<Vec<f64>>,
    pub growth: f64,
    pub feas_tol: f64,
}

impl PenaltyState {
    /// `rho = 1 / kappa^2`, tolerance `1e-3 * min kappa`.
    pub fn new(kappas: &[f64], num_subcarriers: usize, growth: f64) -> Self {
        let rho = kappas
            .iter()
            .map(|&k| vec![if k > 0.0 { 1.0 / (k * k) } else { 1.0 }; num_subcarriers])
            .collect();
        let kmin = kappas
            .iter()
            .cloned()
            .filter(|&k| k > 0.0)
            .fold(f64::INFINITY, f64::min);
        let feas_tol = if kmin.is_finite() { 1e-3 * kmin } else { 0.0 };
        Self {
            rho,
            growth,
            feas_tol,
        }
    }

    /// Whether every constraint is within tolerance.
    pub fn is_feasible(&self, g: &[Vec<f64>]) -> bool {
        g.iter().flatten().all(|&v| v < self.feas_tol || v == 0.0)
    }

    /// Grow the coefficients of every target with an offending subcarrier; returns whether any changed.
    pub fn escalate(&mut self, g: &[Vec<f64>]) -> bool {
        let mut changed = false;
        for (rho_n, g_n) in self.rho.iter_mut().zip(g) {
            if g_n.iter().any(|&v| v >= self.feas_tol && v > 0.0) {
                rho_n.iter_mut().for_each(|r| *r *= self.growth);
                changed = true;
            }
        }
        changed
    }
}

/// Smooth objective with Euclidean gradient and Hessian-vector product.
pub trait CostFunction {
    fn cost(&self, x: &CVec) -> f64;
    fn egrad(&self, x: &CVec) -> CVec;
    fn ehess(&self, x: &CVec, d: &CVec) -> CVec;
}

/// `f(x) = x^H T1 x - 2 Re{x^H t1} + 1/2 sum rho g^2`.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedObjective<'a> {
    pub data: &'a QuadData,
    pub penalty: &'a PenaltyState,
}

impl PenalizedObjective<'_> {
    /// Active terms as `(n, k, rho, s - kappa)`; ties count as inactive.
    fn active<'b>(&'b self, ys: &'b [CVec]) -> impl Iterator<Item = (usize, usize, f64, f64)> + 'b {
        let qd = self.data;
        (0..qd.targets.len()).flat_map(move |n| {
            let y = &ys[n];
            let kappa = qd.kappas[n];
            qd.w.iter().enumerate().filter_map(move |(k, wk)| {
                let s = y.dotc(&(wk * y)).re;
                (kappa > s).then(|| (n, k, self.penalty.rho[n][k], s - kappa))
            })
        })
    }

    fn projections(&self, xm: &CMat) -> Vec<CVec> {
        self.data.targets.iter().map(|a| xm.ad_mul(a)).collect()
    }
}

impl CostFunction for PenalizedObjective<'_> {
    fn cost(&self, x: &CVec) -> f64 {
        let qd = self.data;
        let xm = qd.mat(x);
        let ys = self.projections(&xm);
        let quad = (&xm * &qd.w_sum).zip_fold(&xm, 0.0, |acc, a, b| acc + (b.conj() * a).re);
        let pen: f64 = self
            .active(&ys)
            .map(|(_, _, rho, r)| 0.5 * rho * r * r)
            .sum();
        quad - 2.0 * re_inner(x, &qd.t1) + pen
    }

    fn egrad(&self, x: &CVec) -> CVec {
        let qd = self.data;
        let xm = qd.mat(x);
        let ys = self.projections(&xm);
        let mut g = &xm * &qd.w_sum * c(2.0) - unvectorize(&qd.t1, qd.n_t, qd.n_rf) * c(2.0);
        let mut z: Vec<CVec> = ys.iter().map(|y| CVec::zeros(y.len())).collect();
        for (n, k, rho, r) in self.active(&ys) {
            z[n] += &qd.w[k] * &ys[n] * c(2.0 * rho * r);
        }
        for (a, zn) in qd.targets.iter().zip(&z) {
            g += a * zn.adjoint();
        }
        vectorize(&g)
    }

    fn ehess(&self, x: &CVec, d: &CVec) -> CVec {
        let qd = self.data;
        let xm = qd.mat(x);
        let dm = qd.mat(d);
        let ys = self.projections(&xm);
        let es: Vec<CVec> = qd.targets.iter().map(|a| dm.ad_mul(a)).collect();
        let mut h = &dm * &qd.w_sum * c(2.0);
        let mut z: Vec<CVec> = ys.iter().map(|y| CVec::zeros(y.len())).collect();
        for (n, k, rho, r) in self.active(&ys) {
            let wy = &qd.w[k] * &ys[n];
            let we = &qd.w[k] * &es[n];
            let cross = es[n].dotc(&wy).re;
            z[n] += (we * c(r) + wy * c(2.0 * cross)) * c(2.0 * rho);
        }
        for (a, zn) in qd.targets.iter().zip(&z) {
            h += a * zn.adjoint();
        }
        vectorize(&h)
    }
}

/// Riemannian Hessian `Proj(H d - Re{egrad .* conj(x)} .* d)`.
pub fn riemannian_hessian_apply<F: CostFunction + ?Sized>(
    f: &F,
    x: &CirclePoint,
    egrad: &CVec,
    d: &CVec,
) -> CVec {
    let hd = f.ehess(x.as_vec(), d);
    let corr = CVec::from_iterator(
        d.len(),
        hd.iter()
            .zip(egrad.iter().zip(x.as_vec().iter()))
            .zip(d.iter())
            .map(|((h, (g, xi)), di)| h - di * (g * xi.conj()).re),
    );
    x.project(&corr)
}

/// Result of an analog design run.
#[derive(Debug, Clone)]
pub struct AnalogOutcome {
    pub point: CirclePoint,
    /// `N_t x N_RF` analog beamformer.
    pub analog: CMat,
    pub feasible: bool,
    /// Penalized objective at the returned point.
    pub objective: f64,
    /// `sum_k ||F_opt,k - F_RF F_BB,k||_F^2`.
    pub distance: f64,
    pub max_violation: f64,
    pub penalty_rounds: usize,
    pub iterations: usize,
}

/// Outcome of one inner minimization at fixed penalties.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub point: CirclePoint,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Increase penalties until feasible or the round cap is reached, running `inner` each round.
pub(crate) fn penalty_loop<I>(
    data: &QuadData,
    x0: CirclePoint,
    penalty: &mut PenaltyState,
    max_rounds: usize,
    mut inner: I,
) -> AnalogOutcome
where
    I: FnMut(&PenalizedObjective<'_>, CirclePoint) -> InnerOutcome,
{
    let mut x = x0;
    let mut iterations = 0;
    let mut rounds = 0;
    let mut feasible = false;
    let mut objective = f64::NAN;
    for _ in 0..max_rounds.max(1) {
        rounds += 1;
        let out = {
            let obj = PenalizedObjective { data, penalty };
            inner(&obj, x)
        };
        iterations += out.iterations;
        x = out.point;
        objective = out.cost;
        let g = data.violations(x.as_vec());
        feasible = penalty.is_feasible(&g);
        if feasible || !penalty.escalate(&g) {
            break;
        }
    }
    let g = data.violations(x.as_vec());
    let max_violation = g.iter().flatten().cloned().fold(0.0, f64::max);
    let (n_t, n_rf) = data.dims();
    AnalogOutcome {
        analog: unvectorize(x.as_vec(), n_t, n_rf),
        distance: data.distance(x.as_vec()),
        point: x,
        feasible,
        objective,
        max_violation,
        penalty_rounds: rounds,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn unit(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        let v = CVec::from_fn(n, |_, _| cn(rng));
        let nv = v.norm();
        v / c(nv)
    }

    /// Random problem with thresholds above the current constraint values so penalties are active.
    fn problem(seed: u64, nt: usize, nrf: usize, k: usize, ntg: usize) -> (QuadData, CirclePoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = nrf.min(2);
        let fb: Vec<CMat> = (0..k)
            .map(|_| CMat::from_fn(nrf, ns, |_, _| cn(&mut rng)))
            .collect();
        let fo: Vec<CMat> = (0..k)
            .map(|_| CMat::from_fn(nt, ns, |_, _| cn(&mut rng)))
            .collect();
        let a: Vec<CVec> = (0..ntg).map(|_| unit(&mut rng, nt)).collect();
        let x = CirclePoint::random(nt * nrf, &mut rng);
        let probe = QuadData::new(&fb, &fo, &a, &vec![0.0; ntg]).unwrap();
        let kap: Vec<f64> = (0..ntg)
            .map(|n| {
                (0..k)
                    .map(|kk| probe.sigma_quad(kk, n, x.as_vec()))
                    .fold(0.0, f64::max)
                    * 1.5
                    + 0.1
            })
            .collect();
        (QuadData::new(&fb, &fo, &a, &kap).unwrap(), x)
    }

    fn penalty_for(qd: &QuadData) -> PenaltyState {
        let mut p = PenaltyState::new(qd.kappas(), qd.num_subcarriers(), 10.0);
        for r in p.rho.iter_mut().flatten() {
            *r = 2.0;
        }
        p
    }

    fn tangent(rng: &mut ChaCha8Rng, x: &CirclePoint) -> CVec {
        x.project(&CVec::from_fn(x.len(), |_, _| cn(rng)))
    }

    #[test]
    fn quad_data_trivial_case() {
        let fo = vec![CMat::from_fn(3, 2, |i, j| c((i + 2 * j) as f64))];
        let qd = QuadData::new(&[CMat::identity(2, 2)], &fo, &[], &[]).unwrap();
        assert!((qd.dense_t1() - CMat::identity(6, 6)).norm() == 0.0);
        assert_eq!(qd.t1(), &vectorize(&fo[0]));
        assert!(QuadData::new(&[CMat::identity(2, 2)], &[], &[], &[]).is_err());
    }

    #[test]
    fn quadratic_forms_match_beamformer_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let fb: Vec<CMat> = (0..3)
                .map(|_| CMat::from_fn(3, 2, |_, _| cn(&mut rng)))
                .collect();
            let fo: Vec<CMat> = (0..3)
                .map(|_| CMat::from_fn(5, 2, |_, _| cn(&mut rng)))
                .collect();
            let a = unit(&mut rng, 5);
            let qd = QuadData::new(&fb, &fo, std::slice::from_ref(&a), &[0.3]).unwrap();
            let x = CirclePoint::random(15, &mut rng);
            let frf = unvectorize(x.as_vec(), 5, 3);
            let lhs = re_inner(x.as_vec(), &qd.t1_apply(x.as_vec()));
            let rhs: f64 = fb.iter().map(|f| frob_sq(&(&frf * f))).sum();
            assert!((lhs - rhs).abs() < 1e-10 * rhs);
            for k in 0..3 {
                let direct = (a.adjoint() * &frf * &fb[k]).norm_squared();
                assert!((qd.sigma_quad(k, 0, x.as_vec()) - direct).abs() < 1e-10 * direct.max(1.0));
                let dense = x.as_vec().dotc(&(qd.dense_sigma(k, 0) * x.as_vec())).re;
                assert!((dense - direct).abs() < 1e-10 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn objective_cases() {
        let nt = 4;
        let fo = vec![CMat::zeros(nt, 1)];
        let qd = QuadData::new(&[CMat::identity(1, 1)], &fo, &[], &[]).unwrap();
        let p = PenaltyState::new(&[], 1, 10.0);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = CirclePoint::random(nt, &mut rng);
        assert!((obj.cost(x.as_vec()) - nt as f64).abs() < 1e-12);
        assert!((obj.egrad(x.as_vec()) - x.as_vec() * c(2.0)).norm() < 1e-12);

        // Single hugely violated constraint with rho = 2.
        let a = unit(&mut rng, nt);
        let qd = QuadData::new(
            &[CMat::identity(1, 1)],
            &fo,
            std::slice::from_ref(&a),
            &[1e3],
        )
        .unwrap();
        let mut p = PenaltyState::new(&[1e3], 1, 10.0);
        p.rho[0][0] = 2.0;
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let s = qd.sigma_quad(0, 0, x.as_vec());
        assert!((obj.cost(x.as_vec()) - (nt as f64 + (1e3 - s).powi(2))).abs() < 1e-9);
        // The penalty pulls toward larger x^H Sigma x: its gradient component is along -Sigma x.
        let gp = obj.egrad(x.as_vec()) - x.as_vec() * c(2.0);
        let sx = qd.sigma_apply(0, 0, x.as_vec());
        assert!(re_inner(&gp, &sx) < 0.0);
    }

    #[test]
    fn distance_matches_objective_without_penalty() {
        let (qd, x) = problem(4, 6, 2, 3, 1);
        let p = PenaltyState {
            rho: vec![vec![0.0; 3]],
            growth: 10.0,
            feas_tol: 0.0,
        };
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        assert!((qd.distance(x.as_vec()) - qd.opt_energy - obj.cost(x.as_vec())).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_directional_finite_differences() {
        let (qd, x) = problem(1, 6, 3, 4, 2);
        let p = penalty_for(&qd);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let g = obj.egrad(x.as_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = CVec::from_fn(x.len(), |_, _| cn(&mut rng));
            let h = 1e-6;
            let fd = (obj.cost(&(x.as_vec() + &d * c(h))) - obj.cost(&(x.as_vec() - &d * c(h))))
                / (2.0 * h);
            let an = re_inner(&g, &d);
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn matrix_free_matches_dense_operators() {
        let (qd, x) = problem(3, 8, 4, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = CVec::from_fn(x.len(), |_, _| cn(&mut rng));
        assert!((qd.t1_apply(&v) - qd.dense_t1() * &v).norm() < 1e-10 * v.norm());
        for k in 0..2 {
            for n in 0..2 {
                assert!(
                    (qd.sigma_apply(k, n, &v) - qd.dense_sigma(k, n) * &v).norm()
                        < 1e-10 * v.norm()
                );
            }
        }
    }

    /// Dense Euclidean Hessian as a real-linear map: H d = A d + B conj(d).
    #[test]
    fn hessian_matches_dense_oracle() {
        let (qd, x) = problem(8, 4, 2, 2, 1);
        let p = penalty_for(&qd);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let xv = x.as_vec();
        let mut a_mat = qd.dense_t1() * c(2.0);
        let mut b_mat = CMat::zeros(xv.len(), xv.len());
        for k in 0..2 {
            let s = qd.sigma_quad(k, 0, xv);
            let kappa = qd.kappas()[0];
            if kappa > s {
                let sig = qd.dense_sigma(k, 0);
                let sx = &sig * xv;
                let rho = p.rho[0][k];
                a_mat += &sig * c(2.0 * rho * (s - kappa)) + &sx * sx.adjoint() * c(2.0 * rho);
                b_mat += &sx * sx.transpose() * c(2.0 * rho);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = CVec::from_fn(xv.len(), |_, _| cn(&mut rng));
        let dense = &a_mat * &d + &b_mat * d.conjugate();
        assert!((obj.ehess(xv, &d) - &dense).norm() < 1e-10 * dense.norm());
    }

    #[test]
    fn riemannian_calculus_properties() {
        let (qd, x) = problem(21, 6, 2, 3, 2);
        let p = penalty_for(&qd);
        let obj = PenalizedObjective {
            data: &qd,
            penalty: &p,
        };
        let eg = obj.egrad(x.as_vec());
        let rg = riemannian_gradient(&x, &eg);
        assert!(x.tangency_residual(&rg) < 1e-12);
        assert!((x.project(&rg) - &rg).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let d1 = tangent(&mut rng, &x);
            let d2 = tangent(&mut rng, &x);
            let h1 = riemannian_hessian_apply(&obj, &x, &eg, &d1);
            let h2 = riemannian_hessian_apply(&obj, &x, &eg, &d2);
            assert!(x.tangency_residual(&h1) < 1e-12);
            let asym = (re_inner(&h1, &d2) - re_inner(&d1, &h2)).abs();
            assert!(
                asym <= 1e-8 * re_inner(&h1, &d2).abs().max(1.0),
                "asymmetry {asym}"
            );
        }
        // Radial directions vanish under projection.
        let radial = CVec::from_iterator(
            x.len(),
            x.as_vec()
                .iter()
                .enumerate()
                .map(|(i, z)| z * (i as f64 + 1.0)),
        );
        assert!(riemannian_gradient(&x, &radial).norm() < 1e-12);
    }

    /// Log-log slope of the second-order Taylor remainder along a retraction curve.
    pub(crate) fn taylor_slope<F: CostFunction>(obj: &F, x: &CirclePoint, d: &CVec) -> f64 {
        let f0 = obj.cost(x.as_vec());
        let eg = obj.egrad(x.as_vec());
        let g = riemannian_gradient(x, &eg);
        let hd = riemannian_hessian_apply(obj, x, &eg, d);
        let ts = [1e-2, 1e-3, 1e-4, 1e-5];
        let errs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let xt = x.retract(&(d * c(t))).unwrap();
                let model = f0 + t * re_inner(&g, d) + 0.5 * t * t * re_inner(&hd, d);
                (obj.cost(xt.as_vec()) - model).abs()
            })
            .collect();
        (errs[0].ln() - errs[2].ln()) / (ts[0].ln() - ts[2].ln())
    }

    #[test]
    fn hessian_taylor_remainder_is_third_order() {
        for seed in 0..5 {
            let (qd, x) = problem(30 + seed, 6, 2, 3, 1);
            let p = penalty_for(&qd);
            let obj = PenalizedObjective {
                data: &qd,
                penalty: &p,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = tangent(&mut rng, &x);
            let slope = taylor_slope(&obj, &x, &(&d / c(d.norm())));
            assert!(slope >= 2.7, "seed {seed}: slope {slope}");
        }
    }

    #[test]
    fn retraction_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = CirclePoint::random(8, &mut rng);
        assert_eq!(x.retract(&CVec::zeros(8)).unwrap(), x);
        let d = tangent(&mut rng, &x);
        let r = x.retract(&d).unwrap();
        assert!(r.as_vec().iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        // Second order: halving d quarters the gap to x + d.
        let e1 =
            (x.retract(&(&d * c(1e-2))).unwrap().into_vec() - (x.as_vec() + &d * c(1e-2))).norm();
        let e2 =
            (x.retract(&(&d * c(5e-3))).unwrap().into_vec() - (x.as_vec() + &d * c(5e-3))).norm();
        assert!((e1 / e2 - 4.0).abs() < 0.1, "ratio {}", e1 / e2);
        let mut bad = CVec::zeros(8);
        bad[3] = -x.as_vec()[3];
        assert!(matches!(
            x.retract(&bad),
            Err(Error::RetractionSingularity(3))
        ));
    }

    #[test]
    fn penalty_escalation() {
        let mut p = PenaltyState::new(&[2.0, 4.0], 3, 10.0);
        assert_eq!(p.rho[0][0], 0.25);
        assert!((p.feas_tol - 2e-3).abs() < 1e-18);
        let g = vec![vec![0.0, 0.5, 0.0], vec![0.0; 3]];
        assert!(!p.is_feasible(&g));
        assert!(p.escalate(&g));
        assert_eq!(p.rho[0], vec![2.5; 3]);
        assert_eq!(p.rho[1], vec![1.0 / 16.0; 3]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_tangent(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = CirclePoint::random(10, &mut rng);
            let g = CVec::from_fn(10, |_, _| cn(&mut rng));
            let p = x.project(&g);
            prop_assert!(x.tangency_residual(&p) < 1e-12);
            prop_assert!((x.project(&p) - &p).norm() < 1e-12);
        }
    }
}
