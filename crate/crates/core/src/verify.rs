//! Numerical oracle suites for the closed-form analytics.
//!
//! Each suite compares a closed form with an independent reference (central finite differences
//! of the signal model, direct matrix traces, Taylor remainders) and reports the worst deviation.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{ArrayGeometry, Direction};
use crate::channel::{PathParams, SubcarrierGrid, SPEED_OF_LIGHT};
use crate::fisher::{crbs, fim_submatrix, Matrix7, ToaBound};
use crate::linalg::{c, re_inner, CMat, CVec};
use crate::manifold::{
    riemannian_gradient, riemannian_hessian_apply, CirclePoint, CostFunction, PenalizedObjective,
    PenaltyState, QuadData,
};
use crate::position::{
    geometric_coeffs, position_from_aoa_toa, position_jacobian, speb_from_crbs, speb_from_efim,
};
use crate::scenario::Scenario;

const TWO_PI: f64 = 2.0 * PI;

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    pub tolerance: f64,
    /// `true` when the metric must stay at or above the tolerance instead of below it.
    pub lower_bound: bool,
    pub cases: usize,
}

impl CheckReport {
    fn upper(name: &'static str, metric: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name,
            metric,
            tolerance,
            lower_bound: false,
            cases,
        }
    }

    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.metric >= self.tolerance
        } else {
            self.metric <= self.tolerance
        }
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = if self.lower_bound { ">=" } else { "<=" };
        write!(
            f,
            "{} {}: {:.3e} {op} {:.3e} over {} cases",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            self.tolerance,
            self.cases
        )
    }
}

/// Random centered planar layout in the x-z plane with `count <= 9` elements on a half-wavelength grid.
fn small_array(rng: &mut ChaCha8Rng, count: usize, wavelength: f64) -> ArrayGeometry {
    let mut cells: Vec<(f64, f64)> = (0..9).map(|i| ((i % 3) as f64, (i / 3) as f64)).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells.truncate(count);
    let n = count as f64;
    let (mx, mz) = cells
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, z)| (a + x / n, b + z / n));
    let d = wavelength / 2.0;
    let coords = cells
        .iter()
        .map(|(x, z)| Vector3::new((x - mx) * d, 0.0, (z - mz) * d))
        .collect();
    ArrayGeometry::from_coords(coords, wavelength).expect("non-empty array")
}

struct FimInstance {
    path: PathParams,
    tx: ArrayGeometry,
    rx: ArrayGeometry,
    grid: SubcarrierGrid,
    f: Vec<CMat>,
}

impl FimInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let grid = SubcarrierGrid::new(rng.random_range(1..=4), 240e3, 28e9).expect("valid grid");
        let lambda = grid.wavelength();
        let (n_t, n_r) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let tx = small_array(rng, n_t, lambda);
        let rx = small_array(rng, n_r, lambda);
        let ns = rng.random_range(1..=2);
        let f = (0..grid.num_subcarriers)
            .map(|_| {
                CMat::from_fn(tx.len(), ns, |_, _| {
                    Complex64::from_polar(0.4, rng.random_range(0.0..TWO_PI))
                })
            })
            .collect();
        let path = PathParams {
            aoa: Direction::new(rng.random_range(0.3..2.8), rng.random_range(-3.0..3.0)),
            aod: Direction::new(rng.random_range(0.3..2.8), rng.random_range(-3.0..3.0)),
            toa: rng.random_range(0.5e-6..2e-6),
            gain: Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        };
        Self {
            path,
            tx,
            rx,
            grid,
            f,
        }
    }

    /// Noiseless received block of subcarrier `k` at parameters `xi`, up to the constant amplitude.
    fn mean(&self, xi: &[f64; 7], k: usize) -> CMat {
        let b = self.rx.steering_vector(Direction::new(xi[0], xi[1]));
        let a = self.tx.steering_vector(Direction::new(xi[2], xi[3]));
        let beta = Complex64::new(xi[5], xi[6]);
        let phase = Complex64::from_polar(1.0, -TWO_PI * self.grid.freq(k) * xi[4]);
        b * (a.adjoint() * &self.f[k]) * (beta * phase)
    }

    /// `J_ij = gamma Re sum_k tr(dmu_i^H dmu_j)` with central differences.
    fn fd_fim(&self, gamma: f64) -> Matrix7 {
        let p = self.path;
        let xi = [
            p.aoa.theta,
            p.aoa.phi,
            p.aod.theta,
            p.aod.phi,
            p.toa,
            p.gain.re,
            p.gain.im,
        ];
        let steps = [1e-6, 1e-6, 1e-6, 1e-6, 1e-15, 1e-7, 1e-7];
        let mut m = Matrix7::zeros();
        for k in 0..self.grid.num_subcarriers {
            let d: Vec<CMat> = (0..7)
                .map(|i| {
                    let (mut xp, mut xm) = (xi, xi);
                    xp[i] += steps[i];
                    xm[i] -= steps[i];
                    (self.mean(&xp, k) - self.mean(&xm, k)) / c(2.0 * steps[i])
                })
                .collect();
            for i in 0..7 {
                for j in 0..7 {
                    m[(i, j)] +=
                        gamma * d[i].zip_fold(&d[j], 0.0, |acc, x, y| acc + (x.conj() * y).re);
                }
            }
        }
        m
    }
}

/// Closed-form 7x7 FIM against the finite-difference FIM on small random instances.
///
/// The metric is the larger of the plain and the diagonally scaled relative Frobenius errors;
/// the scaled form keeps small-scale entries visible next to the delay block.
pub fn fim_oracle(cases: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = 3.7;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let inst = FimInstance::random(&mut rng);
        let cf = match fim_submatrix(&inst.path, &inst.tx, &inst.rx, &inst.grid, &inst.f, gamma) {
            Ok(m) => m,
            Err(_) => {
                return CheckReport::upper("fim-finite-difference", f64::INFINITY, 1e-6, cases)
            }
        };
        let fd = inst.fd_fim(gamma);
        let scale = |m: &Matrix7| {
            Matrix7::from_fn(|i, j| m[(i, j)] / (fd[(i, i)] * fd[(j, j)]).sqrt().max(1e-300))
        };
        let plain = (cf - fd).norm() / fd.norm();
        let scaled = (scale(&cf) - scale(&fd)).norm() / scale(&fd).norm();
        worst = worst.max(plain).max(scaled);
    }
    CheckReport::upper("fim-finite-difference", worst, 1e-6, cases)
}

/// Random target position with a well-conditioned bistatic geometry.
fn random_target(rng: &mut ChaCha8Rng, baseline: f64) -> (Direction, f64) {
    loop {
        let p: Vector3<f64> = Vector3::new(
            rng.random_range(-150.0..150.0),
            rng.random_range(-50.0..250.0),
            rng.random_range(-30.0..40.0),
        );
        let tx = Vector3::new(0.0, baseline, 0.0);
        // Keep clear of the baseline segment and of the array centers.
        let along = p.y.clamp(0.0, baseline);
        if (p - Vector3::new(0.0, along, 0.0)).norm() < 5.0
            || p.norm() < 5.0
            || (p - tx).norm() < 5.0
        {
            continue;
        }
        let toa = (p.norm() + (p - tx).norm()) / SPEED_OF_LIGHT;
        if let Ok(dir) = Direction::from_vector(&p) {
            return (dir, toa);
        }
    }
}

/// Closed-form SPEB against `tr(Y J^{-1} Y^T)` with random diagonal EFIMs.
pub fn speb_oracle(cases: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let baseline = 200.0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (aoa, toa) = random_target(&mut rng, baseline);
        let efim = Matrix3::from_diagonal(&Vector3::new(
            10f64.powf(rng.random_range(2.0..8.0)),
            10f64.powf(rng.random_range(2.0..8.0)),
            10f64.powf(rng.random_range(16.0..22.0)),
        ));
        let closed = speb_from_crbs(&crbs(&efim), &geometric_coeffs(aoa, toa, baseline));
        let trace = speb_from_efim(&efim, aoa, toa, baseline);
        worst = worst.max((closed - trace).abs() / trace);
    }
    CheckReport::upper("speb-two-path", worst, 1e-8, cases)
}

/// Position Jacobian against central differences of the position map on a regular grid.
///
/// Each entry's error is taken relative to the norm of its column, since single entries can vanish.
pub fn jacobian_oracle() -> CheckReport {
    let baseline = 200.0;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &x in &[-120.0, -40.0, 40.0, 120.0, 160.0] {
        for &y in &[-40.0, 60.0, 140.0, 240.0, 300.0] {
            for &z in &[-10.0, 30.0] {
                let p = Vector3::new(x, y, z);
                let aoa = Direction::from_vector(&p).expect("off the polar axis");
                let toa =
                    (p.norm() + (p - Vector3::new(0.0, baseline, 0.0)).norm()) / SPEED_OF_LIGHT;
                let jac = position_jacobian(aoa, toa, baseline).expect("regular point");
                let hs = [1e-6, 1e-6, 1e-6 * toa];
                for col in 0..3 {
                    let shifted = |s: f64| {
                        let mut v = [aoa.theta, aoa.phi, toa];
                        v[col] += s;
                        position_from_aoa_toa(Direction::new(v[0], v[1]), v[2], baseline)
                            .expect("regular point")
                    };
                    let fd = (shifted(hs[col]) - shifted(-hs[col])) / (2.0 * hs[col]);
                    let analytic = jac.column(col);
                    let norm = analytic.norm();
                    for row in 0..3 {
                        worst = worst.max((analytic[row] - fd[row]).abs() / norm);
                    }
                }
                cases += 1;
            }
        }
    }
    CheckReport::upper("position-jacobian", worst, 1e-5, cases)
}

/// Gain-threshold round trip: a beamformer delivering exactly `kappa` per subcarrier yields `PEB = Gamma`.
///
/// Returns the exact-sum report (tolerance `1e-6`) and the large-K report (tolerance `2 / K^2`).
pub fn kappa_roundtrip(scn: &Scenario, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let link = scn.link();
    let k = scn.grid.num_subcarriers as f64;
    let mut worst = [0.0f64; 2];
    let mut cases = 0;
    for _ in 0..20 {
        let (aoa, toa) = random_target(&mut rng, scn.scene.baseline());
        let Ok(pos) = position_from_aoa_toa(aoa, toa, scn.scene.baseline()) else {
            continue;
        };
        if pos.y <= 1.0 {
            continue;
        }
        let Ok(path) = scn.point_path(pos) else {
            continue;
        };
        let gamma = rng.random_range(0.05..1.0);
        for (slot, mode) in [ToaBound::ExactSum, ToaBound::LargeK]
            .into_iter()
            .enumerate()
        {
            let Ok(kappa) = link.kappa(&path, gamma, mode) else {
                continue;
            };
            let a = scn.tx.steering_vector(path.aod);
            let f = CMat::from_column_slice(a.len(), 1, (a * c(kappa.sqrt())).as_slice());
            let peb = link
                .speb(&path, &vec![f; scn.grid.num_subcarriers])
                .map(|p| p.peb)
                .unwrap_or(f64::INFINITY);
            worst[slot] = worst[slot].max((peb / gamma - 1.0).abs());
        }
        cases += 1;
    }
    vec![
        CheckReport::upper("kappa-roundtrip-exact", worst[0], 1e-6, cases),
        CheckReport::upper("kappa-roundtrip-large-k", worst[1], 2.0 / (k * k), cases),
    ]
}

fn random_cmat(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMat {
    CMat::from_fn(r, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn random_tangent(rng: &mut ChaCha8Rng, x: &CirclePoint) -> CVec {
    let v = CVec::from_fn(x.len(), |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let t = x.project(&v);
    let n = t.norm();
    t / c(n)
}

/// Penalized analog problem with roughly half of the gain constraints active at `x`.
fn manifold_instance(rng: &mut ChaCha8Rng) -> (QuadData, PenaltyState, CirclePoint) {
    let (n_t, n_rf, n_s, k, n) = (8, 3, 2, 3, 2);
    let digital: Vec<CMat> = (0..k).map(|_| random_cmat(rng, n_rf, n_s)).collect();
    let optimal: Vec<CMat> = (0..k).map(|_| random_cmat(rng, n_t, n_s)).collect();
    let targets: Vec<CVec> = (0..n)
        .map(|_| {
            let v = CVec::from_fn(n_t, |_, _| {
                Complex64::from_polar(1.0, rng.random_range(0.0..TWO_PI))
            });
            &v / c(v.norm())
        })
        .collect();
    let x = CirclePoint::random(n_t * n_rf, rng);
    let probe =
        QuadData::new(&digital, &optimal, &targets, &vec![0.0; n]).expect("consistent sizes");
    let kappas: Vec<f64> = (0..n)
        .map(|t| {
            let gains: Vec<f64> = (0..k)
                .map(|kk| probe.sigma_quad(kk, t, x.as_vec()))
                .collect();
            let mut sorted = gains.clone();
            sorted.sort_by(f64::total_cmp);
            // Midpoint between two neighboring gains keeps every constraint away from its kink.
            0.5 * (sorted[k / 2] + sorted[(k / 2).saturating_sub(1)]).max(1e-3) + 1e-3
        })
        .collect();
    let data = QuadData::new(&digital, &optimal, &targets, &kappas).expect("consistent sizes");
    let penalty = PenaltyState::new(&kappas, k, 10.0);
    (data, penalty, x)
}

/// Tangency, second-order Taylor remainder and symmetry of the Riemannian Hessian.
pub fn riemannian_oracle(cases: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tangency, mut slope, mut asym) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..cases {
        let (data, penalty, x) = manifold_instance(&mut rng);
        let obj = PenalizedObjective {
            data: &data,
            penalty: &penalty,
        };
        let eg = obj.egrad(x.as_vec());
        let g = riemannian_gradient(&x, &eg);
        let d1 = random_tangent(&mut rng, &x);
        let d2 = random_tangent(&mut rng, &x);
        let h1 = riemannian_hessian_apply(&obj, &x, &eg, &d1);
        let h2 = riemannian_hessian_apply(&obj, &x, &eg, &d2);
        let raw = CVec::from_fn(x.len(), |_, _| {
            Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
        });
        for v in [&g, &h1, &h2, &x.project(&raw)] {
            tangency = tangency.max(x.tangency_residual(v));
        }
        let lhs = re_inner(&h1, &d2);
        let rhs = re_inner(&d1, &h2);
        asym = asym.max((lhs - rhs).abs() / (h1.norm() * d2.norm()).max(1e-300));

        let f0 = obj.cost(x.as_vec());
        let ts = [1e-2, 1e-3, 1e-4];
        let errs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let xt = x.retract(&(&d1 * c(t))).expect("small step");
                let model = f0 + t * re_inner(&g, &d1) + 0.5 * t * t * re_inner(&h1, &d1);
                (obj.cost(xt.as_vec()) - model).abs()
            })
            .collect();
        let s = (errs[0].ln() - errs[2].ln()) / (ts[0].ln() - ts[2].ln());
        slope = slope.min(s);
    }
    vec![
        CheckReport::upper("riemannian-tangency", tangency, 1e-12, cases),
        CheckReport {
            name: "riemannian-taylor-slope",
            metric: slope,
            tolerance: 2.7,
            lower_bound: true,
            cases,
        },
        CheckReport::upper("riemannian-hessian-symmetry", asym, 1e-8, cases),
    ]
}

/// Every suite with the default case counts.
pub fn run_all(scn: &Scenario, seed: u64) -> Vec<CheckReport> {
    let mut out = vec![
        fim_oracle(20, seed),
        speb_oracle(100, seed),
        jacobian_oracle(),
    ];
    out.extend(kappa_roundtrip(scn, seed));
    out.extend(riemannian_oracle(10, seed));
    out
}
