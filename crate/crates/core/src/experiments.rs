//! Seeded experiment runners producing [`ResultTable`]s.
//!
//! Grid points and Monte Carlo trials run on the rayon pool; each trial derives its own seed from
//! `(master seed, trial index)` and results are collected in index order, so the output does not
//! depend on the worker count.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::beamformer::HybridBeamformer;
use crate::channel::spectral_efficiency;
use crate::error::{Error, Result};
use crate::fisher::ToaBound;
use crate::linalg::CMat;
use crate::pcomp::{beam_steering, comm_only_omp, pc_omp_design, Dictionary};
use crate::sca::{hybrid_design, AlternationConfig, DesignOutcome};
use crate::scenario::{derive_seed, Scenario};
use crate::table::{sha256_hex, Cell, ResultTable};

/// Angular extent of the sensing sector, measured from the +x axis in the horizontal plane.
pub const SECTOR_DEG: (f64, f64) = (30.0, 150.0);

/// Cell centers of a `res x res` grid over the sector bounding box that fall inside the sector
/// of radius `radius` around the receiver, at height `z`.
pub fn sector_points(radius: f64, res: usize, z: f64) -> Vec<Vector3<f64>> {
    let (lo, hi) = (SECTOR_DEG.0.to_radians(), SECTOR_DEG.1.to_radians());
    let half_width = radius * lo.cos();
    let dx = 2.0 * half_width / res as f64;
    let dy = radius / res as f64;
    let mut pts = Vec::new();
    for iy in 0..res {
        let y = (iy as f64 + 0.5) * dy;
        for ix in 0..res {
            let x = -half_width + (ix as f64 + 0.5) * dx;
            let ang = y.atan2(x);
            if x.hypot(y) <= radius && (lo..=hi).contains(&ang) {
                pts.push(Vector3::new(x, y, z));
            }
        }
    }
    pts
}

/// PEB at `p` under analog steering `F = sqrt(N_s) a(AOD)`; `inf` where the bound is singular.
pub fn steering_peb(scn: &Scenario, p: Vector3<f64>) -> f64 {
    let Ok(path) = scn.point_path(p) else {
        return f64::INFINITY;
    };
    let g = scn.config.design.n_s as f64;
    let peb = scn.link().speb_equal_gain(&path, g, ToaBound::ExactSum).peb;
    if peb.is_finite() {
        peb
    } else {
        f64::INFINITY
    }
}

/// Records the experiment name, config hash, seed, scale and crate version.
pub fn stamp(table: &mut ResultTable, scn: &Scenario, experiment: &str) {
    table.set_meta("experiment", experiment);
    table.set_meta("config_sha256", sha256_hex(&scn.config.to_toml()));
    table.set_meta("seed", scn.config.seed);
    table.set_meta("scale", format!("{:?}", scn.config.scale).to_lowercase());
    table.set_meta("version", concat!("bisac ", env!("CARGO_PKG_VERSION")));
}

/// Columns: `x, y, z` (m), `peb` (m).
pub fn run_peb_heatmap(scn: &Scenario, z: f64, res: usize) -> Result<ResultTable> {
    let pts = sector_points(scn.config.geometry.baseline, res, z);
    let pebs: Vec<f64> = pts.par_iter().map(|&p| steering_peb(scn, p)).collect();
    let mut t = ResultTable::new(
        "peb_map",
        &[("x", "m"), ("y", "m"), ("z", "m"), ("peb", "m")],
    );
    stamp(&mut t, scn, "peb-map");
    t.set_meta("grid_resolution", res);
    for (p, peb) in pts.iter().zip(pebs) {
        t.push(vec![p.x.into(), p.y.into(), p.z.into(), peb.into()])?;
    }
    Ok(t)
}

/// Empirical CDF of the sector PEB. Columns: `n_t`, `z` (m), `peb` (m), `cdf`.
pub fn run_peb_cdf(scn: &Scenario, planes: &[f64], n_t_values: &[usize]) -> Result<ResultTable> {
    let res = scn.config.experiments.grid_resolution;
    let mut t = ResultTable::new(
        "peb_cdf",
        &[("n_t", ""), ("z", "m"), ("peb", "m"), ("cdf", "")],
    );
    stamp(&mut t, scn, "peb-cdf");
    t.set_meta("grid_resolution", res);
    for &n_t in n_t_values {
        let s = scn.with_transmit_array(n_t)?;
        for &z in planes {
            let pts = sector_points(s.config.geometry.baseline, res, z);
            let mut pebs: Vec<f64> = pts.par_iter().map(|&p| steering_peb(&s, p)).collect();
            pebs.sort_by(f64::total_cmp);
            let n = pebs.len() as f64;
            for (i, peb) in pebs.into_iter().enumerate() {
                t.push(vec![
                    n_t.into(),
                    z.into(),
                    peb.into(),
                    ((i + 1) as f64 / n).into(),
                ])?;
            }
        }
    }
    Ok(t)
}

/// Fraction of the CDF samples for `(n_t, z)` strictly below `threshold`.
pub fn fraction_below(cdf: &ResultTable, n_t: usize, z: f64, threshold: f64) -> Result<f64> {
    let pebs = cdf
        .filter_num("n_t", n_t as f64)?
        .filter_num("z", z)?
        .column("peb")?;
    if pebs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no samples for n_t = {n_t}, z = {z}"
        )));
    }
    Ok(pebs.iter().filter(|&&p| p < threshold).count() as f64 / pebs.len() as f64)
}

/// Largest PEB within `half_width` meters of the `x = 0` plane over the median sector PEB.
pub fn ridge_ratio(heatmap: &ResultTable, half_width: f64) -> Result<f64> {
    let xs = heatmap.column("x")?;
    let pebs = heatmap.column("peb")?;
    let mut sorted = pebs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted
        .get(sorted.len() / 2)
        .copied()
        .ok_or_else(|| Error::InvalidParameter("empty heatmap".into()))?;
    let peak = xs
        .iter()
        .zip(&pebs)
        .filter(|(x, _)| x.abs() < half_width)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max);
    Ok(peak / median)
}

/// Analog design methods compared in the SE experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Fully digital optimum `F_opt` (no analog constraint, no sensing).
    Optimal,
    /// OMP ignoring sensing.
    CommOmp,
    RtrSca,
    RsdSca,
    PcOmp,
    BeamSteering,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Optimal => "optimal",
            Method::CommOmp => "omp",
            Method::RtrSca => "rtr-sca",
            Method::RsdSca => "rsd-sca",
            Method::PcOmp => "pc-omp",
            Method::BeamSteering => "beam-steering",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Optimal,
            Method::CommOmp,
            Method::RtrSca,
            Method::RsdSca,
            Method::PcOmp,
            Method::BeamSteering,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// One channel realization with everything the designers need.
pub struct Trial {
    pub seed: u64,
    pub channel: crate::channel::CommChannel,
    pub channels: Vec<CMat>,
    pub f_opt: Vec<CMat>,
    pub dictionary: Dictionary,
}

impl Trial {
    pub fn new(scn: &Scenario, index: u64) -> Result<Self> {
        let seed = derive_seed(scn.config.seed, index);
        let channel = scn.comm_channel(seed)?;
        let channels = scn.channel_matrices(&channel);
        let f_opt = scn.optimal_beamformers(&channels)?;
        let dictionary = Dictionary::from_channel(&channel, &scn.tx, &scn.target_directions()?);
        Ok(Self {
            seed,
            channel,
            channels,
            f_opt,
            dictionary,
        })
    }
}

/// Result of one design call.
#[derive(Debug, Clone)]
pub struct Designed {
    pub precoders: Vec<CMat>,
    pub beamformer: Option<HybridBeamformer>,
    /// Whether the sensing constraints were met (always true for sensing-agnostic methods).
    pub feasible: bool,
    pub outcome: Option<DesignOutcome>,
}

/// Runs `method` on `trial` with `N_RF = n_rf` and gain thresholds `kappas`.
pub fn design(
    scn: &Scenario,
    trial: &Trial,
    method: Method,
    kappas: &[f64],
    n_rf: usize,
) -> Result<Designed> {
    let n_s = scn.config.design.n_s;
    let n_t = scn.tx.len();
    let from_bf = |bf: HybridBeamformer, feasible: bool, outcome: Option<DesignOutcome>| Designed {
        precoders: bf.effective_all(),
        beamformer: Some(bf),
        feasible,
        outcome,
    };
    Ok(match method {
        Method::Optimal => Designed {
            precoders: trial.f_opt.clone(),
            beamformer: None,
            feasible: true,
            outcome: None,
        },
        Method::CommOmp => from_bf(
            comm_only_omp(&trial.f_opt, &trial.dictionary.columns, n_rf)?,
            true,
            None,
        ),
        Method::BeamSteering => from_bf(
            beam_steering(&trial.channel, &scn.tx, n_s, scn.grid.num_subcarriers)?,
            true,
            None,
        ),
        Method::PcOmp => {
            let d = pc_omp_design(&trial.f_opt, &trial.dictionary, kappas, n_rf)?;
            from_bf(d.beamformer, true, None)
        }
        Method::RtrSca | Method::RsdSca => {
            let cfg = if method == Method::RtrSca {
                AlternationConfig::trust_region(n_t, n_rf)
            } else {
                AlternationConfig::steepest_descent(n_t, n_rf)
            };
            let out = hybrid_design(
                &trial.f_opt,
                &scn.target_steering()?,
                kappas,
                n_rf,
                &cfg,
                trial.seed,
            )?;
            from_bf(out.beamformer.clone(), out.feasible, Some(out))
        }
    })
}

/// Sample mean and 95% normal-approximation half-width.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Scenario with `n_s` streams, `n_rf` chains and the given target scatterers.
pub fn sub_scenario(
    scn: &Scenario,
    n_s: usize,
    n_rf: usize,
    targets: &[usize],
) -> Result<Scenario> {
    let mut c = scn.config.clone();
    c.design.n_s = n_s;
    c.design.n_rf = n_rf;
    c.sensing.targets = targets.to_vec();
    Scenario::new(c)
}

fn first_target(scn: &Scenario) -> [usize; 1] {
    [scn.config.sensing.targets[0]]
}

/// Convergence traces of the alternating design.
pub struct ConvergenceResult {
    /// Columns: `gamma` (m), `run`, `method`, `round`, `objective`.
    pub trace: ResultTable,
    /// Columns: `gamma` (m), `run`, `method`, `feasible`, `max_violation`, `objective`, `rounds`, `peb` (m).
    pub summary: ResultTable,
}

pub fn run_convergence(scn: &Scenario, gammas: &[f64], runs: usize) -> Result<ConvergenceResult> {
    let n_rf = scn.config.design.n_rf;
    let jobs: Vec<(f64, usize, Method)> = gammas
        .iter()
        .flat_map(|&g| {
            (0..runs).flat_map(move |r| [(g, r, Method::RtrSca), (g, r, Method::RsdSca)])
        })
        .collect();
    let kappas = gammas
        .iter()
        .map(|&g| scn.kappas(g))
        .collect::<Result<Vec<_>>>()?;
    let trials = (0..runs)
        .into_par_iter()
        .map(|r| Trial::new(scn, r as u64))
        .collect::<Result<Vec<_>>>()?;
    let results = jobs
        .par_iter()
        .map(|&(g, r, m)| {
            let gi = gammas
                .iter()
                .position(|&x| x == g)
                .expect("gamma from list");
            let d = design(scn, &trials[r], m, &kappas[gi], n_rf)?;
            let peb = match &d.beamformer {
                Some(bf) => (0..scn.num_targets())
                    .map(|n| scn.peb(bf, n))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max),
                None => f64::NAN,
            };
            Ok((d, peb))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = ResultTable::new(
        "convergence",
        &[
            ("gamma", "m"),
            ("run", ""),
            ("method", ""),
            ("round", ""),
            ("objective", ""),
        ],
    );
    let mut summary = ResultTable::new(
        "convergence_summary",
        &[
            ("gamma", "m"),
            ("run", ""),
            ("method", ""),
            ("feasible", ""),
            ("max_violation", ""),
            ("objective", ""),
            ("rounds", ""),
            ("peb", "m"),
        ],
    );
    stamp(&mut trace, scn, "converge");
    stamp(&mut summary, scn, "converge");
    for ((g, r, m), (d, peb)) in jobs.iter().zip(results) {
        let out = d.outcome.expect("alternating designs report an outcome");
        for (i, obj) in out.objective_trace.iter().enumerate() {
            trace.push(vec![
                (*g).into(),
                (*r).into(),
                m.name().into(),
                (i + 1).into(),
                (*obj).into(),
            ])?;
        }
        summary.push(vec![
            (*g).into(),
            (*r).into(),
            m.name().into(),
            (out.feasible as usize).into(),
            out.max_violation.into(),
            (*out.objective_trace.last().unwrap_or(&f64::NAN)).into(),
            out.rounds.into(),
            peb.into(),
        ])?;
    }
    Ok(ConvergenceResult { trace, summary })
}

/// SE of every method in `methods` for every trial, at the given SNRs (dB).
/// Returns `se[method][snr][trial]` and the per-method feasibility counts.
fn se_sweep(
    scn: &Scenario,
    methods: &[Method],
    kappas: &[f64],
    n_rf: usize,
    snr_db: &[f64],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<usize>)> {
    let trials = scn.config.experiments.monte_carlo;
    let n_s = scn.config.design.n_s;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial = Trial::new(scn, i as u64)?;
            methods
                .iter()
                .map(|&m| {
                    let d = design(scn, &trial, m, kappas, n_rf)?;
                    let se = snr_db
                        .iter()
                        .map(|&s| {
                            spectral_efficiency(
                                &trial.channels,
                                &d.precoders,
                                10f64.powf(s / 10.0),
                                n_s,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((se, d.feasible))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut se = vec![vec![Vec::with_capacity(trials); snr_db.len()]; methods.len()];
    let mut feasible = vec![0; methods.len()];
    for row in per_trial {
        for (mi, (vals, ok)) in row.into_iter().enumerate() {
            feasible[mi] += ok as usize;
            for (si, v) in vals.into_iter().enumerate() {
                se[mi][si].push(v);
            }
        }
    }
    Ok((se, feasible))
}

fn se_schema(lead: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
    let mut s = lead.to_vec();
    s.extend([
        ("method", ""),
        ("se_mean", "bit/s/Hz"),
        ("se_ci95", "bit/s/Hz"),
        ("feasible_frac", ""),
    ]);
    s
}

fn se_row(lead: Vec<Cell>, m: Method, se: &[f64], feasible: usize) -> Vec<Cell> {
    let (mean, ci) = mean_ci95(se);
    let mut row = lead;
    row.extend([
        m.name().into(),
        mean.into(),
        ci.into(),
        (feasible as f64 / se.len().max(1) as f64).into(),
    ]);
    row
}

/// SE against SNR at `N_s = N_RF = 3`, one target, `Gamma = 0.4 m`.
/// Columns: `snr_db` (dB), `method`, `se_mean`, `se_ci95` (bit/s/Hz), `feasible_frac`.
pub fn run_se_vs_snr(scn: &Scenario) -> Result<ResultTable> {
    const GAMMA: f64 = 0.4;
    let s = sub_scenario(scn, 3, 3, &first_target(scn))?;
    let methods = [
        Method::CommOmp,
        Method::RtrSca,
        Method::PcOmp,
        Method::BeamSteering,
    ];
    let snrs = &scn.config.experiments.snr_db;
    let (se, feas) = se_sweep(&s, &methods, &s.kappas(GAMMA)?, 3, snrs)?;
    let mut t = ResultTable::new("se_snr", &se_schema(&[("snr_db", "dB")]));
    stamp(&mut t, &s, "se-snr");
    t.set_meta("gamma", GAMMA);
    t.set_meta("trials", scn.config.experiments.monte_carlo);
    for (si, &snr) in snrs.iter().enumerate() {
        for (mi, &m) in methods.iter().enumerate() {
            t.push(se_row(vec![snr.into()], m, &se[mi][si], feas[mi]))?;
        }
    }
    Ok(t)
}

/// SE against the PEB threshold for one and two targets at `N_s = 2`, `N_RF = 4`.
/// Columns: `n_targets`, `gamma` (m), `method`, `se_mean`, `se_ci95` (bit/s/Hz), `feasible_frac`.
pub fn run_se_vs_gamma(scn: &Scenario) -> Result<ResultTable> {
    let methods = [Method::RtrSca, Method::PcOmp];
    let snr = [scn.config.design.snr_db];
    let mut t = ResultTable::new("se_gamma", &se_schema(&[("n_targets", ""), ("gamma", "m")]));
    stamp(&mut t, scn, "se-gamma");
    t.set_meta("snr_db", snr[0]);
    t.set_meta("trials", scn.config.experiments.monte_carlo);
    let sets = [
        first_target(scn).to_vec(),
        scn.config.experiments.two_targets.clone(),
    ];
    for targets in &sets {
        let n = targets.len();
        let s = sub_scenario(scn, 2, 4, targets)?;
        for &g in &scn.config.experiments.gammas {
            let (se, feas) = se_sweep(&s, &methods, &s.kappas(g)?, 4, &snr)?;
            for (mi, &m) in methods.iter().enumerate() {
                t.push(se_row(vec![n.into(), g.into()], m, &se[mi][0], feas[mi]))?;
            }
        }
    }
    Ok(t)
}

/// SE against the RF chain count `N_RF in [N_s, 2 N_s + 2]` at `N_s = 3`, one target, `Gamma = 0.5 m`.
/// Columns: `n_rf`, `method`, `se_mean`, `se_ci95` (bit/s/Hz), `feasible_frac`.
pub fn run_se_vs_nrf(scn: &Scenario) -> Result<ResultTable> {
    const GAMMA: f64 = 0.5;
    const N_S: usize = 3;
    let methods = [
        Method::Optimal,
        Method::CommOmp,
        Method::RtrSca,
        Method::PcOmp,
    ];
    let snr = [scn.config.design.snr_db];
    let mut t = ResultTable::new("se_nrf", &se_schema(&[("n_rf", "")]));
    stamp(&mut t, scn, "se-nrf");
    t.set_meta("gamma", GAMMA);
    t.set_meta("snr_db", snr[0]);
    t.set_meta("trials", scn.config.experiments.monte_carlo);
    for n_rf in N_S..=2 * N_S + 2 {
        let s = sub_scenario(scn, N_S, n_rf, &first_target(scn))?;
        let (se, feas) = se_sweep(&s, &methods, &s.kappas(GAMMA)?, n_rf, &snr)?;
        for (mi, &m) in methods.iter().enumerate() {
            t.push(se_row(vec![n_rf.into()], m, &se[mi][0], feas[mi]))?;
        }
    }
    Ok(t)
}

/// Horizontal angle of `p` seen from the receiver, degrees.
pub fn sector_angle_deg(p: &Vector3<f64>) -> f64 {
    p.y.atan2(p.x) * 180.0 / PI
}
