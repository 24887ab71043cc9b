//! Low-complexity hybrid design: a positioning block pinned to the target steering
//! vectors plus a communication block chosen by orthogonal matching pursuit.
//! Also hosts the communication-only OMP and beam-steering baselines.

use log::warn;
use num_complex::Complex64;

use crate::array::{ArrayGeometry, Direction};
use crate::beamformer::HybridBeamformer;
use crate::channel::CommChannel;
use crate::error::{Error, Result};
use crate::linalg::{c, frob_sq, pinv, CMat, CVec};

/// Relative pseudo-inverse threshold for the least-squares digital blocks.
const PINV_TOL: f64 = 1e-12;

/// Candidate analog columns: ray steering vectors (`A_d`) and target steering vectors (`A_s`), all scaled by `sqrt(N_t)`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub columns: CMat,
    pub target_columns: CMat,
}

impl Dictionary {
    pub fn new(columns: CMat, target_columns: CMat) -> Result<Self> {
        if columns.nrows() != target_columns.nrows() {
            return Err(Error::DimensionMismatch(
                "dictionary and target columns differ in length".into(),
            ));
        }
        Ok(Self {
            columns,
            target_columns,
        })
    }

    /// Dictionary from the transmit-side ray directions of `channel` and the target directions.
    pub fn from_channel(channel: &CommChannel, tx: &ArrayGeometry, targets: &[Direction]) -> Self {
        let scale = c((tx.len() as f64).sqrt());
        let rays: Vec<CVec> = channel
            .rays()
            .map(|r| tx.steering_vector(r.departure) * scale)
            .collect();
        let tcols: Vec<CVec> = targets
            .iter()
            .map(|&d| tx.steering_vector(d) * scale)
            .collect();
        Self {
            columns: stack(tx.len(), &rays),
            target_columns: stack(tx.len(), &tcols),
        }
    }

    pub fn n_t(&self) -> usize {
        self.columns.nrows()
    }

    pub fn num_targets(&self) -> usize {
        self.target_columns.ncols()
    }

    /// Unit-norm steering vector of target `n`.
    pub fn target_steering(&self, n: usize) -> CVec {
        let col = self.target_columns.column(n).into_owned();
        let norm = col.norm();
        col / c(norm)
    }
}

fn stack(rows: usize, cols: &[CVec]) -> CMat {
    let mut m = CMat::zeros(rows, cols.len());
    for (j, v) in cols.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Positioning block `F_s,k` (`N_s x N`): column `n` is `sqrt(v_n) psi^T / ||psi||` with `psi = a_n^H F_opt,k`.
/// Returns the block and the targets whose projection vanished (filled with `sqrt(v_n) e_1`).
pub fn positioning_side_design(f_opt: &CMat, a_s: &CMat, v: &[f64]) -> Result<(CMat, Vec<usize>)> {
    if a_s.ncols() != v.len() || a_s.nrows() != f_opt.nrows() {
        return Err(Error::DimensionMismatch(
            "target columns, power floors and beamformer disagree".into(),
        ));
    }
    if let Some(&bad) = v.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "power floor {bad} must be finite and non-negative"
        )));
    }
    let n_s = f_opt.ncols();
    let mut fs = CMat::zeros(n_s, v.len());
    let mut fallback = Vec::new();
    for (n, &vn) in v.iter().enumerate() {
        let psi = f_opt.tr_mul(&a_s.column(n).conjugate()).transpose();
        let norm = psi.norm();
        if norm > 0.0 {
            fs.set_column(n, &(psi.transpose() * c(vn.sqrt() / norm)));
        } else {
            fs[(0, n)] = c(vn.sqrt());
            fallback.push(n);
        }
    }
    Ok((fs, fallback))
}

/// Result of the greedy column selection.
#[derive(Debug, Clone)]
pub struct OmpSelection {
    pub indices: Vec<usize>,
    /// Selected columns, `N_t x count`.
    pub analog: CMat,
    /// Least-squares digital blocks before normalization, `count x N_s`.
    pub digital: Vec<CMat>,
    /// Total residual `sum_k ||T_k - F_RF Fhat_k||_F^2` after each selection round.
    pub residual_history: Vec<f64>,
    /// Per-subcarrier residual `||T_k - F_RF Fhat_k||_F` at the end.
    pub residuals: Vec<f64>,
}

/// Greedy selection of `count` dictionary columns approximating every `targets[k]`.
pub fn omp_select(targets: &[CMat], dictionary: &CMat, count: usize) -> Result<OmpSelection> {
    if count == 0 || count > dictionary.ncols() {
        return Err(Error::InvalidParameter(format!(
            "cannot select {count} of {} dictionary columns",
            dictionary.ncols()
        )));
    }
    if targets.iter().any(|t| t.nrows() != dictionary.nrows()) {
        return Err(Error::DimensionMismatch(
            "target rows differ from dictionary column length".into(),
        ));
    }
    let n_t = dictionary.nrows();
    let n_s = targets.first().map(|t| t.ncols()).unwrap_or(0);
    let total: f64 = targets.iter().map(frob_sq).sum();
    let mut residual: Vec<CMat> = targets.to_vec();
    let mut used = vec![false; dictionary.ncols()];
    let mut indices = Vec::with_capacity(count);
    let mut digital: Vec<CMat> = targets.iter().map(|_| CMat::zeros(0, n_s)).collect();
    let mut history = Vec::new();
    let mut residuals: Vec<f64> = targets.iter().map(|t| t.norm()).collect();
    while indices.len() < count {
        let mut score = vec![0.0; dictionary.ncols()];
        for r in &residual {
            let pi = dictionary.ad_mul(r);
            for (m, s) in score.iter_mut().enumerate() {
                *s += pi.row(m).norm_squared();
            }
        }
        let best = score.iter().enumerate().filter(|(m, _)| !used[*m]).fold(
            None,
            |acc: Option<(usize, f64)>, (m, &s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((m, s)),
            },
        );
        let Some((q, s)) = best else { break };
        if s <= 0.0 {
            break;
        }
        used[q] = true;
        indices.push(q);
        let analog = dictionary.select_columns(&indices);
        let p = pinv(&analog, PINV_TOL);
        let mut sq = 0.0;
        for (k, t) in targets.iter().enumerate() {
            digital[k] = &p * t;
            let r = t - &analog * &digital[k];
            let rn = r.norm();
            residuals[k] = rn;
            sq += rn * rn;
            residual[k] = if rn > 0.0 {
                r / c(rn)
            } else {
                CMat::zeros(n_t, n_s)
            };
        }
        history.push(sq);
        if sq <= 1e-24 * total.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // Early stop: pad with unused columns carrying zero digital weight.
    let mut m = 0;
    while indices.len() < count {
        if !used[m] {
            used[m] = true;
            indices.push(m);
            for d in &mut digital {
                *d = d.clone().insert_row(d.nrows(), Complex64::new(0.0, 0.0));
            }
        }
        m += 1;
    }
    Ok(OmpSelection {
        analog: dictionary.select_columns(&indices),
        indices,
        digital,
        residual_history: history,
        residuals,
    })
}

/// PC-OMP output with the bookkeeping needed for the power-bound check.
#[derive(Debug, Clone)]
pub struct PcOmpDesign {
    pub beamformer: HybridBeamformer,
    /// `delta_k = ||F_opt,k^ex - F_RF^ex Fhat_k||_F` before normalization.
    pub deltas: Vec<f64>,
    /// `(k, n)` pairs whose positioning column used the fallback direction.
    pub fallbacks: Vec<(usize, usize)>,
    pub selection: Option<OmpSelection>,
}

/// Positioning-and-communication OMP design.
pub fn pc_omp_design(
    f_opt: &[CMat],
    dict: &Dictionary,
    kappas: &[f64],
    n_rf: usize,
) -> Result<PcOmpDesign> {
    let n = dict.num_targets();
    if kappas.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {n} targets",
            kappas.len()
        )));
    }
    if f_opt.is_empty() {
        return Err(Error::DimensionMismatch("no subcarriers".into()));
    }
    if n_rf < n {
        return Err(Error::InvalidParameter(format!(
            "N_RF = {n_rf} is below the target count {n}"
        )));
    }
    let n_t = dict.n_t() as f64;
    let n_s = f_opt[0].ncols();
    let v: Vec<f64> = kappas.iter().map(|&k| k / n_t).collect();
    let mut fs = Vec::with_capacity(f_opt.len());
    let mut f_ex = Vec::with_capacity(f_opt.len());
    let mut fallbacks = Vec::new();
    for (k, fo) in f_opt.iter().enumerate() {
        let (block, fb) = positioning_side_design(fo, &dict.target_columns, &v)?;
        fallbacks.extend(fb.into_iter().map(|n| (k, n)));
        f_ex.push(fo - &dict.target_columns * block.transpose());
        fs.push(block);
    }
    let count = n_rf - n;
    let (analog_ex, digital_ex, deltas, selection) = if count == 0 {
        warn!("no RF chains left for communication (N_RF = N = {n})");
        let deltas = f_ex.iter().map(|m| m.norm()).collect();
        (
            CMat::zeros(dict.n_t(), 0),
            vec![CMat::zeros(0, n_s); f_opt.len()],
            deltas,
            None,
        )
    } else {
        let sel = omp_select(&f_ex, &dict.columns, count)?;
        let digital = sel
            .digital
            .iter()
            .zip(&f_ex)
            .map(|(fh, fe)| {
                let p = (&sel.analog * fh).norm();
                if p > 0.0 {
                    fh * c(fe.norm() / p)
                } else {
                    fh.clone()
                }
            })
            .collect();
        (
            sel.analog.clone(),
            digital,
            sel.residuals.clone(),
            Some(sel),
        )
    };
    let mut analog = CMat::zeros(dict.n_t(), n_rf);
    analog.columns_mut(0, n).copy_from(&dict.target_columns);
    analog.columns_mut(n, count).copy_from(&analog_ex);
    let digital = fs
        .iter()
        .zip(&digital_ex)
        .map(|(s, e)| {
            let mut d = CMat::zeros(n_rf, n_s);
            d.rows_mut(0, n).copy_from(&s.transpose());
            d.rows_mut(n, count).copy_from(e);
            d
        })
        .collect();
    Ok(PcOmpDesign {
        beamformer: HybridBeamformer::new(analog, digital)?,
        deltas,
        fallbacks,
        selection,
    })
}

/// Per-subcarrier margin `2 delta_k - | ||F_RF F_BB,k||_F - sqrt(N_s) |` of the power bound.
#[derive(Debug, Clone)]
pub struct NormBoundReport {
    pub margins: Vec<f64>,
}

impl NormBoundReport {
    pub fn holds(&self) -> bool {
        self.margins.iter().all(|&m| m >= -1e-12)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn norm_bound_check(
    bf: &HybridBeamformer,
    n_s: usize,
    deltas: &[f64],
) -> Result<NormBoundReport> {
    if deltas.len() != bf.num_subcarriers() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} subcarriers",
            deltas.len(),
            bf.num_subcarriers()
        )));
    }
    let root = (n_s as f64).sqrt();
    let margins = deltas
        .iter()
        .enumerate()
        .map(|(k, &d)| 2.0 * d - (bf.power(k).sqrt() - root).abs())
        .collect();
    Ok(NormBoundReport { margins })
}

/// Communication-only OMP over the ray dictionary, normalized to `||F_RF F_BB,k||_F^2 = N_s`.
pub fn comm_only_omp(f_opt: &[CMat], dictionary: &CMat, n_rf: usize) -> Result<HybridBeamformer> {
    let sel = omp_select(f_opt, dictionary, n_rf)?;
    let n_s = f_opt[0].ncols();
    let mut bf = HybridBeamformer::new(sel.analog, sel.digital)?;
    bf.normalize_power(n_s);
    Ok(bf)
}

/// Single analog beam `sqrt(N_s) a` toward the strongest ray, shared by all subcarriers.
pub fn beam_steering(
    channel: &CommChannel,
    tx: &ArrayGeometry,
    n_s: usize,
    num_subcarriers: usize,
) -> Result<HybridBeamformer> {
    let ray = channel
        .rays()
        .max_by(|a, b| a.gain.norm().total_cmp(&b.gain.norm()))
        .ok_or_else(|| Error::InvalidParameter("channel has no rays".into()))?;
    let analog = stack(
        tx.len(),
        &[tx.steering_vector(ray.departure) * c((tx.len() as f64).sqrt())],
    );
    let mut bf = HybridBeamformer::new(
        analog,
        vec![CMat::from_element(1, 1, c(1.0)); num_subcarriers],
    )?;
    bf.normalize_power(n_s);
    Ok(bf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;
    use crate::channel::{optimal_digital_beamformer, CommChannelParams, SubcarrierGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 299_792_458.0 / 28e9;

    fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    struct Setup {
        f_opt: Vec<CMat>,
        dict: Dictionary,
        tx: ArrayGeometry,
        channel: CommChannel,
        kappas: Vec<f64>,
    }

    fn setup(
        seed: u64,
        n_t: usize,
        k: usize,
        n_s: usize,
        targets: &[Direction],
        kappa: f64,
    ) -> Setup {
        let tx = ArrayGeometry::uspa_xz(n_t, LAMBDA).unwrap();
        let rx = ArrayGeometry::uspa_xz(16, LAMBDA).unwrap();
        let channel = CommChannel::generate(&CommChannelParams::default(), n_t, 16, seed).unwrap();
        let grid = SubcarrierGrid::new(k, 240e3, 28e9).unwrap();
        let f_opt = channel
            .realize(&grid, &tx, &rx)
            .iter()
            .map(|h| optimal_digital_beamformer(h, n_s).unwrap())
            .collect();
        let dict = Dictionary::from_channel(&channel, &tx, targets);
        Setup {
            f_opt,
            dict,
            tx,
            channel,
            kappas: vec![kappa; targets.len()],
        }
    }

    fn toi() -> Direction {
        Direction::from_vector(&nalgebra::Vector3::new(-60.0, 150.0, 30.0)).unwrap()
    }

    #[test]
    fn dictionary_columns_have_unit_modulus_entries() {
        let s = setup(1, 36, 2, 2, &[toi()], 1.0);
        assert_eq!(s.dict.columns.ncols(), 50);
        assert!(s
            .dict
            .columns
            .iter()
            .chain(s.dict.target_columns.iter())
            .all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert!((s.dict.target_steering(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positioning_columns_meet_power_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f = CMat::from_fn(16, 3, |_, _| cn(&mut rng));
            let a_s = CMat::from_fn(16, 2, |_, _| {
                Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
            });
            let v = [rng.random_range(0.01..2.0), rng.random_range(0.01..2.0)];
            let (fs, fb) = positioning_side_design(&f, &a_s, &v).unwrap();
            assert!(fb.is_empty());
            for n in 0..2 {
                assert!((fs.column(n).norm_squared() - v[n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aligned_optimum_gives_aligned_column() {
        let tx = ArrayGeometry::uspa_xz(16, LAMBDA).unwrap();
        let a = tx.steering_vector(toi());
        let mut f = CMat::zeros(16, 2);
        f.set_column(0, &a);
        let a_s = CMat::from_column_slice(16, 1, (&a * c(4.0)).as_slice());
        let (fs, _) = positioning_side_design(&f, &a_s, &[0.25]).unwrap();
        assert!((fs[(0, 0)] - c(0.5)).norm() < 1e-12);
        assert!(fs[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn orthogonal_optimum_uses_fallback() {
        let a_s = CMat::from_element(4, 1, c(1.0));
        let f = CMat::from_column_slice(4, 1, &[c(1.0), c(-1.0), c(1.0), c(-1.0)]);
        let (fs, fb) = positioning_side_design(&f, &a_s, &[0.5]).unwrap();
        assert_eq!(fb, vec![0]);
        assert!((fs[(0, 0)].norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_sparse_target_recovered_in_one_round() {
        let s = setup(3, 16, 3, 2, &[], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets: Vec<CMat> = (0..3)
            .map(|_| {
                let w = CVec::from_fn(2, |_, _| cn(&mut rng));
                s.dict.columns.column(5) * w.adjoint()
            })
            .collect();
        let sel = omp_select(&targets, &s.dict.columns, 1).unwrap();
        assert_eq!(sel.indices, vec![5]);
        assert!(sel.residuals.iter().all(|&r| r < 1e-10));
        // Early stop pads remaining selections.
        let sel2 = omp_select(&targets, &s.dict.columns, 3).unwrap();
        assert_eq!(sel2.indices.len(), 3);
        assert_eq!(sel2.digital[0].nrows(), 3);
    }

    #[test]
    fn selection_ignores_global_phase() {
        let s = setup(4, 16, 2, 2, &[], 0.0);
        let rotated: Vec<CMat> = s
            .f_opt
            .iter()
            .map(|f| f * Complex64::from_polar(1.0, 1.234))
            .collect();
        let a = omp_select(&s.f_opt, &s.dict.columns, 3).unwrap();
        let b = omp_select(&rotated, &s.dict.columns, 3).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn residual_strictly_decreases() {
        for seed in 0..10 {
            let s = setup(10 + seed, 36, 4, 2, &[], 0.0);
            let sel = omp_select(&s.f_opt, &s.dict.columns, 4).unwrap();
            assert!(
                sel.residual_history.windows(2).all(|w| w[1] < w[0]),
                "seed {seed}: {:?}",
                sel.residual_history
            );
            let mut sorted = sel.indices.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), sel.indices.len());
        }
    }

    #[test]
    fn pc_omp_output_structure() {
        let s = setup(5, 36, 4, 2, &[toi()], 0.05);
        let d = pc_omp_design(&s.f_opt, &s.dict, &s.kappas, 3).unwrap();
        let bf = &d.beamformer;
        assert_eq!((bf.n_t(), bf.n_rf(), bf.n_s()), (36, 3, 2));
        assert!(bf.max_modulus_error() < 1e-12);
        assert_eq!(bf.analog.column(0), s.dict.target_columns.column(0));
        for k in 0..4 {
            assert!((bf.digital[k].row(0).norm_squared() - 0.05 / 36.0).abs() < 1e-15);
        }
        assert!(d.fallbacks.is_empty());
        assert!(norm_bound_check(bf, 2, &d.deltas).unwrap().holds());
    }

    /// Median of `|a^H F_ex F_ex^H a| / kappa` over channel draws.
    fn median_cross_ratio(n_t: usize) -> f64 {
        let mut r: Vec<f64> = (0..20)
            .map(|seed| {
                let s = setup(200 + seed, n_t, 4, 2, &[toi()], 0.05);
                let d = pc_omp_design(&s.f_opt, &s.dict, &s.kappas, 3).unwrap();
                let a = s.dict.target_steering(0);
                let ex = d.beamformer.analog.columns(1, 2).into_owned();
                (0..4)
                    .map(|k| {
                        (&ex * d.beamformer.digital[k].rows(1, 2))
                            .ad_mul(&a)
                            .norm_squared()
                            / 0.05
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        r.sort_by(f64::total_cmp);
        r[10]
    }

    #[test]
    fn cross_interference_shrinks_with_array_size() {
        let m: Vec<f64> = [16, 36, 100].into_iter().map(median_cross_ratio).collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
    }

    #[test]
    fn exact_representation_gives_exact_power() {
        // Mutually orthogonal DFT columns; F_opt lies in span{target, column 1}.
        let dft = |f: usize| {
            CVec::from_fn(16, |i, _| {
                Complex64::from_polar(1.0, std::f64::consts::TAU * (f * i) as f64 / 16.0)
            })
        };
        let cols = CMat::from_columns(&[dft(2), dft(3), dft(5), dft(7)]);
        let target = CMat::from_columns(&[dft(0)]);
        let dict = Dictionary::new(cols.clone(), target).unwrap();
        let raw = dict.target_steering(0) * c(0.6) + cols.column(1) * c(0.2);
        let f_opt = vec![CMat::from_columns(&[raw.clone() / c(raw.norm())])];
        let kappa = (0.6 / raw.norm()).powi(2);
        let d = pc_omp_design(&f_opt, &dict, &[kappa], 2).unwrap();
        assert!(d.deltas[0] < 1e-10, "delta {}", d.deltas[0]);
        assert!((d.beamformer.power(0).sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(d.selection.unwrap().indices, vec![1]);
    }

    #[test]
    fn power_deviation_bound_on_random_designs() {
        for seed in 0..20 {
            let s = setup(100 + seed, 36, 4, 2, &[toi()], 2.0 + seed as f64 * 0.1);
            for n_rf in [2, 3, 4] {
                let d = pc_omp_design(&s.f_opt, &s.dict, &s.kappas, n_rf).unwrap();
                let r = norm_bound_check(&d.beamformer, 2, &d.deltas).unwrap();
                assert!(r.holds(), "seed {seed} n_rf {n_rf}: {}", r.min_margin());
            }
        }
    }

    #[test]
    fn baselines_have_target_power_and_unit_modulus() {
        let s = setup(6, 36, 4, 2, &[], 0.0);
        let omp = comm_only_omp(&s.f_opt, &s.dict.columns, 3).unwrap();
        let bs = beam_steering(&s.channel, &s.tx, 2, 4).unwrap();
        assert_eq!(bs.n_rf(), 1);
        let best = s.channel.rays().map(|r| r.gain.norm()).fold(0.0, f64::max);
        let ray = s.channel.rays().find(|r| r.gain.norm() == best).unwrap();
        assert!((bs.target_gain(0, &s.tx.steering_vector(ray.departure)) - 2.0).abs() < 1e-10);
        for bf in [&omp, &bs] {
            assert!(bf.max_modulus_error() < 1e-12);
            for k in 0..4 {
                assert!((bf.power(k) - 2.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let s = setup(7, 16, 2, 2, &[toi()], 1.0);
        assert!(pc_omp_design(&s.f_opt, &s.dict, &[1.0, 2.0], 3).is_err());
        assert!(pc_omp_design(&s.f_opt, &s.dict, &s.kappas, 0).is_err());
        assert!(omp_select(&s.f_opt, &s.dict.columns, 0).is_err());
        let d = pc_omp_design(&s.f_opt, &s.dict, &s.kappas, 1).unwrap();
        assert_eq!(d.beamformer.n_rf(), 1);
    }
}
