//! OFDM subcarrier grid, bistatic sensing paths, clustered communication channel,
//! optimal fully digital beamformer and achievable spectral efficiency.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::array::{ArrayGeometry, Direction};
use crate::error::{Error, Result};
use crate::linalg::{c, log2_det_hpd, right_singular_vectors_sorted, CMat};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// OFDM subcarrier layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcarrierGrid {
    /// Number of subcarriers K.
    pub num_subcarriers: usize,
    /// Subcarrier spacing in Hz.
    pub spacing: f64,
    /// Carrier frequency in Hz.
    pub carrier: f64,
}

impl SubcarrierGrid {
    pub fn new(num_subcarriers: usize, spacing: f64, carrier: f64) -> Result<Self> {
        if num_subcarriers == 0 || !(spacing > 0.0) || !(carrier > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "subcarrier grid needs K > 0, spacing > 0, carrier > 0 (got {num_subcarriers}, {spacing}, {carrier})"
            )));
        }
        Ok(Self {
            num_subcarriers,
            spacing,
            carrier,
        })
    }

    /// Baseband frequency of subcarrier `k` (zero-based).
    pub fn freq(&self, k: usize) -> f64 {
        (2.0 * k as f64 + 1.0 - self.num_subcarriers as f64) * 0.5 * self.spacing
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.num_subcarriers).map(|k| self.freq(k)).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.num_subcarriers as f64 * self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier
    }

    /// `sum_k f_k^2 = B^2 (K^2 - 1) / (12 K)`.
    pub fn sum_freq_sq(&self) -> f64 {
        let k = self.num_subcarriers as f64;
        self.bandwidth().powi(2) * (k * k - 1.0) / (12.0 * k)
    }
}

/// Angles, delay and gain of one bistatic sensing path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Angle of arrival at the receiver.
    pub aoa: Direction,
    /// Angle of departure at the transmitter.
    pub aod: Direction,
    /// Time of arrival in seconds.
    pub toa: f64,
    /// Complex path gain.
    pub gain: Complex64,
}

/// Bistatic sensing scene: two base stations, point scatterers and link budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingScene {
    pub tx_center: Vector3<f64>,
    pub rx_center: Vector3<f64>,
    pub scatterers: Vec<Vector3<f64>>,
    /// Radar cross section in m^2.
    pub rcs: f64,
    pub include_los: bool,
    /// Transmit energy per symbol in J.
    pub tx_power_per_symbol: f64,
    pub num_symbols: usize,
    /// Receiver noise power in W.
    pub noise_power: f64,
    pub num_streams: usize,
    /// Seed for the uniform path-gain phases.
    pub phase_seed: u64,
}

/// Which physical path a sensing path index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Los,
    Scatterer(usize),
}

impl SensingScene {
    pub fn baseline(&self) -> f64 {
        (self.tx_center - self.rx_center).norm()
    }

    /// Number of paths: the LOS path (if enabled) followed by one per scatterer.
    pub fn num_paths(&self) -> usize {
        self.scatterers.len() + usize::from(self.include_los)
    }

    pub fn path_kind(&self, index: usize) -> Result<PathKind> {
        match (self.include_los, index) {
            (true, 0) => Ok(PathKind::Los),
            (true, i) if i <= self.scatterers.len() => Ok(PathKind::Scatterer(i - 1)),
            (false, i) if i < self.scatterers.len() => Ok(PathKind::Scatterer(i)),
            _ => Err(Error::InvalidParameter(format!(
                "path index {index} out of range"
            ))),
        }
    }

    /// Path index of scatterer `s`.
    pub fn scatterer_path(&self, s: usize) -> usize {
        s + usize::from(self.include_los)
    }

    /// `gamma = 2 N_r N_t E0 M / (sigma^2 N_s)`.
    pub fn snr_factor(&self, n_t: usize, n_r: usize) -> f64 {
        2.0 * (n_r * n_t) as f64 * self.tx_power_per_symbol * self.num_symbols as f64
            / (self.noise_power * self.num_streams as f64)
    }

    fn gain_phase(&self, index: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.phase_seed);
        rng.set_stream(index as u64);
        rng.random_range(0.0..TWO_PI)
    }

    /// Complex gain of a path: deterministic magnitude, seeded uniform phase.
    pub fn path_gain(&self, index: usize, wavelength: f64) -> Result<Complex64> {
        let mag_sq = match self.path_kind(index)? {
            PathKind::Los => {
                let d = self.baseline();
                if !(d > 0.0) {
                    return Err(Error::DegenerateGeometry("zero baseline".into()));
                }
                los_gain_sq(wavelength, d)
            }
            PathKind::Scatterer(s) => {
                let p = self.scatterers[s];
                let d0 = (p - self.tx_center).norm();
                let d1 = (p - self.rx_center).norm();
                if !(d0 > 0.0 && d1 > 0.0) {
                    return Err(Error::DegenerateGeometry(format!(
                        "scatterer {s} coincides with an array"
                    )));
                }
                scatterer_gain_sq(wavelength, self.rcs, d0, d1)
            }
        };
        Ok(Complex64::from_polar(mag_sq.sqrt(), self.gain_phase(index)))
    }

    /// Angles, delay and gain of path `index`.
    pub fn path(&self, index: usize, wavelength: f64) -> Result<PathParams> {
        let gain = self.path_gain(index, wavelength)?;
        let (aoa, aod, range) = match self.path_kind(index)? {
            PathKind::Los => {
                let v = self.tx_center - self.rx_center;
                (
                    Direction::from_vector(&v)?,
                    Direction::from_vector(&-v)?,
                    v.norm(),
                )
            }
            PathKind::Scatterer(s) => {
                let p = self.scatterers[s];
                let to_rx = p - self.rx_center;
                let to_tx = p - self.tx_center;
                (
                    Direction::from_vector(&to_rx)?,
                    Direction::from_vector(&to_tx)?,
                    to_rx.norm() + to_tx.norm(),
                )
            }
        };
        Ok(PathParams {
            aoa,
            aod,
            toa: range / SPEED_OF_LIGHT,
            gain,
        })
    }

    pub fn paths(&self, wavelength: f64) -> Result<Vec<PathParams>> {
        (0..self.num_paths())
            .map(|i| self.path(i, wavelength))
            .collect()
    }
}

/// `|beta|^2` of the direct path.
pub fn los_gain_sq(wavelength: f64, baseline: f64) -> f64 {
    wavelength.powi(2) / ((4.0 * std::f64::consts::PI).powi(2) * baseline.powi(2))
}

/// `|beta|^2` of a bistatic point-scatterer path.
pub fn scatterer_gain_sq(wavelength: f64, rcs: f64, d0: f64, d1: f64) -> f64 {
    wavelength.powi(2) * rcs / ((4.0 * std::f64::consts::PI).powi(3) * (d0 * d1).powi(2))
}

/// Frequency-domain sensing channel of subcarrier `k`, shape `N_r x N_t`.
pub fn sensing_channel(
    paths: &[PathParams],
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    k: usize,
) -> Result<CMat> {
    if k >= grid.num_subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "subcarrier {k} out of {}",
            grid.num_subcarriers
        )));
    }
    let scale = ((tx.len() * rx.len()) as f64).sqrt();
    let fk = grid.freq(k);
    let mut h = CMat::zeros(rx.len(), tx.len());
    for p in paths {
        let a = tx.steering_vector(p.aod);
        let b = rx.steering_vector(p.aoa);
        let w = p.gain * Complex64::from_polar(scale, -TWO_PI * fk * p.toa);
        h += b * a.adjoint() * w;
    }
    Ok(h)
}

/// Angle-generation settings for the clustered channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannelParams {
    pub num_clusters: usize,
    pub rays_per_cluster: usize,
    /// Laplacian angular spread (standard deviation) of ray offsets, radians.
    pub angular_spread: f64,
    /// Range of cluster-center polar angles, radians.
    pub theta_range: (f64, f64),
    /// Half-width of the cluster-center azimuth sector, radians.
    pub phi_half_width: f64,
    /// Azimuth of the transmit sector center, radians.
    pub departure_phi_center: f64,
    /// Azimuth of the receive sector center, radians.
    pub arrival_phi_center: f64,
    /// Upper bound of the uniform cluster delay, seconds.
    pub max_delay: f64,
}

impl Default for CommChannelParams {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            num_clusters: 5,
            rays_per_cluster: 10,
            angular_spread: 10.0 * deg,
            theta_range: (60.0 * deg, 120.0 * deg),
            phi_half_width: 60.0 * deg,
            departure_phi_center: -90.0 * deg,
            arrival_phi_center: 90.0 * deg,
            max_delay: 200e-9,
        }
    }
}

/// One propagation ray inside a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub gain: Complex64,
    pub departure: Direction,
    pub arrival: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub delay: f64,
    /// Average ray power of this cluster.
    pub power: f64,
    pub rays: Vec<Ray>,
}

/// Realization of the clustered (Saleh-Valenzuela) communication channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannel {
    pub clusters: Vec<Cluster>,
    pub normalization: f64,
}

fn wrap_angle(phi: f64) -> f64 {
    let mut p = (phi + std::f64::consts::PI).rem_euclid(TWO_PI) - std::f64::consts::PI;
    if p <= -std::f64::consts::PI {
        p += TWO_PI;
    }
    p
}

fn laplacian<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

impl CommChannel {
    /// Normalization making `E ||H_k||_F^2 = n_t * n_r` with equal cluster powers.
    pub fn normalization_for(n_t: usize, n_r: usize, rays_per_cluster: usize) -> f64 {
        ((n_t * n_r) as f64 / rays_per_cluster as f64).cbrt()
    }

    /// Draw a channel realization; identical seeds give identical channels.
    pub fn generate(params: &CommChannelParams, n_t: usize, n_r: usize, seed: u64) -> Result<Self> {
        if params.num_clusters == 0 || params.rays_per_cluster == 0 {
            return Err(Error::InvalidParameter(
                "need at least one cluster and one ray".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma0 = Self::normalization_for(n_t, n_r, params.rays_per_cluster);
        let power = gamma0 / params.num_clusters as f64;
        let lap_scale = params.angular_spread / std::f64::consts::SQRT_2;
        let (t0, t1) = params.theta_range;
        let pi = std::f64::consts::PI;
        let mut clusters = Vec::with_capacity(params.num_clusters);
        for _ in 0..params.num_clusters {
            let delay = rng.random_range(0.0..=params.max_delay);
            let center = |rng: &mut ChaCha8Rng, phi_c: f64| {
                let th = rng.random_range(t0..=t1);
                let ph = phi_c + rng.random_range(-params.phi_half_width..=params.phi_half_width);
                (th, ph)
            };
            let (tt, tp) = center(&mut rng, params.departure_phi_center);
            let (rt, rp) = center(&mut rng, params.arrival_phi_center);
            let rays = (0..params.rays_per_cluster)
                .map(|_| {
                    let departure = Direction::new(
                        (tt + laplacian(&mut rng, lap_scale)).clamp(0.0, pi),
                        wrap_angle(tp + laplacian(&mut rng, lap_scale)),
                    );
                    let arrival = Direction::new(
                        (rt + laplacian(&mut rng, lap_scale)).clamp(0.0, pi),
                        wrap_angle(rp + laplacian(&mut rng, lap_scale)),
                    );
                    Ray {
                        gain: complex_normal(&mut rng, power),
                        departure,
                        arrival,
                    }
                })
                .collect();
            clusters.push(Cluster { delay, power, rays });
        }
        Ok(Self {
            clusters,
            normalization: gamma0,
        })
    }

    pub fn rays(&self) -> impl Iterator<Item = &Ray> {
        self.clusters.iter().flat_map(|c| c.rays.iter())
    }

    /// Channel matrices `H_k` (shape `N_r x N_t`) for every subcarrier.
    pub fn realize(
        &self,
        grid: &SubcarrierGrid,
        tx: &ArrayGeometry,
        rx: &ArrayGeometry,
    ) -> Vec<CMat> {
        let terms: Vec<(f64, CMat)> = self
            .clusters
            .iter()
            .map(|cl| {
                let mut m = CMat::zeros(rx.len(), tx.len());
                for r in &cl.rays {
                    m += rx.steering_vector(r.arrival)
                        * tx.steering_vector(r.departure).adjoint()
                        * r.gain;
                }
                (cl.delay, m * c(self.normalization))
            })
            .collect();
        (0..grid.num_subcarriers)
            .map(|k| {
                let fk = grid.freq(k);
                let mut h = CMat::zeros(rx.len(), tx.len());
                for (tau, m) in &terms {
                    h += m * Complex64::from_polar(1.0, -TWO_PI * fk * tau);
                }
                h
            })
            .collect()
    }
}

/// Top-`n_s` right singular vectors of `h`.
pub fn optimal_digital_beamformer(h: &CMat, n_s: usize) -> Result<CMat> {
    let (nr, nt) = h.shape();
    if n_s == 0 || n_s > nr.min(nt) {
        return Err(Error::InvalidParameter(format!(
            "N_s = {n_s} exceeds channel rank bound {}",
            nr.min(nt)
        )));
    }
    let (_, v) = right_singular_vectors_sorted(h);
    Ok(v.columns(0, n_s).into_owned())
}

/// Average achievable rate `(1/K) sum_k log2 det(I + snr/N_s H_k F_k F_k^H H_k^H)`.
pub fn spectral_efficiency(
    channels: &[CMat],
    precoders: &[CMat],
    snr: f64,
    n_s: usize,
) -> Result<f64> {
    if channels.len() != precoders.len() || channels.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels vs {} precoders",
            channels.len(),
            precoders.len()
        )));
    }
    let mut total = 0.0;
    for (h, f) in channels.iter().zip(precoders) {
        if h.ncols() != f.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "H is {:?}, F is {:?}",
                h.shape(),
                f.shape()
            )));
        }
        // det(I + A A^H) = det(I + A^H A); the stream-sized form is cheaper.
        let hf = h * f;
        let m = CMat::identity(f.ncols(), f.ncols()) + hf.adjoint() * &hf * c(snr / n_s as f64);
        total += log2_det_hpd(&m);
    }
    Ok(total / channels.len() as f64)
}
