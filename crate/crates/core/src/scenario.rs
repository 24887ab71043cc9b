//! Scenario configuration (TOML) and the derived simulation objects.
//!
//! Coordinates are meters with the sensing receiver at the origin and the transmitter at
//! `(0, D, 0)`; both arrays sit `bs_height` above ground, so the ground plane is `z = -bs_height`.

use std::path::Path;

use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, Direction};
use crate::beamformer::HybridBeamformer;
use crate::channel::{
    optimal_digital_beamformer, CommChannel, CommChannelParams, PathParams, SensingScene,
    SubcarrierGrid,
};
use crate::error::{Error, Result};
use crate::fisher::ToaBound;
use crate::linalg::{CMat, CVec};
use crate::position::SensingLink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!(
                "unknown scale `{other}` (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub n_t: usize,
    pub n_r_comm: usize,
    pub n_r_sense: usize,
    pub baseline: f64,
    pub bs_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub carrier_hz: f64,
    pub subcarriers: usize,
    pub spacing_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Transmit energy per symbol, dBm.
    pub tx_dbm: f64,
    /// Sensing noise power, dBm.
    pub noise_dbm: f64,
    pub symbols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    /// Radar cross section, m^2.
    pub rcs: f64,
    pub include_los: bool,
    pub scatterers: Vec<[f64; 3]>,
    /// Scatterer indices of the targets of interest.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    /// PEB threshold, m.
    pub gamma: f64,
    pub n_s: usize,
    pub n_rf: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub clusters: usize,
    pub rays: usize,
    pub spread_deg: f64,
    pub max_delay_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Cells per side of the square grid covering the sector.
    pub grid_resolution: usize,
    pub heatmap_planes: Vec<f64>,
    pub cdf_planes: Vec<f64>,
    pub cdf_n_t: Vec<usize>,
    pub convergence_gammas: Vec<f64>,
    pub convergence_runs: usize,
    pub monte_carlo: usize,
    pub snr_db: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Scatterer indices of the targets in the two-target sweep.
    pub two_targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scale: Scale,
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub spectrum: SpectrumConfig,
    pub power: PowerConfig,
    pub sensing: SensingConfig,
    pub design: DesignConfig,
    pub channel: ChannelConfig,
    pub experiments: ExperimentConfig,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

macro_rules! preset_default {
    ($($ty:ident => $field:ident),*) => {
        $(impl Default for $ty {
            fn default() -> Self {
                ScenarioConfig::desk().$field
            }
        })*
    };
}

preset_default!(
    GeometryConfig => geometry,
    SpectrumConfig => spectrum,
    PowerConfig => power,
    SensingConfig => sensing,
    DesignConfig => design,
    ChannelConfig => channel,
    ExperimentConfig => experiments
);

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ScenarioConfig {
    /// Reduced array and subcarrier counts with a larger cross section compensating the lost array and bandwidth gain.
    pub fn desk() -> Self {
        Self {
            scale: Scale::Desk,
            seed: 1,
            geometry: GeometryConfig {
                n_t: 36,
                n_r_comm: 16,
                n_r_sense: 36,
                baseline: 200.0,
                bs_height: 10.0,
            },
            spectrum: SpectrumConfig {
                carrier_hz: 28e9,
                subcarriers: 16,
                spacing_hz: 240e3,
            },
            power: PowerConfig {
                tx_dbm: 37.0,
                noise_dbm: -83.0,
                symbols: 30,
            },
            sensing: SensingConfig {
                rcs: 8000.0,
                include_los: true,
                scatterers: vec![
                    [60.0, 100.0, -10.0],
                    [70.0, 50.0, 0.0],
                    [10.0, 0.0, 20.0],
                    [-60.0, 150.0, 30.0],
                ],
                targets: vec![0],
            },
            design: DesignConfig {
                gamma: 0.4,
                n_s: 2,
                n_rf: 2,
                snr_db: 0.0,
            },
            channel: ChannelConfig {
                clusters: 5,
                rays: 10,
                spread_deg: 10.0,
                max_delay_ns: 200.0,
            },
            experiments: ExperimentConfig {
                grid_resolution: 40,
                heatmap_planes: vec![-10.0, 30.0],
                cdf_planes: vec![-10.0, 0.0, 30.0],
                cdf_n_t: vec![36, 100],
                convergence_gammas: vec![0.1, 0.4],
                convergence_runs: 10,
                monte_carlo: 20,
                snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
                gammas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
                two_targets: vec![0, 3],
            },
        }
    }

    /// Array sizes, bandwidth and cross section of the original simulation section.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.scale = Scale::Paper;
        c.geometry.n_t = 100;
        c.geometry.n_r_comm = 100;
        c.geometry.n_r_sense = 100;
        c.spectrum.subcarriers = 128;
        c.sensing.rcs = 50.0;
        c
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    /// Parse TOML text laid over the preset; omitted keys keep their preset values.
    pub fn from_toml_str(text: &str, base: Scale) -> Result<Self> {
        // Parsing the text on its own reports unknown keys and type errors with its own line numbers.
        toml::from_str::<Self>(text).map_err(|e| Error::Config(e.to_string()))?;
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let scale = match over.get("scale").and_then(|v| v.as_str()) {
            Some(s) => s.parse()?,
            None => base,
        };
        let mut merged =
            toml::Value::try_from(Self::preset(scale)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, over);
        let text = toml::to_string(&merged).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Scale) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("geometry.n_t", g.n_t),
            ("geometry.n_r_comm", g.n_r_comm),
            ("geometry.n_r_sense", g.n_r_sense),
            ("spectrum.subcarriers", self.spectrum.subcarriers),
            ("power.symbols", self.power.symbols),
            ("design.n_s", self.design.n_s),
            ("design.n_rf", self.design.n_rf),
            ("channel.clusters", self.channel.clusters),
            ("channel.rays", self.channel.rays),
            (
                "experiments.grid_resolution",
                self.experiments.grid_resolution,
            ),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for n in [g.n_t, g.n_r_comm, g.n_r_sense]
            .into_iter()
            .chain(self.experiments.cdf_n_t.iter().copied())
        {
            let s = (n as f64).sqrt().round() as usize;
            if s * s != n {
                return bad(format!("array size {n} is not a perfect square"));
            }
        }
        if !(g.baseline > 0.0)
            || !(self.sensing.rcs > 0.0)
            || !(self.spectrum.carrier_hz > 0.0)
            || !(self.spectrum.spacing_hz > 0.0)
        {
            return bad("baseline, cross section, carrier and spacing must be positive".into());
        }
        if !(self.design.gamma > 0.0) {
            return bad(format!(
                "design.gamma = {} must be positive",
                self.design.gamma
            ));
        }
        if self.sensing.targets.is_empty() || self.experiments.two_targets.len() != 2 {
            return bad("sensing.targets must be non-empty and experiments.two_targets must name two scatterers".into());
        }
        let all_targets = self
            .sensing
            .targets
            .iter()
            .chain(&self.experiments.two_targets);
        if let Some(&t) = all_targets
            .clone()
            .find(|&&t| t >= self.sensing.scatterers.len())
        {
            return bad(format!(
                "target index {t} exceeds the {} scatterers",
                self.sensing.scatterers.len()
            ));
        }
        if self.design.n_s > self.design.n_rf || self.design.n_rf > g.n_t {
            return bad(format!(
                "need n_s <= n_rf <= n_t, got {} {} {}",
                self.design.n_s, self.design.n_rf, g.n_t
            ));
        }
        if self.design.n_s > g.n_r_comm {
            return bad(format!(
                "n_s = {} exceeds the receive array size {}",
                self.design.n_s, g.n_r_comm
            ));
        }
        Ok(())
    }

    /// Linear communication SNR.
    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.design.snr_db / 10.0)
    }
}

/// Independent seed for stream `index` of a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

/// Simulation objects derived from a configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: SubcarrierGrid,
    pub tx: ArrayGeometry,
    pub rx_sense: ArrayGeometry,
    pub rx_comm: ArrayGeometry,
    pub scene: SensingScene,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.spectrum;
        let grid = SubcarrierGrid::new(s.subcarriers, s.spacing_hz, s.carrier_hz)?;
        let lambda = grid.wavelength();
        let g = &config.geometry;
        let scene = SensingScene {
            tx_center: Vector3::new(0.0, g.baseline, 0.0),
            rx_center: Vector3::zeros(),
            scatterers: config
                .sensing
                .scatterers
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            rcs: config.sensing.rcs,
            include_los: config.sensing.include_los,
            tx_power_per_symbol: dbm_to_watts(config.power.tx_dbm),
            num_symbols: config.power.symbols,
            noise_power: dbm_to_watts(config.power.noise_dbm),
            num_streams: config.design.n_s,
            phase_seed: config.seed,
        };
        Ok(Self {
            tx: ArrayGeometry::uspa_xz(g.n_t, lambda)?,
            rx_sense: ArrayGeometry::uspa_xz(g.n_r_sense, lambda)?,
            rx_comm: ArrayGeometry::uspa_xz(g.n_r_comm, lambda)?,
            grid,
            scene,
            config,
        })
    }

    /// Same scenario with a different stream count (changes the sensing SNR factor).
    pub fn with_streams(&self, n_s: usize) -> Result<Self> {
        let mut c = self.config.clone();
        c.design.n_s = n_s;
        c.design.n_rf = c.design.n_rf.max(n_s);
        Self::new(c)
    }

    pub fn with_transmit_array(&self, n_t: usize) -> Result<Self> {
        let mut c = self.config.clone();
        c.geometry.n_t = n_t;
        c.design.n_rf = c.design.n_rf.min(n_t);
        Self::new(c)
    }

    pub fn link(&self) -> SensingLink {
        SensingLink {
            tx: self.tx.clone(),
            rx: self.rx_sense.clone(),
            grid: self.grid,
            snr_factor: self.scene.snr_factor(self.tx.len(), self.rx_sense.len()),
            baseline: self.scene.baseline(),
        }
    }

    pub fn num_targets(&self) -> usize {
        self.config.sensing.targets.len()
    }

    /// Sensing path of target `n`.
    pub fn target_path(&self, n: usize) -> Result<PathParams> {
        let s = *self
            .config
            .sensing
            .targets
            .get(n)
            .ok_or_else(|| Error::InvalidParameter(format!("target {n} not configured")))?;
        self.scene
            .path(self.scene.scatterer_path(s), self.grid.wavelength())
    }

    /// Sensing path of an arbitrary point with the configured cross section.
    pub fn point_path(&self, p: Vector3<f64>) -> Result<PathParams> {
        let mut scene = self.scene.clone();
        scene.scatterers = vec![p];
        scene.include_los = false;
        scene.path(0, self.grid.wavelength())
    }

    pub fn target_directions(&self) -> Result<Vec<Direction>> {
        (0..self.num_targets())
            .map(|n| Ok(self.target_path(n)?.aod))
            .collect()
    }

    /// Unit-norm transmit steering vectors toward the targets.
    pub fn target_steering(&self) -> Result<Vec<CVec>> {
        Ok(self
            .target_directions()?
            .into_iter()
            .map(|d| self.tx.steering_vector(d))
            .collect())
    }

    /// Per-target gain thresholds for PEB threshold `gamma`.
    pub fn kappas(&self, gamma: f64) -> Result<Vec<f64>> {
        let link = self.link();
        (0..self.num_targets())
            .map(|n| link.kappa(&self.target_path(n)?, gamma, ToaBound::ExactSum))
            .collect()
    }

    pub fn channel_params(&self) -> CommChannelParams {
        let deg = std::f64::consts::PI / 180.0;
        let c = &self.config.channel;
        CommChannelParams {
            num_clusters: c.clusters,
            rays_per_cluster: c.rays,
            angular_spread: c.spread_deg * deg,
            max_delay: c.max_delay_ns * 1e-9,
            ..CommChannelParams::default()
        }
    }

    pub fn comm_channel(&self, seed: u64) -> Result<CommChannel> {
        CommChannel::generate(
            &self.channel_params(),
            self.tx.len(),
            self.rx_comm.len(),
            seed,
        )
    }

    pub fn channel_matrices(&self, channel: &CommChannel) -> Vec<CMat> {
        channel.realize(&self.grid, &self.tx, &self.rx_comm)
    }

    pub fn optimal_beamformers(&self, channels: &[CMat]) -> Result<Vec<CMat>> {
        channels
            .iter()
            .map(|h| optimal_digital_beamformer(h, self.config.design.n_s))
            .collect()
    }

    /// PEB of target `n` under the given beamformer, from the full per-path FIM.
    pub fn peb(&self, bf: &HybridBeamformer, n: usize) -> Result<f64> {
        Ok(self
            .link()
            .speb(&self.target_path(n)?, &bf.effective_all())?
            .peb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(ScenarioConfig::desk().validate().is_ok());
        assert!(ScenarioConfig::paper().validate().is_ok());
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        let s = Scenario::new(ScenarioConfig::desk()).unwrap();
        assert!((s.scene.tx_power_per_symbol / s.scene.noise_power / 1e12 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toml_roundtrip_and_overlay() {
        let d = ScenarioConfig::desk();
        assert_eq!(
            ScenarioConfig::from_toml_str(&d.to_toml(), Scale::Desk).unwrap(),
            d
        );
        let c = ScenarioConfig::from_toml_str("seed = 9\n[design]\ngamma = 0.2\n", Scale::Desk)
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.design.gamma, 0.2);
        assert_eq!(c.design.n_s, d.design.n_s);
        let p = ScenarioConfig::from_toml_str("scale = \"paper\"", Scale::Desk).unwrap();
        assert_eq!(p.geometry.n_t, 100);
    }

    #[test]
    fn config_errors() {
        let e = ScenarioConfig::from_toml_str("seed = 1\n[design]\ngamma = \"x\"\n", Scale::Desk)
            .unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
        assert!(ScenarioConfig::from_toml_str("[geometry]\nn_t = 35\n", Scale::Desk).is_err());
        assert!(ScenarioConfig::from_toml_str("[sensing]\ntargets = [7]\n", Scale::Desk).is_err());
        let e = ScenarioConfig::from_toml_str("seed = 1\n\n[design]\nbogus = 1\n", Scale::Desk)
            .unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
        assert!("huge".parse::<Scale>().is_err());
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(a[3], derive_seed(7, 3));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn desk_thresholds_are_attainable() {
        let s = Scenario::new(ScenarioConfig::desk()).unwrap();
        let k01 = s.kappas(0.1).unwrap()[0];
        let k04 = s.kappas(0.4).unwrap()[0];
        let n_s = s.config.design.n_s as f64;
        assert!(k01 < n_s && k04 < k01);
        assert!(((k01 / k04) - 16.0).abs() < 1e-9);
    }
}
