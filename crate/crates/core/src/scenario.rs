//! Scenario parameters and Rayleigh channel generation.
//!
//! All quantities are stored in linear units (Watts, linear power ratios).
//! dB and dBm only appear in the conversion helpers and the presets.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c64, CMat, CVec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * x.log10()
    }
}

pub fn watts_from_dbm(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Every scalar parameter of the coexistence scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_bs_antennas: usize,
    pub n_radar_antennas: usize,
    pub n_users: usize,
    pub n_eves: usize,
    /// Noise power at each legitimate user, Watts.
    pub bob_noise: Vec<f64>,
    /// Noise power at each eavesdropper, Watts.
    pub eve_noise: Vec<f64>,
    pub radar_noise: f64,
    pub target_rcs: f64,
    /// Target azimuth, radians.
    pub target_angle: f64,
    pub antenna_spacing_ratio: f64,
    pub bs_power: f64,
    pub radar_power: f64,
    /// Per-user SINR requirement, linear.
    pub comm_qos: Vec<f64>,
    /// Radar output SINR requirement, linear.
    pub radar_qos: f64,
    pub rng_seed: u64,
}

/// Named parameter sets used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Eavesdropper CSI available at the transmitters.
    KnownCsi,
    /// Eavesdropper CSI unavailable; artificial-noise design.
    UnknownCsi,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "known-csi" | "known" => Ok(Preset::KnownCsi),
            "unknown-csi" | "unknown" => Ok(Preset::UnknownCsi),
            other => Err(format!("unknown preset `{other}` (known-csi | unknown-csi)")),
        }
    }
}

impl Preset {
    pub fn config(self) -> ScenarioConfig {
        match self {
            Preset::KnownCsi => ScenarioConfig::known_csi(),
            Preset::UnknownCsi => ScenarioConfig::unknown_csi(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::KnownCsi => "known-csi",
            Preset::UnknownCsi => "unknown-csi",
        }
    }
}

impl ScenarioConfig {
    fn base(n_bs: usize) -> Self {
        let k = 4;
        let i = 2;
        let noise = watts_from_dbm(10.0);
        Self {
            n_bs_antennas: n_bs,
            n_radar_antennas: 16,
            n_users: k,
            n_eves: i,
            bob_noise: vec![noise; k],
            eve_noise: vec![noise; i],
            radar_noise: db_to_linear(0.0),
            target_rcs: 1.0,
            target_angle: 0.0,
            antenna_spacing_ratio: 0.5,
            bs_power: 10.0,
            radar_power: 500.0,
            comm_qos: vec![db_to_linear(5.0); k],
            radar_qos: db_to_linear(10.0),
            rng_seed: 0,
        }
    }

    /// N=4, K=4, I=2, M=16, P_c=10 W, P_r=500 W, Γ_c=5 dB, Γ_r=10 dB.
    pub fn known_csi() -> Self {
        Self::base(4)
    }

    /// Same as [`Self::known_csi`] with an 8-antenna base station.
    pub fn unknown_csi() -> Self {
        Self::base(8)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_bs_antennas == 0 || self.n_radar_antennas == 0 || self.n_users == 0 {
            return bad("antenna and user counts must be at least 1");
        }
        if self.bob_noise.len() != self.n_users || self.comm_qos.len() != self.n_users {
            return bad("bob_noise and comm_qos need one entry per user");
        }
        if self.eve_noise.len() != self.n_eves {
            return bad("eve_noise needs one entry per eavesdropper");
        }
        let positive = self
            .bob_noise
            .iter()
            .chain(&self.eve_noise)
            .chain(&self.comm_qos)
            .chain([
                &self.radar_noise,
                &self.target_rcs,
                &self.antenna_spacing_ratio,
                &self.bs_power,
                &self.radar_power,
                &self.radar_qos,
            ])
            .all(|&x| x.is_finite() && x > 0.0);
        if !positive {
            return bad("noises, powers, thresholds, rcs and spacing must be finite and > 0");
        }
        if !self.target_angle.is_finite() {
            return bad("target_angle must be finite");
        }
        Ok(())
    }

    /// Sets every user's QoS threshold to the same value.
    pub fn set_uniform_comm_qos(&mut self, linear: f64) {
        self.comm_qos = vec![linear; self.n_users];
    }

    pub fn from_toml_str(s: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Applies a `field=value` override, where `value` is TOML syntax
    /// (`5`, `0.01`, `[1.0, 2.0]`).
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let err = |m: String| ConfigError::Override(assignment.to_string(), m);
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| err("expected field=value".into()))?;
        let key = key.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .map_err(|e| err(e.to_string()))?
            .remove("v")
            .ok_or_else(|| err("empty value".into()))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| err(e.to_string()))?;
        let slot = table
            .get_mut(key)
            .ok_or_else(|| err(format!("no field named `{key}`")))?;
        // integers are accepted where floats are expected
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Array(_), toml::Value::Array(a)) => toml::Value::Array(
                a.into_iter()
                    .map(|v| match v {
                        toml::Value::Integer(i) => toml::Value::Float(i as f64),
                        other => other,
                    })
                    .collect(),
            ),
            (_, v) => v,
        };
        let updated: ScenarioConfig = table.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

/// ULA response: entry `p` is `exp(j 2π spacing p sin(angle))`.
pub fn steering_vector(angle: f64, m: usize, spacing_ratio: f64) -> CVec {
    let phase = 2.0 * PI * spacing_ratio * angle.sin();
    CVec::from_fn(m, |p, _| {
        let t = phase * p as f64;
        c64(t.cos(), t.sin())
    })
}

/// One realization of every link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS to each legitimate user, length N.
    pub h: Vec<CVec>,
    /// Radar to each legitimate user, length M.
    pub g: Vec<CVec>,
    /// BS to each eavesdropper, length N.
    pub h_eve: Vec<CVec>,
    /// Radar to each eavesdropper, length M.
    pub g_eve: Vec<CVec>,
    /// BS to radar receiver, N x M.
    pub q: CMat,
    /// Transmit (= receive) steering vector toward the target.
    pub steering: CVec,
    /// `a_r a_t^H`, M x M.
    pub a: CMat,
}

/// Draws one circularly-symmetric complex Gaussian with unit total variance.
pub fn cn01(rng: &mut impl Rng) -> crate::linalg::C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64(re * s, im * s)
}

pub fn cn_vector(rng: &mut impl Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cn01(rng))
}

/// Samples all channels from `rng`. Draw order is fixed: user BS links, user
/// radar links, eavesdropper BS links, eavesdropper radar links, then `Q`
/// column-major.
pub fn sample_channels(cfg: &ScenarioConfig, rng: &mut impl Rng) -> ChannelSet {
    let n = cfg.n_bs_antennas;
    let m = cfg.n_radar_antennas;
    let h = (0..cfg.n_users).map(|_| cn_vector(rng, n)).collect();
    let g = (0..cfg.n_users).map(|_| cn_vector(rng, m)).collect();
    let h_eve = (0..cfg.n_eves).map(|_| cn_vector(rng, n)).collect();
    let g_eve = (0..cfg.n_eves).map(|_| cn_vector(rng, m)).collect();
    let q = CMat::from_fn(n, m, |_, _| cn01(rng));
    let steering = steering_vector(cfg.target_angle, m, cfg.antenna_spacing_ratio);
    let a = &steering * steering.adjoint();
    ChannelSet {
        h,
        g,
        h_eve,
        g_eve,
        q,
        steering,
        a,
    }
}

/// Channels drawn from a generator seeded with `cfg.rng_seed`.
pub fn sample_channels_seeded(cfg: &ScenarioConfig) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    sample_channels(cfg, &mut rng)
}

impl ChannelSet {
    /// Replaces the eavesdropper links with a fresh independent draw.
    pub fn resample_eves(&mut self, cfg: &ScenarioConfig, rng: &mut impl Rng) {
        let n = cfg.n_bs_antennas;
        let m = cfg.n_radar_antennas;
        self.h_eve = (0..cfg.n_eves).map(|_| cn_vector(rng, n)).collect();
        self.g_eve = (0..cfg.n_eves).map(|_| cn_vector(rng, m)).collect();
    }

    pub fn n_bs(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_radar(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    pub fn n_eves(&self) -> usize {
        self.h_eve.len()
    }

    pub fn check_against(&self, cfg: &ScenarioConfig) -> Result<(), ConfigError> {
        let ok = self.n_bs() == cfg.n_bs_antennas
            && self.n_radar() == cfg.n_radar_antennas
            && self.n_users() == cfg.n_users
            && self.n_eves() == cfg.n_eves
            && self.g.len() == cfg.n_users
            && self.g_eve.len() == cfg.n_eves;
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid(
                "channel dimensions do not match the scenario".into(),
            ))
        }
    }
}
