//! Monte-Carlo trials, parameter sweeps and their CSV tables.

use crate::alg_an::{beam_power, run_algorithm2};
use crate::alg_known::run_algorithm1;
use crate::baselines::BaselineKind;
use crate::design::{AlgorithmSettings, DesignError, IterationTrace};
use crate::metrics::{sinr_report, BeamformingSolution};
use crate::scenario::{
    db_to_linear, linear_to_db, sample_channels, ChannelSet, ConfigError, Preset, ScenarioConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no result rows")]
    Empty,
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// A design scheme that can be run on one channel draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Known-CSI fractional design.
    Proposed,
    /// AN-aided design without eavesdropper channels.
    ProposedAn,
    NoRadar,
    Separate,
    NullSpaceAn,
    NoPls,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Proposed,
        Scheme::ProposedAn,
        Scheme::NoRadar,
        Scheme::Separate,
        Scheme::NullSpaceAn,
        Scheme::NoPls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::ProposedAn => "proposed_an",
            Scheme::NoRadar => BaselineKind::NoRadar.name(),
            Scheme::Separate => BaselineKind::Separate.name(),
            Scheme::NullSpaceAn => BaselineKind::NullSpaceAn.name(),
            Scheme::NoPls => BaselineKind::NoPls.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Schemes designed without eavesdropper channels are scored on a fresh
    /// eavesdropper draw.
    pub fn blind_to_eves(self) -> bool {
        matches!(self, Scheme::ProposedAn | Scheme::NullSpaceAn | Scheme::NoPls)
    }

    /// Runs the scheme, returning the design and its iteration count.
    pub fn run(
        self,
        ch: &ChannelSet,
        cfg: &ScenarioConfig,
        settings: &AlgorithmSettings,
    ) -> Result<(BeamformingSolution, usize), DesignError> {
        let baseline = |k: BaselineKind| k.run(ch, cfg, settings).map(|s| (s, 1));
        match self {
            Scheme::Proposed => run_algorithm1(ch, cfg, settings).map(|(s, t)| (s, t.records.len())),
            Scheme::ProposedAn => run_algorithm2(ch, cfg, settings).map(|(s, t)| (s, t.records.len())),
            Scheme::NoRadar => baseline(BaselineKind::NoRadar),
            Scheme::Separate => baseline(BaselineKind::Separate),
            Scheme::NullSpaceAn => baseline(BaselineKind::NullSpaceAn),
            Scheme::NoPls => baseline(BaselineKind::NoPls),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Common user QoS threshold, in dB.
    CommQosDb,
    /// Radar antenna count M.
    RadarAntennas,
    /// Radar power budget P_r, in watts.
    RadarPower,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::CommQosDb => "comm_qos_db",
            SweepParam::RadarAntennas => "radar_antennas",
            SweepParam::RadarPower => "radar_power",
        }
    }

    pub fn parse(s: &str) -> Option<SweepParam> {
        [SweepParam::CommQosDb, SweepParam::RadarAntennas, SweepParam::RadarPower]
            .into_iter()
            .find(|p| p.name() == s)
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) -> Result<(), HarnessError> {
        match self {
            SweepParam::CommQosDb => cfg.set_uniform_comm_qos(db_to_linear(value)),
            SweepParam::RadarAntennas => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(HarnessError::InvalidSpec(format!(
                        "antenna count {value} is not a positive integer"
                    )));
                }
                cfg.n_radar_antennas = value as usize;
            }
            SweepParam::RadarPower => cfg.radar_power = value,
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub config: ScenarioConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub schemes: Vec<Scheme>,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub settings: AlgorithmSettings,
}

impl SweepSpec {
    pub fn new(preset: Preset, param: SweepParam, values: Vec<f64>, schemes: Vec<Scheme>) -> Self {
        Self {
            config: preset.config(),
            param,
            values,
            n_trials: 50,
            base_seed: 0,
            schemes,
            workers: 0,
            settings: AlgorithmSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::InvalidSpec("empty value list".into()));
        }
        if self.n_trials == 0 {
            return Err(HarnessError::InvalidSpec("n_trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(HarnessError::InvalidSpec("no schemes".into()));
        }
        for &v in &self.values {
            self.param.apply(&mut self.config.clone(), v)?;
        }
        Ok(())
    }
}

/// One scheme on one channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    /// `-inf` for an exact zero, `NaN` on failed rows.
    pub min_bob_sinr_db: f64,
    pub max_eve_sinr_db: f64,
    pub radar_sinr_db: f64,
    pub beam_power_w: f64,
    pub an_power_w: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub status: String,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Channels for one trial and the independent eavesdropper draw used to
/// score schemes that never see eavesdropper channels.
pub fn trial_channels(cfg: &ScenarioConfig, seed: u64) -> (ChannelSet, ChannelSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = sample_channels(cfg, &mut rng);
    let mut fresh = ch.clone();
    fresh.resample_eves(cfg, &mut rng);
    (ch, fresh)
}

/// Runs `scheme` on one draw and scores it.
pub fn run_trial(
    scheme: Scheme,
    cfg: &ScenarioConfig,
    value: f64,
    trial: usize,
    seed: u64,
    settings: &AlgorithmSettings,
) -> ResultRow {
    let (ch, fresh) = trial_channels(cfg, seed);
    let started = Instant::now();
    let outcome = scheme.run(&ch, cfg, settings);
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut row = ResultRow {
        scheme: scheme.name().to_string(),
        value,
        trial,
        seed,
        min_bob_sinr_db: f64::NAN,
        max_eve_sinr_db: f64::NAN,
        radar_sinr_db: f64::NAN,
        beam_power_w: f64::NAN,
        an_power_w: f64::NAN,
        iterations: 0,
        wall_ms,
        status: "ok".into(),
    };
    let scored = outcome.and_then(|(sol, iterations)| {
        let eval = if scheme.blind_to_eves() { &fresh } else { &ch };
        let rep = sinr_report(&sol, eval, cfg)?;
        Ok((sol, iterations, rep))
    });
    match scored {
        Ok((sol, iterations, rep)) => {
            row.min_bob_sinr_db = linear_to_db(rep.min_bob_sinr);
            row.max_eve_sinr_db = linear_to_db(rep.max_eve_sinr);
            row.radar_sinr_db = linear_to_db(rep.radar_sinr);
            row.beam_power_w = beam_power(&sol);
            row.an_power_w = sol.bs_an_power() + sol.radar_an_power();
            row.iterations = iterations;
        }
        Err(e) => {
            log::warn!("{} trial {trial} at {value}: {e}", scheme.name());
            row.status = format!("failed: {e}");
        }
    }
    row
}

/// Every (value, trial, scheme) combination, ordered by value index, trial,
/// then scheme order in the spec.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        let mut cfg = spec.config.clone();
        spec.param.apply(&mut cfg, value)?;
        for trial in 0..spec.n_trials {
            for (si, &scheme) in spec.schemes.iter().enumerate() {
                jobs.push((vi, trial, si, scheme, cfg.clone(), value));
            }
        }
    }
    let run = || {
        jobs.par_iter()
            .map(|(vi, trial, si, scheme, cfg, value)| {
                let seed = spec.base_seed + *trial as u64;
                ((*vi, *trial, *si), run_trial(*scheme, cfg, *value, *trial, seed, &spec.settings))
            })
            .collect::<Vec<_>>()
    };
    let mut rows = if spec.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(run)
    };
    rows.sort_by_key(|(key, _)| *key);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Empty);
    }
    let file = std::fs::File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(rows, file).map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<ResultRow>, _>>().map_err(csv_err)
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    if lo == hi || a == b {
        a
    } else {
        a + (b - a) * (pos - lo as f64)
    }
}

/// Median with the lower and upper quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Spread {
        let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        Spread {
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        }
    }

    /// Zero when both quartiles sit at the same infinity.
    pub fn iqr(&self) -> f64 {
        if self.q3 == self.q1 {
            0.0
        } else {
            self.q3 - self.q1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub value: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub max_eve_sinr_db: Spread,
    pub min_bob_sinr_db: Spread,
    pub radar_sinr_db: Spread,
}

/// Per (scheme, value) statistics over successful rows, in first-seen order.
pub fn emit_summary(rows: &[ResultRow]) -> Result<Vec<SummaryRow>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, v)| *s == r.scheme && *v == r.value) {
            keys.push((r.scheme.clone(), r.value));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(scheme, value)| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| r.scheme == scheme && r.value == value).collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.ok()).collect();
            SummaryRow {
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
                max_eve_sinr_db: Spread::of(ok.iter().map(|r| r.max_eve_sinr_db)),
                min_bob_sinr_db: Spread::of(ok.iter().map(|r| r.min_bob_sinr_db)),
                radar_sinr_db: Spread::of(ok.iter().map(|r| r.radar_sinr_db)),
                scheme,
                value,
            }
        })
        .collect())
}

/// Flat CSV of a summary: medians and interquartile ranges in dB.
pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "value",
        "n_ok",
        "n_failed",
        "eve_median_db",
        "eve_iqr_db",
        "bob_median_db",
        "bob_iqr_db",
        "radar_median_db",
        "radar_iqr_db",
    ])?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.value.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            r.max_eve_sinr_db.median.to_string(),
            r.max_eve_sinr_db.iqr().to_string(),
            r.min_bob_sinr_db.median.to_string(),
            r.min_bob_sinr_db.iqr().to_string(),
            r.radar_sinr_db.median.to_string(),
            r.radar_sinr_db.iqr().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Which algorithm a convergence trace follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracedAlgorithm {
    KnownCsi,
    AnAided,
}

/// One run of `algorithm` on the draw for `seed`.
pub fn convergence_trace_run(
    cfg: &ScenarioConfig,
    algorithm: TracedAlgorithm,
    seed: u64,
    settings: &AlgorithmSettings,
) -> Result<IterationTrace, HarnessError> {
    cfg.validate()?;
    let (ch, _) = trial_channels(cfg, seed);
    let (_, trace) = match algorithm {
        TracedAlgorithm::KnownCsi => run_algorithm1(&ch, cfg, settings)?,
        TracedAlgorithm::AnAided => run_algorithm2(&ch, cfg, settings)?,
    };
    Ok(trace)
}
