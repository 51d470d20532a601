//! Closed-form SINR evaluators and a symbol-level Monte-Carlo estimator.

use crate::linalg::{cholesky_psd, CMat, CVec, Hermitian, C64};
use crate::scenario::{cn01, linear_to_db, ChannelSet, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} index {index} out of range ({len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("radar receive filter is zero")]
    ZeroFilter,
    #[error("artificial-noise covariance is not PSD: {0}")]
    NotPsd(String),
    #[error("Monte-Carlo estimate needs at least 1000 samples, got {0}")]
    TooFewSamples(usize),
}

/// Transmit design plus the radar receive filter.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    /// N x K, column k carries user k.
    pub w: CMat,
    /// M x M radar precoder.
    pub f: CMat,
    /// BS artificial-noise covariance (N x N).
    pub r_z: Hermitian,
    /// Radar artificial-noise covariance (M x M).
    pub r_v: Hermitian,
    pub u: CVec,
}

impl BeamformingSolution {
    pub fn without_an(w: CMat, f: CMat, u: CVec) -> Self {
        let n = w.nrows();
        let m = f.nrows();
        Self {
            w,
            f,
            r_z: Hermitian::zeros(n),
            r_v: Hermitian::zeros(m),
            u,
        }
    }

    pub fn comm_power(&self) -> f64 {
        self.w.norm_squared()
    }

    pub fn radar_power(&self) -> f64 {
        self.f.norm_squared()
    }

    pub fn bs_an_power(&self) -> f64 {
        self.r_z.trace()
    }

    pub fn radar_an_power(&self) -> f64 {
        self.r_v.trace()
    }

    pub fn column(&self, k: usize) -> CVec {
        self.w.column(k).into_owned()
    }

    /// `Σ_k w_k w_k^H`.
    pub fn comm_covariance(&self) -> CMat {
        &self.w * self.w.adjoint()
    }

    pub fn check_dims(&self, ch: &ChannelSet) -> Result<(), MetricsError> {
        let dims = [
            ("beamformer rows", ch.n_bs(), self.w.nrows()),
            ("beamformer columns", ch.n_users(), self.w.ncols()),
            ("precoder rows", ch.n_radar(), self.f.nrows()),
            ("precoder columns", ch.n_radar(), self.f.ncols()),
            ("BS noise covariance", ch.n_bs(), self.r_z.dim()),
            ("radar noise covariance", ch.n_radar(), self.r_v.dim()),
            ("receive filter", ch.n_radar(), self.u.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(MetricsError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

fn check_noise(cfg: &ScenarioConfig, ch: &ChannelSet) -> Result<(), MetricsError> {
    if cfg.bob_noise.len() != ch.n_users() {
        return Err(MetricsError::Dimension {
            what: "user noise powers",
            expected: ch.n_users(),
            got: cfg.bob_noise.len(),
        });
    }
    if cfg.eve_noise.len() != ch.n_eves() {
        return Err(MetricsError::Dimension {
            what: "eavesdropper noise powers",
            expected: ch.n_eves(),
            got: cfg.eve_noise.len(),
        });
    }
    Ok(())
}

/// Desired and interference-plus-noise power of stream `k` at a receiver with
/// BS link `h` and radar link `g`.
fn link_powers(sol: &BeamformingSolution, k: usize, h: &CVec, g: &CVec, noise: f64) -> (f64, f64) {
    let hw = h.adjoint() * &sol.w;
    let desired = hw[(0, k)].norm_sqr();
    let multiuser: f64 = (0..sol.w.ncols())
        .filter(|&j| j != k)
        .map(|j| hw[(0, j)].norm_sqr())
        .sum();
    let radar = (g.adjoint() * &sol.f).norm_squared();
    let an = sol.r_z.quad(h) + sol.r_v.quad(g);
    (desired, multiuser + radar + an + noise)
}

pub fn bob_sinr(
    k: usize,
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<f64, MetricsError> {
    sol.check_dims(ch)?;
    check_noise(cfg, ch)?;
    if k >= ch.n_users() {
        return Err(MetricsError::Index {
            what: "user",
            index: k,
            len: ch.n_users(),
        });
    }
    let (d, i) = link_powers(sol, k, &ch.h[k], &ch.g[k], cfg.bob_noise[k]);
    Ok(d / i)
}

pub fn eve_sinr(
    i: usize,
    k: usize,
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<f64, MetricsError> {
    sol.check_dims(ch)?;
    check_noise(cfg, ch)?;
    if i >= ch.n_eves() {
        return Err(MetricsError::Index {
            what: "eavesdropper",
            index: i,
            len: ch.n_eves(),
        });
    }
    if k >= ch.n_users() {
        return Err(MetricsError::Index {
            what: "user",
            index: k,
            len: ch.n_users(),
        });
    }
    let (d, n) = link_powers(sol, k, &ch.h_eve[i], &ch.g_eve[i], cfg.eve_noise[i]);
    Ok(d / n)
}

/// `σ0² A F F^H A^H`.
pub fn radar_signal_matrix(f: &CMat, ch: &ChannelSet, cfg: &ScenarioConfig) -> CMat {
    let af = &ch.a * f;
    (&af * af.adjoint()).scale(cfg.target_rcs)
}

/// `σ0² A R_v A^H + Q^H (Σ w w^H + R_z) Q + σ_r² I`.
pub fn radar_interference_matrix(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> CMat {
    let m = ch.n_radar();
    let comm = sol.comm_covariance() + sol.r_z.matrix();
    let mut out = ch.q.adjoint() * comm * &ch.q;
    out += (&ch.a * sol.r_v.matrix() * ch.a.adjoint()).scale(cfg.target_rcs);
    out += CMat::identity(m, m).scale(cfg.radar_noise);
    (&out + out.adjoint()).scale(0.5)
}

pub fn radar_sinr(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<f64, MetricsError> {
    sol.check_dims(ch)?;
    if sol.u.norm_squared() == 0.0 {
        return Err(MetricsError::ZeroFilter);
    }
    let au = ch.a.adjoint() * &sol.u;
    let num = cfg.target_rcs * (au.adjoint() * &sol.f).norm_squared();
    let den = crate::linalg::quad_form(&radar_interference_matrix(sol, ch, cfg), &sol.u);
    Ok(num / den)
}

/// Which (eavesdropper, user) pair attains the largest eavesdropping SINR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvePair {
    pub eve: usize,
    pub user: usize,
}

/// Every SINR of one design, linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SinrReportJson", try_from = "SinrReportJson")]
pub struct SinrReport {
    pub bob_sinr: Vec<f64>,
    /// Indexed `[eve][user]`.
    pub eve_sinr: Vec<Vec<f64>>,
    pub radar_sinr: f64,
    pub max_eve_sinr: f64,
    /// Ties go to the lexicographically smallest pair.
    pub max_eve_pair: EvePair,
    pub min_bob_sinr: f64,
}

impl SinrReport {
    pub fn from_parts(bob_sinr: Vec<f64>, eve_sinr: Vec<Vec<f64>>, radar_sinr: f64) -> Self {
        let mut max_eve_sinr = f64::NEG_INFINITY;
        let mut max_eve_pair = EvePair { eve: 0, user: 0 };
        for (i, row) in eve_sinr.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if v > max_eve_sinr {
                    max_eve_sinr = v;
                    max_eve_pair = EvePair { eve: i, user: k };
                }
            }
        }
        if max_eve_sinr == f64::NEG_INFINITY {
            max_eve_sinr = 0.0;
        }
        let min_bob_sinr = bob_sinr.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            bob_sinr,
            eve_sinr,
            radar_sinr,
            max_eve_sinr,
            max_eve_pair,
            min_bob_sinr,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SinrReportJson {
    bob_sinr: Vec<f64>,
    bob_sinr_db: Vec<f64>,
    eve_sinr: Vec<Vec<f64>>,
    eve_sinr_db: Vec<Vec<f64>>,
    radar_sinr: f64,
    radar_sinr_db: f64,
    max_eve_sinr: f64,
    max_eve_sinr_db: f64,
    max_eve_pair: EvePair,
    min_bob_sinr: f64,
    min_bob_sinr_db: f64,
}

impl From<SinrReport> for SinrReportJson {
    fn from(r: SinrReport) -> Self {
        Self {
            bob_sinr_db: r.bob_sinr.iter().map(|&x| linear_to_db(x)).collect(),
            eve_sinr_db: r
                .eve_sinr
                .iter()
                .map(|row| row.iter().map(|&x| linear_to_db(x)).collect())
                .collect(),
            radar_sinr_db: linear_to_db(r.radar_sinr),
            max_eve_sinr_db: linear_to_db(r.max_eve_sinr),
            min_bob_sinr_db: linear_to_db(r.min_bob_sinr),
            bob_sinr: r.bob_sinr,
            eve_sinr: r.eve_sinr,
            radar_sinr: r.radar_sinr,
            max_eve_sinr: r.max_eve_sinr,
            max_eve_pair: r.max_eve_pair,
            min_bob_sinr: r.min_bob_sinr,
        }
    }
}

impl TryFrom<SinrReportJson> for SinrReport {
    type Error = String;

    fn try_from(j: SinrReportJson) -> Result<Self, Self::Error> {
        let r = SinrReport::from_parts(j.bob_sinr, j.eve_sinr, j.radar_sinr);
        if r.max_eve_pair != j.max_eve_pair {
            return Err("max_eve_pair inconsistent with eve_sinr".into());
        }
        Ok(r)
    }
}

pub fn sinr_report(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<SinrReport, MetricsError> {
    let bob = (0..ch.n_users())
        .map(|k| bob_sinr(k, sol, ch, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let eve = (0..ch.n_eves())
        .map(|i| {
            (0..ch.n_users())
                .map(|k| eve_sinr(i, k, sol, ch, cfg))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let radar = radar_sinr(sol, ch, cfg)?;
    Ok(SinrReport::from_parts(bob, eve, radar))
}

/// Ratio-of-means estimate with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    d: f64,
    i: f64,
    dd: f64,
    ii: f64,
    di: f64,
}

impl Moments {
    fn push(&mut self, d: f64, i: f64) {
        self.n += 1.0;
        self.d += d;
        self.i += i;
        self.dd += d * d;
        self.ii += i * i;
        self.di += d * i;
    }

    fn merge(mut self, o: &Moments) -> Self {
        self.n += o.n;
        self.d += o.d;
        self.i += o.i;
        self.dd += o.dd;
        self.ii += o.ii;
        self.di += o.di;
        self
    }

    fn estimate(&self) -> RatioEstimate {
        let n = self.n;
        let (md, mi) = (self.d / n, self.i / n);
        let vd = (self.dd / n - md * md).max(0.0);
        let vi = (self.ii / n - mi * mi).max(0.0);
        let c = self.di / n - md * mi;
        let r = md / mi;
        let var = (vd - 2.0 * r * c + r * r * vi) / (mi * mi * n);
        RatioEstimate {
            value: r,
            std_err: var.max(0.0).sqrt(),
        }
    }
}

/// Empirical SINRs from simulated received samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n_samples: usize,
    pub bob: Vec<RatioEstimate>,
    /// Indexed `[eve][user]`.
    pub eve: Vec<Vec<RatioEstimate>>,
    pub radar: RatioEstimate,
    /// Mean received BS artificial-noise power at each user.
    pub bob_an_power: Vec<RatioEstimate>,
    pub report: SinrReport,
}

/// Received sample at one antenna-combined output, written as linear
/// functionals of the unit-variance random sources.
struct Probe {
    /// Coefficient on each data symbol.
    s: Vec<C64>,
    /// Coefficients on the radar waveform, BS noise and radar noise sources.
    c: CVec,
    z: CVec,
    v: CVec,
    noise_std: f64,
}

impl Probe {
    fn new(h: &CVec, g: &CVec, sol: &BeamformingSolution, lz: &CMat, lv: &CMat, noise: f64) -> Self {
        let hw = h.adjoint() * &sol.w;
        Self {
            s: hw.iter().copied().collect(),
            c: (g.adjoint() * &sol.f).transpose(),
            z: (h.adjoint() * lz).transpose(),
            v: (g.adjoint() * lv).transpose(),
            noise_std: noise.sqrt(),
        }
    }
}

struct Sources {
    s: CVec,
    c: CVec,
    z: CVec,
    v: CVec,
}

fn dot(coef: &CVec, x: &CVec) -> C64 {
    coef.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

const BLOCK: usize = 4096;

/// Estimates every SINR by simulating `n_samples` received symbols.
///
/// Symbols `s`, `c` and the AN sources are unit-variance circular Gaussian,
/// the target return is `α ~ CN(0, σ0²)`. Each SINR is the mean desired power
/// divided by the mean interference-plus-noise power. Sample blocks run in
/// parallel on independent streams of a generator seeded with `seed`.
pub fn monte_carlo_sinr(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport, MetricsError> {
    if n_samples < 1000 {
        return Err(MetricsError::TooFewSamples(n_samples));
    }
    sol.check_dims(ch)?;
    check_noise(cfg, ch)?;
    if sol.u.norm_squared() == 0.0 {
        return Err(MetricsError::ZeroFilter);
    }
    let lz = cholesky_psd(&sol.r_z).map_err(|e| MetricsError::NotPsd(e.to_string()))?;
    let lv = cholesky_psd(&sol.r_v).map_err(|e| MetricsError::NotPsd(e.to_string()))?;
    let (n_users, n_eves) = (ch.n_users(), ch.n_eves());
    let bobs: Vec<Probe> = (0..n_users)
        .map(|k| Probe::new(&ch.h[k], &ch.g[k], sol, &lz, &lv, cfg.bob_noise[k]))
        .collect();
    let eves: Vec<Probe> = (0..n_eves)
        .map(|i| Probe::new(&ch.h_eve[i], &ch.g_eve[i], sol, &lz, &lv, cfg.eve_noise[i]))
        .collect();
    // Radar output u^H y_r with y_r = α A (F c + L_v v) + Q^H (W s + L_z z) + n_r.
    let uh_a = sol.u.adjoint() * &ch.a;
    let radar_target_c = (&uh_a * &sol.f).transpose();
    let radar_target_v = (&uh_a * &lv).transpose();
    let uh_qh = sol.u.adjoint() * ch.q.adjoint();
    let radar_s = (&uh_qh * &sol.w).transpose();
    let radar_z = (&uh_qh * &lz).transpose();
    let radar_noise_std = (cfg.radar_noise * sol.u.norm_squared()).sqrt();
    let alpha_std = cfg.target_rcs.sqrt();

    let n_quant = n_users + n_eves * n_users + 1 + n_users;
    let n_blocks = n_samples.div_ceil(BLOCK);
    let totals = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(n_samples - b * BLOCK);
            let mut acc = vec![Moments::default(); n_quant];
            for _ in 0..count {
                let src = Sources {
                    s: CVec::from_fn(n_users, |_, _| cn01(&mut rng)),
                    c: CVec::from_fn(ch.n_radar(), |_, _| cn01(&mut rng)),
                    z: CVec::from_fn(ch.n_bs(), |_, _| cn01(&mut rng)),
                    v: CVec::from_fn(ch.n_radar(), |_, _| cn01(&mut rng)),
                };
                let alpha = cn01(&mut rng) * alpha_std;
                let mut slot = 0;
                for p in bobs.iter().chain(eves.iter()) {
                    let symbols: Vec<C64> = p.s.iter().zip(src.s.iter()).map(|(a, b)| a * b).collect();
                    let an = dot(&p.z, &src.z) + dot(&p.v, &src.v);
                    let common = dot(&p.c, &src.c) + an + cn01(&mut rng) * p.noise_std;
                    let total: C64 = symbols.iter().sum::<C64>() + common;
                    if slot < n_users {
                        let k = slot;
                        acc[n_users + n_eves * n_users + 1 + k].push(an.norm_sqr(), 1.0);
                        let rest = total - symbols[k];
                        acc[slot].push(symbols[k].norm_sqr(), rest.norm_sqr());
                        slot += 1;
                    } else {
                        for (k, sym) in symbols.iter().enumerate() {
                            let rest = total - sym;
                            acc[slot + k].push(sym.norm_sqr(), rest.norm_sqr());
                        }
                        slot += n_users;
                    }
                }
                let target = alpha * dot(&radar_target_c, &src.c);
                let clutter = alpha * dot(&radar_target_v, &src.v)
                    + dot(&radar_s, &src.s)
                    + dot(&radar_z, &src.z)
                    + cn01(&mut rng) * radar_noise_std;
                acc[slot].push(target.norm_sqr(), clutter.norm_sqr());
            }
            acc
        })
        .reduce(
            || vec![Moments::default(); n_quant],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.merge(y)).collect(),
        );

    let bob: Vec<RatioEstimate> = totals[..n_users].iter().map(Moments::estimate).collect();
    let eve: Vec<Vec<RatioEstimate>> = (0..n_eves)
        .map(|i| {
            let base = n_users + i * n_users;
            totals[base..base + n_users].iter().map(Moments::estimate).collect()
        })
        .collect();
    let radar = totals[n_users + n_eves * n_users].estimate();
    let bob_an_power = totals[n_users + n_eves * n_users + 1..]
        .iter()
        .map(Moments::estimate)
        .collect();
    let report = SinrReport::from_parts(
        bob.iter().map(|e| e.value).collect(),
        eve.iter()
            .map(|row| row.iter().map(|e| e.value).collect())
            .collect(),
        radar.value,
    );
    Ok(MonteCarloReport {
        n_samples,
        bob,
        eve,
        radar,
        bob_an_power,
        report,
    })
}
