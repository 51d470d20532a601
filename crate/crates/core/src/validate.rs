//! Invariant checks on random instances, shared by the CLI and the tests.

use crate::alg_an::{run_algorithm2, AN_SET};
use crate::alg_known::{run_algorithm1, solve_lifted, BeamformerGoal, KNOWN_SET};
use crate::design::{check_constraints, recover_rank_one, AlgorithmSettings, ConstraintSet, DesignError};
use crate::linalg::{CMat, Hermitian};
use crate::metrics::{monte_carlo_sinr, sinr_report, BeamformingSolution, RatioEstimate};
use crate::scenario::{cn01, cn_vector, sample_channels, ChannelSet, Preset, ScenarioConfig};
use crate::sdp::{random_feasible, solve, verify_with, SdpSettings};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Slack on a non-increasing objective sequence.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Relative gap allowed in `|h^H ŵ|² = h^H W h`.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, failures: Vec<String>, total: usize, summary: String) -> Self {
        let passed = failures.is_empty();
        let mut detail = format!("{}/{} ok; {}", total - failures.len(), total, summary);
        if let Some(first) = failures.first() {
            detail.push_str(&format!("; first failure: {first}"));
        }
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    /// Instances for the Monte-Carlo comparison.
    pub mc_instances: usize,
    pub mc_samples: usize,
    pub sdp_problems: usize,
    /// Channel draws per preset for the algorithm checks.
    pub algorithm_seeds: usize,
    pub base_seed: u64,
    pub settings: AlgorithmSettings,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            mc_instances: 20,
            mc_samples: 100_000,
            sdp_problems: 100,
            algorithm_seeds: 20,
            base_seed: 0,
            settings: AlgorithmSettings::default(),
        }
    }
}

fn mc_config() -> ScenarioConfig {
    let mut cfg = Preset::KnownCsi.config();
    cfg.n_bs_antennas = 3;
    cfg.n_radar_antennas = 4;
    cfg.n_users = 2;
    cfg.n_eves = 2;
    cfg.bob_noise = vec![0.05, 0.2];
    cfg.eve_noise = vec![0.1, 0.3];
    cfg.comm_qos = vec![3.0, 3.0];
    cfg
}

/// Arbitrary design with Gaussian entries; noise covariances when `with_an`.
pub fn random_design(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, with_an: bool) -> BeamformingSolution {
    let (n, m, k) = (cfg.n_bs_antennas, cfg.n_radar_antennas, cfg.n_users);
    let w = CMat::from_fn(n, k, |_, _| cn01(rng));
    let f = CMat::from_fn(m, m, |_, _| cn01(rng)).scale(0.3);
    let u = cn_vector(rng, m);
    let mut sol = BeamformingSolution::without_an(w, f, u);
    if with_an {
        let lz = CMat::from_fn(n, n, |_, _| cn01(rng)).scale(0.4);
        let lv = CMat::from_fn(m, m, |_, _| cn01(rng)).scale(0.2);
        sol.r_z = Hermitian::symmetrized(&lz * lz.adjoint());
        sol.r_v = Hermitian::symmetrized(&lv * lv.adjoint());
    }
    sol
}

/// Closed-form SINRs against simulated received symbols, 3 standard errors.
pub fn monte_carlo_agreement(opts: &ValidateOptions) -> CheckOutcome {
    let cfg = mc_config();
    let mut failures = Vec::new();
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for inst in 0..opts.mc_instances as u64 {
        let seed = opts.base_seed + inst;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channels(&cfg, &mut rng);
        let sol = random_design(&cfg, &mut rng, inst % 2 == 0);
        let outcome = sinr_report(&sol, &ch, &cfg).and_then(|exact| {
            monte_carlo_sinr(&sol, &ch, &cfg, opts.mc_samples, seed ^ 0x5eed).map(|mc| (exact, mc))
        });
        let (exact, mc) = match outcome {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("instance {seed}: {e}"));
                total += 1;
                continue;
            }
        };
        let mut pairs: Vec<(String, &RatioEstimate, f64)> = Vec::new();
        for k in 0..cfg.n_users {
            pairs.push((format!("bob {k}"), &mc.bob[k], exact.bob_sinr[k]));
            for i in 0..cfg.n_eves {
                pairs.push((format!("eve {i} on {k}"), &mc.eve[i][k], exact.eve_sinr[i][k]));
            }
        }
        pairs.push(("radar".into(), &mc.radar, exact.radar_sinr));
        for (what, est, truth) in pairs {
            total += 1;
            let z = (est.value - truth).abs() / est.std_err;
            worst = worst.max(z);
            if !(z <= 3.0) {
                failures.push(format!("instance {seed} {what}: {:.6} vs {truth:.6} ({z:.2} SE)", est.value));
            }
        }
    }
    CheckOutcome::new(
        "monte_carlo_sinr",
        failures,
        total,
        format!("{} samples, worst {worst:.2} SE", opts.mc_samples),
    )
}

/// Rank-one recovery on the lifted beamformers of the known-CSI preset.
pub fn recovery_identity(opts: &ValidateOptions) -> CheckOutcome {
    let cfg = Preset::KnownCsi.config();
    let mut failures = Vec::new();
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for s in 0..opts.algorithm_seeds as u64 {
        let seed = opts.base_seed + s;
        let ch = sample_channels(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let ratios = DMatrix::zeros(ch.n_eves(), ch.n_users());
        let lifted = solve_lifted(
            &ch,
            &cfg,
            &ratios,
            &ch.steering,
            true,
            BeamformerGoal::Feasibility,
            &opts.settings,
        );
        let lifted = match lifted {
            Ok(l) => l,
            Err(e) => {
                total += 1;
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for (k, (w, h)) in lifted.w.iter().zip(&ch.h).enumerate() {
            total += 1;
            match recover_rank_one(w, h) {
                Ok(wk) => {
                    let got = h.dotc(&wk).norm_sqr();
                    let want = w.quad(h);
                    let rel = (got - want).abs() / want;
                    worst = worst.max(rel);
                    if !(rel <= IDENTITY_TOL) {
                        failures.push(format!("seed {seed} user {k}: relative gap {rel:.3e}"));
                    }
                }
                Err(e) => failures.push(format!("seed {seed} user {k}: {e}")),
            }
        }
    }
    CheckOutcome::new("rank_one_identity", failures, total, format!("worst relative gap {worst:.3e}"))
}

/// Solves fuzzed feasible problems and verifies each certificate.
pub fn fuzzed_sdp(opts: &ValidateOptions) -> CheckOutcome {
    let settings = SdpSettings::default();
    let mut failures = Vec::new();
    for i in 0..opts.sdp_problems as u64 {
        let seed = opts.base_seed + i;
        let p = random_feasible(seed);
        let s = solve(&p, &settings);
        let report = verify_with(&p, &s, &settings);
        if !s.is_optimal() || !report.passed() {
            failures.push(format!("problem {seed}: {:?}, {report:?}", s.status));
        }
    }
    CheckOutcome::new("sdp_verify", failures, opts.sdp_problems, "fuzzed feasible problems".into())
}

type Runner = fn(&ChannelSet, &ScenarioConfig, &AlgorithmSettings) -> Result<
    (BeamformingSolution, crate::design::IterationTrace),
    DesignError,
>;

/// Monotone objective and feasibility of the final design over many draws.
pub fn algorithm_invariants(preset: Preset, opts: &ValidateOptions) -> Vec<CheckOutcome> {
    let (label, run, set): (&str, Runner, ConstraintSet) = match preset {
        Preset::KnownCsi => ("known_csi", run_algorithm1, KNOWN_SET),
        Preset::UnknownCsi => ("an_aided", run_algorithm2, AN_SET),
    };
    let cfg = preset.config();
    let mut mono = Vec::new();
    let mut feas = Vec::new();
    let mut worst_rise = f64::NEG_INFINITY;
    let n = opts.algorithm_seeds;
    for s in 0..n as u64 {
        let seed = opts.base_seed + s;
        let ch = sample_channels(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let (sol, trace) = match run(&ch, &cfg, &opts.settings) {
            Ok(r) => r,
            Err(e) => {
                mono.push(format!("seed {seed}: {e}"));
                feas.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let rise = trace
            .outer_objective
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        worst_rise = worst_rise.max(rise);
        if rise > MONOTONE_SLACK {
            mono.push(format!("seed {seed}: objective rose by {rise:.3e}"));
        }
        match check_constraints(&sol, &ch, &cfg, set) {
            Ok(r) if r.feasible() => {}
            Ok(r) => feas.push(format!("seed {seed}: {}", r.violations.join(", "))),
            Err(e) => feas.push(format!("seed {seed}: {e}")),
        }
    }
    vec![
        CheckOutcome::new(
            &format!("{label}_monotone"),
            mono,
            n,
            format!("largest rise {worst_rise:.3e}"),
        ),
        CheckOutcome::new(&format!("{label}_feasible"), feas, n, "final designs".into()),
    ]
}

/// Every check, in a fixed order.
pub fn run_all(opts: &ValidateOptions) -> Vec<CheckOutcome> {
    let mut out = vec![monte_carlo_agreement(opts), recovery_identity(opts), fuzzed_sdp(opts)];
    out.extend(algorithm_invariants(Preset::KnownCsi, opts));
    out.extend(algorithm_invariants(Preset::UnknownCsi, opts));
    out
}
