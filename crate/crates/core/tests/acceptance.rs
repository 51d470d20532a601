//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use isac_secure::alg_known::run_algorithm1;
use isac_secure::design::{AlgorithmSettings, POWER_REL_TOL, SINR_REL_TOL};
use isac_secure::harness::{quantile, run_sweep, ResultRow, Scheme, SweepParam, SweepSpec};
use isac_secure::metrics::sinr_report;
use isac_secure::scenario::{db_to_linear, linear_to_db, Preset};
use isac_secure::validate::{
    algorithm_invariants, fuzzed_sdp, monte_carlo_agreement, recovery_identity, CheckOutcome, ValidateOptions,
    MONOTONE_SLACK,
};
use std::time::{Duration, Instant};

const TRIALS: usize = 50;
const SEEDS_PER_PRESET: usize = 20;
const MONOTONE_BUDGET: Duration = Duration::from_secs(300);
const SECURITY_GAP_DB: f64 = 10.0;
const ANCHOR_DB: (f64, f64) = (-60.0, -30.0);
const PLATEAU_DB: f64 = 3.0;
const ORACLE_REL_TOL: f64 = 0.05;
const ORACLE_SEEDS: u64 = 10;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn from_checks(checks: &[CheckOutcome], extra: Option<(bool, String)>) -> Self {
        let mut passed = checks.iter().all(|c| c.passed);
        let mut parts: Vec<String> = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        if let Some((ok, text)) = extra {
            passed &= ok;
            parts.push(text);
        }
        Self::new(passed, parts.join(" | "))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Per-scheme medians of (max eve, min bob) in dB over the trials at `value`
/// where every scheme succeeded.
struct Paired {
    eve: Vec<f64>,
    bob: Vec<f64>,
    trials: usize,
    dropped: usize,
}

fn paired_medians(rows: &[ResultRow], schemes: &[Scheme], value: f64) -> Paired {
    let at: Vec<&ResultRow> = rows.iter().filter(|r| r.value == value).collect();
    let mut trials: Vec<usize> = at.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    let complete: Vec<usize> = trials
        .iter()
        .copied()
        .filter(|&t| {
            schemes
                .iter()
                .all(|s| at.iter().any(|r| r.trial == t && r.scheme == s.name() && r.ok()))
        })
        .collect();
    let column = |s: Scheme, pick: fn(&ResultRow) -> f64| {
        median(
            at.iter()
                .filter(|r| r.scheme == s.name() && complete.contains(&r.trial))
                .map(|r| pick(r))
                .collect(),
        )
    };
    Paired {
        eve: schemes.iter().map(|&s| column(s, |r| r.max_eve_sinr_db)).collect(),
        bob: schemes.iter().map(|&s| column(s, |r| r.min_bob_sinr_db)).collect(),
        trials: complete.len(),
        dropped: trials.len() - complete.len(),
    }
}

fn sweep(preset: Preset, param: SweepParam, values: Vec<f64>, schemes: Vec<Scheme>) -> Vec<ResultRow> {
    let mut spec = SweepSpec::new(preset, param, values, schemes);
    spec.n_trials = TRIALS;
    run_sweep(&spec).expect("sweep spec is valid")
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn median_curve(rows: &[ResultRow], scheme: Scheme, values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            median(
                rows.iter()
                    .filter(|r| r.scheme == scheme.name() && r.value == v && r.ok())
                    .map(|r| r.max_eve_sinr_db)
                    .collect(),
            )
        })
        .collect()
}

fn fmt_db(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn algorithm_opts() -> ValidateOptions {
    ValidateOptions {
        algorithm_seeds: SEEDS_PER_PRESET,
        ..ValidateOptions::default()
    }
}

/// Both algorithms on their presets, with the wall time of the whole run.
fn algorithm_checks() -> (Vec<CheckOutcome>, Duration) {
    let started = Instant::now();
    let opts = algorithm_opts();
    let checks = [Preset::KnownCsi, Preset::UnknownCsi]
        .into_iter()
        .flat_map(|p| algorithm_invariants(p, &opts))
        .collect();
    (checks, started.elapsed())
}

fn monotone_convergence(checks: &[CheckOutcome], elapsed: Duration) -> Verdict {
    let mono: Vec<CheckOutcome> = checks.iter().filter(|c| c.name.ends_with("_monotone")).cloned().collect();
    Verdict::from_checks(
        &mono,
        Some((
            elapsed < MONOTONE_BUDGET,
            format!("slack {MONOTONE_SLACK:e}, {:.1} s for both presets", elapsed.as_secs_f64()),
        )),
    )
}

fn constraint_feasibility(checks: &[CheckOutcome]) -> Verdict {
    let feas: Vec<CheckOutcome> = checks.iter().filter(|c| c.name.ends_with("_feasible")).cloned().collect();
    Verdict::from_checks(
        &feas,
        Some((true, format!("sinr tol {SINR_REL_TOL:e}, power tol {POWER_REL_TOL:e}"))),
    )
}

const KNOWN_SCHEMES: [Scheme; 3] = [Scheme::Proposed, Scheme::Separate, Scheme::NoRadar];

fn known_rows() -> (Vec<ResultRow>, f64) {
    let cfg = Preset::KnownCsi.config();
    let qos_db = linear_to_db(cfg.comm_qos[0]);
    let rows = sweep(Preset::KnownCsi, SweepParam::CommQosDb, vec![qos_db], KNOWN_SCHEMES.to_vec());
    (rows, qos_db)
}

fn security_gap(rows: &[ResultRow], qos_db: f64) -> Verdict {
    let p = paired_medians(rows, &[Scheme::Proposed], qos_db);
    let (eve, bob) = (p.eve[0], p.bob[0]);
    Verdict::new(
        eve <= bob - SECURITY_GAP_DB && p.dropped == 0,
        format!(
            "median eve {eve:.2} dB, median bob {bob:.2} dB, gap {:.2} dB over {} trials ({} failed)",
            bob - eve,
            p.trials,
            p.dropped
        ),
    )
}

fn known_ordering(rows: &[ResultRow], qos_db: f64) -> Verdict {
    let p = paired_medians(rows, &KNOWN_SCHEMES, qos_db);
    let floor_db = linear_to_db(db_to_linear(qos_db) * (1.0 - SINR_REL_TOL));
    let eve_order = p.eve[0] < p.eve[1] && p.eve[1] < p.eve[2];
    let bob_ok = p.bob[1] < qos_db && p.bob[0] >= floor_db;
    Verdict::new(
        eve_order && bob_ok && p.trials > 0,
        format!(
            "eve proposed/separate/no_radar {} dB, bob {} dB vs {qos_db:.2} dB, {} paired trials ({} dropped)",
            fmt_db(&p.eve),
            fmt_db(&p.bob),
            p.trials,
            p.dropped
        ),
    )
}

/// Radar budget for the unknown-CSI ordering check.
const AN_ORDERING_RADAR_POWER: f64 = 1000.0;

fn unknown_ordering() -> Verdict {
    let schemes = [Scheme::ProposedAn, Scheme::NullSpaceAn, Scheme::NoPls];
    let rows = sweep(
        Preset::UnknownCsi,
        SweepParam::RadarPower,
        vec![AN_ORDERING_RADAR_POWER],
        schemes.to_vec(),
    );
    let p = paired_medians(&rows, &schemes, AN_ORDERING_RADAR_POWER);
    Verdict::new(
        p.eve[0] < p.eve[1] && p.eve[1] < p.eve[2] && p.trials > 0,
        format!(
            "fresh-eve medians proposed_an/null_space_an/no_pls {} dB (gap {:.3} dB), {} paired trials ({} dropped)",
            fmt_db(&p.eve),
            p.eve[1] - p.eve[0],
            p.trials,
            p.dropped
        ),
    )
}

const ANTENNA_GRID: [f64; 5] = [8.0, 12.0, 16.0, 20.0, 24.0];
const RADAR_POWER_GRID: [f64; 5] = [100.0, 250.0, 500.0, 1000.0, 2000.0];

fn monotone_trends() -> Verdict {
    let known = sweep(
        Preset::KnownCsi,
        SweepParam::RadarAntennas,
        ANTENNA_GRID.to_vec(),
        vec![Scheme::Proposed],
    );
    let an = [Scheme::ProposedAn, Scheme::NullSpaceAn];
    let unknown = sweep(
        Preset::UnknownCsi,
        SweepParam::RadarPower,
        RADAR_POWER_GRID.to_vec(),
        an.to_vec(),
    );
    let mut passed = true;
    let mut parts = Vec::new();
    let curve = median_curve(&known, Scheme::Proposed, &ANTENNA_GRID);
    let rho = spearman(&ANTENNA_GRID, &curve);
    passed &= rho < 0.0;
    parts.push(format!("proposed vs M {} rho {rho:.2}", fmt_db(&curve)));
    for s in an {
        let curve = median_curve(&unknown, s, &RADAR_POWER_GRID);
        let rho = spearman(&RADAR_POWER_GRID, &curve);
        passed &= rho < 0.0;
        parts.push(format!("{} vs P_r {} rho {rho:.2}", s.name(), fmt_db(&curve)));
    }
    Verdict::new(passed, parts.join("; "))
}

fn plateau_anchor() -> Verdict {
    let grid = [16.0, 24.0];
    let rows = sweep(
        Preset::UnknownCsi,
        SweepParam::RadarAntennas,
        grid.to_vec(),
        vec![Scheme::ProposedAn],
    );
    let curve = median_curve(&rows, Scheme::ProposedAn, &grid);
    let in_band = (ANCHOR_DB.0..=ANCHOR_DB.1).contains(&curve[0]);
    let flat = (curve[0] - curve[1]).abs() < PLATEAU_DB;
    Verdict::new(
        in_band && flat,
        format!(
            "median eve at M=16 {:.2} dB, M=24 {:.2} dB, band [{}, {}] dB",
            curve[0], curve[1], ANCHOR_DB.0, ANCHOR_DB.1
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let settings = AlgorithmSettings::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..ORACLE_SEEDS {
        let (cfg, ch) = common::micro_instance(seed);
        let oracle = common::grid_oracle(&cfg, &ch);
        let got = run_algorithm1(&ch, &cfg, &settings)
            .map_err(|e| e.to_string())
            .and_then(|(sol, _)| sinr_report(&sol, &ch, &cfg).map_err(|e| e.to_string()));
        match got {
            Ok(rep) => {
                let rel = (rep.max_eve_sinr - oracle).abs() / oracle;
                worst = worst.max(rel);
                if !(rel <= ORACLE_REL_TOL) {
                    failures.push(format!("seed {seed}: {:.6e} vs oracle {oracle:.6e}", rep.max_eve_sinr));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let mut detail = format!(
        "{}/{ORACLE_SEEDS} within {ORACLE_REL_TOL}, worst relative gap {worst:.2e}",
        ORACLE_SEEDS as usize - failures.len()
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; {f}"));
    }
    Verdict::new(failures.is_empty(), detail)
}

fn numerical_validators() -> Verdict {
    let opts = ValidateOptions::default();
    Verdict::from_checks(
        &[monte_carlo_agreement(&opts), recovery_identity(&opts), fuzzed_sdp(&opts)],
        None,
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        println!(
            "criterion {n} {name}: {} ({})",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };
    let (checks, elapsed) = algorithm_checks();
    record(1, "monotone_convergence", monotone_convergence(&checks, elapsed));
    record(2, "constraint_feasibility", constraint_feasibility(&checks));
    let (rows, qos_db) = known_rows();
    record(3, "security_gap", security_gap(&rows, qos_db));
    record(4, "known_csi_ordering", known_ordering(&rows, qos_db));
    record(5, "unknown_csi_ordering", unknown_ordering());
    record(6, "monotone_trends", monotone_trends());
    record(7, "plateau_anchor", plateau_anchor());
    record(8, "oracle_equivalence", oracle_equivalence());
    record(9, "numerical_validators", numerical_validators());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
}
