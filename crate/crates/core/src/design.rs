//! Pieces shared by both joint designs and the baselines: settings, errors,
//! iteration traces, rank-one recovery, the receive-filter step and the
//! constraint checker.

use crate::linalg::{generalized_max_eigvec, CMat, CVec, Hermitian, LinalgError};
use crate::metrics::{
    radar_interference_matrix, radar_signal_matrix, sinr_report, BeamformingSolution,
    MetricsError, SinrReport,
};
use crate::scenario::{linear_to_db, ChannelSet, ScenarioConfig};
use crate::sdp::{solve, SdpError, SdpProblem, SdpSettings, SdpSolution, SolveStatus};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSettings {
    /// Relative objective change that ends an inner or outer loop.
    pub convergence_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub sdp: SdpSettings,
    /// Draws tried when the rank-one construction breaks a constraint.
    pub randomization_samples: usize,
    pub seed: u64,
    /// Failed subproblems are dumped here as JSON when set.
    pub dump_dir: Option<PathBuf>,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        Self {
            convergence_tol: 1e-6,
            max_inner: 50,
            max_outer: 30,
            sdp: SdpSettings::default(),
            randomization_samples: 50,
            seed: 0,
            dump_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("{stage}: infeasible (binding: {})", blocking.join(", "))]
    Infeasible {
        stage: &'static str,
        blocking: Vec<String>,
    },
    #[error("{stage}: solver failed: {message}")]
    Solver { stage: &'static str, message: String },
    #[error("beamformer direction is degenerate (h^H W h = {0:.3e})")]
    DegenerateDirection(f64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

fn dump(dir: &Path, stage: &str, p: &SdpProblem, s: &SdpSolution) {
    if std::fs::create_dir_all(dir).is_err() {
        return;
    }
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let path = dir.join(format!("{stage}-{stamp}.json"));
    if let Ok(mut f) = std::fs::File::create(&path) {
        let _ = write!(
            f,
            "{{\"problem\": {}, \"solution\": {}}}",
            p.to_json(),
            s.to_json()
        );
        log::warn!("dumped failed {stage} subproblem to {}", path.display());
    }
}

/// Solves `p`, dumping it when the solve does not end optimal.
pub(crate) fn solve_logged(
    p: &SdpProblem,
    settings: &AlgorithmSettings,
    stage: &'static str,
) -> SdpSolution {
    let s = solve(p, &settings.sdp);
    if s.status != SolveStatus::Optimal {
        if let Some(dir) = &settings.dump_dir {
            dump(dir, stage, p, &s);
        }
    }
    s
}

pub(crate) fn status_error(p: &SdpProblem, s: &SdpSolution, stage: &'static str) -> DesignError {
    match s.status {
        SolveStatus::Infeasible(_) => DesignError::Infeasible {
            stage,
            blocking: s.blocking_constraints(p).iter().map(|n| n.to_string()).collect(),
        },
        _ => DesignError::Solver {
            stage,
            message: s.message.clone(),
        },
    }
}

/// Solves `p`, turning infeasibility and solver failure into errors.
pub(crate) fn solve_checked(
    p: &SdpProblem,
    settings: &AlgorithmSettings,
    stage: &'static str,
) -> Result<SdpSolution, DesignError> {
    let s = solve_logged(p, settings, stage);
    if s.status == SolveStatus::Optimal {
        Ok(s)
    } else {
        Err(status_error(p, &s, stage))
    }
}

/// `ŵ = W h / sqrt(h^H W h)`.
///
/// Keeps `|h^H ŵ|² = h^H W h` and `ŵ ŵ^H ⪯ W`; `h^H ŵ` comes out real and
/// positive. For `W = v v^H` this is `v` up to a unit phase.
pub fn recover_rank_one(w: &Hermitian, h: &CVec) -> Result<CVec, DesignError> {
    if h.len() != w.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: w.dim(),
            got: h.len(),
        }
        .into());
    }
    let wh = w.matrix() * h;
    let gain = h.dotc(&wh).re;
    let scale = w.trace().max(f64::MIN_POSITIVE) * h.norm_squared();
    if !(gain > 1e-14 * scale) {
        return Err(DesignError::DegenerateDirection(gain));
    }
    Ok(wh.unscale(gain.sqrt()))
}

/// Maximizer of the radar output SINR for the transmit side of `sol`.
pub fn optimal_receive_filter(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<CVec, DesignError> {
    let num = Hermitian::symmetrized(radar_signal_matrix(&sol.f, ch, cfg));
    let den = Hermitian::symmetrized(radar_interference_matrix(sol, ch, cfg));
    let (u, _) = generalized_max_eigvec(&num, &den)?;
    Ok(u)
}

/// Stacks beamformer columns into an N x K matrix.
pub(crate) fn stack_columns(cols: &[CVec], n: usize) -> CMat {
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Lifted beamformer SDP with fixed auxiliary ratios.
    Beamformer,
    ReceiveFilter,
    RadarSdp,
    CommSdp,
    Init,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Beamformer => "beamformer",
            Step::ReceiveFilter => "receive_filter",
            Step::RadarSdp => "radar_sdp",
            Step::CommSdp => "comm_sdp",
            Step::Init => "init",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub outer: usize,
    pub inner: usize,
    pub step: Step,
    /// Value of the design objective after this step (linear).
    pub objective: f64,
    pub min_bob_sinr: f64,
    pub max_eve_sinr: f64,
    pub radar_sinr: f64,
    /// Largest numeric rank among the lifted beamformers returned by the SDP.
    pub max_rank: usize,
    pub solver_iters: usize,
    pub solver_status: String,
    pub accepted: bool,
    pub an_power_bs: f64,
    pub an_power_radar: f64,
    pub wall_ms: f64,
}

/// Chronological record of one algorithm run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Objective at the end of each outer iteration.
    pub outer_objective: Vec<f64>,
    pub converged: bool,
}

#[allow(clippy::too_many_arguments)]
impl IterationTrace {
    pub(crate) fn push(
        &mut self,
        outer: usize,
        inner: usize,
        step: Step,
        objective: f64,
        report: &SinrReport,
        sol: &BeamformingSolution,
        max_rank: usize,
        solver: Option<&SdpSolution>,
        accepted: bool,
        started: std::time::Instant,
    ) {
        self.records.push(IterationRecord {
            iteration: self.records.len(),
            outer,
            inner,
            step,
            objective,
            min_bob_sinr: report.min_bob_sinr,
            max_eve_sinr: report.max_eve_sinr,
            radar_sinr: report.radar_sinr,
            max_rank,
            solver_iters: solver.map_or(0, |s| s.iterations),
            solver_status: solver.map_or("none".into(), |s| format!("{:?}", s.status).to_lowercase()),
            accepted,
            an_power_bs: sol.bs_an_power(),
            an_power_radar: sol.radar_an_power(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    /// CSV with a stable column order; `with_an` appends the AN power columns.
    pub fn write_csv<W: Write>(&self, out: W, with_an: bool) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "iteration",
            "outer",
            "inner",
            "step",
            "objective",
            "objective_dB",
            "min_bob_dB",
            "max_eve_dB",
            "radar_dB",
            "solver_iters",
            "solver_status",
            "max_rank",
            "accepted",
            "wall_ms",
        ];
        if with_an {
            header.extend(["an_power_bs", "an_power_radar"]);
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                r.outer.to_string(),
                r.inner.to_string(),
                r.step.name().to_string(),
                format!("{:e}", r.objective),
                format!("{}", linear_to_db(r.objective)),
                format!("{}", linear_to_db(r.min_bob_sinr)),
                format!("{}", linear_to_db(r.max_eve_sinr)),
                format!("{}", linear_to_db(r.radar_sinr)),
                r.solver_iters.to_string(),
                r.solver_status.clone(),
                r.max_rank.to_string(),
                r.accepted.to_string(),
                format!("{:.3}", r.wall_ms),
            ];
            if with_an {
                row.push(format!("{:e}", r.an_power_bs));
                row.push(format!("{:e}", r.an_power_radar));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How the power budgets must be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRule {
    AtMost,
    /// Beamforming plus AN power equals each budget.
    Exactly,
}

/// Which constraints a scheme promises to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub bob_qos: bool,
    pub radar_qos: bool,
    pub power: PowerRule,
}

/// Relative slack on SINR thresholds and on power budgets.
pub const SINR_REL_TOL: f64 = 1e-4;
pub const POWER_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub report: SinrReport,
    /// `min_k SINR_k / Γ_k`.
    pub bob_margin: f64,
    /// `SINR_r / Γ_r`.
    pub radar_margin: f64,
    pub bs_power: f64,
    pub radar_power: f64,
    pub violations: Vec<String>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_constraints(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    set: ConstraintSet,
) -> Result<FeasibilityReport, DesignError> {
    let report = sinr_report(sol, ch, cfg)?;
    let mut violations = Vec::new();
    let bob_margin = report
        .bob_sinr
        .iter()
        .zip(&cfg.comm_qos)
        .map(|(s, g)| s / g)
        .fold(f64::INFINITY, f64::min);
    if set.bob_qos && !(bob_margin >= 1.0 - SINR_REL_TOL) {
        violations.push(format!("user QoS margin {bob_margin:.6}"));
    }
    let radar_margin = report.radar_sinr / cfg.radar_qos;
    if set.radar_qos && !(radar_margin >= 1.0 - SINR_REL_TOL) {
        violations.push(format!("radar QoS margin {radar_margin:.6}"));
    }
    let bs_power = sol.comm_power() + sol.bs_an_power();
    let radar_power = sol.radar_power() + sol.radar_an_power();
    for (what, used, budget) in [
        ("BS", bs_power, cfg.bs_power),
        ("radar", radar_power, cfg.radar_power),
    ] {
        let ok = match set.power {
            PowerRule::AtMost => used <= budget * (1.0 + POWER_REL_TOL),
            PowerRule::Exactly => (used - budget).abs() <= budget * POWER_REL_TOL,
        };
        if !ok {
            violations.push(format!("{what} power {used:.9} vs budget {budget}"));
        }
    }
    for (what, m) in [("BS AN", &sol.r_z), ("radar AN", &sol.r_v)] {
        let lo = m.min_eigenvalue();
        if lo < -1e-9 * m.trace().abs().max(1.0) {
            violations.push(format!("{what} covariance has eigenvalue {lo:.3e}"));
        }
    }
    Ok(FeasibilityReport {
        report,
        bob_margin,
        radar_margin,
        bs_power,
        radar_power,
        violations,
    })
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / old.abs().max(f64::MIN_POSITIVE)
}
