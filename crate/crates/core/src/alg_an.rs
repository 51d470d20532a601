//! Joint design without eavesdropper channels: minimum beamforming power,
//! with every leftover watt spent on artificial noise.

use crate::alg_known::{solve_lifted, BeamformerGoal};
use crate::design::{
    check_constraints, optimal_receive_filter, recover_rank_one, relative_change, solve_logged,
    stack_columns, status_error, AlgorithmSettings, ConstraintSet, DesignError, IterationTrace,
    PowerRule, Step,
};
use crate::linalg::{cholesky_psd, null_space_basis, numeric_rank, CMat, CVec, Hermitian};
use crate::metrics::{sinr_report, BeamformingSolution};
use crate::scenario::{ChannelSet, ScenarioConfig};
use crate::sdp::{
    build_problem, LinearFunctional, ProblemSpec, Relation, SdpProblem, SdpSolution, SolveStatus,
    VarId,
};
use nalgebra::DMatrix;
use std::time::Instant;

/// Iterate of the AN-aided design. Beamformers are kept as columns; the
/// lifted matrices after recovery are their outer products.
#[derive(Debug, Clone)]
pub struct AnState {
    pub solution: BeamformingSolution,
    pub trace: IterationTrace,
}

impl AnState {
    /// `Σ‖w_k‖² + ‖F‖²`, the quantity the design minimizes.
    pub fn objective(&self) -> f64 {
        beam_power(&self.solution)
    }
}

pub fn beam_power(sol: &BeamformingSolution) -> f64 {
    sol.comm_power() + sol.radar_power()
}

/// Relative rise tolerated when a step reproduces the current objective.
const GUARD_SLACK: f64 = 1e-9;

/// Constraints every accepted AN-aided design meets.
pub const AN_SET: ConstraintSet = ConstraintSet {
    bob_qos: true,
    radar_qos: true,
    power: PowerRule::Exactly,
};

/// `power / d · P` with `P` the projector onto the complement of `span`.
/// Returns zero when the complement is empty.
pub fn null_space_noise(dim: usize, span: &[CVec], power: f64) -> Hermitian {
    let basis = null_space_basis(dim, span);
    if basis.ncols() == 0 || power <= 0.0 {
        return Hermitian::zeros(dim);
    }
    let proj = &basis * basis.adjoint();
    Hermitian::symmetrized(proj.scale(power / basis.ncols() as f64))
}

/// Minimum-power design without AN: one lifted SDP over `W_k` and `R_F`
/// with the filter fixed at the target steering vector.
pub fn min_power_design(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<(BeamformingSolution, SdpSolution), DesignError> {
    let ratios = DMatrix::zeros(ch.n_eves(), ch.n_users());
    let sdp = solve_lifted(ch, cfg, &ratios, &ch.steering, true, BeamformerGoal::Feasibility, settings)?;
    let cols = sdp
        .w
        .iter()
        .zip(&ch.h)
        .map(|(w, h)| recover_rank_one(w, h))
        .collect::<Result<Vec<_>, _>>()?;
    let f = radar_precoder(&sdp.r_f)?;
    let sol = BeamformingSolution::without_an(stack_columns(&cols, ch.n_bs()), f, ch.steering.clone());
    Ok((sol, sdp.solver))
}

fn radar_precoder(r_f: &Hermitian) -> Result<CMat, DesignError> {
    let m = r_f.dim();
    if r_f.trace() > 0.0 {
        Ok(cholesky_psd(r_f)?)
    } else {
        Ok(CMat::zeros(m, m))
    }
}

/// Null-space initialization.
///
/// Starts from the minimum-power design and spends the leftover BS budget on
/// noise orthogonal to the user channels and to the filtered radar return
/// `Q u`, so no legitimate receiver sees it. The radar transmits no noise
/// yet; the first radar subproblem assigns its leftover budget.
pub fn init_state_nsp(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<AnState, DesignError> {
    let started = Instant::now();
    let (mut solution, solver) = min_power_design(ch, cfg, settings)?;
    let qu = &ch.q * &solution.u;
    let mut bs_span = ch.h.clone();
    bs_span.push(qu);
    let spare_bs = (cfg.bs_power - solution.comm_power()).max(0.0);
    solution.r_z = null_space_noise(ch.n_bs(), &bs_span, spare_bs);
    if solution.r_z.trace() == 0.0 && spare_bs > 0.0 {
        log::warn!(
            "no null space for BS artificial noise ({} users, {} antennas)",
            ch.n_users(),
            ch.n_bs()
        );
    }

    let mut trace = IterationTrace::default();
    let report = sinr_report(&solution, ch, cfg)?;
    trace.push(
        0,
        0,
        Step::Init,
        beam_power(&solution),
        &report,
        &solution,
        0,
        Some(&solver),
        true,
        started,
    );
    Ok(AnState { solution, trace })
}

fn constant_bob_terms(sol: &BeamformingSolution, ch: &ChannelSet, k: usize) -> (f64, f64) {
    let hw = ch.h[k].adjoint() * &sol.w;
    let signal = hw[(0, k)].norm_sqr();
    let leak: f64 = (0..ch.n_users()).filter(|&j| j != k).map(|j| hw[(0, j)].norm_sqr()).sum();
    (signal, leak + sol.r_z.quad(&ch.h[k]))
}

struct RadarVars {
    r_f: VarId,
    r_v: VarId,
}

/// Radar subproblem for fixed beamformers, BS noise and filter.
fn radar_problem(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<(SdpProblem, RadarVars), DesignError> {
    let m = ch.n_radar();
    let mut spec = ProblemSpec::new();
    let r_f = spec.psd("R_F", m);
    let r_v = spec.psd("R_v", m);
    spec.minimize(LinearFunctional::new().trace(r_f, m, 1.0));
    for k in 0..ch.n_users() {
        let (signal, interference) = constant_bob_terms(sol, ch, k);
        let lhs = LinearFunctional::new()
            .quad(r_f, &ch.g[k], -1.0)
            .quad(r_v, &ch.g[k], -1.0);
        let rhs = cfg.bob_noise[k] + interference - signal / cfg.comm_qos[k];
        spec.constrain(format!("bob_qos[{k}]"), lhs, Relation::Ge, rhs);
    }
    let u = &sol.u;
    let au = ch.a.adjoint() * u;
    let qu = &ch.q * u;
    let comm = sol.comm_covariance() + sol.r_z.matrix();
    let comm_leak = crate::linalg::quad_form(&comm, &qu);
    let lhs = LinearFunctional::new()
        .quad(r_f, &au, cfg.target_rcs)
        .quad(r_v, &au, -cfg.radar_qos * cfg.target_rcs);
    spec.constrain(
        "radar_sinr",
        lhs,
        Relation::Ge,
        cfg.radar_qos * (comm_leak + cfg.radar_noise * u.norm_squared()),
    );
    spec.constrain(
        "radar_power",
        LinearFunctional::new().trace(r_f, m, 1.0).trace(r_v, m, 1.0),
        Relation::Eq,
        cfg.radar_power,
    );
    Ok((build_problem(spec)?, RadarVars { r_f, r_v }))
}

/// Radar covariances from the radar subproblem.
#[derive(Debug, Clone)]
pub struct RadarStep {
    pub r_f: Hermitian,
    pub r_v: Hermitian,
    pub solver: SdpSolution,
}

/// Scales `noise` so that `used + Tr(noise)` equals `budget`.
fn fill_budget(noise: &Hermitian, used: f64, budget: f64) -> Hermitian {
    let t = noise.trace();
    if t > 0.0 {
        noise.scale(((budget - used) / t).max(0.0))
    } else {
        noise.clone()
    }
}

/// Keeps a stalled solve's best iterate when it is finite; the caller
/// screens it against the exact constraints.
fn usable(p: &SdpProblem, s: SdpSolution, stage: &'static str) -> Result<SdpSolution, DesignError> {
    let finite = s
        .values
        .iter()
        .all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    match s.status {
        SolveStatus::Optimal => Ok(s),
        SolveStatus::NumericalFailure if finite => Ok(s),
        _ => Err(status_error(p, &s, stage)),
    }
}

pub fn solve_radar_sdp(
    state: &AnState,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<RadarStep, DesignError> {
    let stage = "radar SDP";
    let (p, vars) = radar_problem(&state.solution, ch, cfg)?;
    let s = usable(&p, solve_logged(&p, settings, stage), stage)?;
    let r_f = Hermitian::symmetrized(s.value(vars.r_f).clone());
    let r_v = Hermitian::symmetrized(s.value(vars.r_v).clone());
    let r_v = fill_budget(&r_v, r_f.trace(), cfg.radar_power);
    Ok(RadarStep { r_f, r_v, solver: s })
}

/// Radar SINR maximizer with both noise covariances in the interference,
/// scaled to `‖u‖² = M`.
pub fn update_receive_filter_an(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<CVec, DesignError> {
    let u = optimal_receive_filter(sol, ch, cfg)?;
    Ok(u.scale((ch.n_radar() as f64).sqrt() / u.norm()))
}

struct CommVars {
    w: Vec<VarId>,
    r_z: VarId,
}

/// Communication subproblem for fixed radar precoder, radar noise and filter.
fn comm_problem(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<(SdpProblem, CommVars), DesignError> {
    let n = ch.n_bs();
    let mut spec = ProblemSpec::new();
    let w: Vec<VarId> = (0..ch.n_users()).map(|k| spec.psd(format!("W[{k}]"), n)).collect();
    let r_z = spec.psd("R_z", n);
    let mut obj = LinearFunctional::new();
    for &wk in &w {
        obj = obj.trace(wk, n, 1.0);
    }
    spec.minimize(obj);

    let radar_cov = &sol.f * sol.f.adjoint() + sol.r_v.matrix();
    for k in 0..ch.n_users() {
        let h = &ch.h[k];
        let mut lhs = LinearFunctional::new().quad(r_z, h, -1.0);
        for (j, &wj) in w.iter().enumerate() {
            let coef = if j == k { 1.0 / cfg.comm_qos[k] } else { -1.0 };
            lhs = lhs.quad(wj, h, coef);
        }
        let jam = crate::linalg::quad_form(&radar_cov, &ch.g[k]);
        spec.constrain(format!("bob_qos[{k}]"), lhs, Relation::Ge, cfg.bob_noise[k] + jam);
    }

    let u = &sol.u;
    let au = ch.a.adjoint() * u;
    let qu = &ch.q * u;
    let echo = cfg.target_rcs * (au.adjoint() * &sol.f).norm_squared();
    let an_echo = cfg.target_rcs * sol.r_v.quad(&au);
    let mut lhs = LinearFunctional::new().quad(r_z, &qu, -cfg.radar_qos);
    for &wk in &w {
        lhs = lhs.quad(wk, &qu, -cfg.radar_qos);
    }
    spec.constrain(
        "radar_sinr",
        lhs,
        Relation::Ge,
        cfg.radar_qos * (an_echo + cfg.radar_noise * u.norm_squared()) - echo,
    );

    let mut power = LinearFunctional::new().trace(r_z, n, 1.0);
    for &wk in &w {
        power = power.trace(wk, n, 1.0);
    }
    spec.constrain("bs_power", power, Relation::Eq, cfg.bs_power);
    Ok((build_problem(spec)?, CommVars { w, r_z }))
}

/// Lifted beamformers and BS noise from the communication subproblem.
#[derive(Debug, Clone)]
pub struct CommStep {
    pub w: Vec<Hermitian>,
    pub r_z: Hermitian,
    pub solver: SdpSolution,
}

pub fn solve_comm_sdp(
    state: &AnState,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<CommStep, DesignError> {
    let stage = "communication SDP";
    let (p, vars) = comm_problem(&state.solution, ch, cfg)?;
    let s = usable(&p, solve_logged(&p, settings, stage), stage)?;
    let w: Vec<Hermitian> = vars
        .w
        .iter()
        .map(|&v| Hermitian::symmetrized(s.value(v).clone()))
        .collect();
    let r_z = Hermitian::symmetrized(s.value(vars.r_z).clone());
    let used: f64 = w.iter().map(Hermitian::trace).sum();
    let r_z = fill_budget(&r_z, used, cfg.bs_power);
    Ok(CommStep { w, r_z, solver: s })
}

/// Rank-one beamformers from lifted ones, with the discarded part of each
/// `W_k` moved into the BS noise.
///
/// `W_k - ŵ_k ŵ_k^H` is PSD and invisible to user k, so every user SINR, the
/// radar interference and the BS power are unchanged.
pub fn recover_with_noise(
    w: &[Hermitian],
    r_z: &Hermitian,
    ch: &ChannelSet,
) -> Result<(CMat, Hermitian), DesignError> {
    let cols = w
        .iter()
        .zip(&ch.h)
        .map(|(wk, h)| recover_rank_one(wk, h))
        .collect::<Result<Vec<_>, _>>()?;
    let mut noise = r_z.matrix().clone();
    for (wk, c) in w.iter().zip(&cols) {
        noise += wk.matrix() - c * c.adjoint();
    }
    Ok((stack_columns(&cols, ch.n_bs()), Hermitian::symmetrized(noise)))
}

fn feasible(sol: &BeamformingSolution, ch: &ChannelSet, cfg: &ScenarioConfig) -> Result<bool, DesignError> {
    Ok(check_constraints(sol, ch, cfg, AN_SET)?.feasible())
}

fn max_rank(w: &[Hermitian]) -> usize {
    w.iter()
        .filter_map(|m| numeric_rank(m, 1e-6).ok())
        .max()
        .unwrap_or(0)
}

/// AN-aided joint design from the null-space initialization.
pub fn run_algorithm2(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<(BeamformingSolution, IterationTrace), DesignError> {
    cfg.validate().map_err(|e| DesignError::Infeasible {
        stage: "configuration",
        blocking: vec![e.to_string()],
    })?;
    let started = Instant::now();
    let mut state = init_state_nsp(ch, cfg, settings)?;
    state.trace.outer_objective.push(state.objective());

    for outer in 0..settings.max_outer {
        let mut radar_moved = false;
        for inner in 0..settings.max_inner {
            let step = solve_radar_sdp(&state, ch, cfg, settings)?;
            let mut trial = state.solution.clone();
            trial.f = radar_precoder(&step.r_f)?;
            trial.r_v = step.r_v;
            let before = state.solution.radar_power();
            let check = check_constraints(&trial, ch, cfg, AN_SET)?;
            let accepted = check.feasible()
                && (!feasible(&state.solution, ch, cfg)?
                    || trial.radar_power() <= before + GUARD_SLACK * before.max(1.0));
            state.trace.push(
                outer,
                inner,
                Step::RadarSdp,
                beam_power(&trial),
                &check.report,
                &trial,
                0,
                Some(&step.solver),
                accepted,
                started,
            );
            if !accepted {
                break;
            }
            radar_moved = true;
            trial.u = update_receive_filter_an(&trial, ch, cfg)?;
            let report = sinr_report(&trial, ch, cfg)?;
            state.trace.push(
                outer,
                inner,
                Step::ReceiveFilter,
                beam_power(&trial),
                &report,
                &trial,
                0,
                None,
                true,
                started,
            );
            state.solution = trial;
            if relative_change(before, state.solution.radar_power()) < settings.convergence_tol {
                break;
            }
        }

        let step = solve_comm_sdp(&state, ch, cfg, settings)?;
        let (w, r_z) = recover_with_noise(&step.w, &step.r_z, ch)?;
        let mut trial = state.solution.clone();
        trial.w = w;
        trial.r_z = r_z;
        let before = state.objective();
        let check = check_constraints(&trial, ch, cfg, AN_SET)?;
        let accepted = check.feasible()
            && (!feasible(&state.solution, ch, cfg)?
                || beam_power(&trial) <= before + GUARD_SLACK * before.max(1.0));
        state.trace.push(
            outer,
            0,
            Step::CommSdp,
            beam_power(&trial),
            &check.report,
            &trial,
            max_rank(&step.w),
            Some(&step.solver),
            accepted,
            started,
        );
        if accepted {
            state.solution = trial;
        }
        let obj = state.objective();
        state.trace.outer_objective.push(obj);
        if !accepted && !radar_moved || relative_change(before, obj) < settings.convergence_tol {
            state.trace.converged = true;
            break;
        }
    }
    Ok((state.solution, state.trace))
}
