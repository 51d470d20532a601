//! Joint design with known eavesdropper channels: fractional programming over
//! lifted beamformers, alternated with the radar receive filter.

use crate::design::{
    check_constraints, optimal_receive_filter, recover_rank_one, relative_change, solve_checked,
    solve_logged, stack_columns, status_error, AlgorithmSettings, ConstraintSet, DesignError, IterationTrace, PowerRule, Step,
};
use crate::linalg::{cholesky_psd, numeric_rank, psd_sqrt, CMat, CVec, Hermitian};
use crate::metrics::{sinr_report, BeamformingSolution, SinrReport};
use crate::scenario::{cn_vector, ChannelSet, ScenarioConfig};
use crate::sdp::{
    build_problem, LinearFunctional, ProblemSpec, Relation, SdpProblem, SdpSolution, SolveStatus, VarId,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Iterate of the known-CSI design.
#[derive(Debug, Clone)]
pub struct KnownCsiState {
    pub solution: BeamformingSolution,
    /// Auxiliary ratios `c[(i, k)]`, one per eavesdropper and user.
    pub ratios: DMatrix<f64>,
    pub trace: IterationTrace,
}

/// `c_ik = Γ_k`, `u = a_r`, `F = sqrt(P_r / M) I`, no beamformers.
pub fn init_state(ch: &ChannelSet, cfg: &ScenarioConfig) -> KnownCsiState {
    let m = ch.n_radar();
    let f = CMat::identity(m, m).scale((cfg.radar_power / m as f64).sqrt());
    let solution =
        BeamformingSolution::without_an(CMat::zeros(ch.n_bs(), ch.n_users()), f, ch.steering.clone());
    let ratios = DMatrix::from_fn(ch.n_eves(), ch.n_users(), |_, k| cfg.comm_qos[k]);
    KnownCsiState {
        solution,
        ratios,
        trace: IterationTrace::default(),
    }
}

/// Variable handles of the lifted beamformer problem.
#[derive(Debug, Clone)]
pub struct BeamformerVars {
    pub w: Vec<VarId>,
    pub r_f: Option<VarId>,
    pub z: Option<VarId>,
}

/// What the lifted problem optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamformerGoal {
    /// `min z` over the eavesdropper ratio constraints.
    Secrecy,
    /// Minimum total power; only the QoS and budget constraints.
    Feasibility,
}

/// Builds the lifted problem for fixed ratios and receive filter.
///
/// Eavesdropper rows are divided by the eavesdropper noise so that `z` is in
/// SINR units. With `radar = false` the radar precoder and the radar QoS
/// constraint are left out.
pub fn beamformer_problem(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    ratios: &DMatrix<f64>,
    u: &CVec,
    radar: bool,
    goal: BeamformerGoal,
) -> Result<(SdpProblem, BeamformerVars), DesignError> {
    let (n, m, k_users) = (ch.n_bs(), ch.n_radar(), ch.n_users());
    let mut spec = ProblemSpec::new();
    let w: Vec<VarId> = (0..k_users).map(|k| spec.psd(format!("W[{k}]"), n)).collect();
    let r_f = radar.then(|| spec.psd("R_F", m));
    let secrecy = goal == BeamformerGoal::Secrecy && ch.n_eves() > 0;
    let z = secrecy.then(|| spec.free_scalar("z"));

    if let Some(z) = z {
        spec.minimize(LinearFunctional::new().scalar(z, 1.0));
        for i in 0..ch.n_eves() {
            let he = &ch.h_eve[i];
            let noise = cfg.eve_noise[i];
            for k in 0..k_users {
                let c = ratios[(i, k)];
                let mut lhs = LinearFunctional::new();
                for (j, &wj) in w.iter().enumerate() {
                    let coef = if j == k { 1.0 } else { -c };
                    lhs = lhs.quad(wj, he, coef / noise);
                }
                if let Some(r_f) = r_f {
                    lhs = lhs.quad(r_f, &ch.g_eve[i], -c / noise);
                }
                spec.constrain(format!("eve_fp[{i},{k}]"), lhs.scalar(z, -1.0), Relation::Le, c);
            }
        }
    } else {
        let mut obj = LinearFunctional::new();
        for &wk in &w {
            obj = obj.trace(wk, n, 1.0);
        }
        if let Some(r_f) = r_f {
            obj = obj.trace(r_f, m, 1.0);
        }
        spec.minimize(obj);
    }

    for k in 0..k_users {
        let h = &ch.h[k];
        let mut lhs = LinearFunctional::new();
        for (j, &wj) in w.iter().enumerate() {
            let coef = if j == k { 1.0 / cfg.comm_qos[k] } else { -1.0 };
            lhs = lhs.quad(wj, h, coef);
        }
        if let Some(r_f) = r_f {
            lhs = lhs.quad(r_f, &ch.g[k], -1.0);
        }
        spec.constrain(format!("bob_qos[{k}]"), lhs, Relation::Ge, cfg.bob_noise[k]);
    }

    if let Some(r_f) = r_f {
        let au = ch.a.adjoint() * u;
        let qu = &ch.q * u;
        let mut lhs = LinearFunctional::new().quad(r_f, &au, cfg.target_rcs);
        for &wk in &w {
            lhs = lhs.quad(wk, &qu, -cfg.radar_qos);
        }
        spec.constrain(
            "radar_sinr",
            lhs,
            Relation::Ge,
            cfg.radar_qos * cfg.radar_noise * u.norm_squared(),
        );
    }

    let mut bs = LinearFunctional::new();
    for &wk in &w {
        bs = bs.trace(wk, n, 1.0);
    }
    spec.constrain("bs_power", bs, Relation::Le, cfg.bs_power);
    if let Some(r_f) = r_f {
        spec.constrain(
            "radar_power",
            LinearFunctional::new().trace(r_f, m, 1.0),
            Relation::Le,
            cfg.radar_power,
        );
    }

    Ok((build_problem(spec)?, BeamformerVars { w, r_f, z }))
}

/// Lifted optimum for fixed ratios and filter.
#[derive(Debug, Clone)]
pub struct BeamformerSdp {
    pub w: Vec<Hermitian>,
    pub r_f: Hermitian,
    /// Optimal `z` in SINR units; 0 without eavesdroppers.
    pub z: f64,
    pub solver: SdpSolution,
}

pub fn solve_beamformer_sdp(
    state: &KnownCsiState,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<BeamformerSdp, DesignError> {
    solve_lifted(ch, cfg, &state.ratios, &state.solution.u, true, BeamformerGoal::Secrecy, settings)
}

pub(crate) fn solve_lifted(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    ratios: &DMatrix<f64>,
    u: &CVec,
    radar: bool,
    goal: BeamformerGoal,
    settings: &AlgorithmSettings,
) -> Result<BeamformerSdp, DesignError> {
    let (p, vars) = beamformer_problem(ch, cfg, ratios, u, radar, goal)?;
    let stage = match goal {
        BeamformerGoal::Secrecy => "beamformer SDP",
        BeamformerGoal::Feasibility => "QoS feasibility",
    };
    let s = solve_checked(&p, settings, stage)?;
    Ok(extract(s, &vars, ch.n_radar()))
}

fn extract(solver: SdpSolution, vars: &BeamformerVars, m: usize) -> BeamformerSdp {
    let s = &solver;
    let w = vars
        .w
        .iter()
        .map(|&v| Hermitian::symmetrized(s.value(v).clone()))
        .collect();
    let r_f = vars
        .r_f
        .map_or_else(|| Hermitian::zeros(m), |v| Hermitian::symmetrized(s.value(v).clone()));
    let z = vars.z.map_or(0.0, |v| s.scalar(v));
    BeamformerSdp { w, r_f, z, solver }
}

/// Secrecy step once a feasible design exists: a solve that stalls short of
/// full accuracy still hands back its best iterate, which the caller screens
/// against the exact constraints.
fn solve_secrecy_step(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    ratios: &DMatrix<f64>,
    u: &CVec,
    radar: bool,
    settings: &AlgorithmSettings,
) -> Result<BeamformerSdp, DesignError> {
    let stage = "beamformer SDP";
    let (p, vars) = beamformer_problem(ch, cfg, ratios, u, radar, BeamformerGoal::Secrecy)?;
    let s = solve_logged(&p, settings, stage);
    let finite = s
        .values
        .iter()
        .all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    match s.status {
        SolveStatus::Optimal => Ok(extract(s, &vars, ch.n_radar())),
        SolveStatus::NumericalFailure if finite => Ok(extract(s, &vars, ch.n_radar())),
        _ => Err(status_error(&p, &s, stage)),
    }
}

/// True eavesdropping SINRs of `sol`, indexed `[(i, k)]`.
pub fn update_c(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<DMatrix<f64>, DesignError> {
    let rep = sinr_report(sol, ch, cfg)?;
    Ok(DMatrix::from_fn(ch.n_eves(), ch.n_users(), |i, k| rep.eve_sinr[i][k]))
}

pub fn update_receive_filter(
    sol: &BeamformingSolution,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
) -> Result<CVec, DesignError> {
    let u = optimal_receive_filter(sol, ch, cfg)?;
    Ok(u.scale((ch.n_radar() as f64).sqrt() / u.norm()))
}

fn max_rank(w: &[Hermitian]) -> usize {
    w.iter()
        .filter_map(|m| numeric_rank(m, 1e-6).ok())
        .max()
        .unwrap_or(0)
}

/// A rank-one candidate and its true objective.
struct Candidate {
    solution: BeamformingSolution,
    report: SinrReport,
    randomized: bool,
}

fn objective(report: &SinrReport) -> f64 {
    if report.eve_sinr.is_empty() {
        0.0
    } else {
        report.max_eve_sinr
    }
}

/// Rank-one construction from the lifted optimum, with Gaussian
/// randomization when the construction breaks an eavesdropper constraint.
fn rank_one_candidate(
    sdp: &BeamformerSdp,
    ratios: &DMatrix<f64>,
    u: &CVec,
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    set: ConstraintSet,
    settings: &AlgorithmSettings,
    stream: u64,
) -> Result<Candidate, DesignError> {
    let n = ch.n_bs();
    let cols = sdp
        .w
        .iter()
        .zip(&ch.h)
        .map(|(w, h)| recover_rank_one(w, h))
        .collect::<Result<Vec<_>, _>>()?;
    let f = if sdp.r_f.trace() > 0.0 {
        cholesky_psd(&sdp.r_f)?
    } else {
        CMat::zeros(ch.n_radar(), ch.n_radar())
    };
    let solution = BeamformingSolution::without_an(stack_columns(&cols, n), f, u.clone());
    let report = sinr_report(&solution, ch, cfg)?;

    let broken = (0..ch.n_eves()).any(|i| {
        let he = ch.h_eve[i].adjoint() * &solution.w;
        let jam = (ch.g_eve[i].adjoint() * &solution.f).norm_squared();
        let noise = cfg.eve_noise[i];
        (0..ch.n_users()).any(|k| {
            let sig = he[(0, k)].norm_sqr();
            let leak: f64 = (0..ch.n_users()).filter(|&j| j != k).map(|j| he[(0, j)].norm_sqr()).sum();
            let c = ratios[(i, k)];
            let excess = (sig - c * (leak + jam + noise)) / noise - sdp.z;
            excess > 1e-6 * (1.0 + c + sdp.z.abs())
        })
    });
    let mut best = Candidate {
        solution,
        report,
        randomized: false,
    };
    if !broken || settings.randomization_samples == 0 {
        return Ok(best);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(stream);
    let roots: Vec<CMat> = sdp.w.iter().map(psd_sqrt).collect();
    for _ in 0..settings.randomization_samples {
        let cols: Vec<CVec> = roots
            .iter()
            .zip(&sdp.w)
            .zip(&ch.h)
            .map(|((root, w), h)| {
                let xi = root * cn_vector(&mut rng, n);
                let g = h.dotc(&xi);
                let target = w.quad(h).sqrt();
                if g.norm() > 0.0 {
                    (xi * (g.conj() / g.norm())).scale(target / g.norm())
                } else {
                    xi
                }
            })
            .collect();
        let trial = BeamformingSolution::without_an(
            stack_columns(&cols, n),
            best.solution.f.clone(),
            u.clone(),
        );
        let check = check_constraints(&trial, ch, cfg, set)?;
        if check.feasible() && objective(&check.report) < objective(&best.report) {
            best = Candidate {
                solution: trial,
                report: check.report,
                randomized: true,
            };
        }
    }
    Ok(best)
}

/// Every pair held to the current worst ratio. Per-pair levels let a nulled
/// pair pin the shared slack near zero, so the worst pair barely moves.
fn common_level(ratios: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_element(ratios.nrows(), ratios.ncols(), ratios.max())
}

/// Constraints every accepted known-CSI design meets.
pub const KNOWN_SET: ConstraintSet = ConstraintSet {
    bob_qos: true,
    radar_qos: true,
    power: PowerRule::AtMost,
};

/// Known-CSI joint design.
pub fn run_algorithm1(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<(BeamformingSolution, IterationTrace), DesignError> {
    run_fractional(ch, cfg, settings, true)
}

/// Shared driver; `radar = false` drops the radar precoder and QoS and skips
/// the filter updates.
///
/// A candidate is kept only if it meets every constraint and does not raise
/// the largest eavesdropping SINR; otherwise the inner loop stops at the
/// current design.
pub(crate) fn run_fractional(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
    radar: bool,
) -> Result<(BeamformingSolution, IterationTrace), DesignError> {
    let started = Instant::now();
    cfg.validate().map_err(|e| DesignError::Infeasible {
        stage: "configuration",
        blocking: vec![e.to_string()],
    })?;
    let set = ConstraintSet {
        radar_qos: radar,
        ..KNOWN_SET
    };
    let mut state = init_state(ch, cfg);
    if !radar {
        state.solution.f = CMat::zeros(ch.n_radar(), ch.n_radar());
    }

    let pre = solve_lifted(
        ch,
        cfg,
        &state.ratios,
        &state.solution.u,
        radar,
        BeamformerGoal::Feasibility,
        settings,
    )?;
    let fallback = rank_one_candidate(&pre, &state.ratios, &state.solution.u, ch, cfg, set, settings, 0)?;
    let mut current: Option<Candidate> = None;
    if ch.n_eves() == 0 {
        state.trace.push(
            0,
            0,
            Step::Beamformer,
            0.0,
            &fallback.report,
            &fallback.solution,
            max_rank(&pre.w),
            Some(&pre.solver),
            true,
            started,
        );
        current = Some(fallback);
        let cur = current.as_mut().expect("just set");
        if radar {
            cur.solution.u = update_receive_filter(&cur.solution, ch, cfg)?;
            cur.report = sinr_report(&cur.solution, ch, cfg)?;
        }
        state.trace.outer_objective.push(0.0);
        state.trace.converged = true;
        return Ok((cur.solution.clone(), state.trace));
    }

    let max_outer = if radar { settings.max_outer } else { 1 };
    let mut stream = 0u64;
    for outer in 0..max_outer {
        for inner in 0..settings.max_inner {
            let levels = common_level(&state.ratios);
            let sdp = solve_secrecy_step(ch, cfg, &levels, &state.solution.u, radar, settings)?;
            stream += 1;
            let cand = rank_one_candidate(
                &sdp,
                &levels,
                &state.solution.u,
                ch,
                cfg,
                set,
                settings,
                stream,
            )?;
            let new_obj = objective(&cand.report);
            let feasible = check_constraints(&cand.solution, ch, cfg, set)?.feasible();
            let prev_obj = current.as_ref().map(|c| objective(&c.report));
            let accepted = feasible && prev_obj.is_none_or(|p| new_obj <= p);
            state.trace.push(
                outer,
                inner,
                Step::Beamformer,
                new_obj,
                &cand.report,
                &cand.solution,
                max_rank(&sdp.w),
                Some(&sdp.solver),
                accepted,
                started,
            );
            if cand.randomized {
                if let Some(r) = state.trace.records.last_mut() {
                    r.solver_status.push_str("+randomized");
                }
            }
            if !accepted {
                if current.is_none() {
                    // First step unusable: restart from the minimum-power design.
                    if !check_constraints(&fallback.solution, ch, cfg, set)?.feasible() {
                        return Err(DesignError::Solver {
                            stage: "beamformer SDP",
                            message: "no candidate meets the constraints".into(),
                        });
                    }
                    state.ratios = update_c(&fallback.solution, ch, cfg)?;
                    state.solution = fallback.solution.clone();
                    current = Some(Candidate {
                        solution: fallback.solution.clone(),
                        report: fallback.report.clone(),
                        randomized: false,
                    });
                    continue;
                }
                break;
            }
            state.ratios = update_c(&cand.solution, ch, cfg)?;
            state.solution = cand.solution.clone();
            current = Some(cand);
            if prev_obj.is_some_and(|p| relative_change(p, new_obj) < settings.convergence_tol) {
                break;
            }
        }

        let cur = current.as_mut().ok_or_else(|| DesignError::Solver {
            stage: "beamformer SDP",
            message: "no feasible design after the first outer iteration".into(),
        })?;
        if radar {
            cur.solution.u = update_receive_filter(&cur.solution, ch, cfg)?;
            cur.report = sinr_report(&cur.solution, ch, cfg)?;
            state.solution.u = cur.solution.u.clone();
            state.trace.push(
                outer,
                0,
                Step::ReceiveFilter,
                objective(&cur.report),
                &cur.report,
                &cur.solution,
                0,
                None,
                true,
                started,
            );
        }
        let obj = objective(&cur.report);
        let prev = state.trace.outer_objective.last().copied();
        state.trace.outer_objective.push(obj);
        if prev.is_some_and(|p| relative_change(p, obj) < settings.convergence_tol) {
            state.trace.converged = true;
            break;
        }
    }
    if !radar {
        state.trace.converged = true;
    }
    let cur = current.expect("set before the first filter update");
    Ok((cur.solution, state.trace))
}
