//! Comparison schemes.

use crate::alg_an::{beam_power, init_state_nsp, null_space_noise};
use crate::alg_known::{run_fractional, solve_lifted, update_receive_filter, BeamformerGoal};
use crate::design::{
    check_constraints, recover_rank_one, relative_change, stack_columns, AlgorithmSettings,
    ConstraintSet, DesignError, PowerRule,
};
use crate::linalg::{cholesky_psd, CMat, Hermitian, LinalgError, MatrixData};
use crate::metrics::BeamformingSolution;
use crate::scenario::{ChannelSet, ScenarioConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Secrecy design of the BS alone, no radar in the band.
    NoRadar,
    /// Same BS design with a full-power radar beam that ignores it.
    Separate,
    /// Minimum-power design plus noise in the users' null space.
    NullSpaceAn,
    /// Minimum-power design, no noise.
    NoPls,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::NoRadar,
        BaselineKind::Separate,
        BaselineKind::NullSpaceAn,
        BaselineKind::NoPls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::NoRadar => "no_radar",
            BaselineKind::Separate => "separate",
            BaselineKind::NullSpaceAn => "null_space_an",
            BaselineKind::NoPls => "no_pls",
        }
    }

    /// Constraints the scheme promises to meet.
    pub fn constraint_set(self) -> ConstraintSet {
        match self {
            BaselineKind::NoRadar => ConstraintSet {
                bob_qos: true,
                radar_qos: false,
                power: PowerRule::AtMost,
            },
            BaselineKind::Separate => ConstraintSet {
                bob_qos: false,
                radar_qos: false,
                power: PowerRule::AtMost,
            },
            BaselineKind::NullSpaceAn | BaselineKind::NoPls => ConstraintSet {
                bob_qos: true,
                radar_qos: true,
                power: PowerRule::AtMost,
            },
        }
    }

    pub fn run(
        self,
        ch: &ChannelSet,
        cfg: &ScenarioConfig,
        settings: &AlgorithmSettings,
    ) -> Result<BeamformingSolution, DesignError> {
        match self {
            BaselineKind::NoRadar => no_radar(ch, cfg, settings),
            BaselineKind::Separate => separate_design(ch, cfg, settings),
            BaselineKind::NullSpaceAn => null_space_an(ch, cfg, settings),
            BaselineKind::NoPls => no_pls(ch, cfg, settings),
        }
    }
}

/// Known-CSI secrecy design with the radar switched off (`F = 0`).
pub fn no_radar(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<BeamformingSolution, DesignError> {
    let (mut sol, _) = run_fractional(ch, cfg, settings, false)?;
    let m = ch.n_radar();
    sol.f = CMat::zeros(m, m);
    sol.r_v = Hermitian::zeros(m);
    sol.u = ch.steering.clone();
    Ok(sol)
}

/// The no-radar beamformers next to a full-power radar beam on the target,
/// `F = sqrt(P_r) a a^H / ‖a‖²`, filtered by `u = a`.
pub fn separate_design(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<BeamformingSolution, DesignError> {
    let mut sol = no_radar(ch, cfg, settings)?;
    let a = &ch.steering;
    sol.f = (a * a.adjoint()).scale(cfg.radar_power.sqrt() / a.norm_squared());
    sol.u = a.clone();
    Ok(sol)
}

/// The null-space initialization of the AN-aided design, unrefined, with
/// the spare radar power spread over the directions that neither the users
/// nor the target return can see.
pub fn null_space_an(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<BeamformingSolution, DesignError> {
    let mut sol = init_state_nsp(ch, cfg, settings)?.solution;
    let mut radar_span = ch.g.clone();
    radar_span.push(ch.steering.clone());
    let spare = (cfg.radar_power - sol.radar_power()).max(0.0);
    sol.r_v = null_space_noise(ch.n_radar(), &radar_span, spare);
    Ok(sol)
}

/// Minimum total power without noise: the joint lifted problem for a fixed
/// filter, alternated with the filter update until the power settles.
pub fn no_pls(
    ch: &ChannelSet,
    cfg: &ScenarioConfig,
    settings: &AlgorithmSettings,
) -> Result<BeamformingSolution, DesignError> {
    let set = BaselineKind::NoPls.constraint_set();
    let ratios = DMatrix::zeros(ch.n_eves(), ch.n_users());
    let mut u = ch.steering.clone();
    let mut current: Option<BeamformingSolution> = None;
    for _ in 0..settings.max_outer {
        let sdp = solve_lifted(ch, cfg, &ratios, &u, true, BeamformerGoal::Feasibility, settings)?;
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
        let mut trial = BeamformingSolution::without_an(stack_columns(&cols, ch.n_bs()), f, u.clone());
        trial.u = update_receive_filter(&trial, ch, cfg)?;
        let ok = check_constraints(&trial, ch, cfg, set)?.feasible();
        let before = current.as_ref().map(beam_power);
        if !ok || before.is_some_and(|b| beam_power(&trial) > b) {
            break;
        }
        u = trial.u.clone();
        let after = beam_power(&trial);
        current = Some(trial);
        if before.is_some_and(|b| relative_change(b, after) < settings.convergence_tol) {
            break;
        }
    }
    current.ok_or_else(|| DesignError::Solver {
        stage: "minimum-power design",
        message: "recovered design misses the constraints".into(),
    })
}

/// Serialized design with the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub scheme: String,
    pub w: MatrixData,
    pub f: MatrixData,
    pub r_z: MatrixData,
    pub r_v: MatrixData,
    /// Receive filter as an M x 1 matrix.
    pub u: MatrixData,
}

impl SolutionRecord {
    pub fn new(scheme: &str, sol: &BeamformingSolution) -> Self {
        Self {
            scheme: scheme.to_string(),
            w: MatrixData::from(&sol.w),
            f: MatrixData::from(&sol.f),
            r_z: MatrixData::from(sol.r_z.matrix()),
            r_v: MatrixData::from(sol.r_v.matrix()),
            u: MatrixData::from(&CMat::from_column_slice(sol.u.len(), 1, sol.u.as_slice())),
        }
    }

    pub fn to_solution(&self) -> Result<BeamformingSolution, LinalgError> {
        let u = self.u.to_matrix()?;
        Ok(BeamformingSolution {
            w: self.w.to_matrix()?,
            f: self.f.to_matrix()?,
            r_z: Hermitian::with_tol(self.r_z.to_matrix()?, 1e-9)?,
            r_v: Hermitian::with_tol(self.r_v.to_matrix()?, 1e-9)?,
            u: u.column(0).into_owned(),
        })
    }
}
