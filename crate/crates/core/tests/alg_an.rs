use isac_secure::alg_an::{
    init_state_nsp, null_space_noise, recover_with_noise, run_algorithm2, solve_comm_sdp, solve_radar_sdp,
    update_receive_filter_an, AnState, AN_SET,
};
use isac_secure::baselines::{no_pls, BaselineKind};
use isac_secure::design::{check_constraints, AlgorithmSettings};
use isac_secure::linalg::{c64, CMat, CVec, Hermitian};
use isac_secure::metrics::{radar_sinr, sinr_report};
use isac_secure::scenario::{sample_channels, ChannelSet, Preset, ScenarioConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn draw(cfg: &ScenarioConfig, seed: u64) -> ChannelSet {
    sample_channels(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn single_user(n: usize, m: usize) -> ScenarioConfig {
    let mut cfg = Preset::UnknownCsi.config();
    cfg.n_bs_antennas = n;
    cfg.n_radar_antennas = m;
    cfg.n_users = 1;
    cfg.n_eves = 1;
    cfg.bob_noise.truncate(1);
    cfg.eve_noise.truncate(1);
    cfg.comm_qos.truncate(1);
    cfg
}

fn settings() -> AlgorithmSettings {
    AlgorithmSettings::default()
}

#[test]
fn null_space_noise_on_explicit_basis() {
    let h = CVec::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]);
    let r = null_space_noise(2, &[h], 4.0);
    let want = CMat::from_diagonal(&CVec::from_vec(vec![c64(0.0, 0.0), c64(4.0, 0.0)]));
    assert!((r.matrix() - want).norm() < 1e-12);
}

#[test]
fn init_places_noise_outside_user_and_radar_directions() {
    let cfg = single_user(3, 4);
    let mut ch = draw(&cfg, 0);
    ch.h[0] = CVec::from_vec(vec![c64(2.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
    // Q u ∝ e2 for u = a
    let e2 = CVec::from_vec(vec![c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]);
    ch.q = &e2 * ch.steering.adjoint();
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    let r = st.solution.r_z.matrix();
    let residual = cfg.bs_power - st.solution.comm_power();
    assert!(residual > 0.0);
    for (i, j) in [(0, 0), (1, 1), (0, 1), (0, 2), (1, 2)] {
        assert!(r[(i, j)].norm() < 1e-10, "entry ({i},{j}) = {}", r[(i, j)]);
    }
    assert!((r[(2, 2)].re - residual).abs() < 1e-9 * cfg.bs_power);
}

#[test]
fn init_keeps_noise_away_from_users_and_spends_bs_budget() {
    let cfg = Preset::UnknownCsi.config();
    for seed in 0..3 {
        let ch = draw(&cfg, seed);
        let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
        let sol = &st.solution;
        for h in &ch.h {
            assert!(sol.r_z.quad(h).abs() < 1e-10);
        }
        let qu = &ch.q * &sol.u;
        assert!(sol.r_z.quad(&qu).abs() < 1e-10);
        let used = sol.comm_power() + sol.bs_an_power();
        assert!((used - cfg.bs_power).abs() <= 1e-6 * cfg.bs_power);
        let check = check_constraints(sol, &ch, &cfg, BaselineKind::NullSpaceAn.constraint_set()).unwrap();
        assert!(check.feasible(), "{:?}", check.violations);
    }
}

#[test]
fn init_without_null_space_has_no_bs_noise() {
    let mut cfg = Preset::UnknownCsi.config();
    cfg.n_bs_antennas = 4;
    let ch = draw(&cfg, 4);
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    assert_eq!(st.solution.r_z.trace(), 0.0);
}

#[test]
fn subproblems_hold_the_power_equalities() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 5);
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    let radar = solve_radar_sdp(&st, &ch, &cfg, &settings()).unwrap();
    let total = radar.r_f.trace() + radar.r_v.trace();
    assert!((total - cfg.radar_power).abs() <= 1e-6 * cfg.radar_power);
    let comm = solve_comm_sdp(&st, &ch, &cfg, &settings()).unwrap();
    let total = comm.w.iter().map(Hermitian::trace).sum::<f64>() + comm.r_z.trace();
    assert!((total - cfg.bs_power).abs() <= 1e-6 * cfg.bs_power);
}

#[test]
fn vanishing_radar_requirement_leaves_radar_power_to_noise() {
    let mut cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 6);
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    cfg.radar_qos = 1e-9;
    let step = solve_radar_sdp(&st, &ch, &cfg, &settings()).unwrap();
    assert!(step.r_f.trace() < 1e-4, "Tr R_F = {}", step.r_f.trace());
    assert!(step.r_v.trace() > cfg.radar_power * (1.0 - 1e-6));
}

#[test]
fn vanishing_user_requirement_leaves_bs_power_to_noise() {
    let mut cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 7);
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    cfg.set_uniform_comm_qos(1e-9);
    let step = solve_comm_sdp(&st, &ch, &cfg, &settings()).unwrap();
    let beams: f64 = step.w.iter().map(Hermitian::trace).sum();
    assert!(beams < 1e-4, "sum Tr W = {beams}");
    assert!(step.r_z.trace() > cfg.bs_power * (1.0 - 1e-6));
}

/// With the user shielded from the radar and served with margin, the least
/// radar beam power is a beam on the target with all noise orthogonal to it:
/// `Tr R_F = Γ_r c / (σ0² |u^H a|² ‖a‖²)`, `c` the filtered BS leakage plus
/// receiver noise.
#[test]
fn radar_step_matches_closed_form_when_user_is_shielded() {
    let cfg = single_user(3, 2);
    for seed in 0..3 {
        let mut ch = draw(&cfg, 10 + seed);
        ch.g[0] = ch.g[0].scale(1e-4);
        let mut st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
        // the minimum-power beam meets the user target with no slack at all
        st.solution.w = st.solution.w.scale(2.0);
        let step = solve_radar_sdp(&st, &ch, &cfg, &settings()).unwrap();

        let sol = &st.solution;
        let (a, u) = (&ch.steering, &sol.u);
        let qu = &ch.q * u;
        let comm = sol.comm_covariance() + sol.r_z.matrix();
        let leak = qu.dotc(&(&comm * &qu)).re;
        let c = leak + cfg.radar_noise * u.norm_squared();
        let want = cfg.radar_qos * c / (cfg.target_rcs * a.dotc(u).norm_sqr() * a.norm_squared());
        let got = step.r_f.trace();
        assert!((got - want).abs() <= 0.02 * want, "seed {seed}: {got} vs {want}");

        // the user constraint was indeed slack
        let mut trial = sol.clone();
        trial.f = isac_secure::linalg::cholesky_psd(&step.r_f).unwrap();
        trial.r_v = step.r_v.clone();
        let bob = sinr_report(&trial, &ch, &cfg).unwrap().min_bob_sinr;
        assert!(bob > cfg.comm_qos[0] * 1.01);
    }
}

/// With a lax radar requirement a single user is served by its matched
/// filter at the least power meeting its SINR, and noise goes orthogonal to it.
#[test]
fn comm_step_matches_matched_filter_power() {
    let mut cfg = single_user(2, 2);
    cfg.radar_qos = 1e-3;
    for seed in 0..3 {
        let mut ch = draw(&cfg, 20 + seed);
        ch.g[0] = ch.g[0].scale(1e-3);
        let mut st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
        let a = &ch.steering;
        st.solution.f = (a * a.adjoint()).scale(cfg.radar_power.sqrt() / a.norm_squared());
        st.solution.r_v = Hermitian::zeros(2);
        let step = solve_comm_sdp(&st, &ch, &cfg, &settings()).unwrap();

        let g = &ch.g[0];
        let jam = (g.adjoint() * &st.solution.f).norm_squared();
        let want = cfg.comm_qos[0] * (jam + cfg.bob_noise[0]) / ch.h[0].norm_squared();
        let got = step.w[0].trace();
        assert!((got - want).abs() <= 0.02 * want, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn recovery_keeps_user_gains_and_power() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 8);
    let st = init_state_nsp(&ch, &cfg, &settings()).unwrap();
    let step = solve_comm_sdp(&st, &ch, &cfg, &settings()).unwrap();
    let (w, r_z) = recover_with_noise(&step.w, &step.r_z, &ch).unwrap();
    for (k, h) in ch.h.iter().enumerate() {
        let got = h.dotc(&w.column(k).into_owned()).norm_sqr();
        let want = step.w[k].quad(h);
        assert!((got - want).abs() <= 1e-10 * want);
    }
    let before = step.w.iter().map(Hermitian::trace).sum::<f64>() + step.r_z.trace();
    let after = w.norm_squared() + r_z.trace();
    assert!((before - after).abs() <= 1e-9 * before);
    assert!(r_z.min_eigenvalue() > -1e-9 * r_z.trace());
}

#[test]
fn filter_without_interference_points_at_target() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 9);
    let mut sol = init_state_nsp(&ch, &cfg, &settings()).unwrap().solution;
    sol.w = CMat::zeros(cfg.n_bs_antennas, cfg.n_users);
    sol.r_z = Hermitian::zeros(cfg.n_bs_antennas);
    sol.r_v = Hermitian::zeros(cfg.n_radar_antennas);
    sol.f = CMat::identity(cfg.n_radar_antennas, cfg.n_radar_antennas);
    let u = update_receive_filter_an(&sol, &ch, &cfg).unwrap();
    let a = &ch.steering;
    assert!((a.dotc(&u).norm() / (a.norm() * u.norm()) - 1.0).abs() < 1e-9);
}

#[test]
fn an_aided_runs_are_monotone_and_feasible() {
    let cfg = Preset::UnknownCsi.config();
    let s = settings();
    for seed in 0..4 {
        let ch = draw(&cfg, seed);
        let (sol, trace) = run_algorithm2(&ch, &cfg, &s).unwrap();
        for w in trace.outer_objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "seed {seed}: {:?}", trace.outer_objective);
        }
        assert!(trace.converged && trace.outer_objective.len() <= s.max_outer + 1);
        let check = check_constraints(&sol, &ch, &cfg, AN_SET).unwrap();
        assert!(check.feasible(), "seed {seed}: {:?}", check.violations);
        for r in trace.records.iter().filter(|r| r.step.name() == "receive_filter") {
            assert!(r.radar_sinr.is_finite());
        }
    }
}

/// Noise with the same beamformers can only add to every eavesdropper's
/// interference.
#[test]
fn artificial_noise_lowers_eavesdropper_sinr() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 11);
    let (sol, _) = run_algorithm2(&ch, &cfg, &settings()).unwrap();
    assert!(sol.bs_an_power() + sol.radar_an_power() > 0.0);
    let mut quiet = sol.clone();
    quiet.r_z = Hermitian::zeros(cfg.n_bs_antennas);
    quiet.r_v = Hermitian::zeros(cfg.n_radar_antennas);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut with_an, mut without) = (0.0, 0.0);
    for _ in 0..100 {
        let mut eves = ch.clone();
        eves.resample_eves(&cfg, &mut rng);
        with_an += sinr_report(&sol, &eves, &cfg).unwrap().max_eve_sinr;
        without += sinr_report(&quiet, &eves, &cfg).unwrap().max_eve_sinr;
    }
    assert!(with_an < without, "{with_an} vs {without}");
}

#[test]
fn an_design_beats_minimum_power_on_unseen_eavesdroppers() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 12);
    let (an, _) = run_algorithm2(&ch, &cfg, &settings()).unwrap();
    let plain = no_pls(&ch, &cfg, &settings()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        let mut eves = ch.clone();
        eves.resample_eves(&cfg, &mut rng);
        a.push(sinr_report(&an, &eves, &cfg).unwrap().max_eve_sinr);
        b.push(sinr_report(&plain, &eves, &cfg).unwrap().max_eve_sinr);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[49] + v[50])
    };
    assert!(median(&mut a) < median(&mut b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn filter_step_never_lowers_radar_sinr(seed in any::<u64>()) {
        let cfg = Preset::UnknownCsi.config();
        let ch = draw(&cfg, seed);
        let st: AnState = init_state_nsp(&ch, &cfg, &settings()).unwrap();
        let mut sol = st.solution;
        sol.r_v = Hermitian::identity(cfg.n_radar_antennas).scale(0.5);
        let before = radar_sinr(&sol, &ch, &cfg).unwrap();
        sol.u = update_receive_filter_an(&sol, &ch, &cfg).unwrap();
        let after = radar_sinr(&sol, &ch, &cfg).unwrap();
        prop_assert!(after >= before * (1.0 - 1e-10));
    }

    #[test]
    fn null_space_noise_is_invisible_to_its_span(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span: Vec<CVec> = (0..k).map(|_| isac_secure::scenario::cn_vector(&mut rng, 5)).collect();
        let r = null_space_noise(5, &span, 3.0);
        prop_assert!((r.trace() - 3.0).abs() < 1e-9);
        for v in &span {
            prop_assert!(r.quad(v).abs() < 1e-10);
        }
    }
}
