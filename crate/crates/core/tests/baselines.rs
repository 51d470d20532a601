use isac_secure::baselines::{no_pls, no_radar, null_space_an, separate_design, BaselineKind, SolutionRecord};
use isac_secure::design::{check_constraints, AlgorithmSettings};
use isac_secure::metrics::sinr_report;
use isac_secure::scenario::{sample_channels, ChannelSet, Preset, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn draw(cfg: &ScenarioConfig, seed: u64) -> ChannelSet {
    sample_channels(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn no_radar_meets_qos_with_radar_off() {
    let cfg = Preset::KnownCsi.config();
    let ch = draw(&cfg, 0);
    let sol = no_radar(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
    assert_eq!(sol.f.norm(), 0.0);
    assert_eq!(sol.radar_an_power(), 0.0);
    let rep = sinr_report(&sol, &ch, &cfg).unwrap();
    assert_eq!(rep.radar_sinr, 0.0);
    for (s, g) in rep.bob_sinr.iter().zip(&cfg.comm_qos) {
        assert!(*s >= g * (1.0 - 1e-4));
    }
}

#[test]
fn separate_radar_beam_uses_the_full_budget() {
    let cfg = Preset::KnownCsi.config();
    let ch = draw(&cfg, 1);
    let sol = separate_design(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
    assert!((sol.f.norm_squared() - cfg.radar_power).abs() <= 1e-8 * cfg.radar_power);
    let a = &ch.steering;
    let cos = a.dotc(&sol.u).norm() / (a.norm() * sol.u.norm());
    assert!((cos - 1.0).abs() < 1e-12);
}

#[test]
fn null_space_noise_is_invisible_to_users() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 2);
    let sol = null_space_an(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
    assert!(sol.bs_an_power() > 0.0);
    for h in &ch.h {
        assert!(sol.r_z.quad(h).abs() < 1e-10);
    }
    // the spare radar power is noise too, hidden from users and the target
    let spare = cfg.radar_power - sol.radar_power();
    assert!((sol.radar_an_power() - spare).abs() <= 1e-9 * cfg.radar_power);
    for g in ch.g.iter().chain([&ch.steering]) {
        assert!(sol.r_v.quad(g).abs() < 1e-8);
    }
}

#[test]
fn minimum_power_design_is_tight() {
    let cfg = Preset::UnknownCsi.config();
    for seed in 0..3 {
        let ch = draw(&cfg, 3 + seed);
        let sol = no_pls(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
        assert_eq!(sol.bs_an_power() + sol.radar_an_power(), 0.0);
        assert!(sol.comm_power() < cfg.bs_power);
        assert!(sol.radar_power() < cfg.radar_power);
        let rep = sinr_report(&sol, &ch, &cfg).unwrap();
        for (s, g) in rep.bob_sinr.iter().zip(&cfg.comm_qos) {
            assert!((s - g).abs() <= 1e-3 * g, "seed {seed}: {s} vs {g}");
        }
    }
}

#[test]
fn every_baseline_passes_its_validator() {
    let settings = AlgorithmSettings::default();
    for kind in BaselineKind::ALL {
        let preset = match kind {
            BaselineKind::NoRadar | BaselineKind::Separate => Preset::KnownCsi,
            _ => Preset::UnknownCsi,
        };
        let cfg = preset.config();
        for seed in 0..3 {
            let ch = draw(&cfg, 10 + seed);
            let sol = kind.run(&ch, &cfg, &settings).unwrap();
            let check = check_constraints(&sol, &ch, &cfg, kind.constraint_set()).unwrap();
            assert!(check.feasible(), "{} seed {seed}: {:?}", kind.name(), check.violations);
        }
    }
}

#[test]
fn solution_record_roundtrips_through_json() {
    let cfg = Preset::UnknownCsi.config();
    let ch = draw(&cfg, 20);
    let sol = null_space_an(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
    let rec = SolutionRecord::new("null_space_an", &sol);
    let json = serde_json::to_string(&rec).unwrap();
    let back: SolutionRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back.scheme, "null_space_an");
    let restored = back.to_solution().unwrap();
    assert!((&restored.w - &sol.w).norm() < 1e-12);
    assert!((restored.r_z.matrix() - sol.r_z.matrix()).norm() < 1e-12);
    assert!((&restored.u - &sol.u).norm() < 1e-12);
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Stronger radar jamming hurts the eavesdroppers of the separate design.
#[test]
fn separate_eavesdroppers_suffer_more_radar_power() {
    let base = Preset::KnownCsi.config();
    let powers = [100.0, 200.0, 400.0, 800.0];
    let mut medians = Vec::new();
    for &p in &powers {
        let mut cfg = base.clone();
        cfg.radar_power = p;
        let mut eve: Vec<f64> = (0..21)
            .map(|seed| {
                let ch = draw(&cfg, seed);
                let sol = separate_design(&ch, &cfg, &AlgorithmSettings::default()).unwrap();
                sinr_report(&sol, &ch, &cfg).unwrap().max_eve_sinr
            })
            .collect();
        eve.sort_by(f64::total_cmp);
        medians.push(eve[10]);
    }
    assert!(spearman(&powers, &medians) < 0.0, "{medians:?}");
}
