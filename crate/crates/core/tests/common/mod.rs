//! Single-user, single-eavesdropper instance with two BS and two radar
//! antennas, and a brute-force search over rank-one designs for it.

use isac_secure::linalg::{c64, CVec};
use isac_secure::scenario::{sample_channels, ChannelSet, Preset, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

/// Channels for `seed`, with the BS budget set halfway (geometrically)
/// between the matched-filter minimum and the minimum for nulling the
/// eavesdropper. The optimum then trades leakage against user gain instead
/// of sitting at zero.
pub fn micro_instance(seed: u64) -> (ScenarioConfig, ChannelSet) {
    let mut cfg = Preset::KnownCsi.config();
    cfg.n_bs_antennas = 2;
    cfg.n_radar_antennas = 2;
    cfg.n_users = 1;
    cfg.n_eves = 1;
    cfg.bob_noise.truncate(1);
    cfg.eve_noise.truncate(1);
    cfg.comm_qos.truncate(1);
    let ch = sample_channels(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let h = &ch.h[0];
    let he = &ch.h_eve[0];
    let hn = h.norm_squared();
    let orth = hn - h.dotc(he).norm_sqr() / he.norm_squared();
    let r = orth / hn;
    cfg.bs_power = cfg.comm_qos[0] * cfg.bob_noise[0] / (r.sqrt() * hn);
    cfg.validate().unwrap();
    (cfg, ch)
}

/// Unit radar beam at angle `(π/2) v²` from the user's radar null, so the
/// grid is densest where the user sees no radar interference.
fn radar_beam(ch: &ChannelSet, v: f64, phi: f64) -> CVec {
    let g = ch.g[0].normalize();
    let null = CVec::from_vec(vec![-g[1].conj(), g[0].conj()]);
    let t = FRAC_PI_2 * v * v;
    null.scale(t.cos()) + g.scale(t.sin()) * c64(phi.cos(), phi.sin())
}

/// Least leakage `|h_e^H w|²` with `|h^H w|² >= tau` and `‖w‖² <= P_c`, and
/// the beam that attains it.
///
/// Writing `w = sqrt(p) (cos t ĥ + sin t e^{jφ} ĥ⊥)` with the phase aligned
/// against the eavesdropper, the leakage at the least feasible power is
/// `tau (|α| - |β| tan t)² / ‖h‖²`, falling until the nulling angle, so the
/// optimal angle is the nulling angle clipped by the power budget.
fn least_leakage(cfg: &ScenarioConfig, ch: &ChannelSet, tau: f64) -> Option<(f64, CVec)> {
    let h = &ch.h[0];
    let he = &ch.h_eve[0];
    let hn = h.norm();
    if tau > cfg.bs_power * hn * hn {
        return None;
    }
    let hh = h.unscale(hn);
    let perp = CVec::from_vec(vec![-hh[1].conj(), hh[0].conj()]);
    let alpha = hh.dotc(he).conj();
    let beta = perp.dotc(he).conj();
    let null_angle = alpha.norm().atan2(beta.norm());
    let power_angle = (tau / (cfg.bs_power * hn * hn)).sqrt().min(1.0).acos();
    let t = null_angle.min(power_angle);
    let p = tau / (hn * hn * t.cos().powi(2));
    let leak = tau * (alpha.norm() - beta.norm() * t.tan()).powi(2) / (hn * hn);
    // rotate the orthogonal part so the two leakage terms cancel
    let phase = if beta.norm() > 0.0 {
        -(alpha / beta).unscale((alpha / beta).norm())
    } else {
        c64(1.0, 0.0)
    };
    let w = (hh.scale(t.cos()) + perp.scale(t.sin()) * phase).scale(p.sqrt());
    Some((leak.max(0.0), w))
}

/// Best eavesdropper SINR with radar beam `e` at power `s`, the BS beam
/// chosen by [`least_leakage`]. Radar output SINR uses the optimal filter,
/// `σ0² s |a^H e|² a^H B^-1 a` with `B = Q^H w w^H Q + σ_r² I`.
fn eval(cfg: &ScenarioConfig, ch: &ChannelSet, v: f64, phi: f64, s: f64) -> f64 {
    if !(0.0..=cfg.radar_power).contains(&s) {
        return f64::INFINITY;
    }
    let e = radar_beam(ch, v, phi);
    let gb = ch.g[0].dotc(&e).norm_sqr();
    let c2 = ch.g_eve[0].dotc(&e).norm_sqr();
    let tau = cfg.comm_qos[0] * (s * gb + cfg.bob_noise[0]);
    let Some((leak, w)) = least_leakage(cfg, ch, tau) else {
        return f64::INFINITY;
    };
    let a = &ch.steering;
    let q = ch.q.adjoint() * &w;
    let sr = cfg.radar_noise;
    let ainv_a = (a.norm_squared() - a.dotc(&q).norm_sqr() / (sr + q.norm_squared())) / sr;
    let radar = cfg.target_rcs * s * a.dotc(&e).norm_sqr() * ainv_a;
    if radar < cfg.radar_qos {
        return f64::INFINITY;
    }
    leak / (s * c2 + cfg.eve_noise[0])
}

/// Lowest eavesdropper SINR over rank-one radar beams and powers, each with
/// its best BS beam: a grid over the radar direction sphere and a
/// logarithmic power grid, then local zooms around the best few points.
///
/// A single rank-one radar beam is optimal once the BS beam is fixed (three
/// linear constraints on a 2x2 covariance), and the filter is optimal in
/// closed form, so this covers the whole design space up to grid error.
pub fn grid_oracle(cfg: &ScenarioConfig, ch: &ChannelSet) -> f64 {
    let (n_dir, n_pow) = (48usize, 80usize);
    let (dt, dp) = (1.0 / (n_dir - 1) as f64, 2.0 * PI / n_dir as f64);
    let s_lo = 1e-4 * cfg.radar_power;
    let dl = (cfg.radar_power / s_lo).ln() / (n_pow - 1) as f64;
    let mut coarse = Vec::with_capacity(n_dir * n_dir * n_pow);
    for i in 0..n_dir {
        for j in 0..n_dir {
            for k in 0..n_pow {
                let x = [i as f64 * dt, j as f64 * dp, s_lo.ln() + k as f64 * dl];
                coarse.push((eval(cfg, ch, x[0], x[1], x[2].exp().min(cfg.radar_power)), x));
            }
        }
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for &(mut val, mut x) in coarse.iter().take(8) {
        if !val.is_finite() {
            break;
        }
        let mut step = [dt, dp, dl];
        while step[0] > 1e-9 {
            let mut center = x;
            for a in -2..=2 {
                for b in -2..=2 {
                    for c in -2..=2 {
                        let y = [
                            x[0] + a as f64 * step[0] / 2.0,
                            x[1] + b as f64 * step[1] / 2.0,
                            x[2] + c as f64 * step[2] / 2.0,
                        ];
                        let v = eval(cfg, ch, y[0], y[1], y[2].exp().min(cfg.radar_power));
                        if v < val {
                            val = v;
                            center = y;
                        }
                    }
                }
            }
            if center == x {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
            x = center;
        }
        best = best.min(val);
    }
    best
}
