use std::f64::consts::PI;

use delaypde::model::{build_reduction, Gains, Measurement, PlantConfig, SpectralReduction};
use delaypde::sim::{
    boundary_residual, estimate_decay_rate, h1_quadrature, simulate_closed_loop, simulate_open_loop, InitialCondition,
    ObserverInit, SimConfig, TimeProfile,
};
use delaypde::spectral::{compute_eigenbasis, Coefficient, EigenBasis, SLProblem};

const K_D: f64 = -2.2316;
const L_D: f64 = 4.7450;

fn setup(theta2: f64, c: f64, h: f64, m: usize, grid: usize) -> (PlantConfig, EigenBasis, SpectralReduction) {
    let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(1.0), 2.0, PI / 3.0, theta2, grid).unwrap();
    let plant = PlantConfig::new(sl, c, h, Measurement::Dirichlet).unwrap();
    let basis = compute_eigenbasis(&plant.sl, m).unwrap();
    let red = build_reduction(&plant, &basis).unwrap();
    (plant, basis, red)
}

fn constant_ic() -> InitialCondition {
    InitialCondition {
        time: TimeProfile::Constant { value: 10.0 },
        space: Coefficient::Polynomial {
            coeffs: vec![0.0, 0.0, -0.75, 1.0],
        },
    }
}

fn cfg(m: usize, dt: f64, t_final: f64, ic: InitialCondition, every: usize) -> SimConfig {
    SimConfig {
        m_modes: m,
        dt,
        t_final,
        ic,
        observer_init: ObserverInit::Zeros,
        record_every: every,
        x_samples: 51,
    }
}

fn gains() -> Gains {
    Gains { k: vec![K_D], l: vec![L_D] }
}

/// Real root of `s = a + c e^{-s h}` for `c > 0` by bisection.
fn dde_root(a: f64, c: f64, h: f64) -> f64 {
    let f = |s: f64| s - a - c * (-s * h).exp();
    let mut lo = a;
    let mut hi = a + c.abs() + 1.0;
    while f(hi) < 0.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn step_halving_is_fourth_order_on_smooth_data() {
    let (plant, basis, red) = setup(0.0, 3.0, 1.0, 100, 2001);
    // A single eigenmode as initial data keeps every mode smooth in time.
    let ic = InitialCondition {
        time: TimeProfile::Constant { value: 1.0 },
        space: Coefficient::table(basis.grid.clone(), basis.modes[0].clone()).unwrap(),
    };
    let terminal: Vec<f64> = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
        .iter()
        .map(|&dt| {
            let tr = simulate_closed_loop(&plant, &basis, &red, &gains(), 1, 3, &cfg(100, dt, 3.0, ic.clone(), 100)).unwrap();
            *tr.h1_sq.last().unwrap()
        })
        .collect();
    let d: Vec<f64> = terminal.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let ratios: Vec<f64> = d.windows(2).map(|w| w[0] / w[1]).collect();
    assert!(ratios.iter().all(|&r| r > 10.0), "{ratios:?}");
    assert!(*ratios.last().unwrap() > 14.0, "{ratios:?}");
}

#[test]
fn decay_rate_is_robust_to_truncation() {
    let rate = |m| {
        let (plant, basis, red) = setup(0.0, 3.0, 1.0, m, 2001);
        let tr = simulate_closed_loop(&plant, &basis, &red, &gains(), 1, 3, &cfg(m, 1e-3, 60.0, constant_ic(), 10)).unwrap();
        estimate_decay_rate(&tr.times, &tr.h1_sq, 20.0, 60.0).unwrap().delta
    };
    let (a, b) = (rate(100), rate(200));
    assert!(a > 0.0);
    assert!((a - b).abs() < 0.05 * a, "{a} vs {b}");
}

#[test]
fn boundary_residual_shrinks_with_modes() {
    let res: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&m| {
            let (plant, basis, red) = setup(PI / 4.0, 3.0, 1.0, m, 2001);
            let tr = simulate_closed_loop(&plant, &basis, &red, &gains(), 1, 3, &cfg(m, 1e-3, 0.5, constant_ic(), 100)).unwrap();
            boundary_residual(&tr, &basis, &red, tr.len() - 1).abs()
        })
        .collect();
    assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
}

#[test]
fn h1_surrogate_matches_quadrature() {
    let (plant, basis, red) = setup(0.0, 3.0, 1.0, 100, 2001);
    let ic = InitialCondition {
        time: TimeProfile::Cosine {
            amplitude: 10.0,
            omega: 5.0 * PI,
            phase: -5.0 * PI,
        },
        space: constant_ic().space,
    };
    let tr = simulate_closed_loop(&plant, &basis, &red, &gains(), 1, 3, &cfg(100, 1e-3, 5.0, ic, 100)).unwrap();
    for t in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let s = tr.times.iter().position(|&x| x >= t - 1e-9).unwrap();
        let quad = h1_quadrature(&tr, &basis, &red, &plant, s);
        assert!((tr.h1_sq[s] - quad).abs() <= 0.05 * quad, "t = {t}: {} vs {quad}", tr.h1_sq[s]);
    }
}

#[test]
fn slowest_open_loop_mode_follows_scalar_root() {
    // Small c keeps the first mode a stable scalar delay equation.
    let (plant, basis, _) = setup(0.0, 0.5, 2.0, 30, 801);
    let tr = simulate_open_loop(&plant, &basis, &cfg(30, 1e-3, 40.0, constant_ic(), 10), false).unwrap();
    let fit = estimate_decay_rate(&tr.times, &tr.l2_sq, 20.0, 40.0).unwrap();
    let root = dde_root(-basis.lambdas[0] + 2.0, 0.5, 2.0);
    assert!((fit.delta + root).abs() <= 0.01 * root.abs(), "{} vs {}", fit.delta, -root);
}

#[test]
fn runs_are_deterministic() {
    let (plant, basis, red) = setup(0.0, 3.0, 1.0, 20, 401);
    let run = || {
        simulate_closed_loop(&plant, &basis, &red, &gains(), 1, 3, &cfg(20, 1e-3, 1.0, constant_ic(), 50))
            .unwrap()
            .to_csv(5)
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.starts_with("t,u,y,h1_sq,l2_sq,z_1,z_2,z_3,z_4,z_5,zhat_1,zhat_2,zhat_3\n"));
}

#[test]
fn divergence_is_reported() {
    let (plant, basis, red) = setup(0.0, 3.0, 1.0, 20, 401);
    let bad = Gains { k: vec![5.0], l: vec![0.0] };
    let r = simulate_closed_loop(&plant, &basis, &red, &bad, 1, 3, &cfg(20, 1e-3, 400.0, constant_ic(), 50));
    assert!(matches!(r, Err(delaypde::Error::Diverged { .. })), "{r:?}");
}
