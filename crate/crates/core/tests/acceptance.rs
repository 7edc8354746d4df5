//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; the process exits non-zero on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delaypde::certify::{
    assemble_constraints, certify, constraint_problem, constructive_candidate, extended_basis, gamma_domination,
    AlphaSet, Certificate, CertifyOptions, ConstraintProblem, TailConstants, Variables,
};
use delaypde::linalg::{cholesky, symmetric_eigenvalues, DenseMatrix};
use delaypde::model::{assemble_truncated, build_reduction, choose_n0, Gains, Measurement, PlantConfig};
use delaypde::sim::{
    estimate_decay_rate, simulate_closed_loop, simulate_closed_loop_raw, simulate_open_loop, simulate_scalar_dde,
    InitialCondition, ObserverInit, SimConfig, TimeProfile,
};
use delaypde::spectral::{compute_eigenbasis, richardson_eigenvalues, Coefficient, SLProblem};

type Outcome = Result<String, String>;

fn reference_plant(meas: Measurement, h: f64, grid: usize) -> (PlantConfig, Gains) {
    let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(1.0), 2.0, PI / 3.0, 0.0, grid).unwrap();
    let plant = PlantConfig::new(sl, 3.0, h, meas).unwrap();
    let gains = match meas {
        Measurement::Dirichlet => Gains { k: vec![-2.2316], l: vec![4.7450] },
        Measurement::Neumann => Gains { k: vec![-1.0149], l: vec![4.0937] },
    };
    (plant, gains)
}

fn cubic() -> Coefficient {
    Coefficient::Polynomial {
        coeffs: vec![0.0, 0.0, -7.5, 10.0],
    }
}

fn sim_cfg(m: usize, dt: f64, t_final: f64, ic: InitialCondition) -> SimConfig {
    SimConfig {
        m_modes: m,
        dt,
        t_final,
        ic,
        observer_init: ObserverInit::Zeros,
        record_every: 10,
        x_samples: 51,
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `μ = k²` with `-f'' = μ f`, `cos θ1 f(0) = sin θ1 f'(0)`, `f(1) = 0`.
/// Shooting from `x = 0` gives `f(1) = sin θ1 cos k + cos θ1 sin k / k`.
fn robin_dirichlet_mu1(theta1: f64) -> f64 {
    let (s1, c1) = theta1.sin_cos();
    let shoot = |k: f64| s1 * k.cos() + c1 * k.sin() / k;
    let mut k = 1e-3;
    while shoot(k) * shoot(k + 1e-2) > 0.0 {
        k += 1e-2;
    }
    bisect(shoot, k, k + 1e-2).powi(2)
}

/// Real root of `s = a + c e^{-s h}` for `c > 0`.
fn dde_root(a: f64, c: f64, h: f64) -> f64 {
    let f = |s: f64| s - a - c * (-s * h).exp();
    let mut hi = a + c + 1.0;
    while f(hi) < 0.0 {
        hi += 1.0;
    }
    bisect(f, a, hi)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(0.0), 0.0, 0.0, 0.0, 4001)
        .map_err(|e| e.to_string())?;
    let lam = richardson_eigenvalues(&sl, 20).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = lam
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let exact = (PI * (i + 1) as f64).powi(2);
            (l - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let msg = format!("max rel err {worst:.3e} (tol 1e-6), {secs:.2} s (limit 5 s)");
    if worst <= 1e-6 && secs < 5.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Outcome {
    let (plant, _) = reference_plant(Measurement::Dirichlet, 1.0, 2001);
    let basis = compute_eigenbasis(&plant.sl, 50).map_err(|e| e.to_string())?;
    let ic = InitialCondition {
        time: TimeProfile::Constant { value: 1.0 },
        space: cubic(),
    };
    let tr = simulate_open_loop(&plant, &basis, &sim_cfg(50, 1e-3, 15.0, ic), true).map_err(|e| e.to_string())?;
    let fit = estimate_decay_rate(&tr.times, &tr.l2_sq, 5.0, 15.0).map_err(|e| e.to_string())?;
    let growth = -fit.delta;
    let oracle = 4.0 - robin_dirichlet_mu1(PI / 3.0);
    let rel = (growth - oracle).abs() / oracle;
    let msg = format!("growth {growth:.6} vs oracle 4 - mu1 = {oracle:.6}, rel {rel:.2e} (tol 2e-2)");
    if oracle > 0.0 && rel <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (plant, gains) = reference_plant(Measurement::Dirichlet, 1.0, 2001);
    let basis = compute_eigenbasis(&plant.sl, 100).map_err(|e| e.to_string())?;
    let red = build_reduction(&plant, &basis).map_err(|e| e.to_string())?;
    let ic = InitialCondition {
        time: TimeProfile::Cosine {
            amplitude: 10.0,
            omega: 5.0 * PI,
            phase: -5.0 * PI,
        },
        space: Coefficient::Polynomial {
            coeffs: vec![0.0, 0.0, -0.75, 1.0],
        },
    };
    let tr = simulate_closed_loop(&plant, &basis, &red, &gains, 1, 3, &sim_cfg(100, 1e-3, 10.0, ic))
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let ratio = |s: &[f64]| s.last().unwrap() / s.iter().cloned().fold(0.0, f64::max);
    let (rh, re) = (ratio(&tr.h1_sq), ratio(&tr.err_sq));
    let msg = format!("H1(10)/peak {rh:.3e}, error(10)/peak {re:.3e} (tol 1e-3), {secs:.2} s (limit 30 s)");
    if rh <= 1e-3 && re <= 1e-3 && secs < 30.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Outcome {
    let hs = [0.5, 1.0, 2.0, 5.0, 10.0];
    let mut fits = Vec::new();
    for &h in &hs {
        let (plant, gains) = reference_plant(Measurement::Dirichlet, h, 2001);
        let basis = compute_eigenbasis(&plant.sl, 100).map_err(|e| e.to_string())?;
        let red = build_reduction(&plant, &basis).map_err(|e| e.to_string())?;
        let ic = InitialCondition {
            time: TimeProfile::Constant { value: 1.0 },
            space: cubic(),
        };
        let tr = simulate_closed_loop(&plant, &basis, &red, &gains, 1, 3, &sim_cfg(100, 1e-3, 80.0, ic))
            .map_err(|e| e.to_string())?;
        fits.push(estimate_decay_rate(&tr.times, &tr.h1_sq, 20.0, 80.0).map_err(|e| e.to_string())?);
    }
    let ok = fits
        .windows(2)
        .all(|w| w[0].delta - w[1].delta > w[0].residual.max(w[1].residual));
    let msg = hs
        .iter()
        .zip(&fits)
        .map(|(h, f)| format!("h={h}: {:.4}±{:.1e}", f.delta, f.residual))
        .collect::<Vec<_>>()
        .join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for meas in [Measurement::Dirichlet, Measurement::Neumann] {
        let (plant, gains) = reference_plant(meas, 1.0, 401);
        let out = certify(&plant, &gains, &CertifyOptions::default()).map_err(|e| e.to_string())?;
        let reloaded = Certificate::from_json(&out.certificate.to_json().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let drift = reloaded.revalidate().map_err(|e| e.to_string())?;
        let n = out.n_feasible;
        ok &= n.is_some_and(|n| n <= 64) && reloaded.feasible && drift <= 1e-10;
        parts.push(format!("{}: N = {n:?}, revalidation drift {drift:.1e}", meas.name()));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DenseMatrix {
    let a = DenseMatrix::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    &a.matmul(&a.transpose()) + &DenseMatrix::identity(n).scale(shift)
}

struct OracleSet {
    psi: DMatrix<f64>,
    theta1: DMatrix<f64>,
    theta2: DMatrix<f64>,
    theta3: f64,
    theta4: f64,
    theta5: Option<f64>,
}

/// Direct assembly from the plant primitives `A0, A1, B0, C0, C̃1, K, L`.
fn oracle_assembly(pr: &ConstraintProblem, v: &Variables) -> OracleSet {
    let md = &pr.model;
    let (n0, k) = (md.n0, md.n - md.n0);
    let (a0, a1, b0, c0, c1, kg, lg) = (
        to_na(&md.a0),
        to_na(&md.a1),
        to_na(&md.b0),
        to_na(&md.c0),
        to_na(&md.c1t),
        to_na(&md.k),
        to_na(&md.l),
    );
    let c = pr.c.abs();
    let al = &pr.alphas;
    let c_frak = 1.0 - 0.5 * (c / al.alpha1 + 1.0 / al.alpha2 + 1.0 / al.alpha3 + c / al.alpha4);

    let mut f1 = DMatrix::zeros(2 * n0, 2 * n0);
    f1.view_mut((0, 0), (n0, n0)).copy_from(&(&a0 + &b0 * &kg));
    f1.view_mut((0, n0), (n0, n0)).copy_from(&(&lg * &c0));
    f1.view_mut((n0, n0), (n0, n0)).copy_from(&(&a0 - &lg * &c0));
    let mut f2 = DMatrix::zeros(2 * n0, k);
    f2.view_mut((0, 0), (n0, k)).copy_from(&(&lg * &c1));
    f2.view_mut((n0, 0), (n0, k)).copy_from(&(-(&lg * &c1)));
    let mut lcal = DMatrix::zeros(2 * n0, 1);
    lcal.view_mut((0, 0), (n0, 1)).copy_from(&lg);
    lcal.view_mut((n0, 0), (n0, 1)).copy_from(&(-&lg));
    let mut kt = DMatrix::zeros(1, 2 * n0);
    kt.view_mut((0, 0), (1, n0)).copy_from(&kg);
    let mut big = DMatrix::zeros(2 * n0, 2 * n0 + k + 1);
    big.view_mut((0, 0), (2 * n0, 2 * n0)).copy_from(&f1);
    big.view_mut((0, 2 * n0), (2 * n0, k)).copy_from(&f2);
    big.view_mut((0, 2 * n0 + k), (2 * n0, 1)).copy_from(&lcal);
    let e = &kt * big;
    let ktk = kt.transpose() * &kt;

    let (p, q1, q2) = (to_na(&v.p), to_na(&v.q1), to_na(&v.q2));
    let ik = DMatrix::<f64>::identity(k, k);
    let psi1 = f1.transpose() * &p + &p * &f1 + &p * c + &q1 + &ktk * (al.alpha2 * v.gamma * pr.residual_a);
    let psi2 = (a1 * 2.0 + &ik * c) * v.r1 + &q2;
    let dim = 2 * n0 + k + 1;
    let mut psi = DMatrix::zeros(dim, dim);
    psi.view_mut((0, 0), (2 * n0, 2 * n0)).copy_from(&psi1);
    let pf2 = &p * &f2;
    psi.view_mut((0, 2 * n0), (2 * n0, k)).copy_from(&pf2);
    psi.view_mut((2 * n0, 0), (k, 2 * n0)).copy_from(&pf2.transpose());
    psi.view_mut((2 * n0, 2 * n0), (k, k)).copy_from(&psi2);
    let pl = &p * &lcal;
    psi.view_mut((0, dim - 1), (2 * n0, 1)).copy_from(&pl);
    psi.view_mut((dim - 1, 0), (1, 2 * n0)).copy_from(&pl.transpose());
    psi[(dim - 1, dim - 1)] = -v.beta;
    psi += e.transpose() * &e * (2.0 * al.alpha3 * v.gamma * pr.residual_b);

    let theta1 = &p * c - &q1 + &ktk * ((2.0 * al.alpha3 * c + al.alpha4) * v.gamma * c * pr.residual_b);
    let theta2 = &ik * (v.r1 * c) - &q2;
    let theta3 = v.gamma * al.alpha1 * c - v.r2;
    let lam = pr.lambda_next;
    let mphi = pr.tails.value;
    let core = 2.0 * v.gamma * (-c_frak * lam + pr.q_c) + v.r2 / lam;
    let (theta4, theta5) = match pr.model.measurement {
        Measurement::Dirichlet => (core + v.beta * mphi, None),
        Measurement::Neumann => {
            let eps = pr.tails.epsilon.unwrap();
            (
                core + v.beta * mphi * lam.powf(0.5 + eps),
                Some(2.0 * v.gamma * c_frak - v.beta * mphi / lam.powf(0.5 - eps)),
            )
        }
    };
    OracleSet {
        psi,
        theta1,
        theta2,
        theta3,
        theta4,
        theta5,
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let meas = if trial % 2 == 0 { Measurement::Dirichlet } else { Measurement::Neumann };
        let (plant, _) = reference_plant(meas, 1.0, 401);
        let basis = compute_eigenbasis(&plant.sl, 12).map_err(|e| e.to_string())?;
        let red = build_reduction(&plant, &basis).map_err(|e| e.to_string())?;
        let n0 = rng.gen_range(1..=3);
        let n = rng.gen_range(n0 + 1..=8);
        let gains = Gains {
            k: (0..n0).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            l: (0..n0).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        };
        let q_c = rng.gen_range(-1.0..3.0);
        let model = assemble_truncated(&red, &basis, &gains, n0, n, meas, q_c).map_err(|e| e.to_string())?;
        let c = rng.gen_range(-4.0..4.0);
        let alphas = loop {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..20.0)).collect();
            if let Ok(set) = AlphaSet::new(a[0], a[1], a[2], a[3], c) {
                break set;
            }
        };
        let eps = rng.gen_range(0.01..0.5);
        let problem = ConstraintProblem {
            model,
            alphas,
            tails: TailConstants {
                measurement: meas,
                value: rng.gen_range(0.1..5.0),
                epsilon: (meas == Measurement::Neumann).then_some(eps),
                terms_computed: 0,
                partial_sum: 0.0,
                tail_bound: 0.0,
            },
            residual_a: rng.gen_range(0.0..1.0),
            residual_b: rng.gen_range(0.0..1.0),
            q_c,
            c,
            lambda_next: basis.lambdas[n],
        };
        let vars = Variables {
            p: random_spd(&mut rng, 2 * n0, 0.1),
            q1: random_spd(&mut rng, 2 * n0, 0.0),
            q2: random_spd(&mut rng, n - n0, 0.0),
            r1: rng.gen_range(0.01..10.0),
            r2: rng.gen_range(0.01..10.0),
            beta: rng.gen_range(0.01..10.0),
            gamma: rng.gen_range(0.01..10.0),
        };
        let ours = assemble_constraints(&problem, &vars).map_err(|e| e.to_string())?;
        let or = oracle_assembly(&problem, &vars);
        let mat = |a: &DenseMatrix, b: &DMatrix<f64>| {
            let b = (b + b.transpose()) * 0.5;
            let scale = 1.0 + b.amax();
            (to_na(a) - b).amax() / scale
        };
        let sc = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
        let mut d = mat(&ours.psi, &or.psi)
            .max(mat(&ours.theta1, &or.theta1))
            .max(mat(&ours.theta2, &or.theta2))
            .max(sc(ours.theta3, or.theta3))
            .max(sc(ours.theta4, or.theta4));
        d = match (ours.theta5, or.theta5) {
            (Some(a), Some(b)) => d.max(sc(a, b)),
            (None, None) => d,
            _ => f64::INFINITY,
        };
        worst = worst.max(d);
    }
    let msg = format!("20 random inputs, max scaled entrywise difference {worst:.2e} (tol 1e-12)");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for meas in [Measurement::Dirichlet, Measurement::Neumann] {
        let (plant, gains) = reference_plant(meas, 1.0, 401);
        let basis = extended_basis(&plant, 64).map_err(|e| e.to_string())?;
        let plant = plant.with_grid(basis.grid.len());
        let red = build_reduction(&plant, &basis).map_err(|e| e.to_string())?;
        let n0 = choose_n0(&basis.lambdas, plant.sl.q_c, plant.c).map_err(|e| e.to_string())?;
        let alphas = AlphaSet::default_for(plant.c);
        let (mut worst_psi2, mut worst_chain, mut chol_fail) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize);
        for n in n0 + 1..=64 {
            let pr = constraint_problem(&plant, &basis, &red, &gains, alphas, n0, n, 0.125).map_err(|e| e.to_string())?;
            let v = constructive_candidate(&pr).map_err(|e| e.to_string())?;
            if cholesky(&v.p).is_none() {
                chol_fail += 1;
            }
            // Ψ2 as defined, without the rank-one E term that Ψ adds on top.
            let k = n - n0;
            let psi2 = &(&pr.model.f3.scale(2.0) + &DenseMatrix::identity(k).scale(pr.c.abs())).scale(v.r1) + &v.q2;
            let shifted = &psi2 + &DenseMatrix::identity(k).scale(v.beta);
            let top = *symmetric_eigenvalues(&shifted).map_err(|e| e.to_string())?.last().unwrap();
            worst_psi2 = worst_psi2.max(top / (1.0 + psi2.max_abs()));
            let chain = gamma_domination(&pr, &v, &basis.lambdas[n..]).map_err(|e| e.to_string())?;
            // Equality is attained at n = N+1, so only rounding may remain.
            worst_chain = worst_chain.max(chain / (pr.lambda_next * (1.0 + v.gamma + v.beta)));
        }
        ok &= chol_fail == 0 && worst_psi2 <= 1e-12 && worst_chain <= 1e-12;
        parts.push(format!(
            "{}: N = {}..64, Cholesky failures {chol_fail}, max scaled lambda_max(Psi2 + beta I) {worst_psi2:.1e}, max scaled Gamma violation {worst_chain:.1e}",
            meas.name(),
            n0 + 1
        ));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    for (meas, n) in [(Measurement::Dirichlet, 3), (Measurement::Dirichlet, 6), (Measurement::Neumann, 4)] {
        let (plant, gains) = reference_plant(meas, 1.0, 2001);
        let basis = compute_eigenbasis(&plant.sl, n).map_err(|e| e.to_string())?;
        let red = build_reduction(&plant, &basis).map_err(|e| e.to_string())?;
        let ic = InitialCondition {
            time: TimeProfile::Constant { value: 1.0 },
            space: cubic(),
        };
        let mut cfg = sim_cfg(n, 1e-3, 10.0, ic);
        cfg.observer_init = ObserverInit::Matched;
        cfg.record_every = 1;
        let tr = simulate_closed_loop_raw(&plant, &basis, &red, &gains, 1, n, &cfg).map_err(|e| e.to_string())?;
        let scale = tr.z_modes[0].iter().fold(0.0f64, |a, z| a.max(z.abs()));
        let err = tr
            .z_modes
            .iter()
            .zip(&tr.zhat)
            .flat_map(|(z, zh)| z.iter().zip(zh).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        worst = worst.max(err / scale);
    }
    let msg = format!("max |e_n(t)| / initial scale {worst:.2e} (tol 1e-8)");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (a, c, h) in [(-2.0, 0.5, 1.0), (-1.0, 0.3, 2.0), (-3.0, 1.5, 0.5)] {
        let root = dde_root(a, c, h);
        let (t, x) = simulate_scalar_dde(a, c, h, 1e-3, 30.0, 1.0).map_err(|e| e.to_string())?;
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let fit = estimate_decay_rate(&t, &sq, 10.0, 30.0).map_err(|e| e.to_string())?;
        let rel = (fit.delta + root).abs() / root.abs();
        ok &= rel <= 0.01;
        parts.push(format!("(a,c,h)=({a},{c},{h}): {:.5} vs {:.5}, rel {rel:.1e}", -fit.delta, root));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("eigensolver exactness", criterion_1),
        ("open-loop instability", criterion_2),
        ("closed-loop decay", criterion_3),
        ("decay rate vs delay", criterion_4),
        ("certificate existence", criterion_5),
        ("constraint assembly oracle", criterion_6),
        ("constructive recipe invariants", criterion_7),
        ("observer exactness", criterion_8),
        ("scalar delay equation", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(msg) => println!("criterion {} ({name}): PASS  {msg}", i + 1),
            Err(msg) => {
                failures += 1;
                println!("criterion {} ({name}): FAIL  {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
