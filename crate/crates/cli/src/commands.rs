use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use delaypde::certify::{certify, constraint_problem, export_sdpa, AlphaSet, CertifyOptions};
use delaypde::model::{
    assemble_truncated, build_reduction, choose_n0, default_targets, synthesize_gains, Gains, SpectralReduction,
};
use delaypde::sim::{estimate_decay_rate, reconstruct_field, simulate_closed_loop, DecayFit, FieldKind, Trajectory};
use delaypde::spectral::{compute_eigenbasis, richardson_eigenvalues, validate_weyl_bounds, EigenBasis};

use crate::config::{poles, GainsMode, GainsSection, RunConfig};
use crate::svg;
use crate::CliError;

/// Trajectory columns written per run.
const CSV_MODES: usize = 10;

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Validation(format!("writing {}: {e}", path.display())))
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Validation(format!("creating {}: {e}", out.display())))?;
    let mut echo = cfg.clone();
    echo.output.directory = out.to_path_buf();
    write(out, "effective_config.toml", &echo.to_toml())
}

struct Setup {
    basis: EigenBasis,
    reduction: SpectralReduction,
    n0: usize,
}

fn setup(cfg: &RunConfig, modes: usize) -> Result<Setup, CliError> {
    let plant = cfg.plant_config(cfg.plant.h)?;
    let basis = compute_eigenbasis(&plant.sl, modes)?;
    basis.check_invariants(cfg.numerics.tol_orth, cfg.numerics.tol_bc)?;
    let reduction = build_reduction(&plant, &basis)?;
    let n0 = choose_n0(&basis.lambdas, plant.sl.q_c, plant.c)?;
    Ok(Setup { basis, reduction, n0 })
}

fn resolve_gains(cfg: &RunConfig, s: &Setup) -> Result<Gains, CliError> {
    let g = &cfg.gains;
    let p = &cfg.plant;
    let gains = match g.mode {
        GainsMode::Given => Gains {
            k: g.k.clone(),
            l: g.l.clone(),
        },
        GainsMode::Place => {
            let pick = |list: &[crate::config::Pole]| {
                if list.is_empty() {
                    default_targets(p.c, s.n0, 0.5, 0.5)
                } else {
                    poles(list)
                }
            };
            let (tk, tl) = (pick(&g.poles_k), pick(&g.poles_l));
            if tk.len() != s.n0 || tl.len() != s.n0 {
                return Err(CliError::Validation(format!(
                    "gains: need {} pole targets for K and for L (N0 = {})",
                    s.n0, s.n0
                )));
            }
            synthesize_gains(&s.reduction, &s.basis, s.n0, p.q_c, p.c, p.measurement, &tk, &tl)?
        }
    };
    if gains.k.len() != s.n0 || gains.l.len() != s.n0 {
        return Err(CliError::Validation(format!(
            "gains: K and L must have length N0 = {}, got {} and {}",
            s.n0,
            gains.k.len(),
            gains.l.len()
        )));
    }
    Ok(gains)
}

pub fn cmd_eigs(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(cfg, out)?;
    let plant = cfg.plant_config(cfg.plant.h)?;
    let n = cfg.numerics.n_modes;
    let basis = compute_eigenbasis(&plant.sl, n)?;
    let richardson = if plant.sl.grid_points % 2 == 1 && plant.sl.grid_points >= 5 {
        Some(richardson_eigenvalues(&plant.sl, n)?)
    } else {
        None
    };
    let mut csv = String::from("n,lambda,lambda_richardson\n");
    for (i, l) in basis.lambdas.iter().enumerate() {
        let r = richardson.as_ref().map_or(String::new(), |r| format!("{:.16e}", r[i]));
        let _ = writeln!(csv, "{},{l:.16e},{r}", i + 1);
    }
    write(out, "eigenvalues.csv", &csv)?;

    let mut csv = String::from("n,phi_0,dphi_0,phi_1,dphi_1\n");
    for (i, t) in basis.traces.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.16e},{:.16e},{:.16e},{:.16e}", i + 1, t.phi0, t.dphi0, t.phi1, t.dphi1);
    }
    write(out, "traces.csv", &csv)?;

    let (p_lo, p_hi, q_hi) = plant.sl.envelopes();
    let weyl = validate_weyl_bounds(&basis, p_lo, p_hi, q_hi);
    let mut csv = String::from("n,lambda,lower,upper,lower_margin,upper_margin,pass\n");
    for m in &weyl.modes {
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            m.n, m.lambda, m.lower, m.upper, m.lower_margin, m.upper_margin, m.pass
        );
    }
    write(out, "weyl.csv", &csv)?;

    let orth = basis.orthonormality_error();
    let bc = basis.boundary_residual();
    log::info!(
        "{n} modes, lambda_1 = {:.10}, orthonormality error {orth:.2e}, boundary residual {bc:.2e}",
        basis.lambdas[0]
    );
    basis.check_invariants(cfg.numerics.tol_orth, cfg.numerics.tol_bc)?;
    if let Some(k) = weyl.first_failure() {
        return Err(CliError::Numerical(format!("Weyl bounds fail at mode {k}")));
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(cfg, out)?;
    let s = setup(cfg, cfg.numerics.n_modes)?;
    if s.n0 + 1 > s.basis.len() {
        return Err(CliError::Validation(format!(
            "numerics.n_modes: need more than N0 = {} modes",
            s.n0
        )));
    }
    let gains = resolve_gains(cfg, &s)?;
    let p = &cfg.plant;
    let model = assemble_truncated(&s.reduction, &s.basis, &gains, s.n0, s.n0 + 1, p.measurement, p.q_c)?;
    let (kc, ko) = model.kalman()?;
    let spectrum = model.f1_spectrum()?;
    let rightmost = spectrum.first().map_or(f64::NEG_INFINITY, |z| z.re);

    let mut report = String::new();
    let _ = writeln!(report, "N0 = {}", s.n0);
    let _ = writeln!(report, "gains mode = {:?}", cfg.gains.mode);
    let _ = writeln!(report, "K = {:?}", gains.k);
    let _ = writeln!(report, "L = {:?}", gains.l);
    let _ = writeln!(
        report,
        "controllability rank {} (full: {}), observability rank {} (full: {})",
        kc.rank, kc.full_rank, ko.rank, ko.full_rank
    );
    let _ = writeln!(report, "spec(F1), rightmost first:");
    for z in &spectrum {
        let _ = writeln!(report, "  {:.12e} {:+.12e}i", z.re, z.im);
    }
    let _ = writeln!(report, "required: Re < -|c| = {}", -p.c.abs());
    let _ = writeln!(report, "margin: {:.6e}", -p.c.abs() - rightmost);
    let pass = rightmost < -p.c.abs();
    let _ = writeln!(report, "verification: {}", if pass { "pass" } else { "fail" });
    write(out, "synth_report.txt", &report)?;

    let section = GainsSection {
        mode: GainsMode::Given,
        k: gains.k.clone(),
        l: gains.l.clone(),
        poles_k: Vec::new(),
        poles_l: Vec::new(),
    };
    let gains_toml = toml::to_string(&section).expect("gains are serialisable");
    write(out, "gains.toml", &format!("[gains]\n{gains_toml}"))?;
    log::info!("N0 = {}, K = {:?}, L = {:?}, rightmost Re spec(F1) = {rightmost:.6}", s.n0, gains.k, gains.l);
    if !(kc.full_rank && ko.full_rank) {
        return Err(CliError::Numerical("truncated pair fails the Kalman rank test".into()));
    }
    if !pass {
        return Err(CliError::Numerical(format!(
            "spec(F1) reaches Re = {rightmost:.6e}, not below -|c| = {}",
            -p.c.abs()
        )));
    }
    Ok(())
}

pub fn cmd_certify(cfg: &RunConfig, out: &Path, export_at: Option<usize>) -> Result<(), CliError> {
    prepare(cfg, out)?;
    let s = setup(cfg, cfg.numerics.n_modes)?;
    let gains = resolve_gains(cfg, &s)?;
    let plant = cfg.plant_config(cfg.plant.h)?;
    let nm = &cfg.numerics;
    let opts = CertifyOptions {
        n_max: nm.n_max,
        refine: nm.refine,
        epsilon: nm.epsilon,
        alphas: cfg.alphas()?,
        ..CertifyOptions::default()
    };
    let outcome = certify(&plant, &gains, &opts)?;
    let cert = &outcome.certificate;
    write(
        out,
        "certificate.json",
        &cert.to_json().map_err(|e| CliError::Numerical(e.to_string()))?,
    )?;

    let mut csv = String::from("n,constructive_slack,refined_slack,feasible\n");
    for e in &outcome.trace {
        let refined = e.refined_slack.map_or(String::new(), |v| format!("{v:.16e}"));
        let _ = writeln!(csv, "{},{:.16e},{refined},{}", e.n, e.constructive_slack, e.feasible);
    }
    write(out, "certify_trace.csv", &csv)?;

    let mut report = String::new();
    let _ = writeln!(report, "measurement = {}", plant.measurement.name());
    let _ = writeln!(report, "N0 = {}", outcome.n0);
    match outcome.n_feasible {
        Some(n) => {
            let _ = writeln!(report, "smallest feasible N = {n}");
        }
        None => {
            let _ = writeln!(report, "no feasible N up to {}", nm.n_max);
        }
    }
    let _ = writeln!(report, "certificate at N = {} (feasible: {})", cert.n, cert.feasible);
    let _ = writeln!(report, "{:<8} {:>24} {:>24} {:>6}", "name", "extreme", "slack", "pass");
    for m in &cert.margins {
        let _ = writeln!(report, "{:<8} {:>24.16e} {:>24.16e} {:>6}", m.name, m.extreme, m.slack, m.pass);
    }
    write(out, "certify_report.txt", &report)?;

    if let Some(n) = export_at {
        if n <= outcome.n0 || n >= outcome.basis.len() {
            return Err(CliError::Validation(format!(
                "--export-sdpa: N must lie in {}..{}",
                outcome.n0 + 1,
                outcome.basis.len()
            )));
        }
        let ext_plant = plant.with_grid(outcome.basis.grid.len());
        let reduction = build_reduction(&ext_plant, &outcome.basis)?;
        let alphas = opts.alphas.unwrap_or_else(|| AlphaSet::default_for(plant.c));
        let problem = constraint_problem(
            &ext_plant,
            &outcome.basis,
            &reduction,
            &gains,
            alphas,
            outcome.n0,
            n,
            nm.epsilon,
        )?;
        let path = out.join(format!("certificate_n{n}.dat-s"));
        export_sdpa(&problem, nm.sdpa_margin, &path)?;
        log::info!("SDPA problem written to {}", path.display());
    }

    match outcome.n_feasible {
        Some(n) => {
            log::info!("feasible at N = {n} (N0 = {})", outcome.n0);
            Ok(())
        }
        None => Err(CliError::Infeasible(format!(
            "no certificate for N <= {}; best worst slack {:.3e}",
            nm.n_max,
            cert.worst_slack()
        ))),
    }
}

struct RunResult {
    h: f64,
    fit: DecayFit,
    traj: Trajectory,
}

fn run_one(cfg: &RunConfig, s: &Setup, gains: &Gains, h: f64, dir: &Path) -> Result<RunResult, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("creating {}: {e}", dir.display())))?;
    let plant = cfg.plant_config(h)?;
    let nm = &cfg.numerics;
    let n = if nm.observer_modes == 0 { s.n0 + 2 } else { nm.observer_modes };
    if n <= s.n0 {
        return Err(CliError::Validation(format!(
            "numerics.observer_modes: N = {n} must exceed N0 = {}",
            s.n0
        )));
    }
    let traj = simulate_closed_loop(&plant, &s.basis, &s.reduction, gains, s.n0, n, &cfg.sim_config())?;
    let t = nm.t_final;
    let fit = estimate_decay_rate(&traj.times, &traj.h1_sq, nm.fit_window[0] * t, nm.fit_window[1] * t)?;

    write(dir, "trajectory.csv", &traj.to_csv(CSV_MODES.min(traj.m_modes())))?;
    let state = reconstruct_field(&traj, &s.basis, &s.reduction, nm.x_samples, FieldKind::State);
    let error = reconstruct_field(&traj, &s.basis, &s.reduction, nm.x_samples, FieldKind::Error);
    write(dir, "state_field.csv", &state.to_csv())?;
    write(dir, "error_field.csv", &error.to_csv())?;
    let mut decay = String::from("h,delta,residual,points,t_start,t_end\n");
    let _ = writeln!(
        decay,
        "{h:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
        fit.delta, fit.residual, fit.points, fit.t_start, fit.t_end
    );
    write(dir, "decay.csv", &decay)?;
    if cfg.output.svg() {
        write(dir, "state_field.svg", &svg::heatmap(&state, &format!("z(t, x), h = {h} s")))?;
        write(dir, "error_field.svg", &svg::heatmap(&error, &format!("observation error, h = {h} s")))?;
        let series = [
            svg::Series {
                label: "H1 energy".into(),
                times: &traj.times,
                values: &traj.h1_sq,
            },
            svg::Series {
                label: "error energy".into(),
                times: &traj.times,
                values: &traj.err_sq,
            },
        ];
        write(dir, "energy.svg", &svg::log_lines(&series, &format!("energies, h = {h} s"), "energy"))?;
    }
    log::info!("h = {h}: decay rate {:.6} ± {:.1e}", fit.delta, fit.residual);
    Ok(RunResult { h, fit, traj })
}

fn sim_setup(cfg: &RunConfig) -> Result<(Setup, Gains), CliError> {
    let s = setup(cfg, cfg.numerics.m_modes.max(cfg.numerics.n_modes))?;
    let gains = resolve_gains(cfg, &s)?;
    Ok((s, gains))
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(cfg, out)?;
    let (s, gains) = sim_setup(cfg)?;
    run_one(cfg, &s, &gains, cfg.plant.h, out)?;
    Ok(())
}

fn run_dir(out: &Path, h: f64) -> PathBuf {
    out.join(format!("h_{h}"))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(cfg, out)?;
    let (s, gains) = sim_setup(cfg)?;
    let runs: Vec<RunResult> = cfg
        .sweep
        .delays
        .par_iter()
        .map(|&h| run_one(cfg, &s, &gains, h, &run_dir(out, h)))
        .collect::<Result<_, _>>()?;

    let mut csv = String::from("h,delta,residual,points,t_start,t_end\n");
    for r in &runs {
        let f = &r.fit;
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            r.h, f.delta, f.residual, f.points, f.t_start, f.t_end
        );
    }
    write(out, "decay_rates.csv", &csv)?;
    if cfg.output.svg() {
        let series: Vec<svg::Series> = runs
            .iter()
            .map(|r| svg::Series {
                label: format!("h = {} s", r.h),
                times: &r.traj.times,
                values: &r.traj.h1_sq,
            })
            .collect();
        write(out, "h1_overlay.svg", &svg::log_lines(&series, "H1 energy", "energy"))?;
    }
    let mut sorted: Vec<&RunResult> = runs.iter().collect();
    sorted.sort_by(|a, b| a.h.total_cmp(&b.h));
    let monotone = sorted
        .windows(2)
        .all(|w| w[0].fit.delta - w[1].fit.delta > w[0].fit.residual.max(w[1].fit.residual));
    log::info!(
        "decay rate {} strictly decreasing in h",
        if monotone { "is" } else { "is not" }
    );
    Ok(())
}
