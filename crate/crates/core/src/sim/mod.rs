//! Closed- and open-loop simulation of the modal plant with the
//! observer-based controller.

mod decay;
mod ic;
mod integrator;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gains, PlantConfig, SpectralReduction};
use crate::spectral::EigenBasis;

pub use decay::{estimate_decay_rate, DecayFit};
pub use ic::{InitialCondition, TimeProfile};
pub use integrator::{phi_functions, simulate_scalar_dde, DelayIntegrator, DelayRhs, DIVERGENCE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverInit {
    #[default]
    Zeros,
    /// Zero except `ẑ_1(0)`, chosen so that `u0(0) = K ẑ(0)`.
    Compatibility,
    /// `ẑ_n(0) = z_n(0)` for `n ≤ N`.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m_modes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub ic: InitialCondition,
    #[serde(default)]
    pub observer_init: ObserverInit,
    /// Store every `record_every`-th step (the final step is always stored).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_x_samples")]
    pub x_samples: usize,
}

fn default_record_every() -> usize {
    10
}

fn default_x_samples() -> usize {
    101
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid(format!("T_final must be positive, got {}", self.t_final)));
        }
        if self.dt > self.t_final {
            return Err(Error::invalid(format!(
                "dt = {} exceeds T_final = {}",
                self.dt, self.t_final
            )));
        }
        if self.m_modes == 0 {
            return Err(Error::invalid("M_modes must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be positive"));
        }
        if self.x_samples < 2 {
            return Err(Error::invalid("x_samples must be at least 2"));
        }
        Ok(())
    }
}

/// Recorded closed- or open-loop run. All series share the length of `times`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `z_n(t)`, `n ≤ M`, per stored step.
    pub z_modes: Vec<Vec<f64>>,
    /// `ẑ_n(t)`, `n ≤ N`, per stored step (empty rows in open loop).
    pub zhat: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub h1_sq: Vec<f64>,
    pub l2_sq: Vec<f64>,
    /// `Σ_{n≤N} (z_n - ẑ_n)²`.
    pub err_sq: Vec<f64>,
    pub k: Vec<f64>,
    pub n0: usize,
    pub n: usize,
    pub dt: f64,
    pub h_steps: usize,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn m_modes(&self) -> usize {
        self.z_modes.first().map_or(0, Vec::len)
    }

    /// `Σ_{k≤N0} k_k ẑ_k` at stored step `i`.
    pub fn control_at(&self, i: usize) -> f64 {
        self.k.iter().zip(&self.zhat[i]).map(|(k, z)| k * z).sum()
    }

    /// CSV with header `t,u,y,h1_sq,l2_sq,z_1..z_k,zhat_1..zhat_N`.
    pub fn to_csv(&self, k_modes: usize) -> String {
        let k_modes = k_modes.min(self.m_modes());
        let mut out = String::from("t,u,y,h1_sq,l2_sq");
        for i in 1..=k_modes {
            let _ = write!(out, ",z_{i}");
        }
        let n_hat = self.zhat.first().map_or(0, Vec::len);
        for i in 1..=n_hat {
            let _ = write!(out, ",zhat_{i}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.u[i], self.y[i], self.h1_sq[i], self.l2_sq[i]
            );
            for v in &self.z_modes[i][..k_modes] {
                let _ = write!(out, ",{v:.16e}");
            }
            for v in &self.zhat[i] {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// `dt` and the integer delay `H` actually used for a requested step.
pub fn step_grid(h: f64, dt: f64) -> (f64, usize) {
    let h_steps = ((h / dt).round() as usize).max(10);
    (h / h_steps as f64, h_steps)
}

/// Bound `1 / (|c| + ‖L‖₁‖C0‖₁ + ‖K‖₁‖B0‖₁)` on the step of the explicitly
/// treated coupling.
pub fn coupling_step_bound(plant: &PlantConfig, basis: &EigenBasis, reduction: &SpectralReduction, gains: &Gains) -> f64 {
    let n0 = gains.k.len();
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let c0: f64 = (0..n0).map(|i| plant.measurement.trace(basis, i).abs()).sum();
    let b0 = l1(&reduction.beta_n[..n0]);
    1.0 / (plant.c.abs() + l1(&gains.l) * c0 + l1(&gains.k) * b0)
}

/// Plant in lifted coordinates `w_n = z_n + b_n u`, which turns the stiff
/// forcing `β_n u` into `a_n u + b_n u'` with bounded coefficients.
///
/// State: `[w_1..w_M, ẑ_1..ẑ_N]`; delayed signal: `[z_1..z_M, ẑ_1..ẑ_N]`.
struct ClosedLoop<'a> {
    m: usize,
    n: usize,
    n0: usize,
    c: f64,
    k: &'a [f64],
    l: &'a [f64],
    diag: &'a [f64],
    a: &'a [f64],
    beta: &'a [f64],
    b: &'a [f64],
    trace: &'a [f64],
    zdot: Vec<f64>,
}

impl ClosedLoop<'_> {
    fn control(&self, x: &[f64]) -> f64 {
        self.k.iter().zip(&x[self.m..]).map(|(k, z)| k * z).sum()
    }
}

impl DelayRhs for ClosedLoop<'_> {
    fn eval(&mut self, _t: f64, x: &[f64], d: &[f64], out: &mut [f64]) {
        let (m, n) = (self.m, self.n);
        let u = self.control(x);
        let y: f64 = (0..m).map(|i| x[i] * self.trace[i]).sum();
        let predicted: f64 = (0..n).map(|i| (x[m + i] + self.b[i] * u) * self.trace[i]).sum();
        let innovation = predicted - y;
        for i in 0..n {
            let mut v = self.c * d[m + i] + self.beta[i] * u;
            if i < self.n0 {
                v -= self.l[i] * innovation;
            }
            out[m + i] = v;
            self.zdot[i] = self.diag[m + i] * x[m + i] + v;
        }
        let udot: f64 = self.k.iter().zip(&self.zdot).map(|(k, z)| k * z).sum();
        for i in 0..m {
            out[i] = self.c * d[i] + self.a[i] * u + self.b[i] * udot;
        }
    }
}

struct Recorder<'a> {
    every: usize,
    last: usize,
    m: usize,
    lambdas: &'a [f64],
    b: &'a [f64],
    trace: &'a [f64],
    k: &'a [f64],
    traj: Trajectory,
}

impl Recorder<'_> {
    /// `x` holds `[w_1..w_M, ẑ_1..ẑ_N]`.
    fn record(&mut self, step: usize, t: f64, x: &[f64]) {
        if step % self.every != 0 && step != self.last {
            return;
        }
        let m = self.m;
        let (w, zhat) = x.split_at(m);
        let u: f64 = self.k.iter().zip(zhat).map(|(k, z)| k * z).sum();
        let mut z = Vec::with_capacity(m);
        let mut y = 0.0;
        let mut h1 = u * u;
        let mut l2 = 0.0;
        for i in 0..m {
            let zi = w[i] - self.b[i] * u;
            y += w[i] * self.trace[i];
            h1 += self.lambdas[i] * w[i] * w[i];
            l2 += zi * zi;
            z.push(zi);
        }
        let err: f64 = zhat.iter().zip(&z).map(|(a, b)| (b - a).powi(2)).sum();
        let tr = &mut self.traj;
        tr.times.push(t);
        tr.z_modes.push(z);
        tr.zhat.push(zhat.to_vec());
        tr.u.push(u);
        tr.y.push(y);
        tr.h1_sq.push(h1);
        tr.l2_sq.push(l2);
        tr.err_sq.push(err);
    }
}

/// Closed loop with `M ≥ N + 10` plant modes.
pub fn simulate_closed_loop(
    plant: &PlantConfig,
    basis: &EigenBasis,
    reduction: &SpectralReduction,
    gains: &Gains,
    n0: usize,
    n: usize,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    if cfg.m_modes < n + 10 {
        return Err(Error::invalid(format!(
            "M_modes = {} must be at least N + 10 = {}",
            cfg.m_modes,
            n + 10
        )));
    }
    simulate_closed_loop_raw(plant, basis, reduction, gains, n0, n, cfg)
}

/// Closed loop without the `M ≥ N + 10` requirement; `M = N` gives a plant
/// the observer replicates exactly.
pub fn simulate_closed_loop_raw(
    plant: &PlantConfig,
    basis: &EigenBasis,
    reduction: &SpectralReduction,
    gains: &Gains,
    n0: usize,
    n: usize,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    plant.validate()?;
    cfg.validate()?;
    let m = cfg.m_modes;
    if n0 == 0 || n0 > n || n > m {
        return Err(Error::invalid(format!("need 1 ≤ N0 ≤ N ≤ M, got N0 = {n0}, N = {n}, M = {m}")));
    }
    if m > basis.len() || m > reduction.b_n.len() {
        return Err(Error::invalid(format!(
            "M_modes = {m} exceeds the {} computed modes",
            basis.len().min(reduction.b_n.len())
        )));
    }
    if gains.k.len() != n0 || gains.l.len() != n0 {
        return Err(Error::invalid(format!("gains must have length N0 = {n0}")));
    }
    let mut warnings = Vec::new();
    let (mut dt, mut h_steps) = step_grid(plant.h, cfg.dt);
    let bound = coupling_step_bound(plant, basis, reduction, gains);
    if dt > bound {
        let factor = (dt / bound).ceil() as usize;
        h_steps *= factor;
        dt = plant.h / h_steps as f64;
        let msg = format!("dt reduced to {dt:.3e} to respect the coupling bound {bound:.3e}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let n_steps = (cfg.t_final / dt - 1e-9).ceil() as usize;

    let theta2 = plant.sl.theta2;
    let f_n = cfg.ic.spatial_coefficients(basis, m)?;
    let z0: Vec<f64> = f_n.iter().map(|f| cfg.ic.time.value(0.0) * f).collect();
    let u0 = cfg.ic.input_history(0.0, theta2, &basis.grid);
    let mut zhat0 = vec![0.0; n];
    match cfg.observer_init {
        ObserverInit::Zeros => {}
        ObserverInit::Compatibility => {
            if gains.k[0] == 0.0 {
                return Err(Error::invalid("compatibility init needs k_1 ≠ 0"));
            }
            zhat0[0] = u0 / gains.k[0];
        }
        ObserverInit::Matched => zhat0.copy_from_slice(&z0[..n]),
    }
    let u_init: f64 = gains.k.iter().zip(&zhat0).map(|(k, z)| k * z).sum();
    if (u0 - u_init).abs() > 1e-12 * (1.0 + u0.abs()) {
        let msg = format!("compatibility condition fails: u0(0) = {u0:.6e}, K ẑ(0) = {u_init:.6e}");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let prehistory: Vec<Vec<f64>> = (0..=h_steps)
        .map(|j| {
            let tau = -plant.h + j as f64 * dt;
            let g = cfg.ic.time.value(tau);
            let mut s: Vec<f64> = f_n.iter().map(|f| g * f).collect();
            s.extend_from_slice(&zhat0);
            s
        })
        .collect();
    let mut x0: Vec<f64> = z0.iter().zip(&reduction.b_n).map(|(z, b)| z + b * u_init).collect();
    x0.extend_from_slice(&zhat0);

    let trace: Vec<f64> = (0..m).map(|i| plant.measurement.trace(basis, i)).collect();
    let mut linear: Vec<f64> = basis.lambdas[..m].iter().map(|l| -l + plant.sl.q_c).collect();
    linear.extend_from_slice(&linear[..n].to_vec());
    let integ = DelayIntegrator::new(&linear, dt, h_steps)?;
    let mut system = ClosedLoop {
        m,
        n,
        n0,
        c: plant.c,
        k: &gains.k,
        l: &gains.l,
        diag: &linear,
        a: &reduction.a_n,
        beta: &reduction.beta_n,
        b: &reduction.b_n,
        trace: &trace,
        zdot: vec![0.0; n],
    };
    let mut rec = Recorder {
        every: cfg.record_every,
        last: n_steps,
        m,
        lambdas: &basis.lambdas,
        b: &reduction.b_n,
        trace: &trace,
        k: &gains.k,
        traj: empty_trajectory(gains.k.clone(), n0, n, dt, h_steps, warnings),
    };
    let (k, b) = (&gains.k, &reduction.b_n);
    let signal = |x: &[f64], out: &mut [f64]| {
        let u: f64 = k.iter().zip(&x[m..]).map(|(k, z)| k * z).sum();
        for i in 0..m {
            out[i] = x[i] - b[i] * u;
        }
        out[m..].copy_from_slice(&x[m..]);
    };
    integ.run_with_signal(
        x0,
        prehistory,
        n_steps,
        &mut system,
        &signal,
        &mut |s, t, x| rec.record(s, t, x),
    )?;
    Ok(rec.traj)
}

fn empty_trajectory(k: Vec<f64>, n0: usize, n: usize, dt: f64, h_steps: usize, warnings: Vec<String>) -> Trajectory {
    Trajectory {
        times: Vec::new(),
        z_modes: Vec::new(),
        zhat: Vec::new(),
        u: Vec::new(),
        y: Vec::new(),
        h1_sq: Vec::new(),
        l2_sq: Vec::new(),
        err_sq: Vec::new(),
        k,
        n0,
        n,
        dt,
        h_steps,
        warnings,
    }
}

/// Uncontrolled plant (`u ≡ 0`). With `delay_free` the delayed term is
/// folded into the diagonal, giving the `h = 0` system.
pub fn simulate_open_loop(
    plant: &PlantConfig,
    basis: &EigenBasis,
    cfg: &SimConfig,
    delay_free: bool,
) -> Result<Trajectory> {
    plant.validate()?;
    cfg.validate()?;
    let m = cfg.m_modes;
    if m > basis.len() {
        return Err(Error::invalid(format!("M_modes = {m} exceeds the {} computed modes", basis.len())));
    }
    let (dt, h_steps) = step_grid(plant.h, cfg.dt);
    let n_steps = (cfg.t_final / dt - 1e-9).ceil() as usize;
    let f_n = cfg.ic.spatial_coefficients(basis, m)?;
    let shift = if delay_free { plant.c } else { 0.0 };
    let linear: Vec<f64> = basis.lambdas[..m].iter().map(|l| -l + plant.sl.q_c + shift).collect();
    let prehistory: Vec<Vec<f64>> = (0..=h_steps)
        .map(|j| {
            let g = if delay_free {
                cfg.ic.time.value(0.0)
            } else {
                cfg.ic.time.value(-plant.h + j as f64 * dt)
            };
            f_n.iter().map(|f| g * f).collect()
        })
        .collect();
    let c = if delay_free { 0.0 } else { plant.c };
    let mut rhs = |_t: f64, _x: &[f64], d: &[f64], out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(d) {
            *o = c * v;
        }
    };
    let integ = DelayIntegrator::new(&linear, dt, h_steps)?;
    let trace: Vec<f64> = (0..m).map(|i| plant.measurement.trace(basis, i)).collect();
    let zeros = vec![0.0; m];
    let mut rec = Recorder {
        every: cfg.record_every,
        last: n_steps,
        m,
        lambdas: &basis.lambdas,
        b: &zeros,
        trace: &trace,
        k: &[],
        traj: empty_trajectory(Vec::new(), 0, 0, dt, h_steps, Vec::new()),
    };
    integ.run(prehistory, n_steps, &mut rhs, &mut |s, t, x| rec.record(s, t, x))?;
    Ok(rec.traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    State,
    Error,
}

/// Values on a `times × x` grid; `values[i][j]` is at `(times[i], x[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldGrid {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FieldGrid {
    /// Long-format CSV `t,x,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,value\n");
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, v) in self.x.iter().zip(row) {
                let _ = writeln!(out, "{t:.16e},{x:.16e},{v:.16e}");
            }
        }
        out
    }
}

/// Grid indices of `samples` roughly evenly spaced points.
fn sample_indices(grid_len: usize, samples: usize) -> Vec<usize> {
    let samples = samples.clamp(2, grid_len);
    (0..samples)
        .map(|j| ((j as f64) * (grid_len - 1) as f64 / (samples - 1) as f64).round() as usize)
        .collect()
}

/// `z(t, x) = Σ w_n φ_n(x) + x² u / (cos θ₂ + 2 sin θ₂)` or the observation
/// error `Σ_{n≤N} (z_n - ẑ_n) φ_n(x)` at every stored step.
pub fn reconstruct_field(
    traj: &Trajectory,
    basis: &EigenBasis,
    reduction: &SpectralReduction,
    x_samples: usize,
    which: FieldKind,
) -> FieldGrid {
    let idx = sample_indices(basis.grid.len(), x_samples);
    let x: Vec<f64> = idx.iter().map(|&i| basis.grid[i]).collect();
    let denom = basis.theta2.cos() + 2.0 * basis.theta2.sin();
    let values = (0..traj.len())
        .map(|s| {
            let u = traj.u[s];
            let z = &traj.z_modes[s];
            idx.iter()
                .zip(&x)
                .map(|(&g, &xv)| match which {
                    FieldKind::State => {
                        let modal: f64 = z
                            .iter()
                            .enumerate()
                            .map(|(n, zn)| (zn + reduction.b_n[n] * u) * basis.modes[n][g])
                            .sum();
                        modal + xv * xv * u / denom
                    }
                    FieldKind::Error => traj.zhat[s]
                        .iter()
                        .enumerate()
                        .map(|(n, zh)| (z[n] - zh) * basis.modes[n][g])
                        .sum(),
                })
                .collect()
        })
        .collect();
    FieldGrid {
        times: traj.times.clone(),
        x,
        values,
    }
}

/// `Σ_{n≤M} λ_n w_n² + u²` per stored step.
pub fn h1_energy(traj: &Trajectory, basis: &EigenBasis, reduction: &SpectralReduction) -> Vec<f64> {
    (0..traj.len())
        .map(|s| {
            let u = traj.u[s];
            traj.z_modes[s]
                .iter()
                .enumerate()
                .map(|(n, z)| {
                    let w = z + reduction.b_n[n] * u;
                    basis.lambdas[n] * w * w
                })
                .sum::<f64>()
                + u * u
        })
        .collect()
}

/// Quadrature of `∫ p w_x² + q w² + p(0) cot θ₁ w(0)² + p(1) cot θ₂ w(1)²`
/// plus `u²` for the reconstructed `w = Σ w_n φ_n` at stored step `s`.
///
/// Equals the spectral surrogate up to truncation and quadrature error.
pub fn h1_quadrature(traj: &Trajectory, basis: &EigenBasis, reduction: &SpectralReduction, plant: &PlantConfig, s: usize) -> f64 {
    let u = traj.u[s];
    let g = basis.grid.len();
    let mut w = vec![0.0; g];
    for (n, z) in traj.z_modes[s].iter().enumerate() {
        let wn = z + reduction.b_n[n] * u;
        for (wi, phi) in w.iter_mut().zip(&basis.modes[n]) {
            *wi += wn * phi;
        }
    }
    let hx = basis.grid[1] - basis.grid[0];
    let mut total = 0.0;
    for i in 0..g - 1 {
        let xm = 0.5 * (basis.grid[i] + basis.grid[i + 1]);
        let dw = (w[i + 1] - w[i]) / hx;
        let wm = 0.5 * (w[i] + w[i + 1]);
        total += hx * (plant.sl.p.value(xm) * dw * dw + plant.sl.q.value(xm) * wm * wm);
    }
    let (t1, t2) = (basis.theta1, basis.theta2);
    if t1.sin() > 1e-12 {
        total += plant.sl.p.value(0.0) * t1.cos() / t1.sin() * w[0] * w[0];
    }
    if t2.sin() > 1e-12 {
        total += plant.sl.p.value(1.0) * t2.cos() / t2.sin() * w[g - 1] * w[g - 1];
    }
    total + u * u
}

/// Direct quadrature of `∫ z² + z_x²` for the reconstructed field at step `s`.
pub fn h1_norm_direct(traj: &Trajectory, basis: &EigenBasis, reduction: &SpectralReduction, s: usize) -> f64 {
    let single = Trajectory {
        times: vec![traj.times[s]],
        z_modes: vec![traj.z_modes[s].clone()],
        zhat: vec![traj.zhat[s].clone()],
        u: vec![traj.u[s]],
        y: vec![traj.y[s]],
        h1_sq: vec![traj.h1_sq[s]],
        l2_sq: vec![traj.l2_sq[s]],
        err_sq: vec![traj.err_sq[s]],
        ..empty_trajectory(Vec::new(), 0, 0, traj.dt, traj.h_steps, Vec::new())
    };
    let field = reconstruct_field(&single, basis, reduction, basis.grid.len(), FieldKind::State);
    let z = &field.values[0];
    let x = &field.x;
    (0..z.len() - 1)
        .map(|i| {
            let hx = x[i + 1] - x[i];
            let dz = (z[i + 1] - z[i]) / hx;
            let zm = 0.5 * (z[i] + z[i + 1]);
            hx * (zm * zm + dz * dz)
        })
        .sum()
}

/// Boundary residual `cos θ₂ z(t,1) + sin θ₂ z_x(t,1) - u(t)` of the
/// reconstruction at stored step `s`, with `z_x(t,1)` a one-sided
/// second-order difference of the reconstructed field.
pub fn boundary_residual(traj: &Trajectory, basis: &EigenBasis, reduction: &SpectralReduction, s: usize) -> f64 {
    let u = traj.u[s];
    let t2 = basis.theta2;
    let denom = t2.cos() + 2.0 * t2.sin();
    let g = basis.grid.len();
    let hx = basis.grid[g - 1] - basis.grid[g - 2];
    let mut z = [0.0; 3];
    for (k, idx) in [g - 3, g - 2, g - 1].into_iter().enumerate() {
        let x = basis.grid[idx];
        z[k] = x * x * u / denom
            + traj.z_modes[s]
                .iter()
                .enumerate()
                .map(|(n, zn)| (zn + reduction.b_n[n] * u) * basis.modes[n][idx])
                .sum::<f64>();
    }
    let dz = (3.0 * z[2] - 4.0 * z[1] + z[0]) / (2.0 * hx);
    t2.cos() * z[2] + t2.sin() * dz - u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Measurement, build_reduction, choose_n0, synthesize_gains, default_targets};
    use crate::spectral::{compute_eigenbasis, Coefficient, SLProblem};
    use std::f64::consts::PI;

    fn plant(measurement: Measurement, h: f64) -> PlantConfig {
        let sl = SLProblem::new(
            Coefficient::constant(1.0),
            Coefficient::constant(1.0),
            2.0,
            PI / 3.0,
            0.0,
            401,
        )
        .unwrap();
        PlantConfig::new(sl, 3.0, h, measurement).unwrap()
    }

    fn setup(h: f64, m: usize) -> (PlantConfig, EigenBasis, SpectralReduction, Gains, usize) {
        let p = plant(Measurement::Dirichlet, h);
        let basis = compute_eigenbasis(&p.sl, m).unwrap();
        let red = build_reduction(&p, &basis).unwrap();
        let n0 = choose_n0(&basis.lambdas, p.sl.q_c, p.c).unwrap();
        let targets = default_targets(p.c, n0, 1.0, 1.0);
        let gains = synthesize_gains(&red, &basis, n0, p.sl.q_c, p.c, p.measurement, &targets, &targets).unwrap();
        (p, basis, red, gains, n0)
    }

    fn reference_ic() -> InitialCondition {
        InitialCondition {
            time: TimeProfile::Cosine {
                amplitude: 10.0,
                omega: 5.0 * PI,
                phase: -5.0 * PI,
            },
            space: Coefficient::Polynomial {
                coeffs: vec![0.0, 0.0, -0.75, 1.0],
            },
        }
    }

    fn cfg(m: usize, t_final: f64, ic: InitialCondition) -> SimConfig {
        SimConfig {
            m_modes: m,
            dt: 1e-3,
            t_final,
            ic,
            observer_init: ObserverInit::Zeros,
            record_every: 10,
            x_samples: 21,
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let (p, basis, red, gains, n0) = setup(1.0, 20);
        let traj = simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &cfg(20, 1.0, InitialCondition::zero())).unwrap();
        assert!(traj.h1_sq.iter().all(|&v| v == 0.0));
        assert!(traj.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn control_law_and_lengths() {
        let (p, basis, red, gains, n0) = setup(1.0, 20);
        let traj = simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &cfg(20, 2.0, reference_ic())).unwrap();
        let n = traj.len();
        for s in [&traj.z_modes.len(), &traj.zhat.len(), &traj.u.len(), &traj.y.len(), &traj.h1_sq.len(), &traj.l2_sq.len()] {
            assert_eq!(*s, n);
        }
        for i in 0..n {
            assert!((traj.u[i] - traj.control_at(i)).abs() < 1e-14);
        }
        assert!(!traj.warnings.is_empty());
        let h1 = h1_energy(&traj, &basis, &red);
        for (a, b) in h1.iter().zip(&traj.h1_sq) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn compatibility_init_silences_warning() {
        let (p, basis, red, gains, n0) = setup(1.0, 20);
        let mut c = cfg(20, 0.5, reference_ic());
        c.observer_init = ObserverInit::Compatibility;
        let traj = simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &c).unwrap();
        assert!(traj.warnings.is_empty());
        assert!((traj.u[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_mode_energy_is_eigenvalue() {
        let (p, basis, red, _, _) = setup(1.0, 20);
        let traj = Trajectory {
            times: vec![0.0],
            z_modes: vec![{
                let mut v = vec![0.0; 20];
                v[0] = 1.0;
                v
            }],
            zhat: vec![vec![]],
            u: vec![0.0],
            y: vec![0.0],
            h1_sq: vec![0.0],
            l2_sq: vec![0.0],
            err_sq: vec![0.0],
            ..empty_trajectory(Vec::new(), 0, 0, 1e-3, 10, Vec::new())
        };
        assert!((h1_energy(&traj, &basis, &red)[0] - basis.lambdas[0]).abs() < 1e-12);
        let quad = h1_quadrature(&traj, &basis, &red, &p, 0);
        assert!((quad - basis.lambdas[0]).abs() < 1e-3 * basis.lambdas[0]);
        let field = reconstruct_field(&traj, &basis, &red, 5, FieldKind::State);
        for (j, &x) in field.x.iter().enumerate() {
            let g = basis.grid.iter().position(|&v| v == x).unwrap();
            assert_eq!(field.values[0][j], basis.modes[0][g]);
        }
    }

    #[test]
    fn field_at_zero_matches_initial_data() {
        let (p, basis, red, gains, n0) = setup(1.0, 60);
        let mut c = cfg(60, 0.01, reference_ic());
        c.observer_init = ObserverInit::Compatibility;
        let traj = simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &c).unwrap();
        let field = reconstruct_field(&traj, &basis, &red, basis.grid.len(), FieldKind::State);
        let f: Vec<f64> = basis.grid.iter().map(|&x| reference_ic().value(0.0, x)).collect();
        // u(0) = u0(0), so the reconstruction is the truncated expansion of z0(0, ·)
        // and its error is the Parseval remainder of the lifted part.
        let lift: Vec<f64> = basis.grid.iter().map(|&x| x * x * traj.u[0]).collect();
        let w0: Vec<f64> = f.iter().zip(&lift).map(|(a, b)| a - b).collect();
        let coeffs: Vec<f64> = traj.z_modes[0].iter().zip(&red.b_n).map(|(z, b)| z + b * traj.u[0]).collect();
        let remainder = basis.inner(&w0, &w0) - coeffs.iter().map(|v| v * v).sum::<f64>();
        let diff: Vec<f64> = field.values[0].iter().zip(&f).map(|(a, b)| a - b).collect();
        let err = basis.inner(&diff, &diff);
        assert!((err - remainder).abs() < 1e-10, "{err} vs {remainder}");
        assert!(err < 1e-5);
    }

    #[test]
    fn dt_guard_refines_steps() {
        let (p, basis, red, gains, n0) = setup(1.0, 20);
        let mut c = cfg(20, 0.5, reference_ic());
        c.dt = 0.1;
        let traj = simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &c).unwrap();
        assert!(traj.dt <= coupling_step_bound(&p, &basis, &red, &gains));
        assert_eq!(traj.h_steps as f64 * traj.dt, 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let (p, basis, red, gains, n0) = setup(1.0, 20);
        let mut c = cfg(20, 0.1, reference_ic());
        c.dt = 0.2;
        assert!(simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &c).unwrap_err().is_validation());
        let c = cfg(12, 0.1, reference_ic());
        assert!(simulate_closed_loop(&p, &basis, &red, &gains, n0, 3, &c).is_err());
    }
}
