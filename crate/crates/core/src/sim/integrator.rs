//! Fourth-order exponential time differencing (Cox-Matthews ETDRK4) for
//! delay systems `x' = Λx + N(t, x, x(t-h))` with diagonal `Λ`.
//!
//! The delay is an integer number `H ≥ 10` of steps. Delayed values at step
//! points come straight from a ring buffer; values at half steps use cubic
//! interpolation on four neighbouring history points, all taken from the same
//! delay interval `[kh, (k+1)h]` so the stencil never straddles a breaking
//! point of the solution.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Magnitude at which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Terms of the Taylor series used for `|z| ≤ 1`.
const TAYLOR_TERMS: usize = 30;

// Cubic Lagrange weights for the midpoint of the middle, first and last
// interval of a four-point stencil.
const CENTRED: [f64; 4] = [-0.0625, 0.5625, 0.5625, -0.0625];
const LEFT: [f64; 4] = [0.3125, 0.9375, -0.3125, 0.0625];
const RIGHT: [f64; 4] = [0.0625, -0.3125, 0.9375, 0.3125];

/// `(φ1(z), φ2(z), φ3(z))` with `φ_k(z) = Σ_j z^j/(j+k)!`.
pub fn phi_functions(z: f64) -> (f64, f64, f64) {
    if z.abs() <= 1.0 {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            // term_j = z^j / (j + k + 1)!
            let mut term = 1.0 / (1..=k + 1).map(|i| i as f64).product::<f64>();
            let mut sum = 0.0;
            for j in 0..TAYLOR_TERMS {
                sum += term;
                term *= z / (j + k + 2) as f64;
            }
            *o = sum;
        }
        (out[0], out[1], out[2])
    } else {
        let ez = z.exp();
        let p1 = (ez - 1.0) / z;
        let p2 = (ez - 1.0 - z) / (z * z);
        let p3 = (ez - 1.0 - z - 0.5 * z * z) / (z * z * z);
        (p1, p2, p3)
    }
}

struct Coefficients {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Coefficients {
    fn new(linear: &[f64], dt: f64) -> Self {
        let mut c = Coefficients {
            e: Vec::with_capacity(linear.len()),
            e2: Vec::with_capacity(linear.len()),
            q: Vec::with_capacity(linear.len()),
            f1: Vec::with_capacity(linear.len()),
            f2: Vec::with_capacity(linear.len()),
            f3: Vec::with_capacity(linear.len()),
        };
        for &l in linear {
            let z = l * dt;
            let (p1h, _, _) = phi_functions(0.5 * z);
            let (p1, p2, p3) = phi_functions(z);
            c.e.push(z.exp());
            c.e2.push((0.5 * z).exp());
            c.q.push(0.5 * dt * p1h);
            c.f1.push(dt * (p1 - 3.0 * p2 + 4.0 * p3));
            c.f2.push(dt * (p2 - 2.0 * p3));
            c.f3.push(dt * (-p2 + 4.0 * p3));
        }
        c
    }
}

/// Delay right-hand side: `rhs(t, x, x_delayed, out)` writes `N(t, x, x(t-h))`.
pub trait DelayRhs {
    fn eval(&mut self, t: f64, x: &[f64], delayed: &[f64], out: &mut [f64]);
}

impl<F: FnMut(f64, &[f64], &[f64], &mut [f64])> DelayRhs for F {
    fn eval(&mut self, t: f64, x: &[f64], delayed: &[f64], out: &mut [f64]) {
        self(t, x, delayed, out)
    }
}

pub struct DelayIntegrator {
    dt: f64,
    h_steps: usize,
    coeffs: Coefficients,
}

impl DelayIntegrator {
    pub fn new(linear: &[f64], dt: f64, h_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if h_steps < 10 {
            return Err(Error::invalid(format!("delay must span at least 10 steps, got {h_steps}")));
        }
        Ok(Self {
            dt,
            h_steps,
            coeffs: Coefficients::new(linear, dt),
        })
    }

    /// Integrates `n_steps` steps from `prehistory` (the `H + 1` states at
    /// `τ = -h, -h + dt, …, 0`). `observe(step, t, x)` is called for the
    /// initial state and after every step.
    pub fn run(
        &self,
        prehistory: Vec<Vec<f64>>,
        n_steps: usize,
        rhs: &mut dyn DelayRhs,
        observe: &mut dyn FnMut(usize, f64, &[f64]),
    ) -> Result<Vec<f64>> {
        let x0 = prehistory.last().cloned().unwrap_or_default();
        self.run_with_signal(x0, prehistory, n_steps, rhs, &|x, s| s.copy_from_slice(x), observe)
    }

    /// As [`run`](Self::run), but the delay acts on a signal `s = signal(x)`
    /// rather than on the state itself. `prehistory` holds the `H + 1`
    /// signal values on `[-h, 0]`; the last must agree with `signal(x0)`.
    pub fn run_with_signal(
        &self,
        x0: Vec<f64>,
        prehistory: Vec<Vec<f64>>,
        n_steps: usize,
        rhs: &mut dyn DelayRhs,
        signal: &dyn Fn(&[f64], &mut [f64]),
        observe: &mut dyn FnMut(usize, f64, &[f64]),
    ) -> Result<Vec<f64>> {
        let h = self.h_steps;
        if prehistory.len() != h + 1 {
            return Err(Error::invalid(format!(
                "prehistory has {} states, expected {}",
                prehistory.len(),
                h + 1
            )));
        }
        let dim = self.coeffs.e.len();
        if x0.len() != dim {
            return Err(Error::invalid("initial state dimension mismatch"));
        }
        let sdim = prehistory[0].len();
        if prehistory.iter().any(|s| s.len() != sdim) {
            return Err(Error::invalid("prehistory signal dimension mismatch"));
        }
        let c = &self.coeffs;
        let dt = self.dt;
        // history[k] is the signal at global step index first + k.
        let mut history: VecDeque<Vec<f64>> = prehistory.into();
        let mut first: i64 = -(h as i64);
        let mut x = x0;
        observe(0, 0.0, &x);

        let mut d_half = vec![0.0; sdim];
        let mut nu = vec![0.0; dim];
        let mut na = vec![0.0; dim];
        let mut nb = vec![0.0; dim];
        let mut nc = vec![0.0; dim];
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        let mut cs = vec![0.0; dim];

        for step in 0..n_steps {
            let t = step as f64 * dt;
            let j = step as i64 - h as i64;
            let at = |idx: i64| (idx - first) as usize;
            let seg = j.div_euclid(h as i64) * h as i64;
            let (w, base) = if j - 1 < seg {
                (LEFT, j)
            } else if j + 2 > seg + h as i64 {
                (RIGHT, j - 2)
            } else {
                (CENTRED, j - 1)
            };
            for (i, v) in d_half.iter_mut().enumerate() {
                *v = (0..4).map(|k| w[k] * history[at(base + k as i64)][i]).sum();
            }
            let d0 = &history[at(j)];
            let d1 = &history[at(j + 1)];

            rhs.eval(t, &x, d0, &mut nu);
            for i in 0..dim {
                a[i] = c.e2[i] * x[i] + c.q[i] * nu[i];
            }
            rhs.eval(t + 0.5 * dt, &a, &d_half, &mut na);
            for i in 0..dim {
                b[i] = c.e2[i] * x[i] + c.q[i] * na[i];
            }
            rhs.eval(t + 0.5 * dt, &b, &d_half, &mut nb);
            for i in 0..dim {
                cs[i] = c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nu[i]);
            }
            rhs.eval(t + dt, &cs, d1, &mut nc);

            let mut worst = 0.0_f64;
            for i in 0..dim {
                x[i] = c.e[i] * x[i] + c.f1[i] * nu[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i];
                worst = worst.max(x[i].abs());
            }
            let t_next = (step + 1) as f64 * dt;
            if !(worst <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged {
                    t: t_next,
                    magnitude: worst,
                });
            }
            let mut next = if history.len() >= h + 3 {
                first += 1;
                history.pop_front().unwrap_or_default()
            } else {
                vec![0.0; sdim]
            };
            signal(&x, &mut next);
            history.push_back(next);
            observe(step + 1, t_next, &x);
        }
        Ok(x)
    }
}

/// Integrates the scalar delay equation `x' = a x + c x(t - h)` with
/// constant history `x0`, returning `(times, values)` at every step.
pub fn simulate_scalar_dde(a: f64, c: f64, h: f64, dt: f64, t_final: f64, x0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let h_steps = (h / dt).round() as usize;
    let dt = h / h_steps.max(1) as f64;
    let integ = DelayIntegrator::new(&[a], dt, h_steps)?;
    let n_steps = (t_final / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut rhs = |_t: f64, _x: &[f64], d: &[f64], out: &mut [f64]| out[0] = c * d[0];
    integ.run(vec![vec![x0]; h_steps + 1], n_steps, &mut rhs, &mut |_, t, x| {
        times.push(t);
        values.push(x[0]);
    })?;
    Ok((times, values))
}
