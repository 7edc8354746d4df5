//! Eigen-decomposition of the Sturm-Liouville operator `𝒜f = -(p f')' + q f`
//! on `(0, 1)` with Robin conditions
//! `cos θ₁ f(0) - sin θ₁ f'(0) = 0` and `cos θ₂ f(1) + sin θ₂ f'(1) = 0`.
//!
//! The operator is discretised with second-order finite volumes on a uniform
//! grid (half cells at Robin endpoints, Dirichlet endpoints eliminated). This
//! gives a symmetric pencil `S f = λ W f` whose mass matrix `W` is exactly the
//! trapezoid weight vector, so the symmetrised matrix `W^{-1/2} S W^{-1/2}` is
//! tridiagonal and its eigenvectors are orthonormal in the trapezoid inner
//! product used by [`project`].

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::tridiagonal_eigenvalues;

/// Slack on the `[0, π/2]` angle range, to accept values like `π/2` that
/// went through decimal text.
const ANGLE_SLACK: f64 = 1e-12;

/// A coefficient function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `Σ coeffs[k] x^k`.
    Polynomial { coeffs: Vec<f64> },
    /// Piecewise-linear interpolation of sampled values (abscissae increasing).
    Table { x: Vec<f64>, values: Vec<f64> },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn table(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if x.len() != values.len() || x.len() < 2 {
            return Err(Error::invalid(
                "coefficient table needs at least two (x, value) rows of equal length",
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("coefficient table abscissae must be strictly increasing"));
        }
        if x[0] > 0.0 || *x.last().unwrap() < 1.0 {
            return Err(Error::invalid("coefficient table must cover [0, 1]"));
        }
        Ok(Coefficient::Table { x, values })
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            Coefficient::Table { x, values } => {
                let k = x.partition_point(|&xi| xi <= t).clamp(1, x.len() - 1);
                let (x0, x1) = (x[k - 1], x[k]);
                let w = (t - x0) / (x1 - x0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }

    /// Analytic derivative where the coefficient is closed-form.
    pub fn derivative(&self, t: f64) -> Option<f64> {
        match self {
            Coefficient::Constant { .. } => Some(0.0),
            Coefficient::Polynomial { coeffs } => Some(
                coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c),
            ),
            Coefficient::Table { .. } => None,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, Coefficient::Table { .. })
    }
}

/// Sturm-Liouville problem data together with the reaction splitting
/// `q̃ = q - q_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SLProblem {
    pub p: Coefficient,
    pub q: Coefficient,
    pub q_c: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub grid_points: usize,
}

impl SLProblem {
    pub fn new(
        p: Coefficient,
        q: Coefficient,
        q_c: f64,
        theta1: f64,
        theta2: f64,
        grid_points: usize,
    ) -> Result<Self> {
        let prob = Self {
            p,
            q,
            q_c,
            theta1,
            theta2,
            grid_points,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::invalid(format!(
                "grid_points must be at least 3, got {}",
                self.grid_points
            )));
        }
        for (name, th) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(th >= -ANGLE_SLACK && th <= FRAC_PI_2 + ANGLE_SLACK) {
                return Err(Error::invalid(format!("{name} = {th} is outside [0, pi/2]")));
            }
        }
        if !self.q_c.is_finite() {
            return Err(Error::invalid("q_c must be finite"));
        }
        let grid = self.grid();
        let p_min = grid.iter().map(|&x| self.p.value(x)).fold(f64::INFINITY, f64::min);
        if !(p_min > 0.0) {
            return Err(Error::invalid(format!("p must be positive on [0,1]; min over grid is {p_min}")));
        }
        let q_min = grid.iter().map(|&x| self.q.value(x)).fold(f64::INFINITY, f64::min);
        if !(q_min >= 0.0) {
            return Err(Error::invalid(format!("q must be nonnegative on [0,1]; min over grid is {q_min}")));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.grid_points).map(|i| i as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid_points - 1) as f64
    }

    /// `q̃(x) = q(x) - q_c`.
    pub fn q_tilde(&self, x: f64) -> f64 {
        self.q.value(x) - self.q_c
    }

    /// Same problem on a different grid.
    pub fn with_grid(&self, grid_points: usize) -> Self {
        Self {
            grid_points,
            ..self.clone()
        }
    }

    fn clamped_angles(&self) -> (f64, f64) {
        (
            self.theta1.clamp(0.0, FRAC_PI_2),
            self.theta2.clamp(0.0, FRAC_PI_2),
        )
    }

    /// `(p_*, p^*, q^*)` over the grid.
    pub fn envelopes(&self) -> (f64, f64, f64) {
        let grid = self.grid();
        let mut p_lo = f64::INFINITY;
        let mut p_hi = f64::NEG_INFINITY;
        let mut q_hi = f64::NEG_INFINITY;
        for &x in &grid {
            let p = self.p.value(x);
            p_lo = p_lo.min(p);
            p_hi = p_hi.max(p);
            q_hi = q_hi.max(self.q.value(x));
        }
        (p_lo, p_hi, q_hi)
    }
}

/// Boundary values `(φ(0), φ'(0), φ(1), φ'(1))` of one eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub phi0: f64,
    pub dphi0: f64,
    pub phi1: f64,
    pub dphi1: f64,
}

#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub grid: Vec<f64>,
    /// Trapezoid weights on `grid`.
    pub weights: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `modes[n][i] = φ_{n+1}(grid[i])`.
    pub modes: Vec<Vec<f64>>,
    pub traces: Vec<Traces>,
    pub theta1: f64,
    pub theta2: f64,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    /// `max |⟨φ_m, φ_n⟩ - δ_mn|`.
    pub fn orthonormality_error(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|m| {
                (m..self.len())
                    .map(|n| {
                        let g = self.inner(&self.modes[m], &self.modes[n]);
                        (g - if m == n { 1.0 } else { 0.0 }).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Largest residual of the two Robin conditions over all modes.
    pub fn boundary_residual(&self) -> f64 {
        let (c1, s1) = (self.theta1.cos(), self.theta1.sin());
        let (c2, s2) = (self.theta2.cos(), self.theta2.sin());
        self.traces
            .iter()
            .map(|t| (c1 * t.phi0 - s1 * t.dphi0).abs().max((c2 * t.phi1 + s2 * t.dphi1).abs()))
            .fold(0.0, f64::max)
    }

    /// Checks the ordering, orthonormality and boundary-condition invariants.
    pub fn check_invariants(&self, tol_orth: f64, tol_bc: f64) -> Result<()> {
        if self.lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Numerical("eigenvalues are not strictly increasing".into()));
        }
        if self.lambdas.iter().any(|&l| l < -1e-9 * (1.0 + l.abs())) {
            return Err(Error::Numerical("negative eigenvalue".into()));
        }
        let orth = self.orthonormality_error();
        if orth > tol_orth {
            return Err(Error::Numerical(format!(
                "orthonormality error {orth:.3e} exceeds {tol_orth:.1e}"
            )));
        }
        let bc = self.boundary_residual();
        if bc > tol_bc {
            return Err(Error::Numerical(format!(
                "boundary residual {bc:.3e} exceeds {tol_bc:.1e}"
            )));
        }
        Ok(())
    }

    /// Keeps the first `n` modes.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            lambdas: self.lambdas[..n].to_vec(),
            modes: self.modes[..n].to_vec(),
            traces: self.traces[..n].to_vec(),
            theta1: self.theta1,
            theta2: self.theta2,
        }
    }
}

pub fn trapezoid_weights(grid_points: usize) -> Vec<f64> {
    let h = 1.0 / (grid_points - 1) as f64;
    let mut w = vec![h; grid_points];
    w[0] = 0.5 * h;
    w[grid_points - 1] = 0.5 * h;
    w
}

struct Discretization {
    /// First and last grid index carrying an unknown.
    lo: usize,
    hi: usize,
    diag: Vec<f64>,
    off: Vec<f64>,
    /// `sqrt(W_i)` for each unknown.
    sqrt_w: Vec<f64>,
}

fn discretize(problem: &SLProblem) -> Discretization {
    let g = problem.grid_points;
    let h = problem.spacing();
    let (t1, t2) = problem.clamped_angles();
    let left_dirichlet = t1.sin() == 0.0;
    let right_dirichlet = t2.sin() == 0.0;
    let lo = usize::from(left_dirichlet);
    let hi = if right_dirichlet { g - 2 } else { g - 1 };

    let p_half = |i: usize| problem.p.value((i as f64 + 0.5) * h);
    let mut diag = Vec::with_capacity(hi - lo + 1);
    let mut weight = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let x = i as f64 * h;
        let (s_ii, w) = if i == 0 {
            let kappa = t1.cos() / t1.sin();
            (
                p_half(0) / h + problem.p.value(0.0) * kappa + 0.5 * h * problem.q.value(0.0),
                0.5 * h,
            )
        } else if i == g - 1 {
            let kappa = t2.cos() / t2.sin();
            (
                p_half(g - 2) / h + problem.p.value(1.0) * kappa + 0.5 * h * problem.q.value(1.0),
                0.5 * h,
            )
        } else {
            ((p_half(i - 1) + p_half(i)) / h + h * problem.q.value(x), h)
        };
        diag.push(s_ii / w);
        weight.push(w);
    }
    let sqrt_w: Vec<f64> = weight.iter().map(|w| w.sqrt()).collect();
    let off = (lo..hi)
        .map(|i| -p_half(i) / h / (sqrt_w[i - lo] * sqrt_w[i + 1 - lo]))
        .collect();
    Discretization {
        lo,
        hi,
        diag,
        off,
        sqrt_w,
    }
}

/// Solves `(T - σI) x = b` for symmetric tridiagonal `T` by LU with partial
/// pivoting; zero pivots are nudged so the solve always completes, which is
/// what inverse iteration needs.
fn shifted_tridiagonal_solve(diag: &[f64], off: &[f64], sigma: f64, b: &mut [f64]) {
    let n = diag.len();
    let scale = diag.iter().map(|d| d.abs()).fold(1.0, f64::max);
    let tiny = f64::EPSILON * scale;
    let mut d: Vec<f64> = diag.iter().map(|v| v - sigma).collect();
    let mut dl = off.to_vec();
    let mut du = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut swapped = vec![false; n.saturating_sub(1)];
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let fact = dl[i] / d[i];
            dl[i] = fact;
            d[i + 1] -= fact * du[i];
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = fact;
            let temp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = temp - fact * d[i + 1];
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            swapped[i] = true;
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    for i in 0..n.saturating_sub(1) {
        if swapped[i] {
            let temp = b[i];
            b[i] = b[i + 1];
            b[i + 1] = temp - dl[i] * b[i];
        } else {
            b[i + 1] -= dl[i] * b[i];
        }
    }
    b[n - 1] /= d[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
}

fn inverse_iteration(diag: &[f64], off: &[f64], sigma: f64, seed: usize) -> Vec<f64> {
    let n = diag.len();
    // Deterministic, non-degenerate start vector.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 * 0.7548776662 + seed as f64 * 0.5698402910).fract() - 0.5))
        .collect();
    for _ in 0..3 {
        shifted_tridiagonal_solve(diag, off, sigma, &mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// First `n_modes` eigenpairs of the operator, eigenfunctions normalised in
/// the trapezoid inner product with the first interior sample positive.
pub fn compute_eigenbasis(problem: &SLProblem, n_modes: usize) -> Result<EigenBasis> {
    problem.validate()?;
    if n_modes == 0 {
        return Err(Error::invalid("n_modes must be at least 1"));
    }
    let disc = discretize(problem);
    let n_unknowns = disc.diag.len();
    if n_modes > n_unknowns {
        return Err(Error::invalid(format!(
            "requested {n_modes} modes but the grid only has {n_unknowns} unknowns"
        )));
    }
    let lambdas: Vec<f64> = tridiagonal_eigenvalues(&disc.diag, &disc.off)?[..n_modes].to_vec();

    let g = problem.grid_points;
    let h = problem.spacing();
    let (t1, t2) = problem.clamped_angles();
    let modes: Vec<Vec<f64>> = lambdas
        .par_iter()
        .enumerate()
        .map(|(k, &lam)| {
            let v = inverse_iteration(&disc.diag, &disc.off, lam, k);
            let mut f = vec![0.0; g];
            for (j, i) in (disc.lo..=disc.hi).enumerate() {
                f[i] = v[j] / disc.sqrt_w[j];
            }
            let reference = f[1..]
                .iter()
                .copied()
                .find(|x| x.abs() > 1e-12)
                .unwrap_or(1.0);
            if reference < 0.0 {
                f.iter_mut().for_each(|x| *x = -*x);
            }
            f
        })
        .collect();

    let traces = modes
        .iter()
        .map(|f| {
            let phi0 = f[0];
            let phi1 = f[g - 1];
            let dphi0 = if t1.sin() > 0.0 {
                t1.cos() / t1.sin() * phi0
            } else {
                (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
            };
            let dphi1 = if t2.sin() > 0.0 {
                -t2.cos() / t2.sin() * phi1
            } else {
                (3.0 * f[g - 1] - 4.0 * f[g - 2] + f[g - 3]) / (2.0 * h)
            };
            Traces {
                phi0,
                dphi0,
                phi1,
                dphi1,
            }
        })
        .collect();

    Ok(EigenBasis {
        grid: problem.grid(),
        weights: trapezoid_weights(g),
        lambdas,
        modes,
        traces,
        theta1: t1,
        theta2: t2,
    })
}

/// Eigenvalues on `grid_points` and on the grid with half the spacing,
/// combined by Richardson extrapolation `(4 λ_fine - λ_coarse) / 3`.
/// `grid_points` is the fine grid; it must be odd so the coarse grid nests.
pub fn richardson_eigenvalues(problem: &SLProblem, n_modes: usize) -> Result<Vec<f64>> {
    let fine = problem.grid_points;
    if fine % 2 == 0 || fine < 5 {
        return Err(Error::invalid(
            "Richardson extrapolation needs an odd fine grid with at least 5 points",
        ));
    }
    let coarse = problem.with_grid((fine + 1) / 2);
    let l_f = eigenvalues_only(problem, n_modes)?;
    let l_c = eigenvalues_only(&coarse, n_modes)?;
    Ok(l_f.iter().zip(&l_c).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

/// First `n_modes` eigenvalues without eigenvectors.
pub fn eigenvalues_only(problem: &SLProblem, n_modes: usize) -> Result<Vec<f64>> {
    problem.validate()?;
    let disc = discretize(problem);
    if n_modes > disc.diag.len() {
        return Err(Error::invalid(format!(
            "requested {n_modes} modes but the grid only has {} unknowns",
            disc.diag.len()
        )));
    }
    Ok(tridiagonal_eigenvalues(&disc.diag, &disc.off)?[..n_modes].to_vec())
}

/// `⟨f, φ_n⟩` by the trapezoid rule on the basis grid (`n` is one-based).
pub fn project(f: &[f64], basis: &EigenBasis, n: usize) -> Result<f64> {
    if f.len() != basis.grid.len() {
        return Err(Error::invalid(format!(
            "grid function has {} samples, basis grid has {}",
            f.len(),
            basis.grid.len()
        )));
    }
    if n == 0 || n > basis.len() {
        return Err(Error::invalid(format!(
            "mode index {n} outside 1..={}",
            basis.len()
        )));
    }
    Ok(basis.inner(f, &basis.modes[n - 1]))
}

/// Projections onto all computed modes.
pub fn project_all(f: &[f64], basis: &EigenBasis) -> Result<Vec<f64>> {
    if f.len() != basis.grid.len() {
        return Err(Error::invalid(format!(
            "grid function has {} samples, basis grid has {}",
            f.len(),
            basis.grid.len()
        )));
    }
    Ok(basis.modes.iter().map(|phi| basis.inner(f, phi)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylCheck {
    pub n: usize,
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    /// `λ_n - lower`.
    pub lower_margin: f64,
    /// `upper - λ_n`.
    pub upper_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylReport {
    pub modes: Vec<WeylCheck>,
    pub pass: bool,
}

impl WeylReport {
    pub fn first_failure(&self) -> Option<usize> {
        self.modes.iter().find(|m| !m.pass).map(|m| m.n)
    }
}

/// Checks `π²(n-1)² p_* ≤ λ_n ≤ π² n² p^* + q^*` for every computed mode.
/// A relative slack of `1e-10` absorbs rounding at the upper envelope.
pub fn validate_weyl_bounds(basis: &EigenBasis, p_low: f64, p_high: f64, q_high: f64) -> WeylReport {
    const SLACK: f64 = 1e-10;
    let modes: Vec<WeylCheck> = basis
        .lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let n = k + 1;
            let lower = PI * PI * (k * k) as f64 * p_low;
            let upper = PI * PI * (n * n) as f64 * p_high + q_high;
            let tol = SLACK * upper.abs().max(1.0);
            WeylCheck {
                n,
                lambda,
                lower,
                upper,
                lower_margin: lambda - lower,
                upper_margin: upper - lambda,
                pass: lambda >= lower - tol && lambda <= upper + tol,
            }
        })
        .collect();
    let pass = modes.iter().all(|m| m.pass);
    WeylReport { modes, pass }
}
