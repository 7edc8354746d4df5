//! Spectral reduction of the delayed plant and the finite-dimensional
//! closed-loop model used by the certificate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_general, kalman_rank, place_poles_siso, Complex, DenseMatrix, KalmanRank, PlacementMode};
use crate::spectral::{project_all, EigenBasis, SLProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measurement {
    /// `y_D(t) = z(t, 0)`.
    Dirichlet,
    /// `y_N(t) = z_x(t, 0)`.
    Neumann,
}

impl Measurement {
    pub fn name(self) -> &'static str {
        match self {
            Measurement::Dirichlet => "dirichlet",
            Measurement::Neumann => "neumann",
        }
    }

    /// Output trace of one eigenfunction.
    pub fn trace(self, basis: &EigenBasis, n: usize) -> f64 {
        let t = &basis.traces[n];
        match self {
            Measurement::Dirichlet => t.phi0,
            Measurement::Neumann => t.dphi0,
        }
    }

    /// Scaling applied to the high-mode observation error (`√λ` or `λ`).
    pub fn error_scale(self, lambda: f64) -> f64 {
        match self {
            Measurement::Dirichlet => lambda.sqrt(),
            Measurement::Neumann => lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub sl: SLProblem,
    /// Coefficient of the delayed reaction term.
    pub c: f64,
    /// State delay in seconds.
    pub h: f64,
    pub measurement: Measurement,
}

impl PlantConfig {
    pub fn new(sl: SLProblem, c: f64, h: f64, measurement: Measurement) -> Result<Self> {
        let plant = Self { sl, c, h, measurement };
        plant.validate()?;
        Ok(plant)
    }

    /// Same plant discretised on a different grid.
    pub fn with_grid(&self, grid_points: usize) -> Self {
        Self {
            sl: self.sl.with_grid(grid_points),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sl.validate()?;
        if !(self.c.is_finite() && self.c != 0.0) {
            return Err(Error::invalid(format!("c must be finite and nonzero, got {}", self.c)));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid(format!("h must be positive, got {}", self.h)));
        }
        let q_min = self
            .sl
            .grid()
            .iter()
            .map(|&x| self.sl.q.value(x))
            .fold(f64::INFINITY, f64::min);
        if !(q_min > 0.0) {
            return Err(Error::invalid(format!(
                "q must be strictly positive once q_c is split off; min over grid is {q_min}"
            )));
        }
        let t1 = self.sl.theta1;
        match self.measurement {
            Measurement::Dirichlet if t1 <= 0.0 => Err(Error::invalid(
                "theta1 must lie in (0, pi/2] for a Dirichlet measurement",
            )),
            Measurement::Neumann if t1 >= std::f64::consts::FRAC_PI_2 - 1e-12 => Err(Error::invalid(
                "theta1 must lie in [0, pi/2) for a Neumann measurement",
            )),
            _ => Ok(()),
        }
    }
}

fn lift_denominator(theta2: f64) -> f64 {
    theta2.cos() + 2.0 * theta2.sin()
}

/// Fourth-order finite-difference derivative of samples on a uniform grid.
pub(crate) fn sampled_derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    if n < 5 {
        return (0..n)
            .map(|i| {
                let (a, b) = if i == 0 { (0, 1) } else if i == n - 1 { (n - 2, n - 1) } else { (i - 1, i + 1) };
                (f[b] - f[a]) / ((b - a) as f64 * h)
            })
            .collect();
    }
    (0..n)
        .map(|i| match i {
            0 => (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h),
            1 => (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h),
            _ if i == n - 2 => {
                (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / (12.0 * h)
            }
            _ if i == n - 1 => {
                (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5])
                    / (12.0 * h)
            }
            _ => (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h),
        })
        .collect()
}

/// Samples `a(x)` and `b(x)` of the boundary lift on the problem grid.
pub fn build_shape_functions(plant: &PlantConfig) -> (Vec<f64>, Vec<f64>) {
    let sl = &plant.sl;
    let grid = sl.grid();
    let denom = lift_denominator(sl.theta2);
    let dp: Vec<f64> = if sl.p.is_closed_form() {
        grid.iter().map(|&x| sl.p.derivative(x).unwrap_or(0.0)).collect()
    } else {
        let samples: Vec<f64> = grid.iter().map(|&x| sl.p.value(x)).collect();
        sampled_derivative(&samples, sl.spacing())
    };
    let a = grid
        .iter()
        .zip(&dp)
        .map(|(&x, &dpx)| (2.0 * sl.p.value(x) + 2.0 * x * dpx - x * x * sl.q_tilde(x)) / denom)
        .collect();
    let b = grid.iter().map(|&x| -x * x / denom).collect();
    (a, b)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReduction {
    pub a_fn: Vec<f64>,
    pub b_fn: Vec<f64>,
    pub a_n: Vec<f64>,
    pub b_n: Vec<f64>,
    /// `a_n + (-λ_n + q_c) b_n`.
    pub beta_n: Vec<f64>,
    /// `p(1)(-cos θ₂ φ_n'(1) + sin θ₂ φ_n(1))`, kept for cross-checking.
    pub beta_boundary: Vec<f64>,
    pub norm_a_sq: f64,
    pub norm_b_sq: f64,
    /// `residual_a[N] = ‖R_N a‖²` for `N = 0..=modes`.
    pub residual_a: Vec<f64>,
    pub residual_b: Vec<f64>,
}

impl SpectralReduction {
    pub fn len(&self) -> usize {
        self.a_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_n.is_empty()
    }

    /// `(‖R_N a‖², ‖R_N b‖²)`.
    pub fn residuals(&self, n: usize) -> Result<(f64, f64)> {
        if n >= self.residual_a.len() {
            return Err(Error::invalid(format!(
                "residual requested at N = {n} but only {} modes are projected",
                self.len()
            )));
        }
        Ok((self.residual_a[n], self.residual_b[n]))
    }

    /// Largest `|β_n - β_n^boundary| / (1 + |β_n|)` over the first `n` modes.
    pub fn beta_consistency(&self, n: usize) -> f64 {
        self.beta_n
            .iter()
            .zip(&self.beta_boundary)
            .take(n)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max)
    }
}

/// `max(0, ‖f‖² - Σ_{n≤N} f_n²)`.
pub fn residual_norm(basis: &EigenBasis, f: &[f64], coeffs: &[f64], n: usize) -> Result<f64> {
    if n > coeffs.len() {
        return Err(Error::invalid(format!(
            "residual_norm: N = {n} but only {} coefficients given",
            coeffs.len()
        )));
    }
    let total = basis.inner(f, f);
    let head: f64 = coeffs[..n].iter().map(|c| c * c).sum();
    Ok((total - head).max(0.0))
}

fn parseval_tails(total: f64, coeffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.len() + 1);
    let mut acc = 0.0;
    out.push(total.max(0.0));
    for c in coeffs {
        acc += c * c;
        out.push((total - acc).max(0.0));
    }
    out
}

pub fn build_reduction(plant: &PlantConfig, basis: &EigenBasis) -> Result<SpectralReduction> {
    if basis.grid.len() != plant.sl.grid_points {
        return Err(Error::invalid("basis grid does not match the plant grid"));
    }
    let (a_fn, b_fn) = build_shape_functions(plant);
    let a_n = project_all(&a_fn, basis)?;
    let b_n = project_all(&b_fn, basis)?;
    let q_c = plant.sl.q_c;
    let beta_n = a_n
        .iter()
        .zip(&b_n)
        .zip(&basis.lambdas)
        .map(|((a, b), l)| a + (-l + q_c) * b)
        .collect();
    let (c2, s2) = (plant.sl.theta2.cos(), plant.sl.theta2.sin());
    let p1 = plant.sl.p.value(1.0);
    let beta_boundary = basis
        .traces
        .iter()
        .map(|t| p1 * (-c2 * t.dphi1 + s2 * t.phi1))
        .collect();
    let norm_a_sq = basis.inner(&a_fn, &a_fn);
    let norm_b_sq = basis.inner(&b_fn, &b_fn);
    let residual_a = parseval_tails(norm_a_sq, &a_n);
    let residual_b = parseval_tails(norm_b_sq, &b_n);
    Ok(SpectralReduction {
        a_fn,
        b_fn,
        a_n,
        b_n,
        beta_n,
        beta_boundary,
        norm_a_sq,
        norm_b_sq,
        residual_a,
        residual_b,
    })
}

/// Smallest `N0 ≥ 1` with `-λ_n + q_c + |c| < 0` for every computed `n > N0`.
pub fn choose_n0(lambdas: &[f64], q_c: f64, c: f64) -> Result<usize> {
    let threshold = q_c + c.abs();
    let last_bad = lambdas.iter().rposition(|&l| l <= threshold).map_or(0, |i| i + 1);
    let n0 = last_bad.max(1);
    if n0 >= lambdas.len() {
        return Err(Error::invalid(format!(
            "cannot choose N0: the first {} computed eigenvalues do not exceed q_c + |c| = {threshold}; compute more modes",
            lambdas.len()
        )));
    }
    Ok(n0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Feedback gain `K` (length `N0`).
    pub k: Vec<f64>,
    /// Observer gain `L` (length `N0`).
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncatedModel {
    pub n0: usize,
    pub n: usize,
    pub measurement: Measurement,
    pub a0: DenseMatrix,
    pub a1: DenseMatrix,
    pub b0: DenseMatrix,
    pub c0: DenseMatrix,
    pub c1t: DenseMatrix,
    pub k: DenseMatrix,
    pub l: DenseMatrix,
    pub f1: DenseMatrix,
    pub f2: DenseMatrix,
    pub f3: DenseMatrix,
    pub lcal: DenseMatrix,
    pub ktilde: DenseMatrix,
    pub e: DenseMatrix,
}

pub fn assemble_truncated(
    reduction: &SpectralReduction,
    basis: &EigenBasis,
    gains: &Gains,
    n0: usize,
    n: usize,
    measurement: Measurement,
    q_c: f64,
) -> Result<TruncatedModel> {
    if n0 == 0 || n < n0 + 1 {
        return Err(Error::invalid(format!("need 1 <= N0 < N, got N0 = {n0}, N = {n}")));
    }
    if n > basis.len() || n > reduction.len() {
        return Err(Error::invalid(format!(
            "N = {n} exceeds the {} computed modes",
            basis.len().min(reduction.len())
        )));
    }
    if gains.k.len() != n0 || gains.l.len() != n0 {
        return Err(Error::invalid(format!(
            "gains have lengths K: {}, L: {} but N0 = {n0}",
            gains.k.len(),
            gains.l.len()
        )));
    }
    let lam = &basis.lambdas;
    let a0 = DenseMatrix::from_diag(&lam[..n0].iter().map(|l| -l + q_c).collect::<Vec<_>>());
    let a1 = DenseMatrix::from_diag(&lam[n0..n].iter().map(|l| -l + q_c).collect::<Vec<_>>());
    let b0 = DenseMatrix::column(&reduction.beta_n[..n0]);
    let c0 = DenseMatrix::row(&(0..n0).map(|i| measurement.trace(basis, i)).collect::<Vec<_>>());
    let c1t = DenseMatrix::row(
        &(n0..n)
            .map(|i| measurement.trace(basis, i) / measurement.error_scale(lam[i]))
            .collect::<Vec<_>>(),
    );
    let k = DenseMatrix::row(&gains.k);
    let l = DenseMatrix::column(&gains.l);

    let lc0 = l.matmul(&c0);
    let f1 = DenseMatrix::from_blocks(&[
        vec![Some(&(&a0 + &b0.matmul(&k))), Some(&lc0)],
        vec![None, Some(&(&a0 - &lc0))],
    ])?;
    let lc1 = l.matmul(&c1t);
    let f2 = DenseMatrix::from_blocks(&[vec![Some(&lc1)], vec![Some(&-&lc1)]])?;
    let f3 = a1.clone();
    let lcal = DenseMatrix::from_blocks(&[vec![Some(&l)], vec![Some(&-&l)]])?;
    let ktilde = DenseMatrix::from_blocks(&[vec![Some(&k), Some(&DenseMatrix::zeros(1, n0))]])?;
    let e = ktilde.matmul(&DenseMatrix::from_blocks(&[vec![Some(&f1), Some(&f2), Some(&lcal)]])?);
    Ok(TruncatedModel {
        n0,
        n,
        measurement,
        a0,
        a1,
        b0,
        c0,
        c1t,
        k,
        l,
        f1,
        f2,
        f3,
        lcal,
        ktilde,
        e,
    })
}

impl TruncatedModel {
    /// Eigenvalues of `F1`, rightmost first.
    pub fn f1_spectrum(&self) -> Result<Vec<Complex>> {
        eig_general(&self.f1)
    }

    /// Fails with [`Error::GainsTooSlow`] unless every eigenvalue of `F1`
    /// has real part below `-|c|`.
    pub fn check_gains(&self, c: f64) -> Result<Vec<Complex>> {
        let spec = self.f1_spectrum()?;
        let rightmost = spec.first().map_or(f64::NEG_INFINITY, |z| z.re);
        if rightmost >= -c.abs() {
            return Err(Error::GainsTooSlow(rightmost));
        }
        Ok(spec)
    }

    /// Kalman ranks of `(A0, 𝔅0)` and `(A0ᵀ, C0ᵀ)`.
    pub fn kalman(&self) -> Result<(KalmanRank, KalmanRank)> {
        Ok((
            kalman_rank(&self.a0, &self.b0)?,
            kalman_rank(&self.a0.transpose(), &self.c0.transpose())?,
        ))
    }

    /// Plain-text dump: one labelled block per matrix, rows on separate lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# truncated model N0={} N={} measurement={}", self.n0, self.n, self.measurement.name());
        for (name, m) in [
            ("A0", &self.a0),
            ("A1", &self.a1),
            ("B0", &self.b0),
            ("C0", &self.c0),
            ("C1t", &self.c1t),
            ("K", &self.k),
            ("L", &self.l),
            ("F1", &self.f1),
            ("F2", &self.f2),
            ("F3", &self.f3),
            ("Lcal", &self.lcal),
            ("Ktilde", &self.ktilde),
            ("E", &self.e),
        ] {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            for i in 0..m.rows() {
                let row: Vec<String> = m.row_slice(i).iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }
}

/// Real targets `-(|c| + ρ + jσ)`, `j = 0..N0-1`.
pub fn default_targets(c: f64, n0: usize, rho: f64, sigma: f64) -> Vec<Complex> {
    (0..n0)
        .map(|j| Complex::real(-(c.abs() + rho + j as f64 * sigma)))
        .collect()
}

/// Pole placement of `K` on `(A0, 𝔅0)` and of `L` on the dual pair.
pub fn synthesize_gains(
    reduction: &SpectralReduction,
    basis: &EigenBasis,
    n0: usize,
    q_c: f64,
    c: f64,
    measurement: Measurement,
    targets_k: &[Complex],
    targets_l: &[Complex],
) -> Result<Gains> {
    for t in targets_k.iter().chain(targets_l) {
        if t.re >= -c.abs() {
            return Err(Error::invalid(format!(
                "pole target {} + {}i does not satisfy Re < -|c| = {}",
                t.re,
                t.im,
                -c.abs()
            )));
        }
    }
    if n0 > basis.len() || n0 > reduction.len() {
        return Err(Error::invalid("N0 exceeds the computed modes"));
    }
    let a0 = DenseMatrix::from_diag(&basis.lambdas[..n0].iter().map(|l| -l + q_c).collect::<Vec<_>>());
    let b0 = &reduction.beta_n[..n0];
    let c0: Vec<f64> = (0..n0).map(|i| measurement.trace(basis, i)).collect();
    let k = place_poles_siso(&a0, b0, targets_k, PlacementMode::Feedback)?;
    let l = place_poles_siso(&a0.transpose(), &c0, targets_l, PlacementMode::Observer)?;
    Ok(Gains { k, l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{compute_eigenbasis, Coefficient};
    use std::f64::consts::PI;

    fn reference_plant(measurement: Measurement, grid: usize) -> PlantConfig {
        let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(1.0), 2.0, PI / 3.0, 0.0, grid)
            .unwrap();
        PlantConfig::new(sl, 3.0, 1.0, measurement).unwrap()
    }

    #[test]
    fn shape_functions_reference_plant() {
        let plant = reference_plant(Measurement::Dirichlet, 101);
        let (a, b) = build_shape_functions(&plant);
        for (i, x) in plant.sl.grid().iter().enumerate() {
            assert!((a[i] - (2.0 + x * x)).abs() < 1e-14);
            assert!((b[i] + x * x).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_functions_neumann_right_end() {
        let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(1.0), 1.0, 0.5, PI / 2.0, 51)
            .unwrap();
        let plant = PlantConfig::new(sl, 1.0, 1.0, Measurement::Dirichlet).unwrap();
        let (a, b) = build_shape_functions(&plant);
        for (i, x) in plant.sl.grid().iter().enumerate() {
            assert!((a[i] - 1.0).abs() < 1e-14);
            assert!((b[i] + x * x / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sampled_derivative_is_fourth_order() {
        let h = 0.01;
        let f: Vec<f64> = (0..101).map(|i| (i as f64 * h).sin()).collect();
        let d = sampled_derivative(&f, h);
        for (i, v) in d.iter().enumerate() {
            assert!((v - (i as f64 * h).cos()).abs() < 1e-8, "at {i}: {v}");
        }
    }

    #[test]
    fn choose_n0_examples() {
        assert_eq!(choose_n0(&[1.0, 2.0, 50.0, 60.0], 0.0, 3.0).unwrap(), 2);
        assert_eq!(choose_n0(&[0.0, 5.0, 20.0], -10.0, 1.0).unwrap(), 1);
        assert!(choose_n0(&[1.0, 2.0], 0.0, 3.0).is_err());
    }

    #[test]
    fn plant_validation() {
        let sl = SLProblem::new(Coefficient::constant(1.0), Coefficient::constant(1.0), 2.0, 0.0, 0.0, 51).unwrap();
        assert!(PlantConfig::new(sl.clone(), 3.0, 1.0, Measurement::Dirichlet).is_err());
        assert!(PlantConfig::new(sl.clone(), 3.0, 1.0, Measurement::Neumann).is_ok());
        assert!(PlantConfig::new(sl.clone(), 0.0, 1.0, Measurement::Neumann).is_err());
        assert!(PlantConfig::new(sl, 3.0, 0.0, Measurement::Neumann).is_err());
    }

    #[test]
    fn scalar_truncated_model_blocks() {
        let plant = reference_plant(Measurement::Dirichlet, 401);
        let basis = compute_eigenbasis(&plant.sl, 4).unwrap();
        let red = build_reduction(&plant, &basis).unwrap();
        let gains = Gains { k: vec![-2.2316], l: vec![4.7450] };
        let m = assemble_truncated(&red, &basis, &gains, 1, 2, Measurement::Dirichlet, 2.0).unwrap();
        let l1 = basis.lambdas[0];
        let phi0 = basis.traces[0].phi0;
        assert!((m.f1[(0, 0)] - (-l1 + 2.0 + red.beta_n[0] * -2.2316)).abs() < 1e-12);
        assert!((m.f1[(0, 1)] - 4.7450 * phi0).abs() < 1e-12);
        assert_eq!(m.f1[(1, 0)], 0.0);
        assert!((m.f1[(1, 1)] - (-l1 + 2.0 - 4.7450 * phi0)).abs() < 1e-12);
        assert_eq!(m.e.cols(), 2 * 1 + 1 + 1);
        assert!(m.check_gains(3.0).is_ok());
        assert!(m.to_text().contains("F1 2 2"));
        assert!(assemble_truncated(&red, &basis, &gains, 1, 1, Measurement::Dirichlet, 2.0).is_err());
        let bad = Gains { k: vec![1.0, 2.0], l: vec![1.0] };
        assert!(assemble_truncated(&red, &basis, &bad, 1, 2, Measurement::Dirichlet, 2.0).is_err());
    }
}
