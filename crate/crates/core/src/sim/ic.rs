use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{project_all, Coefficient, EigenBasis};

/// Time factor `g(τ)` of a separable initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    /// `g(τ) = value`.
    Constant { value: f64 },
    /// `g(τ) = amplitude · cos(omega · τ + phase)`.
    Cosine { amplitude: f64, omega: f64, phase: f64 },
}

impl TimeProfile {
    pub fn value(&self, tau: f64) -> f64 {
        match self {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Cosine { amplitude, omega, phase } => amplitude * (omega * tau + phase).cos(),
        }
    }
}

/// Initial history `z0(τ, x) = g(τ) f(x)` on `[-h, 0] × [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub time: TimeProfile,
    pub space: Coefficient,
}

impl InitialCondition {
    pub fn zero() -> Self {
        Self {
            time: TimeProfile::Constant { value: 0.0 },
            space: Coefficient::constant(0.0),
        }
    }

    pub fn value(&self, tau: f64, x: f64) -> f64 {
        self.time.value(tau) * self.space.value(x)
    }

    /// Projections `⟨f, φ_n⟩` of the spatial factor onto the first `m` modes.
    pub fn spatial_coefficients(&self, basis: &EigenBasis, m: usize) -> Result<Vec<f64>> {
        if m > basis.len() {
            return Err(Error::invalid(format!(
                "initial condition needs {m} modes, basis has {}",
                basis.len()
            )));
        }
        let f: Vec<f64> = basis.grid.iter().map(|&x| self.space.value(x)).collect();
        let mut coeffs = project_all(&f, basis)?;
        coeffs.truncate(m);
        Ok(coeffs)
    }

    /// `cos θ₂ f(1) + sin θ₂ f'(1)`, so that `u0(τ) = g(τ)` times this.
    ///
    /// For a sampled spatial profile `f'(1)` is a one-sided second-order
    /// difference on `grid`.
    pub fn boundary_factor(&self, theta2: f64, grid: &[f64]) -> f64 {
        let f1 = self.space.value(1.0);
        let df1 = self.space.derivative(1.0).unwrap_or_else(|| {
            let n = grid.len();
            let h = grid[n - 1] - grid[n - 2];
            let v = |i: usize| self.space.value(grid[i]);
            (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
        });
        theta2.cos() * f1 + theta2.sin() * df1
    }

    /// `u0(τ)`.
    pub fn input_history(&self, tau: f64, theta2: f64, grid: &[f64]) -> f64 {
        self.time.value(tau) * self.boundary_factor(theta2, grid)
    }
}
