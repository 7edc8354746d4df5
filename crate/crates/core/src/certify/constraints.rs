use serde::{Deserialize, Serialize};

use super::{ConstraintProblem, Variables};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetric_eigenvalues, DenseMatrix};
use crate::model::Measurement;

/// Relative strictness gap: a strict inequality `X ≺ 0` is accepted when
/// `λ_max(X) < -STRICT_GAP (1 + ‖X‖_max)`.
pub const STRICT_GAP: f64 = 1e-7;

/// Tolerance on the smallest eigenvalue of the semidefinite variables.
const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub psi: DenseMatrix,
    pub theta1: DenseMatrix,
    pub theta2: DenseMatrix,
    pub theta3: f64,
    pub theta4: f64,
    /// Neumann measurement only.
    pub theta5: Option<f64>,
}

impl ConstraintSet {
    /// Largest entrywise difference to another assembly.
    pub fn max_difference(&self, other: &Self) -> f64 {
        let m = |a: &DenseMatrix, b: &DenseMatrix| (a - b).max_abs();
        let mut d = m(&self.psi, &other.psi)
            .max(m(&self.theta1, &other.theta1))
            .max(m(&self.theta2, &other.theta2))
            .max((self.theta3 - other.theta3).abs())
            .max((self.theta4 - other.theta4).abs());
        match (self.theta5, other.theta5) {
            (Some(a), Some(b)) => d = d.max((a - b).abs()),
            (None, None) => {}
            _ => d = f64::INFINITY,
        }
        d
    }
}

fn check_dims(problem: &ConstraintProblem, vars: &Variables) -> Result<()> {
    let m = 2 * problem.model.n0;
    let k = problem.model.n - problem.model.n0;
    let shape = |x: &DenseMatrix| (x.rows(), x.cols());
    for (name, x, d) in [("P", &vars.p, m), ("Q1", &vars.q1, m), ("Q2", &vars.q2, k)] {
        if shape(x) != (d, d) {
            return Err(Error::invalid(format!(
                "{name} is {}x{}, expected {d}x{d}",
                x.rows(),
                x.cols()
            )));
        }
    }
    Ok(())
}

/// Assembles `Ψ, Θ1, …, Θ4` (and `Θ5` for a Neumann measurement).
pub fn assemble_constraints(problem: &ConstraintProblem, vars: &Variables) -> Result<ConstraintSet> {
    check_dims(problem, vars)?;
    let md = &problem.model;
    let a = &problem.alphas;
    let c = problem.c.abs();
    let (ra, rb) = (problem.residual_a, problem.residual_b);
    let m = 2 * md.n0;
    let k = md.n - md.n0;
    let p = &vars.p;
    let kk = md.ktilde.transpose().matmul(&md.ktilde);

    let psi1 = &(&(&(&md.f1.transpose().matmul(p) + &p.matmul(&md.f1)) + &p.scale(c)) + &vars.q1)
        + &kk.scale(a.alpha2 * vars.gamma * ra);
    let psi2 = &(&md.f3.scale(2.0) + &DenseMatrix::identity(k).scale(c)).scale(vars.r1) + &vars.q2;
    let pf2 = p.matmul(&md.f2);
    let pl = p.matmul(&md.lcal);
    let mut psi = DenseMatrix::zeros(m + k + 1, m + k + 1);
    psi.set_block(0, 0, &psi1);
    psi.set_block(0, m, &pf2);
    psi.set_block(m, 0, &pf2.transpose());
    psi.set_block(m, m, &psi2);
    psi.set_block(0, m + k, &pl);
    psi.set_block(m + k, 0, &pl.transpose());
    psi[(m + k, m + k)] = -vars.beta;
    let psi = &psi + &md.e.transpose().matmul(&md.e).scale(2.0 * a.alpha3 * vars.gamma * rb);

    let theta1 = &(&p.scale(c) - &vars.q1) + &kk.scale((2.0 * a.alpha3 * c + a.alpha4) * vars.gamma * c * rb);
    let theta2 = &DenseMatrix::identity(k).scale(vars.r1 * c) - &vars.q2;
    let theta3 = vars.gamma * a.alpha1 * c - vars.r2;
    let lam = problem.lambda_next;
    let base = 2.0 * vars.gamma * (-a.c_frak * lam + problem.q_c) + vars.r2 / lam;
    let mt = problem.tails.value;
    let (theta4, theta5) = match problem.measurement() {
        Measurement::Dirichlet => (base + vars.beta * mt, None),
        Measurement::Neumann => {
            let eps = problem
                .tails
                .epsilon
                .ok_or_else(|| Error::invalid("Neumann constraints need epsilon"))?;
            (
                base + vars.beta * mt * lam.powf(0.5 + eps),
                Some(2.0 * vars.gamma * a.c_frak - vars.beta * mt / lam.powf(0.5 - eps)),
            )
        }
    };
    Ok(ConstraintSet {
        psi: psi.symmetrize(),
        theta1: theta1.symmetrize(),
        theta2,
        theta3,
        theta4,
        theta5,
    })
}

/// One constraint's extreme value and normalised slack.
///
/// For `X ≺ 0` the extreme value is `λ_max(X)` and the slack is
/// `-λ_max/(1 + ‖X‖_max)`; for `X ≻ 0` or a positive scalar it is `λ_min`
/// (or the value) and the slack is `λ_min/(1 + ‖X‖_max)`. Strict constraints
/// pass when the slack exceeds [`STRICT_GAP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub extreme: f64,
    pub slack: f64,
    /// Semidefinite constraints (`Q1, Q2 ⪰ 0`) only need `slack ≥ -1e-12`.
    pub strict: bool,
    pub pass: bool,
}

fn negative(name: &str, x: &DenseMatrix) -> Result<ConstraintMargin> {
    let ev = symmetric_eigenvalues(x)?;
    let extreme = ev.last().copied().unwrap_or(0.0);
    let slack = -extreme / (1.0 + x.max_abs());
    Ok(ConstraintMargin {
        name: name.into(),
        extreme,
        slack,
        strict: true,
        pass: slack > STRICT_GAP,
    })
}

fn positive(name: &str, x: &DenseMatrix, strict: bool) -> Result<ConstraintMargin> {
    let ev = symmetric_eigenvalues(x)?;
    let extreme = ev.first().copied().unwrap_or(0.0);
    let slack = extreme / (1.0 + x.max_abs());
    let pass = if strict {
        slack > STRICT_GAP && cholesky(x).is_some()
    } else {
        slack >= -PSD_TOL
    };
    Ok(ConstraintMargin {
        name: name.into(),
        extreme,
        slack,
        strict,
        pass,
    })
}

fn scalar(name: &str, value: f64, sign: f64) -> ConstraintMargin {
    let slack = sign * value / (1.0 + value.abs());
    ConstraintMargin {
        name: name.into(),
        extreme: value,
        slack,
        strict: true,
        pass: slack > STRICT_GAP,
    }
}

/// Margins of every constraint, in a fixed order.
pub fn evaluate_margins(problem: &ConstraintProblem, vars: &Variables) -> Result<Vec<ConstraintMargin>> {
    let set = assemble_constraints(problem, vars)?;
    let mut out = vec![
        negative("Psi", &set.psi)?,
        negative("Theta1", &set.theta1)?,
        negative("Theta2", &set.theta2)?,
        scalar("Theta3", set.theta3, -1.0),
        scalar("Theta4", set.theta4, -1.0),
    ];
    if let Some(t5) = set.theta5 {
        out.push(scalar("Theta5", t5, 1.0));
    }
    out.push(positive("P", &vars.p, true)?);
    out.push(positive("Q1", &vars.q1, false)?);
    out.push(positive("Q2", &vars.q2, false)?);
    for (name, v) in [("r1", vars.r1), ("r2", vars.r2), ("beta", vars.beta), ("gamma", vars.gamma)] {
        out.push(scalar(name, v, 1.0));
    }
    Ok(out)
}

/// Largest violation of the tail-mode domination chain over the supplied
/// eigenvalues `λ_n`, `n ≥ N+1`.
///
/// Dirichlet: `Γ_n ≤ Θ4`. Neumann: `Γ_n ≤ -Θ5 λ_n + 2γ q_c + r2/λ_n ≤ Θ4`.
/// A non-positive return value means the chain holds.
pub fn gamma_domination(problem: &ConstraintProblem, vars: &Variables, tail_lambdas: &[f64]) -> Result<f64> {
    let set = assemble_constraints(problem, vars)?;
    let a = &problem.alphas;
    let mt = problem.tails.value;
    let mut worst = f64::NEG_INFINITY;
    for &lam in tail_lambdas {
        let base = 2.0 * vars.gamma * (-a.c_frak * lam + problem.q_c) + vars.r2 / lam;
        match (problem.measurement(), set.theta5) {
            (Measurement::Dirichlet, _) => {
                let gamma_n = base + vars.beta * mt;
                worst = worst.max(gamma_n - set.theta4);
            }
            (Measurement::Neumann, Some(t5)) => {
                let eps = problem.tails.epsilon.unwrap_or(0.5);
                let gamma_n = base + vars.beta * mt * lam.powf(0.5 + eps);
                let bound = -t5 * lam + 2.0 * vars.gamma * problem.q_c + vars.r2 / lam;
                worst = worst.max(gamma_n - bound).max(bound - set.theta4);
            }
            (Measurement::Neumann, None) => {
                return Err(Error::invalid("Neumann problem without Theta5"));
            }
        }
    }
    Ok(worst)
}
