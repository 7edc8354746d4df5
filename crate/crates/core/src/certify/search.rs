use super::{Certificate, ConstraintProblem, Variables};
use crate::error::{Error, Result};
use crate::linalg::{eig_general, solve_lyapunov, DenseMatrix};
use crate::model::Measurement;

/// Relative excess of `r2` over `α1|c|` in the constructive recipe.
const TAU_R: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Log2 step sizes, coarse to fine.
    pub levels: Vec<f64>,
    /// Multipliers `2^{k·step}` are tried for `k = -span..=span`.
    pub span: i32,
    pub max_sweeps: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            levels: vec![1.0, 0.25, 0.0625],
            span: 6,
            max_sweeps: 4,
        }
    }
}

/// Scalars of the recipe that the search perturbs.
#[derive(Debug, Clone)]
struct Recipe {
    p: DenseMatrix,
    beta: f64,
    gamma: f64,
    r1: f64,
    r2: f64,
    eps1: f64,
    eps2: f64,
}

impl Recipe {
    fn variables(&self, problem: &ConstraintProblem) -> Variables {
        let md = &problem.model;
        let a = &problem.alphas;
        let c = problem.c.abs();
        let kk = md.ktilde.transpose().matmul(&md.ktilde);
        let q1 = (&self.p + &kk.scale((2.0 * a.alpha3 * c + a.alpha4) * self.gamma * problem.residual_b))
            .scale((1.0 + self.eps1) * c)
            .symmetrize();
        let k = md.n - md.n0;
        let q2 = DenseMatrix::identity(k).scale((1.0 + self.eps2) * self.r1 * c);
        Variables {
            p: self.p.clone(),
            q1,
            q2,
            r1: self.r1,
            r2: self.r2,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    /// Applies log2 multipliers `(P, β, γ, r1, r2, ε1, ε2)`.
    fn perturbed(&self, x: &[f64; 7]) -> Self {
        let m = |i: usize| x[i].exp2();
        Self {
            p: self.p.scale(m(0)),
            beta: self.beta * m(1),
            gamma: self.gamma * m(2),
            r1: self.r1 * m(3),
            r2: self.r2 * m(4),
            eps1: self.eps1 * m(5),
            eps2: self.eps2 * m(6),
        }
    }
}

fn recipe(problem: &ConstraintProblem) -> Result<Recipe> {
    let md = &problem.model;
    let c = problem.c.abs();
    let m = 2 * md.n0;
    let shifted = &md.f1 + &DenseMatrix::identity(m).scale(c);
    let rightmost = eig_general(&shifted)?.first().map_or(f64::NEG_INFINITY, |z| z.re);
    if rightmost >= 0.0 {
        return Err(Error::GainsTooSlow(rightmost - c));
    }
    let p = solve_lyapunov(&shifted, &DenseMatrix::identity(m))?;
    let delta_star = problem.delta_star();
    if !(delta_star > 0.0) {
        return Err(Error::invalid(format!(
            "lambda_(N0+1) - q_c - |c| = {delta_star} must be positive"
        )));
    }
    let n = md.n as f64;
    let (beta, gamma) = match md.measurement {
        Measurement::Dirichlet => (n.sqrt(), 1.0 / n),
        Measurement::Neumann => (n.powf(0.125), n.powf(-0.1875)),
    };
    Ok(Recipe {
        eps1: 1.0 / (2.0 * c * p.norm2()),
        eps2: delta_star / c,
        p,
        beta,
        gamma,
        r1: beta / delta_star,
        r2: (1.0 + TAU_R) * problem.alphas.alpha1 * c,
    })
}

/// Decision variables from the constructive recipe of the existence proof.
pub fn constructive_candidate(problem: &ConstraintProblem) -> Result<Variables> {
    Ok(recipe(problem)?.variables(problem))
}

fn objective(problem: &ConstraintProblem, vars: Variables) -> Result<(f64, Certificate)> {
    let cert = Certificate::evaluate(problem.clone(), vars)?;
    Ok((cert.worst_slack(), cert))
}

/// Deterministic coordinate search around the constructive candidate.
///
/// The seed's `P` fixes `ε1 = 1/(2|c|‖P‖)` and `ε2 = δ*/|c|`; the search
/// then rescales `P, β, γ, r1, r2, ε1, ε2` by powers of two on successively
/// finer log grids and rebuilds `Q1, Q2` by the recipe. The unperturbed seed
/// is always a candidate, so the result is never worse than the seed.
pub fn refine_search(problem: &ConstraintProblem, seed: &Variables, opts: &SearchOptions) -> Result<Certificate> {
    let base = {
        let r = recipe(problem)?;
        Recipe {
            p: seed.p.clone(),
            beta: seed.beta,
            gamma: seed.gamma,
            r1: seed.r1,
            r2: seed.r2,
            ..r
        }
    };
    let (mut best_f, mut best_cert) = objective(problem, seed.clone())?;
    let (recipe_f, recipe_cert) = objective(problem, base.variables(problem))?;
    if recipe_f > best_f {
        best_f = recipe_f;
        best_cert = recipe_cert;
    }
    let mut x = [0.0f64; 7];
    for &step in &opts.levels {
        for _ in 0..opts.max_sweeps {
            let mut improved = false;
            for i in 0..x.len() {
                let mut best_here: Option<(f64, f64, Certificate)> = None;
                for k in -opts.span..=opts.span {
                    if k == 0 {
                        continue;
                    }
                    let mut trial = x;
                    trial[i] += k as f64 * step;
                    let vars = base.perturbed(&trial).variables(problem);
                    let (f, cert) = objective(problem, vars)?;
                    if f.is_finite() && best_here.as_ref().map_or(true, |b| f > b.0) {
                        best_here = Some((f, trial[i], cert));
                    }
                }
                if let Some((f, xi, cert)) = best_here {
                    if f > best_f + 1e-15 * best_f.abs().max(1e-300) {
                        best_f = f;
                        best_cert = cert;
                        x[i] = xi;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    Ok(best_cert)
}
