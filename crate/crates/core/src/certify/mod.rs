//! Stability certificates for the truncated closed loop.
//!
//! A certificate is a set of decision variables `(P, Q1, Q2, r1, r2, β, γ)`
//! for which the matrix inequalities `Ψ ≺ 0, Θ1 ≺ 0, Θ2 ≺ 0` and the scalar
//! inequalities `Θ3 < 0, Θ4 < 0` (plus `Θ5 > 0` for a Neumann measurement)
//! hold with a quantified gap. Every constraint is linear and homogeneous in
//! the decision variables.

mod constraints;
mod sdpa;
mod search;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assemble_truncated, build_reduction, choose_n0, Gains, Measurement, PlantConfig, TruncatedModel};
use crate::spectral::{compute_eigenbasis, EigenBasis};

pub use constraints::{assemble_constraints, evaluate_margins, gamma_domination, ConstraintMargin, ConstraintSet, STRICT_GAP};
pub use sdpa::{
    build_sdpa, export_sdpa, read_sdpa, sdpa_extremes, variables_to_vector, vector_to_variables, write_sdpa, SdpaProblem,
};
pub use search::{constructive_candidate, refine_search, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSet {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    /// `𝔠 = 1 - (|c|/α1 + 1/α2 + 1/α3 + |c|/α4)/2`.
    pub c_frak: f64,
}

impl AlphaSet {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64, alpha4: f64, c: f64) -> Result<Self> {
        for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3), ("alpha4", alpha4)] {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {a}")));
            }
        }
        let c_frak = 1.0 - 0.5 * (c.abs() / alpha1 + 1.0 / alpha2 + 1.0 / alpha3 + c.abs() / alpha4);
        if !(c_frak > 0.0) {
            return Err(Error::invalid(format!(
                "alpha choice gives c_frak = {c_frak}, which must be positive"
            )));
        }
        Ok(Self {
            alpha1,
            alpha2,
            alpha3,
            alpha4,
            c_frak,
        })
    }

    /// `α1 = α4 = 4|c|`, `α2 = α3 = 4`, so that `𝔠 = 1/2`.
    pub fn default_for(c: f64) -> Self {
        let a = 4.0 * c.abs();
        Self::new(a, 4.0, 4.0, a, c).expect("default alphas are always admissible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstants {
    pub measurement: Measurement,
    /// `M_φ` (Dirichlet) or `M_φ(ε)` (Neumann), including `tail_bound`.
    pub value: f64,
    pub epsilon: Option<f64>,
    /// Number of series terms summed explicitly (`n = N+1..=N_series`).
    pub terms_computed: usize,
    pub partial_sum: f64,
    /// Analytic majorant of the remainder beyond `N_series`.
    pub tail_bound: f64,
}

impl TailConstants {
    /// `M_φ`; `None` for a Neumann measurement.
    pub fn m_phi(&self) -> Option<f64> {
        (self.measurement == Measurement::Dirichlet).then_some(self.value)
    }

    /// `M_φ(ε)`; `None` for a Dirichlet measurement.
    pub fn m_phi_eps(&self) -> Option<f64> {
        (self.measurement == Measurement::Neumann).then_some(self.value)
    }
}

/// Safety factor on the empirical trace envelope.
const ENVELOPE_FACTOR: f64 = 2.0;

/// Tail series `Σ_{n>N} |φ_n(0)|²/λ_n` (Dirichlet) or
/// `Σ_{n>N} |φ_n'(0)|²/λ_n^{3/2+ε}` (Neumann), summed over every mode in
/// `basis_ext` and closed with an analytic majorant.
pub fn tail_constants(
    basis_ext: &EigenBasis,
    n: usize,
    measurement: Measurement,
    epsilon: Option<f64>,
    p_low: f64,
) -> Result<TailConstants> {
    let n_series = basis_ext.len();
    if n_series <= n + 1 {
        return Err(Error::invalid(format!(
            "tail series needs more than N + 1 = {} modes, basis has {n_series}",
            n + 1
        )));
    }
    if !(p_low > 0.0) {
        return Err(Error::invalid("p_low must be positive"));
    }
    let eps = match measurement {
        Measurement::Dirichlet => None,
        Measurement::Neumann => {
            let e = epsilon.ok_or_else(|| Error::invalid("Neumann tail constants need epsilon"))?;
            if !(e > 0.0 && e <= 0.5) {
                return Err(Error::invalid(format!("epsilon = {e} must lie in (0, 1/2]")));
            }
            Some(e)
        }
    };
    let term = |k: usize| {
        let lam = basis_ext.lambdas[k];
        let tr = measurement.trace(basis_ext, k);
        match eps {
            None => tr * tr / lam,
            Some(e) => tr * tr / lam.powf(1.5 + e),
        }
    };
    let partial_sum: f64 = (n..n_series).map(term).sum();
    let env_start = n_series - (n_series / 4).max(1);
    let envelope = ENVELOPE_FACTOR
        * (env_start..n_series)
            .map(|k| {
                let tr = measurement.trace(basis_ext, k).abs();
                match eps {
                    None => tr,
                    Some(_) => tr / basis_ext.lambdas[k].sqrt(),
                }
            })
            .fold(0.0, f64::max);
    let m = (n_series - 1) as f64;
    let tail_bound = match eps {
        None => envelope * envelope / (PI * PI * p_low) / m,
        Some(e) => envelope * envelope * (PI * PI * p_low).powf(-(0.5 + e)) * m.powf(-2.0 * e) / (2.0 * e),
    };
    Ok(TailConstants {
        measurement,
        value: partial_sum + tail_bound,
        epsilon: eps,
        terms_computed: n_series - n,
        partial_sum,
        tail_bound,
    })
}

/// Everything the constraints depend on apart from the decision variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintProblem {
    pub model: TruncatedModel,
    pub alphas: AlphaSet,
    pub tails: TailConstants,
    /// `‖R_N a‖²`.
    pub residual_a: f64,
    /// `‖R_N b‖²`.
    pub residual_b: f64,
    pub q_c: f64,
    pub c: f64,
    /// `λ_{N+1}`.
    pub lambda_next: f64,
}

impl ConstraintProblem {
    pub fn measurement(&self) -> Measurement {
        self.model.measurement
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    /// `δ* = λ_{N0+1} - q_c - |c|`, read off `F3`.
    pub fn delta_star(&self) -> f64 {
        -self.model.f3[(0, 0)] - self.c.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variables {
    pub p: crate::linalg::DenseMatrix,
    pub q1: crate::linalg::DenseMatrix,
    pub q2: crate::linalg::DenseMatrix,
    pub r1: f64,
    pub r2: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Variables {
    /// Joint scaling of every decision variable.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            p: self.p.scale(s),
            q1: self.q1.scale(s),
            q2: self.q2.scale(s),
            r1: self.r1 * s,
            r2: self.r2 * s,
            beta: self.beta * s,
            gamma: self.gamma * s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub n: usize,
    pub problem: ConstraintProblem,
    pub vars: Variables,
    pub margins: Vec<ConstraintMargin>,
    pub feasible: bool,
}

impl Certificate {
    /// Builds a certificate by evaluating the margins of `vars`.
    pub fn evaluate(problem: ConstraintProblem, vars: Variables) -> Result<Self> {
        let margins = evaluate_margins(&problem, &vars)?;
        let feasible = margins.iter().all(|m| m.pass);
        Ok(Self {
            n: problem.n(),
            problem,
            vars,
            margins,
            feasible,
        })
    }

    /// Smallest normalised slack over the strict constraints.
    pub fn worst_slack(&self) -> f64 {
        self.margins
            .iter()
            .filter(|m| m.strict)
            .map(|m| m.slack)
            .fold(f64::INFINITY, f64::min)
    }

    /// Re-assembles the constraints from the stored fields alone and returns
    /// the largest deviation from the stored margins; errors when the
    /// recomputed feasibility flag disagrees.
    pub fn revalidate(&self) -> Result<f64> {
        let margins = evaluate_margins(&self.problem, &self.vars)?;
        let feasible = margins.iter().all(|m| m.pass);
        if feasible != self.feasible || margins.len() != self.margins.len() {
            return Err(Error::Numerical(format!(
                "certificate revalidation disagrees: stored feasible = {}, recomputed = {feasible}",
                self.feasible
            )));
        }
        Ok(margins
            .iter()
            .zip(&self.margins)
            .map(|(a, b)| (a.extreme - b.extreme).abs() / (1.0 + b.extreme.abs()))
            .fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("serialising certificate: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("certificate JSON: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub n_max: usize,
    /// Run the structured search after the constructive recipe.
    pub refine: bool,
    /// `ε` for the Neumann constraints.
    pub epsilon: f64,
    pub alphas: Option<AlphaSet>,
    pub search: SearchOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            n_max: 64,
            refine: true,
            epsilon: 0.125,
            alphas: None,
            search: SearchOptions::default(),
        }
    }
}

/// One row of the margins-vs-N trace.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub n: usize,
    pub constructive_slack: f64,
    pub refined_slack: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub n0: usize,
    /// Smallest feasible `N`, if any.
    pub n_feasible: Option<usize>,
    /// Certificate at `n_feasible`, or the best one found.
    pub certificate: Certificate,
    pub trace: Vec<SweepEntry>,
    /// Extended basis used for the model and tail series.
    pub basis: EigenBasis,
}

/// Number of modes summed explicitly in the tail series.
pub fn series_length(n_max: usize) -> usize {
    (10 * n_max).max(200)
}

/// Eigenbasis long enough for every tail series up to `n_max`.
pub fn extended_basis(plant: &PlantConfig, n_max: usize) -> Result<EigenBasis> {
    let n_ext = series_length(n_max);
    let grid = plant.sl.grid_points.max(8 * n_ext + 1);
    compute_eigenbasis(&plant.sl.with_grid(grid), n_ext)
}

/// Constraint data at one `N` on a precomputed extended basis.
pub fn constraint_problem(
    plant: &PlantConfig,
    basis_ext: &EigenBasis,
    reduction: &crate::model::SpectralReduction,
    gains: &Gains,
    alphas: AlphaSet,
    n0: usize,
    n: usize,
    epsilon: f64,
) -> Result<ConstraintProblem> {
    let sl = &plant.sl;
    let model = assemble_truncated(reduction, basis_ext, gains, n0, n, plant.measurement, sl.q_c)?;
    let (p_low, _, _) = sl.envelopes();
    let tails = tail_constants(basis_ext, n, plant.measurement, Some(epsilon), p_low)?;
    let (residual_a, residual_b) = reduction.residuals(n)?;
    Ok(ConstraintProblem {
        model,
        alphas,
        tails,
        residual_a,
        residual_b,
        q_c: sl.q_c,
        c: plant.c,
        lambda_next: basis_ext.lambdas[n],
    })
}

fn certify_at(
    plant: &PlantConfig,
    basis: &EigenBasis,
    reduction: &crate::model::SpectralReduction,
    gains: &Gains,
    alphas: AlphaSet,
    n0: usize,
    n: usize,
    opts: &CertifyOptions,
) -> Result<(Certificate, SweepEntry)> {
    let problem = constraint_problem(plant, basis, reduction, gains, alphas, n0, n, opts.epsilon)?;
    let seed = constructive_candidate(&problem)?;
    let seed_cert = Certificate::evaluate(problem.clone(), seed.clone())?;
    let constructive_slack = seed_cert.worst_slack();
    if seed_cert.feasible || !opts.refine {
        let feasible = seed_cert.feasible;
        return Ok((
            seed_cert,
            SweepEntry {
                n,
                constructive_slack,
                refined_slack: None,
                feasible,
            },
        ));
    }
    let refined = refine_search(&problem, &seed, &opts.search)?;
    let entry = SweepEntry {
        n,
        constructive_slack,
        refined_slack: Some(refined.worst_slack()),
        feasible: refined.feasible,
    };
    Ok((refined, entry))
}

/// Sweeps `N = N0+1..=n_max` and returns the smallest feasible `N`.
///
/// Candidate `N` values are evaluated in parallel chunks; the result is the
/// same as a sequential sweep.
pub fn certify(plant: &PlantConfig, gains: &Gains, opts: &CertifyOptions) -> Result<CertifyOutcome> {
    plant.validate()?;
    let alphas = match opts.alphas {
        Some(a) => AlphaSet::new(a.alpha1, a.alpha2, a.alpha3, a.alpha4, plant.c)?,
        None => AlphaSet::default_for(plant.c),
    };
    let basis = extended_basis(plant, opts.n_max)?;
    let reduction = build_reduction(&plant.with_grid(basis.grid.len()), &basis)?;
    let n0 = choose_n0(&basis.lambdas, plant.sl.q_c, plant.c)?;
    if gains.k.len() != n0 || gains.l.len() != n0 {
        return Err(Error::invalid(format!(
            "gains have length {} / {} but N0 = {n0}",
            gains.k.len(),
            gains.l.len()
        )));
    }
    if opts.n_max < n0 + 1 {
        return Err(Error::invalid(format!("N_max = {} must exceed N0 = {n0}", opts.n_max)));
    }
    let chunk = rayon::current_num_threads().max(1);
    let mut trace = Vec::new();
    let mut best: Option<Certificate> = None;
    let candidates: Vec<usize> = ((n0 + 1)..=opts.n_max).collect();
    for block in candidates.chunks(chunk) {
        let results: Vec<Result<(Certificate, SweepEntry)>> = block
            .par_iter()
            .map(|&n| certify_at(plant, &basis, &reduction, gains, alphas, n0, n, opts))
            .collect();
        for r in results {
            let (cert, entry) = r?;
            log::info!(
                "N = {}: constructive slack {:.3e}, refined {:?}, feasible {}",
                entry.n,
                entry.constructive_slack,
                entry.refined_slack,
                entry.feasible
            );
            trace.push(entry);
            if cert.feasible {
                return Ok(CertifyOutcome {
                    n0,
                    n_feasible: Some(cert.n),
                    certificate: cert,
                    trace,
                    basis,
                });
            }
            if best.as_ref().map_or(true, |b| cert.worst_slack() > b.worst_slack()) {
                best = Some(cert);
            }
        }
    }
    Ok(CertifyOutcome {
        n0,
        n_feasible: None,
        certificate: best.expect("sweep evaluates at least one N"),
        trace,
        basis,
    })
}
