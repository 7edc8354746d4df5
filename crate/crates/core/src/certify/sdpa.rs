//! Export of the certificate feasibility problem in SDPA sparse format, plus
//! a reader for the same subset of the format.
//!
//! Decision vector layout (1-based in the file):
//! upper triangle of `P` row by row, then `Q1`, then `Q2`, then
//! `r1, r2, β, γ`. Block layout:
//! 1 `-Ψ - εI`, 2 `-Θ1 - εI`, 3 `-Θ2 - εI`, 4 `P - εI`, 5 `Q1`, 6 `Q2`,
//! 7 diagonal block `(-Θ3 - ε, -Θ4 - ε, [Θ5 - ε,] r1 - ε, r2 - ε, β - ε, γ - ε)`.
//! The problem is `F(x) = Σ x_i F_i - F_0 ⪰ 0` with a zero objective.

use std::fmt::Write as _;
use std::path::Path;

use super::{assemble_constraints, ConstraintProblem, Variables};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, DenseMatrix};
use crate::model::Measurement;

#[derive(Debug, Clone)]
pub struct SdpaProblem {
    pub m: usize,
    /// Positive for dense symmetric blocks, negative for diagonal blocks.
    pub block_sizes: Vec<i64>,
    pub c: Vec<f64>,
    /// `f[i][b]`: block `b` of `F_i`, `i = 0..=m`.
    pub f: Vec<Vec<DenseMatrix>>,
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn sym_pack(x: &DenseMatrix, out: &mut Vec<f64>) {
    for i in 0..x.rows() {
        for j in i..x.cols() {
            out.push(x[(i, j)]);
        }
    }
}

fn sym_unpack(n: usize, v: &[f64]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[(i, j)] = v[k];
            out[(j, i)] = v[k];
            k += 1;
        }
    }
    out
}

fn dims(problem: &ConstraintProblem) -> (usize, usize) {
    (2 * problem.model.n0, problem.model.n - problem.model.n0)
}

pub fn variables_to_vector(vars: &Variables) -> Vec<f64> {
    let mut out = Vec::new();
    sym_pack(&vars.p, &mut out);
    sym_pack(&vars.q1, &mut out);
    sym_pack(&vars.q2, &mut out);
    out.extend([vars.r1, vars.r2, vars.beta, vars.gamma]);
    out
}

pub fn vector_to_variables(problem: &ConstraintProblem, x: &[f64]) -> Result<Variables> {
    let (m, k) = dims(problem);
    let expected = 2 * sym_len(m) + sym_len(k) + 4;
    if x.len() != expected {
        return Err(Error::invalid(format!("decision vector has {} entries, expected {expected}", x.len())));
    }
    let (a, rest) = x.split_at(sym_len(m));
    let (b, rest) = rest.split_at(sym_len(m));
    let (c, s) = rest.split_at(sym_len(k));
    Ok(Variables {
        p: sym_unpack(m, a),
        q1: sym_unpack(m, b),
        q2: sym_unpack(k, c),
        r1: s[0],
        r2: s[1],
        beta: s[2],
        gamma: s[3],
    })
}

fn zero_vars(m: usize, k: usize) -> Variables {
    Variables {
        p: DenseMatrix::zeros(m, m),
        q1: DenseMatrix::zeros(m, m),
        q2: DenseMatrix::zeros(k, k),
        r1: 0.0,
        r2: 0.0,
        beta: 0.0,
        gamma: 0.0,
    }
}

/// Blocks of `F(vars)` without the `F_0` offset.
fn linear_blocks(problem: &ConstraintProblem, vars: &Variables) -> Result<Vec<DenseMatrix>> {
    let set = assemble_constraints(problem, vars)?;
    let mut lp = vec![-set.theta3, -set.theta4];
    if let Some(t5) = set.theta5 {
        lp.push(t5);
    }
    lp.extend([vars.r1, vars.r2, vars.beta, vars.gamma]);
    Ok(vec![
        set.psi.scale(-1.0),
        set.theta1.scale(-1.0),
        set.theta2.scale(-1.0),
        vars.p.clone(),
        vars.q1.clone(),
        vars.q2.clone(),
        DenseMatrix::from_diag(&lp),
    ])
}

/// Builds the SDPA data with strictness offset `epsilon`.
pub fn build_sdpa(problem: &ConstraintProblem, epsilon: f64) -> Result<SdpaProblem> {
    let (m, k) = dims(problem);
    let n_vars = 2 * sym_len(m) + sym_len(k) + 4;
    let zero = zero_vars(m, k);
    let mut f = Vec::with_capacity(n_vars + 1);
    // F_0 holds only the strictness offsets (every constraint is homogeneous).
    let templ = linear_blocks(problem, &zero)?;
    let sizes: Vec<usize> = templ.iter().map(|b| b.rows()).collect();
    let lp_len = sizes[6];
    let mut f0: Vec<DenseMatrix> = sizes[..4]
        .iter()
        .map(|&s| DenseMatrix::identity(s).scale(epsilon))
        .collect();
    f0.push(DenseMatrix::zeros(m, m));
    f0.push(DenseMatrix::zeros(k, k));
    f0.push(DenseMatrix::identity(lp_len).scale(epsilon));
    f.push(f0);
    for idx in 0..n_vars {
        let mut unit = vec![0.0; n_vars];
        unit[idx] = 1.0;
        let vars = vector_to_variables(problem, &unit)?;
        f.push(linear_blocks(problem, &vars)?);
    }
    let mut block_sizes: Vec<i64> = sizes[..6].iter().map(|&s| s as i64).collect();
    block_sizes.push(-(lp_len as i64));
    Ok(SdpaProblem {
        m: n_vars,
        block_sizes,
        c: vec![0.0; n_vars],
        f,
    })
}

pub fn write_sdpa(sdp: &SdpaProblem, header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "* {line}");
    }
    let _ = writeln!(out, "{}", sdp.m);
    let _ = writeln!(out, "{}", sdp.block_sizes.len());
    let sizes: Vec<String> = sdp.block_sizes.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let cs: Vec<String> = sdp.c.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "{}", cs.join(" "));
    for (mat, blocks) in sdp.f.iter().enumerate() {
        for (b, blk) in blocks.iter().enumerate() {
            let diag_only = sdp.block_sizes[b] < 0;
            for i in 0..blk.rows() {
                for j in i..blk.cols() {
                    if diag_only && i != j {
                        continue;
                    }
                    let v = blk[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{mat} {} {} {} {v:.16e}", b + 1, i + 1, j + 1);
                    }
                }
            }
        }
    }
    out
}

fn parse_numbers<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split(|ch: char| ch.is_whitespace() || ",{}()".contains(ch))
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Parse(format!("SDPA: cannot parse '{s}'"))))
        .collect()
}

/// Reads the sparse SDPA subset written by [`write_sdpa`].
pub fn read_sdpa(text: &str) -> Result<SdpaProblem> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('*') && !l.starts_with('"'));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("SDPA: missing {what}")));
    let m = *parse_numbers::<usize>(next("variable count")?)?
        .first()
        .ok_or_else(|| Error::Parse("SDPA: empty variable count".into()))?;
    let n_blocks = *parse_numbers::<usize>(next("block count")?)?
        .first()
        .ok_or_else(|| Error::Parse("SDPA: empty block count".into()))?;
    let block_sizes = parse_numbers::<i64>(next("block sizes")?)?;
    if block_sizes.len() != n_blocks {
        return Err(Error::Parse(format!(
            "SDPA: {} block sizes for {n_blocks} blocks",
            block_sizes.len()
        )));
    }
    let c = parse_numbers::<f64>(next("objective")?)?;
    if c.len() != m {
        return Err(Error::Parse(format!("SDPA: objective has {} entries, expected {m}", c.len())));
    }
    let empty: Vec<DenseMatrix> = block_sizes
        .iter()
        .map(|&s| {
            let n = s.unsigned_abs() as usize;
            DenseMatrix::zeros(n, n)
        })
        .collect();
    let mut f = vec![empty; m + 1];
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::Parse(format!("SDPA: malformed entry '{line}'")));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("SDPA: bad index in '{line}'")));
        let (mat, blk, i, j) = (idx(parts[0])?, idx(parts[1])?, idx(parts[2])?, idx(parts[3])?);
        let v: f64 = parts[4]
            .parse()
            .map_err(|_| Error::Parse(format!("SDPA: bad value in '{line}'")))?;
        if mat > m || blk == 0 || blk > n_blocks {
            return Err(Error::Parse(format!("SDPA: entry out of range '{line}'")));
        }
        let b = &mut f[mat][blk - 1];
        if i == 0 || j == 0 || i > b.rows() || j > b.rows() {
            return Err(Error::Parse(format!("SDPA: entry out of range '{line}'")));
        }
        b[(i - 1, j - 1)] = v;
        b[(j - 1, i - 1)] = v;
    }
    Ok(SdpaProblem { m, block_sizes, c, f })
}

impl SdpaProblem {
    /// `F(x) = Σ x_i F_i - F_0`, block by block.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<DenseMatrix>> {
        if x.len() != self.m {
            return Err(Error::invalid(format!("x has {} entries, expected {}", x.len(), self.m)));
        }
        let mut out: Vec<DenseMatrix> = self.f[0].iter().map(|b| b.scale(-1.0)).collect();
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (acc, blk) in out.iter_mut().zip(&self.f[i + 1]) {
                *acc = &*acc + &blk.scale(*xi);
            }
        }
        Ok(out)
    }

    /// Smallest eigenvalue of each dense block, then each diagonal entry of
    /// the diagonal blocks.
    pub fn min_eigenvalues(&self, x: &[f64]) -> Result<Vec<f64>> {
        let blocks = self.evaluate(x)?;
        let mut out = Vec::new();
        for (b, blk) in blocks.iter().enumerate() {
            if self.block_sizes[b] < 0 {
                out.extend(blk.diagonal());
            } else {
                out.push(symmetric_eigenvalues(blk)?.first().copied().unwrap_or(0.0));
            }
        }
        Ok(out)
    }
}

/// Constraint extremes recovered from the exported problem, in the order of
/// [`super::evaluate_margins`].
pub fn sdpa_extremes(sdp: &SdpaProblem, x: &[f64], measurement: Measurement, epsilon: f64) -> Result<Vec<f64>> {
    let ev = sdp.min_eigenvalues(x)?;
    let mut out = vec![-(ev[0] + epsilon), -(ev[1] + epsilon), -(ev[2] + epsilon)];
    let lp = &ev[6..];
    out.push(-(lp[0] + epsilon));
    out.push(-(lp[1] + epsilon));
    let rest = if measurement == Measurement::Neumann {
        out.push(lp[2] + epsilon);
        &lp[3..]
    } else {
        &lp[2..]
    };
    out.push(ev[3] + epsilon);
    out.push(ev[4]);
    out.push(ev[5]);
    out.extend(rest.iter().map(|v| v + epsilon));
    Ok(out)
}

/// Writes the feasibility problem at the model's `N` to `path`.
pub fn export_sdpa(problem: &ConstraintProblem, epsilon: f64, path: &Path) -> Result<SdpaProblem> {
    let sdp = build_sdpa(problem, epsilon)?;
    let (m, k) = dims(problem);
    let neumann = problem.measurement() == Measurement::Neumann;
    let header = format!(
        "delaypde stability certificate feasibility problem\n\
         measurement = {}, N0 = {}, N = {}, epsilon = {epsilon:e}\n\
         variables 1..{}: P upper triangle, row by row ({m}x{m})\n\
         variables {}..{}: Q1 upper triangle ({m}x{m})\n\
         variables {}..{}: Q2 upper triangle ({k}x{k})\n\
         variables {}..{}: r1 r2 beta gamma\n\
         block 1: -Psi - eps I; block 2: -Theta1 - eps I; block 3: -Theta2 - eps I\n\
         block 4: P - eps I; block 5: Q1; block 6: Q2\n\
         block 7 (diagonal): -Theta3 - eps, -Theta4 - eps, {}r1 - eps, r2 - eps, beta - eps, gamma - eps\n\
         find x with sum_i x_i F_i - F_0 >= 0 (zero objective)",
        problem.measurement().name(),
        problem.model.n0,
        problem.model.n,
        sym_len(m),
        sym_len(m) + 1,
        2 * sym_len(m),
        2 * sym_len(m) + 1,
        2 * sym_len(m) + sym_len(k),
        2 * sym_len(m) + sym_len(k) + 1,
        sdp.m,
        if neumann { "Theta5 - eps, " } else { "" },
    );
    std::fs::write(path, write_sdpa(&sdp, &header))?;
    Ok(sdp)
}
