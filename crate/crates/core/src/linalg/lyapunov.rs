use super::{eig_general, lu_solve, DenseMatrix};
use crate::error::{Error, Result};

/// Largest dimension accepted by the Kronecker solve (the linear system has
/// `n²` unknowns).
const MAX_KRONECKER_DIM: usize = 40;

/// Solves `AᵀP + PA = -Q` for symmetric `P`.
///
/// `A` must be Hurwitz; any stability shift (e.g. `F₁ + |c|I`) is folded in
/// by the caller. The equation is vectorised column-major as
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)` and solved densely.
pub fn solve_lyapunov(a: &DenseMatrix, q: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() || !q.is_square() || a.rows() != q.rows() {
        return Err(Error::invalid(format!(
            "solve_lyapunov: A is {}x{}, Q is {}x{}",
            a.rows(),
            a.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let n = a.rows();
    if n > MAX_KRONECKER_DIM {
        return Err(Error::invalid(format!(
            "solve_lyapunov: dimension {n} exceeds the dense Kronecker limit {MAX_KRONECKER_DIM}"
        )));
    }
    let rightmost = eig_general(a)?
        .first()
        .map(|c| c.re)
        .unwrap_or(f64::NEG_INFINITY);
    if rightmost >= 0.0 {
        return Err(Error::NotHurwitz(rightmost));
    }

    let nn = n * n;
    let mut k = DenseMatrix::zeros(nn, nn);
    // vec index of P_ij (column-major) is i + j n.
    // (AᵀP)_ij = Σ_k A_ki P_kj ; (PA)_ij = Σ_k P_ik A_kj.
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for kk in 0..n {
                k[(row, kk + j * n)] += a[(kk, i)];
                k[(row, i + kk * n)] += a[(kk, j)];
            }
        }
    }
    let rhs: Vec<f64> = (0..nn).map(|idx| -q[(idx % n, idx / n)]).collect();
    let x = lu_solve(&k, &rhs)?;
    let mut p = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            p[(i, j)] = x[i + j * n];
        }
    }
    Ok(p.symmetrize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &DenseMatrix, p: &DenseMatrix, q: &DenseMatrix) -> f64 {
        let r = &(&a.transpose().matmul(p) + &p.matmul(a)) + q;
        r.max_abs()
    }

    #[test]
    fn minus_identity() {
        let a = DenseMatrix::identity(3).scale(-1.0);
        let q = DenseMatrix::identity(3);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((&p - &DenseMatrix::identity(3).scale(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn decoupled_scalars() {
        let a = DenseMatrix::from_diag(&[-1.0, -2.0]);
        let p = solve_lyapunov(&a, &DenseMatrix::identity(2)).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p[(1, 1)] - 0.25).abs() < 1e-15);
        assert!(p[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn nonnormal_residual() {
        let a = DenseMatrix::from_rows(&[vec![-1.0, 10.0], vec![0.0, -3.0]]).unwrap();
        let q = DenseMatrix::identity(2);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!(residual(&a, &p, &q) <= 1e-8 * q.max_abs());
        assert!(super::super::cholesky(&p).is_some());
    }

    #[test]
    fn rejects_unstable() {
        let a = DenseMatrix::from_diag(&[-1.0, 0.5]);
        assert!(matches!(
            solve_lyapunov(&a, &DenseMatrix::identity(2)),
            Err(Error::NotHurwitz(_))
        ));
    }
}
