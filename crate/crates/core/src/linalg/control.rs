use super::decomp::pivoted_qr_diagonal;
use super::{eig_general, lu_solve, Complex, DenseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanRank {
    pub rank: usize,
    /// Smallest |R_kk| / |R_11| of the column-normalised Krylov matrix.
    pub smallest_scaled: f64,
    pub full_rank: bool,
}

const RANK_TOL: f64 = 1e-8;

fn krylov(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let m = b.cols();
    let mut out = DenseMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.set_block(0, k * m, &block);
        block = a.matmul(&block);
    }
    out
}

/// Rank of `[B AB … A^{n-1}B]` via column-pivoted QR after normalising each
/// column to unit length.
pub fn kalman_rank(a: &DenseMatrix, b: &DenseMatrix) -> Result<KalmanRank> {
    if !a.is_square() || b.rows() != a.rows() {
        return Err(Error::invalid(format!(
            "kalman_rank: A is {}x{}, B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.rows();
    let mut c = krylov(a, b);
    for j in 0..c.cols() {
        let norm: f64 = (0..n).map(|i| c[(i, j)] * c[(i, j)]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                c[(i, j)] /= norm;
            }
        }
    }
    let diag = pivoted_qr_diagonal(&c);
    let lead = diag.first().copied().unwrap_or(0.0);
    if lead == 0.0 {
        return Ok(KalmanRank {
            rank: 0,
            smallest_scaled: 0.0,
            full_rank: n == 0,
        });
    }
    let scaled: Vec<f64> = diag.iter().map(|d| d / lead).collect();
    let rank = scaled.iter().filter(|&&d| d > RANK_TOL).count();
    let smallest_scaled = if scaled.len() < n {
        0.0
    } else {
        scaled[..n].iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(KalmanRank {
        rank,
        smallest_scaled,
        full_rank: rank == n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementMode {
    /// Returns `K` with `spec(A + bK) = targets`.
    Feedback,
    /// Caller passes `(Aᵀ, cᵀ)`; returns `L` with `spec(A - Lc) = targets`.
    Observer,
}

/// Coefficients (highest degree first, monic) of `Π (s - μ_i)`.
fn char_poly(targets: &[Complex]) -> Result<Vec<f64>> {
    let mut coeffs = vec![Complex::real(1.0)];
    for &mu in targets {
        let mut next = vec![Complex::real(0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] = Complex::new(next[i].re + c.re, next[i].im + c.im);
            let prod = c.mul(mu);
            next[i + 1] = next[i + 1].sub(prod);
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.abs()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::invalid(
            "pole targets must be closed under complex conjugation",
        ));
    }
    Ok(coeffs.iter().map(|c| c.re).collect())
}

/// Greedy nearest matching between two spectra; returns the worst distance.
fn spectrum_mismatch(computed: &[Complex], targets: &[Complex]) -> f64 {
    let mut used = vec![false; targets.len()];
    let mut worst = 0.0_f64;
    for c in computed {
        let (j, d) = targets
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, t)| (j, c.sub(*t).abs()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap_or((0, f64::INFINITY));
        if j < used.len() {
            used[j] = true;
        }
        worst = worst.max(d);
    }
    worst
}

/// Single-input pole placement by Ackermann's formula.
///
/// The resulting spectrum is checked with [`eig_general`]; a mismatch above
/// `1e-6` (relative to the target magnitude) is reported as a numerical error.
pub fn place_poles_siso(
    a: &DenseMatrix,
    b: &[f64],
    targets: &[Complex],
    mode: PlacementMode,
) -> Result<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(Error::invalid(format!(
            "place_poles_siso: A is {}x{}, b has length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!(
            "place_poles_siso: {} targets for a system of order {n}",
            targets.len()
        )));
    }
    let bcol = DenseMatrix::column(b);
    let rank = kalman_rank(a, &bcol)?;
    if !rank.full_rank {
        return Err(Error::Uncontrollable(format!(
            "Krylov matrix has rank {} < {n} (smallest scaled pivot {:.3e}); mode {} cannot be moved",
            rank.rank,
            rank.smallest_scaled,
            rank.rank + 1
        )));
    }
    let coeffs = char_poly(targets)?;
    // Δ(A) by Horner.
    let mut delta = DenseMatrix::identity(n).scale(coeffs[0]);
    for &c in &coeffs[1..] {
        delta = &delta.matmul(a) + &DenseMatrix::identity(n).scale(c);
    }
    let ctrb = krylov(a, &bcol);
    let mut en = vec![0.0; n];
    en[n - 1] = 1.0;
    let y = lu_solve(&ctrb.transpose(), &en)?;
    let k: Vec<f64> = delta.transpose().mat_vec(&y).iter().map(|v| -v).collect();

    let closed = a + &bcol.matmul(&DenseMatrix::row(&k));
    let achieved = eig_general(&closed)?;
    let scale = targets.iter().map(|t| t.abs()).fold(1.0, f64::max);
    let mismatch = spectrum_mismatch(&achieved, targets);
    if mismatch > 1e-6 * scale {
        return Err(Error::Numerical(format!(
            "pole placement verification failed: spectrum off by {mismatch:.3e}"
        )));
    }
    Ok(match mode {
        PlacementMode::Feedback => k,
        PlacementMode::Observer => k.iter().map(|v| -v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_integrator() {
        let k = place_poles_siso(
            &DenseMatrix::zeros(1, 1),
            &[1.0],
            &[Complex::real(-5.0)],
            PlacementMode::Feedback,
        )
        .unwrap();
        assert!((k[0] + 5.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_pair_matches_char_poly() {
        let a = DenseMatrix::from_diag(&[1.0, 2.0]);
        let k = place_poles_siso(
            &a,
            &[1.0, 1.0],
            &[Complex::real(-1.0), Complex::real(-2.0)],
            PlacementMode::Feedback,
        )
        .unwrap();
        // det(sI - A - bK) = s² - (3 + k1 + k2) s + (2 + 2k1 + k2)
        // must equal s² + 3s + 2.
        let tr = 3.0 + k[0] + k[1];
        let det = 2.0 + 2.0 * k[0] + k[1];
        assert!((tr + 3.0).abs() < 1e-12, "trace term {tr}");
        assert!((det - 2.0).abs() < 1e-12, "constant term {det}");
    }

    #[test]
    fn observer_mode_returns_dual_gain() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let c = [1.0, 0.0];
        let targets = [Complex::new(-2.0, 1.0), Complex::new(-2.0, -1.0)];
        let l = place_poles_siso(&a.transpose(), &c, &targets, PlacementMode::Observer).unwrap();
        let closed = &a - &DenseMatrix::column(&l).matmul(&DenseMatrix::row(&c));
        let ev = eig_general(&closed).unwrap();
        assert!(spectrum_mismatch(&ev, &targets) < 1e-10);
    }

    #[test]
    fn placing_at_current_spectrum_gives_zero_gain() {
        let a = DenseMatrix::from_diag(&[-1.0, -4.0]);
        let k = place_poles_siso(
            &a,
            &[1.0, 2.0],
            &[Complex::real(-1.0), Complex::real(-4.0)],
            PlacementMode::Feedback,
        )
        .unwrap();
        assert!(k.iter().all(|v| v.abs() <= 1e-6 * a.max_abs()));
    }

    #[test]
    fn rejects_non_conjugate_targets() {
        let a = DenseMatrix::from_diag(&[1.0, 2.0]);
        let r = place_poles_siso(
            &a,
            &[1.0, 1.0],
            &[Complex::new(-1.0, 1.0), Complex::real(-2.0)],
            PlacementMode::Feedback,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kalman_examples() {
        let a = DenseMatrix::from_diag(&[1.0, 2.0]);
        let r = kalman_rank(&a, &DenseMatrix::column(&[1.0, 1.0])).unwrap();
        assert!(r.full_rank && r.rank == 2 && r.smallest_scaled > 1e-8);
        let a = DenseMatrix::from_diag(&[1.0, 1.0]);
        let r = kalman_rank(&a, &DenseMatrix::column(&[1.0, 0.0])).unwrap();
        assert_eq!(r.rank, 1);
        assert!(!r.full_rank);
    }

    #[test]
    fn uncontrollable_pair_is_reported() {
        let a = DenseMatrix::from_diag(&[1.0, 1.0]);
        let r = place_poles_siso(
            &a,
            &[1.0, 0.0],
            &[Complex::real(-1.0), Complex::real(-2.0)],
            PlacementMode::Feedback,
        );
        assert!(matches!(r, Err(Error::Uncontrollable(_))));
    }
}
