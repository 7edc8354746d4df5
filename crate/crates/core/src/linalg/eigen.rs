//! Eigenvalue kernels: implicit-shift QL for symmetric tridiagonal matrices,
//! Householder tridiagonalization for dense symmetric matrices, and a
//! balanced Hessenberg + Francis double-shift QR for general real matrices.

use super::{cholesky, DenseMatrix};
use crate::error::{Error, Result};

/// Minimal complex number for eigenvalue output.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

const QL_MAX_SWEEPS: usize = 60;

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (`off[i]` couples rows `i` and `i+1`), sorted ascending.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if off.len() + 1 != n {
        return Err(Error::invalid(format!(
            "tridiagonal: {} diagonal entries need {} off-diagonal entries, got {}",
            n,
            n - 1,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e: Vec<f64> = off.iter().copied().chain(std::iter::once(0.0)).collect();
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

fn ql_implicit(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_SWEEPS {
                let partial = d[..l].iter().map(|&x| (x, 0.0)).collect();
                return Err(Error::NonConvergence {
                    routine: "tridiagonal QL",
                    iterations: iter,
                    partial,
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Reduces a symmetric matrix to tridiagonal form by Householder reflections,
/// returning `(diag, off)`.
fn householder_tridiagonal(s: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = s.rows();
    let mut a = s.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = ((k + 1)..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = -alpha_sq.sqrt().copysign(x0);
        let mut v = vec![0.0; n];
        for i in (k + 1)..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        // A <- H A H with H = I - 2 v vᵀ, written as A - 2 v wᵀ - 2 w vᵀ.
        let p = a.mat_vec(&v);
        let vp: f64 = v.iter().zip(&p).map(|(a, b)| a * b).sum();
        let w: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - vp * vi).collect();
        for i in k..n {
            for j in k..n {
                a[(i, j)] -= 2.0 * (v[i] * w[j] + w[i] * v[j]);
            }
        }
    }
    let diag = a.diagonal();
    let off = (0..n.saturating_sub(1)).map(|i| a[(i + 1, i)]).collect();
    (diag, off)
}

/// Eigenvalues of a symmetric matrix (the strict upper triangle is trusted
/// after symmetrization), sorted ascending.
pub fn symmetric_eigenvalues(s: &DenseMatrix) -> Result<Vec<f64>> {
    if !s.is_square() {
        return Err(Error::invalid("symmetric_eigenvalues: matrix is not square"));
    }
    let (d, e) = householder_tridiagonal(&s.symmetrize());
    tridiagonal_eigenvalues(&d, &e)
}

/// Outcome of a negative-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Definiteness {
    /// `S ⪯ -margin·I` with strictly positive pivots in the Cholesky factor of `-S - margin·I`.
    pub negative_definite: bool,
    pub max_eigenvalue: f64,
}

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

/// Tests `S ≺ -margin·I` by Cholesky on `-S - margin·I`; the largest
/// eigenvalue is reported alongside for margin bookkeeping.
pub fn is_negative_definite(s: &DenseMatrix, margin: f64) -> Result<Definiteness> {
    if !s.is_square() {
        return Err(Error::invalid("is_negative_definite: matrix is not square"));
    }
    if margin < 0.0 {
        return Err(Error::invalid("is_negative_definite: margin must be nonnegative"));
    }
    let scale = s.max_abs().max(1.0);
    if s.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!(
            "is_negative_definite: asymmetry {:e} exceeds tolerance",
            s.asymmetry()
        )));
    }
    let sym = s.symmetrize();
    let shifted = &(-&sym) - &DenseMatrix::identity(s.rows()).scale(margin);
    let negative_definite = cholesky(&shifted).is_some();
    let max_eigenvalue = symmetric_eigenvalues(&sym)?
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY);
    Ok(Definiteness {
        negative_definite,
        max_eigenvalue,
    })
}

/// Balances a matrix in place by powers of two (row/column norm equalisation).
fn balance(a: &mut DenseMatrix) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.rows();
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Orthogonal reduction to upper Hessenberg form.
fn hessenberg(a: &mut DenseMatrix) {
    let n = a.rows();
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = ((k + 1)..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let alpha = -alpha_sq.sqrt().copysign(a[(k + 1, k)]);
        let mut v = vec![0.0; n];
        for i in (k + 1)..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        for j in 0..n {
            let dot: f64 = ((k + 1)..n).map(|i| v[i] * a[(i, j)]).sum();
            for i in (k + 1)..n {
                a[(i, j)] -= 2.0 * v[i] * dot;
            }
        }
        for i in 0..n {
            let dot: f64 = ((k + 1)..n).map(|j| a[(i, j)] * v[j]).sum();
            for j in (k + 1)..n {
                a[(i, j)] -= 2.0 * dot * v[j];
            }
        }
        for i in (k + 2)..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// All eigenvalues of a general real square matrix.
///
/// Balancing, Householder reduction to Hessenberg form, then Francis
/// double-shift QR with deflation. The result is sorted by decreasing real
/// part (ties by imaginary part).
pub fn eig_general(m: &DenseMatrix) -> Result<Vec<Complex>> {
    if !m.is_square() {
        return Err(Error::invalid("eig_general: matrix is not square"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("eig_general: non-finite entries"));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = m.clone();
    balance(&mut a);
    hessenberg(&mut a);
    let mut ev = hqr(&a)?;
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    Ok(ev)
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
/// Internally one-based to keep the index arithmetic of the classical
/// formulation readable.
fn hqr(h: &DenseMatrix) -> Result<Vec<Complex>> {
    let n = h.rows();
    let dim = n + 1;
    let mut a = vec![0.0; dim * dim];
    let idx = |i: usize, j: usize| i * dim + j;
    for i in 0..n {
        for j in 0..n {
            a[idx(i + 1, j + 1)] = h[(i, j)];
        }
    }
    let mut wr = vec![0.0; dim];
    let mut wi = vec![0.0; dim];
    let mut found = vec![false; dim];

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[idx(i, j)].abs();
        }
    }
    let max_total = 100 * n;
    let mut total_its = 0;
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r, mut s, mut w, mut x, mut y, mut z);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() + s == s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[idx(nn, nn)];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                found[nn] = true;
                nn -= 1;
            } else {
                y = a[idx(nn - 1, nn - 1)];
                w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    found[nn] = true;
                    found[nn - 1] = true;
                    nn -= 2;
                } else {
                    if its == 30 || total_its >= max_total {
                        let partial = (1..=n)
                            .filter(|&i| found[i])
                            .map(|i| (wr[i], wi[i]))
                            .collect();
                        return Err(Error::NonConvergence {
                            routine: "Hessenberg QR",
                            iterations: total_its,
                            partial,
                        });
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 1..=nn {
                            a[idx(i, i)] -= x;
                        }
                        s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[idx(m, m)];
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                        q = a[idx(m + 1, m + 1)] - z - r - s;
                        r = a[idx(m + 2, m + 1)];
                        s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[idx(i, i - 2)] = 0.0;
                        if i != m + 2 {
                            a[idx(i, i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k + 1 <= nn {
                        if k != m {
                            p = a[idx(k, k - 1)];
                            q = a[idx(k + 1, k - 1)];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[idx(k + 2, k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                                }
                            } else {
                                a[idx(k, k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[idx(k, j)] + q * a[idx(k + 1, j)];
                                if k != nn - 1 {
                                    p += r * a[idx(k + 2, j)];
                                    a[idx(k + 2, j)] -= p * z;
                                }
                                a[idx(k + 1, j)] -= p * y;
                                a[idx(k, j)] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                                if k != nn - 1 {
                                    p += z * a[idx(i, k + 2)];
                                    a[idx(i, k + 2)] -= p * r;
                                }
                                a[idx(i, k + 1)] -= p * q;
                                a[idx(i, k)] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn == 0 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex::new(wr[i], wi[i])).collect())
}
