use num_complex::Complex;

use super::{Matrix, NumericsError, Real};

/// Largest matrix handled by [`eig`].
pub const MAX_EIG_DIM: usize = 32;

/// Eigenvalues of a square matrix, with multiplicity and in no particular order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    eigenvalues: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn new(eigenvalues: Vec<Complex<T>>) -> Self {
        Self { eigenvalues }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex<T>> {
        self.eigenvalues.iter()
    }

    /// Spectral abscissa, `max Re(lambda)`.
    pub fn max_re(&self) -> Option<T> {
        self.eigenvalues.iter().map(|z| z.re).reduce(T::max)
    }

    pub fn min_re(&self) -> Option<T> {
        self.eigenvalues.iter().map(|z| z.re).reduce(T::min)
    }

    pub fn sum(&self) -> Complex<T> {
        self.eigenvalues
            .iter()
            .fold(Complex::new(T::zero(), T::zero()), |acc, z| acc + z)
    }

    /// Eigenvalues merged when closer than `tol` (absolute).
    pub fn distinct(&self, tol: T) -> Vec<Complex<T>> {
        let mut out: Vec<Complex<T>> = Vec::new();
        for &z in &self.eigenvalues {
            if !out.iter().any(|w| (w - z).norm() <= tol) {
                out.push(z);
            }
        }
        out
    }
}

/// Eigenvalues by Householder reduction to upper Hessenberg form followed by
/// Francis double-shift QR iteration.
///
/// The total number of QR sweeps is capped at `100 n^2`.
pub fn eig<T: Real>(m: &Matrix<T>) -> Result<Spectrum<T>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    if n > MAX_EIG_DIM {
        return Err(NumericsError::TooLarge {
            dim: n,
            max: MAX_EIG_DIM,
        });
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite {
            what: "eigenvalue input",
        });
    }
    if n == 0 {
        return Ok(Spectrum::new(Vec::new()));
    }

    let h = hessenberg(m);
    // 1-based working copy keeps the QR sweep close to its textbook form.
    let mut a = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = h[(i, j)];
        }
    }
    let budget = 100 * n * n;
    hqr(&mut a, n, budget)
        .map(Spectrum::new)
        .map_err(|iterations| NumericsError::NoConvergence {
            iterations,
            matrix: m.to_string(),
        })
}

fn hessenberg<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let n = m.rows();
    let mut h = m.clone();
    let two = T::lit(2.0);
    for k in 0..n.saturating_sub(2) {
        let norm = (k + 1..n).fold(T::zero(), |acc, i| acc + h[(i, k)] * h[(i, k)]).sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if h[(k + 1, k)] > T::zero() { -norm } else { norm };
        let mut v = vec![T::zero(); n];
        v[k + 1] = h[(k + 1, k)] - alpha;
        for i in k + 2..n {
            v[i] = h[(i, k)];
        }
        let vv = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vv == T::zero() {
            continue;
        }
        for j in 0..n {
            let dot = (k + 1..n).fold(T::zero(), |acc, i| acc + v[i] * h[(i, j)]);
            let f = two * dot / vv;
            for i in k + 1..n {
                h[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot = (k + 1..n).fold(T::zero(), |acc, j| acc + h[(i, j)] * v[j]);
            let f = two * dot / vv;
            for j in k + 1..n {
                h[(i, j)] -= f * v[j];
            }
        }
    }
    h
}

fn sign<T: Real>(a: T, b: T) -> T {
    if b >= T::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Shifted QR on a 1-based upper Hessenberg array. Returns the sweep count on failure.
fn hqr<T: Real>(a: &mut [Vec<T>], n: usize, budget: usize) -> Result<Vec<Complex<T>>, usize> {
    let zero = T::zero();
    let mut wr = vec![zero; n + 1];
    let mut wi = vec![zero; n + 1];

    let mut anorm = zero;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n;
    let mut t = zero;
    let mut total = 0usize;
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == zero {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = zero;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = zero;
                nn -= 1;
                break;
            }
            let mut y = a[nn - 1][nn - 1];
            let mut w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                let p = T::lit(0.5) * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= zero {
                    z = p + sign(z, p);
                    wr[nn - 1] = x + z;
                    wr[nn] = if z != zero { x - w / z } else { x + z };
                    wi[nn - 1] = zero;
                    wi[nn] = zero;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn -= 2;
                break;
            }

            if total >= budget {
                return Err(total);
            }
            if its > 0 && its.is_multiple_of(10) {
                // Exceptional shift to break cycles.
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }
            its += 1;
            total += 1;

            let mut m = nn - 2;
            let (mut p, mut q, mut r, mut z);
            loop {
                z = a[m][m];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[i][i - 2] = zero;
                if i != m + 2 {
                    a[i][i - 3] = zero;
                }
            }
            for k in m..nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = zero;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != zero {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != zero {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = nn.min(k + 3);
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
            }
        }
    }
    Ok((1..=n).map(|i| Complex::new(wr[i], wi[i])).collect())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only the symmetric part of the input is used.
pub fn sym_eigvals<T: Real>(m: &Matrix<T>) -> Result<Vec<T>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite {
            what: "symmetric eigenvalue input",
        });
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    let total: T = a.as_slice().iter().fold(T::zero(), |acc, &x| acc + x * x);
    let tol = T::epsilon() * T::epsilon() * total;
    const MAX_SWEEPS: usize = 64;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = sign(T::one(), theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            iterations: MAX_SWEEPS,
            matrix: m.to_string(),
        });
    }
    let mut out: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    out.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(out)
}
