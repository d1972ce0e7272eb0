use super::{Matrix, NumericsError, Real};

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    /// Factors a square matrix. A pivot at or below `n * eps * max|A|`
    /// is treated as singular; the error reports the smallest pivot seen.
    pub fn factor(a: &Matrix<T>) -> Result<Self, NumericsError> {
        if !a.is_square() {
            return Err(NumericsError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if !a.is_finite() {
            return Err(NumericsError::NonFinite { what: "linear system" });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = T::epsilon() * T::lit(n.max(1) as f64) * a.max_abs();
        let mut smallest = (0usize, T::infinity());
        let mut singular = false;

        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < smallest.1 {
                smallest = (k, pivot);
            }
            if pivot <= threshold {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        if singular {
            return Err(NumericsError::Singular {
                index: smallest.0,
                pivot: smallest.1.as_f64(),
            });
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n, "right-hand side length");
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

/// Solves `a x = b` for a dense square system.
pub fn solve_block_linear<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, NumericsError> {
    if b.len() != a.rows() {
        return Err(NumericsError::DimensionMismatch {
            op: "solve_block_linear",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    Ok(Lu::factor(a)?.solve(b))
}
