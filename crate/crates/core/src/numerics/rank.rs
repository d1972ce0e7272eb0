use num_complex::Complex;

use super::{CMatrix, Matrix, Real};

/// Relative pivot tolerance used when callers have no better choice.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Numerical rank of a complex matrix by Gaussian elimination with partial
/// pivoting. A pivot counts when its modulus exceeds `tol` times the largest
/// row 2-norm of the input.
pub fn crank<T: Real>(m: &CMatrix<T>, tol: T) -> usize {
    let (rows, cols) = (m.rows(), m.cols());
    let scale = (0..rows)
        .map(|i| m.row(i).iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt())
        .fold(T::zero(), T::max);
    if scale == T::zero() || !scale.is_finite() {
        return 0;
    }
    let threshold = tol * scale;
    let mut a = m.clone();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (p, best) = (rank..rows)
            .map(|i| (i, a[(i, col)].norm()))
            .fold((rank, T::zero()), |b, c| if c.1 > b.1 { c } else { b });
        if best <= threshold {
            continue;
        }
        if p != rank {
            for j in 0..cols {
                let tmp = a[(rank, j)];
                a[(rank, j)] = a[(p, j)];
                a[(p, j)] = tmp;
            }
        }
        let pivot = a[(rank, col)];
        for i in rank + 1..rows {
            let f: Complex<T> = a[(i, col)] / pivot;
            if f.norm() == T::zero() {
                continue;
            }
            for j in col..cols {
                let v = a[(rank, j)];
                a[(i, j)] -= f * v;
            }
        }
        rank += 1;
    }
    rank
}

/// Numerical rank of a real matrix; see [`crank`].
pub fn rank<T: Real>(m: &Matrix<T>, tol: T) -> usize {
    crank(&CMatrix::from_real(m), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tol() -> f64 {
        DEFAULT_RANK_TOL
    }

    #[test]
    fn identity_and_zero() {
        assert_eq!(rank(&Matrix::<f64>::identity(4), tol()), 4);
        assert_eq!(rank(&Matrix::<f64>::zeros(3, 5), tol()), 0);
        assert_eq!(rank(&Matrix::<f64>::zeros(0, 0), tol()), 0);
    }

    #[test]
    fn rank_deficient() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[1.0, 0.0, 1.0]]);
        assert_eq!(rank(&m, tol()), 2);
    }

    #[test]
    fn rlc_transmission_matrix_at_exosystem_pole() {
        // [A - iI, B; C, D] for the RLC agent with R1 = 3, R2 = 1, C = L = 1.
        let i = Complex::new(0.0, 1.0);
        let re = |x: f64| Complex::new(0.25 * x, 0.0);
        let a = [[-1.0, -3.0], [3.0, -3.0]];
        let b = [[1.0, 1.0], [1.0, -3.0]];
        let c = [[-3.0, 3.0], [-1.0, -3.0]];
        let d = [[3.0, 3.0], [1.0, 1.0]];
        let m = CMatrix::from_fn(4, 4, |r, k| match (r < 2, k < 2) {
            (true, true) => re(a[r][k]) - if r == k { i } else { re(0.0) },
            (true, false) => re(b[r][k - 2]),
            (false, true) => re(c[r - 2][k]),
            (false, false) => re(d[r - 2][k - 2]),
        });
        assert_eq!(crank(&m, tol()), 4);
    }

    #[test]
    fn complex_rank_one() {
        let i = Complex::new(0.0_f64, 1.0);
        let one = Complex::new(1.0, 0.0);
        let m = CMatrix::from_fn(2, 2, |r, c| match (r, c) {
            (0, 0) => one,
            (0, 1) => i,
            (1, 0) => i,
            _ => -one,
        });
        assert_eq!(crank(&m, tol()), 1);
    }

    proptest! {
        #[test]
        fn row_scaling_preserves_rank(
            entries in prop::collection::vec(-5.0f64..5.0, 12),
            scales in prop::collection::vec(1e-2f64..1e2, 3),
            drop in 0usize..3,
        ) {
            let mut m = Matrix::from_row_major(3, 4, entries).unwrap();
            for j in 0..4 {
                m[(drop, j)] = m[((drop + 1) % 3, j)] * 2.0;
            }
            let r0 = rank(&m, tol());
            let scaled = Matrix::from_fn(3, 4, |i, j| m[(i, j)] * scales[i]);
            prop_assert_eq!(rank(&scaled, tol()), r0);
            prop_assert!(r0 <= 2);
        }
    }
}
