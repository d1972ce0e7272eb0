use super::{eig, Lu, Matrix, NumericsError, Real};

/// Solves `P M + M^T P = Q` for symmetric `Q` by Kronecker vectorization.
///
/// The operator `M^T ⊗ I + I ⊗ M^T` is singular exactly when two eigenvalues
/// of `M` sum to zero; that case is reported as [`NumericsError::ResonantPair`].
/// The returned `P` is symmetrized.
pub fn solve_lyapunov<T: Real>(m: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if q.shape() != m.shape() {
        return Err(NumericsError::DimensionMismatch {
            op: "solve_lyapunov",
            left: m.shape(),
            right: q.shape(),
        });
    }
    if !m.is_finite() || !q.is_finite() {
        return Err(NumericsError::NonFinite { what: "Lyapunov data" });
    }
    let sym_tol = T::epsilon().sqrt() * T::one().max(q.max_abs());
    let asym = q.asymmetry();
    if asym > sym_tol {
        return Err(NumericsError::NotSymmetric {
            asymmetry: asym.as_f64(),
        });
    }

    let n = m.rows();
    let spectrum = eig(m)?;
    let scale = T::one().max(m.norm_inf());
    let res_tol = T::epsilon().sqrt() * T::lit(1e-1) * scale;
    let ev = spectrum.as_slice();
    for i in 0..ev.len() {
        for j in i..ev.len() {
            let s = (ev[i] + ev[j]).norm();
            if s <= res_tol {
                return Err(resonant(ev[i], ev[j], s));
            }
        }
    }

    let mt = m.transpose();
    let eye = Matrix::identity(n);
    let op = &mt.kron(&eye) + &eye.kron(&mt);
    let lu = match Lu::factor(&op) {
        Ok(lu) => lu,
        Err(NumericsError::Singular { .. }) => {
            let (a, b, s) = closest_pair(ev);
            return Err(resonant(a, b, s));
        }
        Err(e) => return Err(e),
    };
    let p = Matrix::from_col_major(n, n, &lu.solve(&q.vec_col_major()));
    Ok(p.symmetrized())
}

fn resonant<T: Real>(a: num_complex::Complex<T>, b: num_complex::Complex<T>, sum: T) -> NumericsError {
    NumericsError::ResonantPair {
        lambda_i: format!("{:.6e}{:+.6e}i", a.re.as_f64(), a.im.as_f64()),
        lambda_j: format!("{:.6e}{:+.6e}i", b.re.as_f64(), b.im.as_f64()),
        sum: sum.as_f64(),
    }
}

fn closest_pair<T: Real>(ev: &[num_complex::Complex<T>]) -> (num_complex::Complex<T>, num_complex::Complex<T>, T) {
    let mut best = (ev[0], ev[0], T::infinity());
    for i in 0..ev.len() {
        for j in i..ev.len() {
            let s = (ev[i] + ev[j]).norm();
            if s < best.2 {
                best = (ev[i], ev[j], s);
            }
        }
    }
    best
}
