//! Follower and exosystem models, structural checks and the regulator equations.

use num_complex::Complex;
use thiserror::Error;

use crate::numerics::{crank, eig, rank, solve_block_linear, CMatrix, Matrix, NumericsError, Real};

/// Absolute tolerance for merging repeated exosystem eigenvalues.
pub const EIG_DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("{field}: expected {expected:?}, got {got:?}")]
    Shape {
        field: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{field}: non-finite entry")]
    NonFinite { field: &'static str },
    #[error("regulator equations need as many inputs as regulated outputs (m = {m}, p = {p})")]
    NonSquareIo { m: usize, p: usize },
    #[error(
        "regulator equations are singular: the transmission rank condition fails \
         at exosystem eigenvalue {eigenvalue} (rank {rank} < {required})"
    )]
    RankCondition {
        eigenvalue: String,
        rank: usize,
        required: usize,
    },
    #[error("regulator equations are numerically singular ({0}); the transmission rank condition fails numerically")]
    Singular(NumericsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One follower: `x' = Ax + Bu + Ev0`, `e = Cx + Du + Fv0`, `y = Cm x + Dm u + Fm v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub e: Matrix<T>,
    pub c: Matrix<T>,
    pub d: Matrix<T>,
    pub f: Matrix<T>,
    pub cm: Matrix<T>,
    pub dm: Matrix<T>,
    pub fm: Matrix<T>,
}

impl<T: Real> AgentModel<T> {
    /// Checks that all nine matrices agree on `(n, m, p, pm, q)`.
    pub fn validate(&self) -> Result<(), PlantError> {
        let n = self.a.rows();
        let m = self.b.cols();
        let p = self.c.rows();
        let pm = self.cm.rows();
        let q = self.e.cols();
        let expect = [
            ("A", &self.a, (n, n)),
            ("B", &self.b, (n, m)),
            ("E", &self.e, (n, q)),
            ("C", &self.c, (p, n)),
            ("D", &self.d, (p, m)),
            ("F", &self.f, (p, q)),
            ("Cm", &self.cm, (pm, n)),
            ("Dm", &self.dm, (pm, m)),
            ("Fm", &self.fm, (pm, q)),
        ];
        for (field, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(PlantError::Shape {
                    field,
                    expected: shape,
                    got: mat.shape(),
                });
            }
            if !mat.is_finite() {
                return Err(PlantError::NonFinite { field });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn pm(&self) -> usize {
        self.cm.rows()
    }

    pub fn q(&self) -> usize {
        self.e.cols()
    }
}

/// Leader dynamics `v0' = S0 v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem<T> {
    pub s0: Matrix<T>,
    pub v0_init: Vec<T>,
}

impl<T: Real> Exosystem<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        let q = self.s0.rows();
        if self.s0.shape() != (q, q) {
            return Err(PlantError::Shape {
                field: "S0",
                expected: (q, q),
                got: self.s0.shape(),
            });
        }
        if self.v0_init.len() != q {
            return Err(PlantError::Shape {
                field: "v0",
                expected: (q, 1),
                got: (self.v0_init.len(), 1),
            });
        }
        if !self.s0.is_finite() {
            return Err(PlantError::NonFinite { field: "S0" });
        }
        if self.v0_init.iter().any(|x| !x.is_finite()) {
            return Err(PlantError::NonFinite { field: "v0" });
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.s0.rows()
    }

    /// Returns a message when some eigenvalue of `S0` has positive real part.
    pub fn neutral_stability_warning(&self) -> Result<Option<String>, PlantError> {
        let spec = eig(&self.s0)?;
        let tol = T::lit(1e-9) * T::one().max(self.s0.norm_inf());
        Ok(match spec.max_re() {
            Some(re) if re > tol => Some(format!(
                "exosystem is not neutrally stable: max Re(lambda(S0)) = {:.6e}",
                re.as_f64()
            )),
            _ => None,
        })
    }
}

/// Rank of `[A - cI, B; C, D]` at one exosystem eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCheck<T> {
    pub eigenvalue: Complex<T>,
    pub rank: usize,
    pub required: usize,
}

impl<T> RankCheck<T> {
    pub fn ok(&self) -> bool {
        self.rank == self.required
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulationRank<T> {
    pub details: Vec<RankCheck<T>>,
}

impl<T> RegulationRank<T> {
    pub fn passed(&self) -> bool {
        self.details.iter().all(RankCheck::ok)
    }
}

/// Transmission-zero condition at every distinct eigenvalue of `S0`.
pub fn check_regulation_rank<T: Real>(
    agent: &AgentModel<T>,
    exo: &Exosystem<T>,
) -> Result<RegulationRank<T>, PlantError> {
    let (n, p) = (agent.n(), agent.p());
    let spectrum = eig(&exo.s0)?;
    let tol = T::lit(crate::numerics::DEFAULT_RANK_TOL);
    let details = spectrum
        .distinct(T::lit(EIG_DEDUP_TOL))
        .into_iter()
        .map(|c| {
            let mut top = CMatrix::from_real(&agent.a);
            for i in 0..n {
                top[(i, i)] -= c;
            }
            let m = agent.m();
            let full = CMatrix::from_fn(n + p, n + m, |i, j| match (i < n, j < n) {
                (true, true) => top[(i, j)],
                (true, false) => Complex::new(agent.b[(i, j - n)], T::zero()),
                (false, true) => Complex::new(agent.c[(i - n, j)], T::zero()),
                (false, false) => Complex::new(agent.d[(i - n, j - n)], T::zero()),
            });
            RankCheck {
                eigenvalue: c,
                rank: crank(&full, tol),
                required: n + p,
            }
        })
        .collect();
    Ok(RegulationRank { details })
}

/// `rank(B) = rank(Cm) = n`.
pub fn check_full_rank_io<T: Real>(agent: &AgentModel<T>) -> bool {
    let tol = T::lit(crate::numerics::DEFAULT_RANK_TOL);
    let n = agent.n();
    rank(&agent.b, tol) == n && rank(&agent.cm, tol) == n
}

/// Solution `(X, U)` of `X S0 = A X + B U + E`, `0 = C X + D U + F`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution<T> {
    pub x: Matrix<T>,
    pub u: Matrix<T>,
}

impl<T: Real> RegulatorSolution<T> {
    /// Infinity norms of the two regulator-equation residuals.
    pub fn residuals(&self, agent: &AgentModel<T>, exo: &Exosystem<T>) -> (T, T) {
        let (rx, re) = self.residual_matrices(agent, exo);
        (rx.norm_inf(), re.norm_inf())
    }

    /// `A X + B U + E - X S0` and `C X + D U + F`.
    pub fn residual_matrices(&self, agent: &AgentModel<T>, exo: &Exosystem<T>) -> (Matrix<T>, Matrix<T>) {
        let rx = &(&(&(&agent.a * &self.x) + &(&agent.b * &self.u)) + &agent.e) - &(&self.x * &exo.s0);
        let re = &(&(&agent.c * &self.x) + &(&agent.d * &self.u)) + &agent.f;
        (rx, re)
    }
}

/// The vectorized regulator equations as one square system in `[vec X; vec U]`.
pub fn regulator_system<T: Real>(agent: &AgentModel<T>, exo: &Exosystem<T>) -> Result<(Matrix<T>, Vec<T>), PlantError> {
    agent.validate()?;
    exo.validate()?;
    let (n, m, p, q) = (agent.n(), agent.m(), agent.p(), exo.q());
    if agent.q() != q {
        return Err(PlantError::Shape {
            field: "E",
            expected: (n, q),
            got: agent.e.shape(),
        });
    }
    if m != p {
        return Err(PlantError::NonSquareIo { m, p });
    }
    let iq = Matrix::identity(q);
    let top_left = &exo.s0.transpose().kron(&Matrix::identity(n)) - &iq.kron(&agent.a);
    let top_right = -&iq.kron(&agent.b);
    let bottom_left = iq.kron(&agent.c);
    let bottom_right = iq.kron(&agent.d);
    let lhs = Matrix::try_block2x2(&top_left, &top_right, &bottom_left, &bottom_right)?;
    let mut rhs = agent.e.vec_col_major();
    rhs.extend(agent.f.vec_col_major().into_iter().map(|x| -x));
    Ok((lhs, rhs))
}

pub fn solve_regulator<T: Real>(agent: &AgentModel<T>, exo: &Exosystem<T>) -> Result<RegulatorSolution<T>, PlantError> {
    let (lhs, rhs) = regulator_system(agent, exo)?;
    let ranks = check_regulation_rank(agent, exo)?;
    if let Some(bad) = ranks.details.iter().find(|r| !r.ok()) {
        return Err(PlantError::RankCondition {
            eigenvalue: format!("{:.6e}{:+.6e}i", bad.eigenvalue.re.as_f64(), bad.eigenvalue.im.as_f64()),
            rank: bad.rank,
            required: bad.required,
        });
    }
    let mut sol = solve_block_linear(&lhs, &rhs).map_err(|e| match e {
        NumericsError::Singular { .. } => PlantError::Singular(e),
        other => PlantError::Numerics(other),
    })?;
    // One round of iterative refinement tightens residuals for badly scaled plants.
    let r: Vec<T> = lhs.mul_vec(&sol).iter().zip(&rhs).map(|(&a, &b)| b - a).collect();
    let corr = solve_block_linear(&lhs, &r)?;
    for (s, c) in sol.iter_mut().zip(corr) {
        *s += c;
    }
    let (n, m, q) = (agent.n(), agent.m(), exo.q());
    Ok(RegulatorSolution {
        x: Matrix::from_col_major(n, q, &sol[..n * q]),
        u: Matrix::from_col_major(m, q, &sol[n * q..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows)
    }

    fn scalar_agent(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> AgentModel<f64> {
        AgentModel {
            a: m(&[&[a]]),
            b: m(&[&[b]]),
            e: m(&[&[e]]),
            c: m(&[&[c]]),
            d: m(&[&[d]]),
            f: m(&[&[f]]),
            cm: m(&[&[1.0]]),
            dm: m(&[&[0.0]]),
            fm: m(&[&[0.0]]),
        }
    }

    fn scalar_exo() -> Exosystem<f64> {
        Exosystem {
            s0: m(&[&[0.0]]),
            v0_init: vec![1.0],
        }
    }

    pub(crate) fn rlc_agent() -> AgentModel<f64> {
        let s = |rows: &[&[f64]]| m(rows).scale(0.25);
        AgentModel {
            a: s(&[&[-1.0, -3.0], &[3.0, -3.0]]),
            b: s(&[&[1.0, 1.0], &[1.0, -3.0]]),
            e: Matrix::zeros(2, 2),
            c: s(&[&[-3.0, 3.0], &[-1.0, -3.0]]),
            d: s(&[&[3.0, 3.0], &[1.0, 1.0]]),
            f: Matrix::identity(2),
            cm: s(&[&[-1.0, -3.0], &[3.0, -3.0]]),
            dm: s(&[&[1.0, 1.0], &[3.0, -3.0]]),
            fm: Matrix::zeros(2, 2),
        }
    }

    fn rotation_exo() -> Exosystem<f64> {
        Exosystem {
            s0: m(&[&[0.0, 1.0], &[-1.0, 0.0]]),
            v0_init: vec![1.0, 1.0],
        }
    }

    #[test]
    fn scalar_rank_cases() {
        let ok = scalar_agent(-1.0, 1.0, 1.0, 0.0, 0.0, -1.0);
        let r = check_regulation_rank(&ok, &scalar_exo()).unwrap();
        assert!(r.passed());
        assert_eq!(r.details[0].rank, 2);
        let no_input = scalar_agent(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let r = check_regulation_rank(&no_input, &scalar_exo()).unwrap();
        assert!(!r.passed());
        assert_eq!(r.details[0].rank, 1);
        assert!(matches!(
            solve_regulator(&no_input, &scalar_exo()),
            Err(PlantError::RankCondition { .. })
        ));
    }

    #[test]
    fn scalar_regulator() {
        let agent = scalar_agent(-1.0, 1.0, 1.0, 0.0, 0.0, -1.0);
        let sol = solve_regulator(&agent, &scalar_exo()).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((sol.u[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_forcing_gives_zero_solution() {
        let mut agent = rlc_agent();
        agent.f = Matrix::zeros(2, 2);
        let sol = solve_regulator(&agent, &rotation_exo()).unwrap();
        assert_eq!(sol.x.max_abs(), 0.0);
        assert_eq!(sol.u.max_abs(), 0.0);
    }

    #[test]
    fn rlc_regulator_values() {
        let agent = rlc_agent();
        let exo = rotation_exo();
        let r = check_regulation_rank(&agent, &exo).unwrap();
        assert!(r.passed());
        assert_eq!(r.details.len(), 2);
        let sol = solve_regulator(&agent, &exo).unwrap();
        let x = m(&[&[-1.0, 0.0], &[-1.0 / 3.0, 1.0]]);
        let u = m(&[&[-2.0, -1.0 / 3.0], &[0.0, -2.0 / 3.0]]);
        assert!((&sol.x - &x).max_abs() < 1e-12);
        assert!((&sol.u - &u).max_abs() < 1e-12);
        let (rx, re) = sol.residuals(&agent, &exo);
        assert!(rx <= 1e-10 && re <= 1e-10);
    }

    #[test]
    fn full_rank_io() {
        assert!(check_full_rank_io(&rlc_agent()));
        let mut agent = rlc_agent();
        agent.b = m(&[&[1.0], &[0.0]]);
        agent.d = m(&[&[0.0], &[0.0]]);
        agent.dm = m(&[&[0.0], &[0.0]]);
        assert!(agent.validate().is_ok());
        assert!(!check_full_rank_io(&agent));
    }

    #[test]
    fn shape_errors_name_field() {
        let mut agent = rlc_agent();
        agent.d = Matrix::zeros(3, 2);
        match agent.validate() {
            Err(PlantError::Shape { field, .. }) => assert_eq!(field, "D"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_square_io_rejected() {
        let mut agent = rlc_agent();
        agent.c = Matrix::zeros(1, 2);
        agent.d = Matrix::zeros(1, 2);
        agent.f = Matrix::zeros(1, 2);
        assert!(matches!(
            solve_regulator(&agent, &rotation_exo()),
            Err(PlantError::NonSquareIo { m: 2, p: 1 })
        ));
    }

    #[test]
    fn unstable_exosystem_warns() {
        let exo = Exosystem {
            s0: m(&[&[0.0, 0.75], &[2.5, 0.0]]),
            v0_init: vec![0.0, 0.0],
        };
        assert!(exo.neutral_stability_warning().unwrap().is_some());
        assert!(rotation_exo().neutral_stability_warning().unwrap().is_none());
    }

    proptest! {
        #[test]
        fn permuted_system_gives_same_solution(
            seed in prop::collection::vec(0usize..1000, 8),
            fscale in -2.0f64..2.0,
        ) {
            let mut agent = rlc_agent();
            agent.f = Matrix::identity(2).scale(fscale);
            agent.e = m(&[&[0.3, -0.1], &[0.0, 0.7]]);
            let exo = rotation_exo();
            let sol = solve_regulator(&agent, &exo).unwrap();
            let (lhs, rhs) = regulator_system(&agent, &exo).unwrap();
            let n = rhs.len();
            let mut perm: Vec<usize> = (0..n).collect();
            for (k, s) in seed.iter().enumerate() {
                perm.swap(k % n, s % n);
            }
            let plhs = Matrix::from_fn(n, n, |i, j| lhs[(perm[i], j)]);
            let prhs: Vec<f64> = perm.iter().map(|&i| rhs[i]).collect();
            let z = solve_block_linear(&plhs, &prhs).unwrap();
            let mut direct = sol.x.vec_col_major();
            direct.extend(sol.u.vec_col_major());
            for (a, b) in direct.iter().zip(&z) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
