//! Gain construction and certification.
//!
//! Rates are certified with `Q = I` throughout, so `theta`, `vartheta` and
//! `rho_H` are each `1 / (2 lambda_max(P))` for the relevant Lyapunov solution.

use std::fmt;

use thiserror::Error;

use crate::graph::ObserverRate;
use crate::numerics::{eig, solve_lyapunov, sym_eigvals, Matrix, NumericsError, Real};
use crate::plant::{AgentModel, RegulatorSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("gain multiplier must exceed 1, got {0}")]
    MultiplierTooSmall(f64),
    #[error("{what} must be square and invertible: {source}")]
    NotInvertible {
        what: &'static str,
        #[source]
        source: NumericsError,
    },
    #[error("closed-loop matrix is not Hurwitz (max Re lambda = {max_re:e})")]
    NotHurwitz { max_re: f64 },
    #[error("agent {agent}: {field} has shape {got:?}, expected {expected:?}")]
    Shape {
        agent: usize,
        field: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{agents} agents but {solutions} regulator solutions and {gains} gain blocks")]
    Count {
        agents: usize,
        solutions: usize,
        gains: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Controller structure being certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    StateFeedback,
    OutputFeedback,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StateFeedback => "state_fb",
            Mode::OutputFeedback => "output_fb",
        }
    }
}

/// Gains of one follower.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGains<T> {
    pub kbar: Matrix<T>,
    pub ktil: Matrix<T>,
    pub k: Matrix<T>,
    pub l: Matrix<T>,
    pub ltil: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet<T> {
    pub psi: T,
    pub agents: Vec<AgentGains<T>>,
}

/// Either a fixed matrix or a multiplier for the closed-form construction.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource<T> {
    Explicit(Matrix<T>),
    Synthesize { mbar: T },
}

/// Per-agent gain directives; unset entries default to zero, and an unset
/// `ktil` is derived from the regulator solution.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGainSpec<T> {
    pub kbar: Option<Matrix<T>>,
    pub ktil: Option<Matrix<T>>,
    pub k: GainSource<T>,
    pub l: Option<Matrix<T>>,
    pub ltil: Option<GainSource<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSpec<T> {
    pub psi: T,
    pub agents: Vec<AgentGainSpec<T>>,
}

/// `K = -B^{-1} mbar`, so that `B K = -mbar I`.
pub fn synthesize_k<T: Real>(b: &Matrix<T>, mbar: T) -> Result<Matrix<T>, SynthError> {
    if !(mbar > T::one()) {
        return Err(SynthError::MultiplierTooSmall(mbar.as_f64()));
    }
    let inv = b
        .inverse()
        .map_err(|source| SynthError::NotInvertible { what: "B", source })?;
    Ok(inv.scale(-mbar))
}

/// `Ltil = mbar Cm^{-1}`, so that `Ltil Cm = mbar I`.
pub fn synthesize_ltil<T: Real>(cm: &Matrix<T>, mbar: T) -> Result<Matrix<T>, SynthError> {
    if !(mbar > T::one()) {
        return Err(SynthError::MultiplierTooSmall(mbar.as_f64()));
    }
    let inv = cm
        .inverse()
        .map_err(|source| SynthError::NotInvertible { what: "Cm", source })?;
    Ok(inv.scale(mbar))
}

/// `max Re lambda(BK) < -1`.
pub fn check_ptor_state<T: Real>(b: &Matrix<T>, k: &Matrix<T>) -> Result<(bool, T), SynthError> {
    let max_re = eig(&b.try_mul(k)?)?.max_re().unwrap_or_else(T::zero);
    Ok((max_re < -T::one(), max_re))
}

/// `min Re lambda(Ltil Cm) > 1`.
pub fn check_ptor_output<T: Real>(ltil: &Matrix<T>, cm: &Matrix<T>) -> Result<(bool, T), SynthError> {
    let min_re = eig(&ltil.try_mul(cm)?)?.min_re().unwrap_or_else(T::zero);
    Ok((min_re > T::one(), min_re))
}

/// Solves `P M + M^T P = -I` for Hurwitz `M`; returns `(P, 1 / (2 lambda_max(P)))`.
pub fn certify_rate<T: Real>(mcl: &Matrix<T>) -> Result<(Matrix<T>, T), SynthError> {
    let max_re = eig(mcl)?.max_re().unwrap_or_else(T::zero);
    if !(max_re < T::zero()) {
        return Err(SynthError::NotHurwitz {
            max_re: max_re.as_f64(),
        });
    }
    let n = mcl.rows();
    let p = solve_lyapunov(&-mcl, &Matrix::identity(n))?;
    let hi = sym_eigvals(&p)?.last().copied().unwrap_or_else(T::one);
    Ok((p, T::one() / (T::lit(2.0) * hi)))
}

/// Fills in synthesized and derived gains.
pub fn realize_gains<T: Real>(
    spec: &GainSpec<T>,
    agents: &[AgentModel<T>],
    regs: &[RegulatorSolution<T>],
) -> Result<GainSet<T>, SynthError> {
    if agents.len() != regs.len() || agents.len() != spec.agents.len() {
        return Err(SynthError::Count {
            agents: agents.len(),
            solutions: regs.len(),
            gains: spec.agents.len(),
        });
    }
    let mut out = Vec::with_capacity(agents.len());
    for (i, ((g, agent), reg)) in spec.agents.iter().zip(agents).zip(regs).enumerate() {
        let (n, m, pm, q) = (agent.n(), agent.m(), agent.pm(), agent.q());
        let check = |field: &'static str, mat: &Matrix<T>, expected: (usize, usize)| {
            if mat.shape() == expected {
                Ok(())
            } else {
                Err(SynthError::Shape {
                    agent: i,
                    field,
                    expected,
                    got: mat.shape(),
                })
            }
        };
        let kbar = g.kbar.clone().unwrap_or_else(|| Matrix::zeros(m, n));
        check("Kbar", &kbar, (m, n))?;
        let ktil = match &g.ktil {
            Some(k) => k.clone(),
            None => &reg.u - &(&kbar * &reg.x),
        };
        check("Ktil", &ktil, (m, q))?;
        let k = match &g.k {
            GainSource::Explicit(k) => k.clone(),
            GainSource::Synthesize { mbar } => synthesize_k(&agent.b, *mbar)?,
        };
        check("K", &k, (m, n))?;
        let l = g.l.clone().unwrap_or_else(|| Matrix::zeros(n, pm));
        check("L", &l, (n, pm))?;
        let ltil = match &g.ltil {
            None => Matrix::zeros(n, pm),
            Some(GainSource::Explicit(l)) => l.clone(),
            Some(GainSource::Synthesize { mbar }) => synthesize_ltil(&agent.cm, *mbar)?,
        };
        check("Ltil", &ltil, (n, pm))?;
        out.push(AgentGains { kbar, ktil, k, l, ltil });
    }
    Ok(GainSet {
        psi: spec.psi,
        agents: out,
    })
}

/// Rates certified for one agent. `None` when the closed-loop matrix is not Hurwitz.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRates<T> {
    pub theta: Option<T>,
    pub p_k: Option<Matrix<T>>,
    pub vartheta: Option<T>,
    pub p_l: Option<Matrix<T>>,
}

/// `theta` from `BK` and `vartheta` from `-Ltil Cm`.
pub fn agent_rates<T: Real>(agent: &AgentModel<T>, gains: &AgentGains<T>) -> Result<AgentRates<T>, SynthError> {
    let split = |r: Result<(Matrix<T>, T), SynthError>| match r {
        Ok((p, rate)) => Ok((Some(rate), Some(p))),
        Err(SynthError::NotHurwitz { .. }) => Ok((None, None)),
        Err(e) => Err(e),
    };
    let (theta, p_k) = split(certify_rate(&agent.b.try_mul(&gains.k)?))?;
    let (vartheta, p_l) = split(certify_rate(&-&gains.ltil.try_mul(&agent.cm)?))?;
    Ok(AgentRates {
        theta,
        p_k,
        vartheta,
        p_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// One inequality and its measured outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub agent: Option<usize>,
    pub requirement: String,
    pub measured: f64,
    pub passed: bool,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionReport {
    pub conditions: Vec<Condition>,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn failures(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.passed)
    }

    pub fn has_errors(&self) -> bool {
        self.failures().any(|c| c.severity == Severity::Error)
    }

    pub fn find(&self, name: &str, agent: Option<usize>) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name && c.agent == agent)
    }

    /// Fixed-width table for terminal output.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<26} {:>5} {:>8} {:>14}  {}\n",
            "condition", "agent", "status", "measured", "requirement"
        );
        for c in &self.conditions {
            let agent = c.agent.map_or_else(|| "-".to_string(), |a| (a + 1).to_string());
            let status = if c.passed {
                "ok".to_string()
            } else {
                c.severity.to_string()
            };
            s.push_str(&format!(
                "{:<26} {:>5} {:>8} {:>14.6e}  {}\n",
                c.name, agent, status, c.measured, c.requirement
            ));
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

/// Checks every gain inequality for the chosen controller.
///
/// Violations are warnings because the conditions are sufficient only; an
/// inconsistent `Ktil` is an error.
pub fn verify_gains<T: Real>(
    mode: Mode,
    gains: &GainSet<T>,
    rates: &ObserverRate<T>,
    agents: &[AgentModel<T>],
    regs: &[RegulatorSolution<T>],
) -> Result<ConditionReport, SynthError> {
    if agents.len() != regs.len() || agents.len() != gains.agents.len() {
        return Err(SynthError::Count {
            agents: agents.len(),
            solutions: regs.len(),
            gains: gains.agents.len(),
        });
    }
    let f = |x: T| x.as_f64();
    let psi_rho = f(gains.psi * rates.rho_h);
    let mut report = ConditionReport::default();
    report.notes.push(format!(
        "rho_H = {:.6e} (Q_H = I), psi = {}, psi*rho_H = {:.6e}",
        f(rates.rho_h),
        f(gains.psi),
        psi_rho
    ));
    if mode == Mode::OutputFeedback {
        report.notes.push("||Ltil Fm|| is the spectral norm".to_string());
    }
    let mut push = |name, agent, requirement: String, measured: f64, passed: bool, severity| {
        report.conditions.push(Condition {
            name,
            agent,
            requirement,
            measured,
            passed,
            severity,
        })
    };
    push(
        "psi_rho_observer",
        None,
        "psi*rho_H > 1".to_string(),
        psi_rho,
        psi_rho > 1.0,
        Severity::Warning,
    );

    for (i, ((agent, g), reg)) in agents.iter().zip(&gains.agents).zip(regs).enumerate() {
        let a = Some(i);
        let derived = &reg.u - &(&g.kbar * &reg.x);
        let gap = f((&g.ktil - &derived).norm_inf());
        let tol = 1e-6 * f(reg.u.norm_inf()).max(1.0);
        push(
            "ktil_consistency",
            a,
            format!("||Ktil - (U - Kbar X)|| <= {tol:.1e}"),
            gap,
            gap <= tol,
            Severity::Error,
        );

        let (ok, max_re) = check_ptor_state(&agent.b, &g.k)?;
        push(
            "ptor_state",
            a,
            "max Re lambda(BK) < -1".to_string(),
            f(max_re),
            ok,
            Severity::Warning,
        );
        let r = agent_rates(agent, g)?;
        let theta = r.theta.map_or(f64::NAN, f);
        push(
            "theta_gt_1",
            a,
            "theta > 1".to_string(),
            theta,
            theta > 1.0,
            Severity::Warning,
        );
        push(
            "psi_rho_state",
            a,
            format!("psi*rho_H >= theta + 1 = {:.6e}", theta + 1.0),
            psi_rho,
            psi_rho >= theta + 1.0,
            Severity::Warning,
        );

        if mode == Mode::OutputFeedback {
            let (ok, min_re) = check_ptor_output(&g.ltil, &agent.cm)?;
            push(
                "ptor_output",
                a,
                "min Re lambda(Ltil Cm) > 1".to_string(),
                f(min_re),
                ok,
                Severity::Warning,
            );
            let vartheta = r.vartheta.map_or(f64::NAN, f);
            push(
                "vartheta_gt_1",
                a,
                "vartheta > 1".to_string(),
                vartheta,
                vartheta > 1.0,
                Severity::Warning,
            );
            push(
                "psi_rho_local_observer",
                a,
                format!("psi*rho_H >= vartheta + 1 = {:.6e}", vartheta + 1.0),
                psi_rho,
                psi_rho >= vartheta + 1.0,
                Severity::Warning,
            );
            push(
                "vartheta_margin",
                a,
                format!("vartheta >= theta + 3/2 = {:.6e}", theta + 1.5),
                vartheta,
                vartheta >= theta + 1.5,
                Severity::Warning,
            );
            let lf = f(g.ltil.try_mul(&agent.fm)?.norm_spectral()?);
            let bound = theta + 0.5 * lf * lf + 1.0;
            push(
                "psi_rho_output",
                a,
                format!("psi*rho_H >= theta + ||Ltil Fm||^2/2 + 1 = {bound:.6e}"),
                psi_rho,
                psi_rho >= bound,
                Severity::Warning,
            );
        }
    }
    Ok(report)
}

/// Exponents of a cascaded prescribed-time Lyapunov pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeRates<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub m_exp: T,
    pub n_exp: T,
    pub p_exp: T,
    pub alpha_star: T,
}

impl<T: Real> CascadeRates<T> {
    /// Instantiation used for the state-feedback loop: the observer drives the tracking error.
    pub fn state_feedback(theta: T, psi_rho: T) -> Self {
        let two = T::lit(2.0);
        Self {
            alpha1: two * psi_rho,
            alpha2: two * theta,
            m_exp: two,
            n_exp: two,
            p_exp: T::one(),
            alpha_star: theta - T::one(),
        }
    }
}

/// `alpha2 >= 2(p + alpha*)` and `alpha1 >= max(2(alpha2 + m)/n, 2(p + alpha*))`.
pub fn check_cascade_criterion<T: Real>(r: &CascadeRates<T>) -> bool {
    let two = T::lit(2.0);
    let floor = two * (r.p_exp + r.alpha_star);
    r.alpha2 >= floor && r.alpha1 >= (two * (r.alpha2 + r.m_exp) / r.n_exp).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{observer_rate, partition_laplacian, Network};
    use crate::plant::solve_regulator;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows)
    }

    fn b1() -> Matrix<f64> {
        m(&[&[1.0, 1.0], &[1.0, -3.0]]).scale(0.25)
    }

    fn cm1() -> Matrix<f64> {
        m(&[&[-1.0, -3.0], &[3.0, -3.0]]).scale(0.25)
    }

    fn k1() -> Matrix<f64> {
        m(&[&[-9.0, -3.0], &[-3.0, 3.0]])
    }

    fn ltil1() -> Matrix<f64> {
        m(&[&[-4.0, 4.0], &[-4.0, -4.0 / 3.0]])
    }

    #[test]
    fn ptor_state_cases() {
        let (ok, re) = check_ptor_state(&b1(), &k1()).unwrap();
        assert!(ok);
        assert!((re + 3.0).abs() < 1e-12);
        let (ok, re) = check_ptor_state(&b1(), &Matrix::zeros(2, 2)).unwrap();
        assert!(!ok && re == 0.0);
        let (ok, _) = check_ptor_state(&Matrix::identity(2), &Matrix::identity(2).scale(-1.0)).unwrap();
        assert!(!ok);
    }

    #[test]
    fn ptor_output_cases() {
        let (ok, re) = check_ptor_output(&ltil1(), &cm1()).unwrap();
        assert!(ok);
        assert!((re - 4.0).abs() < 1e-12);
        let (ok, re) = check_ptor_output(&Matrix::zeros(2, 2), &cm1()).unwrap();
        assert!(!ok && re == 0.0);
        let (ok, re) = check_ptor_output(&Matrix::identity(2).scale(2.0), &Matrix::identity(2)).unwrap();
        assert!(ok && re == 2.0);
    }

    #[test]
    fn synthesized_gains_match_rlc_values() {
        assert_eq!(
            synthesize_k(&Matrix::identity(2), 2.0).unwrap(),
            Matrix::identity(2).scale(-2.0)
        );
        let k = synthesize_k(&b1(), 3.0).unwrap();
        assert!((&(&b1() * &k) - &Matrix::identity(2).scale(-3.0)).max_abs() < 1e-12);
        assert!((&k - &k1()).max_abs() < 1e-12);
        assert!(matches!(
            synthesize_k(&b1(), 1.0),
            Err(SynthError::MultiplierTooSmall(_))
        ));

        assert_eq!(
            synthesize_ltil(&Matrix::identity(2), 4.0).unwrap(),
            Matrix::identity(2).scale(4.0)
        );
        let l = synthesize_ltil(&cm1(), 4.0).unwrap();
        assert!((&l - &ltil1()).max_abs() < 1e-12);
        // The printed gain rounds -4/3 to -1.33.
        assert!((l[(1, 1)] + 1.33).abs() < 5e-3);
        assert!(synthesize_ltil(&cm1(), 0.5).is_err());
        assert!(matches!(
            synthesize_k(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), 2.0),
            Err(SynthError::NotInvertible { .. })
        ));
    }

    #[test]
    fn certify_rate_cases() {
        let (p, rate) = certify_rate(&Matrix::<f64>::identity(2).scale(-5.0)).unwrap();
        assert!((&p - &Matrix::identity(2).scale(0.1)).max_abs() < 1e-15);
        assert!((rate - 5.0).abs() < 1e-12);
        let (_, rate) = certify_rate(&(&b1() * &k1())).unwrap();
        assert!((rate - 3.0).abs() < 1e-12);
        let (_, rate) = certify_rate(&m(&[&[-2.0, 1.0], &[0.0, -2.0]])).unwrap();
        assert!(rate <= 2.0 && rate > 0.0);
        assert!(matches!(
            certify_rate(&Matrix::<f64>::identity(2)),
            Err(SynthError::NotHurwitz { .. })
        ));
    }

    #[test]
    fn cascade_cases() {
        for theta in [1.5, 3.0, 10.0] {
            assert!(check_cascade_criterion(&CascadeRates::state_feedback(
                theta,
                theta + 1.0
            )));
            assert!(!check_cascade_criterion(&CascadeRates::state_feedback(
                theta,
                theta + 0.99
            )));
        }
        let mut r = CascadeRates::state_feedback(3.0, 4.0);
        r.alpha1 = 2.0 * (r.p_exp + r.alpha_star) - 1e-9;
        assert!(!check_cascade_criterion(&r));
        let small = CascadeRates {
            alpha1: 0.1,
            alpha2: 0.1,
            m_exp: 0.1,
            n_exp: 0.1,
            p_exp: 0.01,
            alpha_star: 0.01,
        };
        // 0.1 >= 0.04 holds; 0.1 >= max(4, 0.04) does not.
        assert!(!check_cascade_criterion(&small));
    }

    fn rlc_setup() -> (AgentModel<f64>, RegulatorSolution<f64>, ObserverRate<f64>) {
        let s = |rows: &[&[f64]]| m(rows).scale(0.25);
        let agent = AgentModel {
            a: s(&[&[-1.0, -3.0], &[3.0, -3.0]]),
            b: b1(),
            e: Matrix::zeros(2, 2),
            c: s(&[&[-3.0, 3.0], &[-1.0, -3.0]]),
            d: s(&[&[3.0, 3.0], &[1.0, 1.0]]),
            f: Matrix::identity(2),
            cm: cm1(),
            dm: s(&[&[1.0, 1.0], &[3.0, -3.0]]),
            fm: Matrix::zeros(2, 2),
        };
        let exo = crate::plant::Exosystem {
            s0: m(&[&[0.0, 1.0], &[-1.0, 0.0]]),
            v0_init: vec![1.0, 1.0],
        };
        let reg = solve_regulator(&agent, &exo).unwrap();
        let rate = observer_rate(&partition_laplacian(&Network::chain(6))).unwrap();
        (agent, reg, rate)
    }

    fn rlc_gains(reg: &RegulatorSolution<f64>, psi: f64, n: usize) -> GainSet<f64> {
        let g = AgentGains {
            kbar: Matrix::zeros(2, 2),
            ktil: reg.u.clone(),
            k: k1(),
            l: m(&[&[1.0, -2.0], &[2.0, -0.3]]),
            ltil: ltil1(),
        };
        GainSet {
            psi,
            agents: vec![g; n],
        }
    }

    #[test]
    fn rlc_verification() {
        let (agent, reg, rate) = rlc_setup();
        let agents = vec![agent; 6];
        let regs = vec![reg.clone(); 6];
        let gains = rlc_gains(&reg, 8.0, 6);

        let rep = verify_gains(Mode::StateFeedback, &gains, &rate, &agents, &regs).unwrap();
        assert!(!rep.has_errors());
        let t = rep.find("theta_gt_1", Some(0)).unwrap();
        assert!(t.passed && (t.measured - 3.0).abs() < 1e-9);
        // rho_H of the six-node chain is far below (theta + 1) / psi.
        assert!(!rep.find("psi_rho_state", Some(0)).unwrap().passed);
        assert!(rep.find("psi_rho_observer", None).unwrap().passed);
        assert!(rep.find("vartheta_margin", Some(0)).is_none());

        let rep = verify_gains(Mode::OutputFeedback, &gains, &rate, &agents, &regs).unwrap();
        let v = rep.find("vartheta_margin", Some(3)).unwrap();
        assert!(!v.passed && (v.measured - 4.0).abs() < 1e-9);
        assert_eq!(v.severity, Severity::Warning);
        assert!(rep.find("ptor_output", Some(5)).unwrap().passed);
        // Every inequality appears exactly once per agent.
        assert_eq!(rep.conditions.len(), 1 + 6 * 9);

        let zero = rlc_gains(&reg, 0.0, 6);
        let rep = verify_gains(Mode::StateFeedback, &zero, &rate, &agents, &regs).unwrap();
        assert!(!rep.find("psi_rho_state", Some(0)).unwrap().passed);
    }

    #[test]
    fn inconsistent_ktil_is_error() {
        let (agent, reg, rate) = rlc_setup();
        let mut gains = rlc_gains(&reg, 8.0, 1);
        gains.agents[0].ktil = Matrix::zeros(2, 2);
        let rep = verify_gains(Mode::StateFeedback, &gains, &rate, &[agent], &[reg]).unwrap();
        assert!(rep.has_errors());
        assert!(rep.render_table().contains("ktil_consistency"));
    }

    #[test]
    fn missing_regulator_solution() {
        let (agent, reg, rate) = rlc_setup();
        let gains = rlc_gains(&reg, 8.0, 1);
        assert!(matches!(
            verify_gains(Mode::StateFeedback, &gains, &rate, &[agent], &[]),
            Err(SynthError::Count { .. })
        ));
    }

    #[test]
    fn realize_derives_ktil_and_synthesizes() {
        let (agent, reg, _) = rlc_setup();
        let spec = GainSpec {
            psi: 8.0,
            agents: vec![AgentGainSpec {
                kbar: Some(m(&[&[1.0, 0.0], &[0.0, 1.0]])),
                ktil: None,
                k: GainSource::Synthesize { mbar: 3.0 },
                l: None,
                ltil: Some(GainSource::Synthesize { mbar: 4.0 }),
            }],
        };
        let g = realize_gains(&spec, &[agent], std::slice::from_ref(&reg)).unwrap();
        let a = &g.agents[0];
        assert!((&a.ktil - &(&reg.u - &reg.x)).max_abs() < 1e-15);
        assert!((&a.k - &k1()).max_abs() < 1e-12);
        assert!((&a.ltil - &ltil1()).max_abs() < 1e-12);
        assert_eq!(a.l, Matrix::zeros(2, 2));
    }

    proptest! {
        #[test]
        fn certify_rate_recovers_multiplier(mbar in 0.01f64..100.0) {
            let (_, rate) = certify_rate(&Matrix::identity(3).scale(-mbar)).unwrap();
            prop_assert!((rate - mbar).abs() <= 1e-9 * mbar.max(1.0));
        }

        #[test]
        fn synthesized_k_passes_ptor(
            entries in prop::collection::vec(-3.0f64..3.0, 4),
            mbar in 1.01f64..20.0,
        ) {
            let b = Matrix::from_row_major(2, 2, entries).unwrap();
            let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
            prop_assume!(det.abs() > 1e-2);
            let k = synthesize_k(&b, mbar).unwrap();
            prop_assert!(check_ptor_state(&b, &k).unwrap().0);
        }

        #[test]
        fn rate_is_invariant_to_joint_scaling(s in 0.1f64..10.0) {
            // Scaling Q by s scales P by s, leaving lambda_min(Q) / (2 lambda_max(P)) fixed.
            let mcl = m(&[&[-2.0, 1.0], &[0.5, -3.0]]);
            let (_, rate) = certify_rate(&mcl).unwrap();
            let p = solve_lyapunov(&-&mcl, &Matrix::identity(2).scale(s)).unwrap();
            let hi = sym_eigvals(&p).unwrap()[1];
            prop_assert!((s / (2.0 * hi) - rate).abs() <= 1e-10 * rate);
        }

        #[test]
        fn lowering_psi_flips_one_line(drop in 0.01f64..0.5) {
            let (agent, reg, rate) = rlc_setup();
            let mut fast = agent.clone();
            fast.b = Matrix::identity(2);
            let regs = vec![reg.clone(), solve_regulator(&fast, &crate::plant::Exosystem {
                s0: m(&[&[0.0, 1.0], &[-1.0, 0.0]]),
                v0_init: vec![1.0, 1.0],
            }).unwrap()];
            let agents = vec![agent, fast];
            let mut gains = rlc_gains(&reg, 1.0, 2);
            gains.agents[1].ktil = regs[1].u.clone();
            gains.agents[1].k = Matrix::identity(2).scale(-5.0);
            // theta = 3 for agent 0 and 5 for agent 1; sit exactly on agent 1's bound.
            gains.psi = 6.0 * (1.0 + 1e-12) / rate.rho_h;
            let at = verify_gains(Mode::StateFeedback, &gains, &rate, &agents, &regs).unwrap();
            gains.psi = (6.0 - drop) / rate.rho_h;
            let below = verify_gains(Mode::StateFeedback, &gains, &rate, &agents, &regs).unwrap();
            let flips: Vec<_> = at
                .conditions
                .iter()
                .zip(&below.conditions)
                .filter(|(a, b)| a.passed != b.passed)
                .map(|(a, _)| (a.name, a.agent))
                .collect();
            prop_assert_eq!(flips, vec![("psi_rho_state", Some(1))]);
        }
    }
}
