//! Post-run certification of prescribed-time convergence.

use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::ObserverRate;
use crate::numerics::{norm2, sym_eigvals, Matrix, NumericsError};
use crate::sim::{MuSchedule, SimError, Trajectory};

#[derive(Debug, Clone, Error)]
pub enum AnalysisError {
    #[error("trajectory has no samples")]
    Empty,
    #[error("trajectory ends at t = {last} before the horizon T + t0 = {end}")]
    EndsBeforeHorizon { last: f64, end: f64 },
    #[error("no sample before the horizon T + t0 = {end}")]
    NoPreHorizonSample { end: f64 },
    #[error("run `{label}` covers [{first}, {last}], which does not contain t = {t}")]
    OutOfRange {
        label: String,
        t: f64,
        first: f64,
        last: f64,
    },
    #[error("run failed: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Convergence thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Bound on `||e||` after the horizon.
    pub post_tol: f64,
}

impl Tolerances {
    /// `post_tol` defaults to twice `tol_abs`.
    pub fn new(tol_abs: f64, tol_rel: f64) -> Self {
        Self {
            tol_abs,
            tol_rel,
            post_tol: 2.0 * tol_abs,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::new(1e-2, 1e-3)
    }
}

/// Explicit decay bound of the distributed observer error,
/// `||v~(t)|| <= scale ||v~(t0)|| kappa^exponent exp(growth (t - t0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverEnvelope {
    /// `sqrt(lambda_max(P_H) / lambda_min(P_H))`
    pub scale: f64,
    /// `psi rho_H`
    pub exponent: f64,
    /// `||P_H|| ||S0|| / lambda_min(P_H)`
    pub growth: f64,
}

impl ObserverEnvelope {
    pub fn new(rate: &ObserverRate<f64>, psi: f64, s0: &Matrix<f64>) -> Result<Self, AnalysisError> {
        let eigs = sym_eigvals(&rate.p_h)?;
        let lo = eigs.first().copied().unwrap_or(1.0);
        let hi = eigs.last().copied().unwrap_or(1.0);
        let p_norm = rate.p_h.norm_spectral()?;
        let s_norm = s0.norm_spectral()?;
        Ok(Self {
            scale: (hi / lo).sqrt(),
            exponent: psi * rate.rho_h,
            growth: p_norm * s_norm / lo,
        })
    }

    pub fn bound(&self, v_tilde0: f64, kappa: f64, elapsed: f64) -> f64 {
        self.scale * v_tilde0 * kappa.powf(self.exponent) * (self.growth * elapsed).exp()
    }
}

/// Optional shape checks beyond the tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Envelopes {
    pub observer: Option<ObserverEnvelope>,
    /// Expected decay exponent of `||x_bar||` in `kappa`, usually `min(theta, psi rho_H)`.
    pub xbar_exponent: Option<f64>,
}

/// Regulated-output summary of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub e0: f64,
    pub e_at_t: f64,
    pub e_post_max: f64,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub settled: bool,
    pub tolerances: Tolerances,
    pub e0: f64,
    /// Sample time at which `e_at_t` was taken, the last one before the horizon.
    pub t_at_t: f64,
    pub e_at_t: f64,
    pub e_post_max: f64,
    pub envelope_checked: usize,
    pub envelope_violations: usize,
    pub phi_max: [Option<f64>; 4],
    pub finite_escape: bool,
    pub agents: Vec<AgentProfile>,
    /// Least-squares slope of `ln ||x_bar||` against `ln kappa` for `kappa` in `[1e-3, 1e-1]`.
    pub xbar_exponent: Option<f64>,
    pub xbar_expected: Option<f64>,
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn fit_exponent(traj: &Trajectory, sched: &MuSchedule) -> Option<f64> {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter_map(|s| {
            let k = sched.kappa(s.t);
            (s.t < sched.end() && (1e-3..=1e-1).contains(&k) && s.x_bar > 0.0).then(|| (k.ln(), s.x_bar.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn summarize(
    traj: &Trajectory,
    sched: &MuSchedule,
    tols: Tolerances,
    env: &Envelopes,
    escaped: bool,
) -> Result<ConvergenceReport, AnalysisError> {
    let first = traj.first().ok_or(AnalysisError::Empty)?;
    let end = sched.end();
    let pre = traj.samples.iter().rev().find(|s| s.t < end);
    if !escaped {
        let last = traj.last().map_or(f64::NEG_INFINITY, |s| s.t);
        if last < end {
            return Err(AnalysisError::EndsBeforeHorizon { last, end });
        }
        if pre.is_none() {
            return Err(AnalysisError::NoPreHorizonSample { end });
        }
    }
    let (t_at_t, e_at_t) = pre.map_or((f64::NAN, f64::INFINITY), |s| (s.t, s.e_norm));
    let post = || traj.samples.iter().filter(|s| s.t > end);
    let e_post_max = if escaped {
        f64::INFINITY
    } else {
        post().map(|s| s.e_norm).fold(0.0, f64::max)
    };

    let mut phi_max = [None; 4];
    for s in &traj.samples {
        for (m, p) in phi_max.iter_mut().zip(s.phi) {
            *m = max_opt(*m, p);
        }
    }

    let (mut checked, mut violations) = (0, 0);
    if let Some(obs) = &env.observer {
        for s in traj.samples.iter().filter(|s| s.mu < sched.mu_cap) {
            let bound = obs.bound(first.v_tilde, sched.kappa_effective(s.t), s.t - sched.t0);
            checked += 1;
            if s.v_tilde > bound * (1.0 + 1e-9) {
                violations += 1;
            }
        }
    }

    let agents = (0..traj.output_dims.len())
        .map(|i| {
            let e = |s| norm2(traj.agent_output(s, i));
            AgentProfile {
                e0: e(first),
                e_at_t: pre.map_or(f64::INFINITY, e),
                e_post_max: if escaped {
                    f64::INFINITY
                } else {
                    post().map(e).fold(0.0, f64::max)
                },
                e_max: traj.samples.iter().map(e).fold(0.0, f64::max),
            }
        })
        .collect();

    let settled = !escaped && e_at_t <= tols.tol_abs + tols.tol_rel * first.e_norm && e_post_max <= tols.post_tol;
    Ok(ConvergenceReport {
        settled,
        tolerances: tols,
        e0: first.e_norm,
        t_at_t,
        e_at_t,
        e_post_max,
        envelope_checked: checked,
        envelope_violations: violations,
        phi_max,
        finite_escape: escaped,
        agents,
        xbar_exponent: fit_exponent(traj, sched),
        xbar_expected: env.xbar_exponent,
    })
}

/// Certifies a completed run.
pub fn certify(
    traj: &Trajectory,
    sched: &MuSchedule,
    tols: Tolerances,
    env: &Envelopes,
) -> Result<ConvergenceReport, AnalysisError> {
    summarize(traj, sched, tols, env, false)
}

/// Certifies the outcome of [`crate::sim::integrate`]; a detected escape gives an unsettled report.
pub fn certify_run(
    run: &Result<Trajectory, SimError>,
    sched: &MuSchedule,
    tols: Tolerances,
    env: &Envelopes,
) -> Result<ConvergenceReport, AnalysisError> {
    match run {
        Ok(traj) => certify(traj, sched, tols, env),
        Err(SimError::FiniteEscape { partial, .. }) | Err(SimError::NonFinite { partial, .. }) => {
            summarize(partial, sched, tols, env, true)
        }
        Err(e) => Err(e.clone().into()),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), |v| format!("{v:e}"))
}

impl ConvergenceReport {
    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("settled", self.settled.to_string());
        kv("finite_escape", self.finite_escape.to_string());
        kv("tol_abs", format!("{:e}", self.tolerances.tol_abs));
        kv("tol_rel", format!("{:e}", self.tolerances.tol_rel));
        kv("post_tol", format!("{:e}", self.tolerances.post_tol));
        kv("e0", format!("{:e}", self.e0));
        kv("t_at_T", format!("{:e}", self.t_at_t));
        kv("e_at_T", format!("{:e}", self.e_at_t));
        kv("e_post_max", format!("{:e}", self.e_post_max));
        kv("envelope_checked", self.envelope_checked.to_string());
        kv("envelope_violations", self.envelope_violations.to_string());
        for (k, p) in self.phi_max.iter().enumerate() {
            kv(&format!("phi{}_max", k + 1), fmt_opt(*p));
        }
        kv("xbar_exponent", fmt_opt(self.xbar_exponent));
        kv("xbar_expected", fmt_opt(self.xbar_expected));
        for (i, a) in self.agents.iter().enumerate() {
            let i = i + 1;
            kv(&format!("agent{i}.e0"), format!("{:e}", a.e0));
            kv(&format!("agent{i}.e_at_T"), format!("{:e}", a.e_at_t));
            kv(&format!("agent{i}.e_post_max"), format!("{:e}", a.e_post_max));
            kv(&format!("agent{i}.e_max"), format!("{:e}", a.e_max));
        }
        s
    }
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    /// Time of the sample used.
    pub t: f64,
    pub e_norm: f64,
}

/// `||e||` of each run at its sample nearest `at`, sorted ascending; ties keep input order.
pub fn compare_runs(runs: &[(&str, &Trajectory)], at: f64) -> Result<Vec<ComparisonRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(runs.len());
    for (label, traj) in runs {
        let (first, last) = match (traj.first(), traj.last()) {
            (Some(f), Some(l)) => (f.t, l.t),
            _ => return Err(AnalysisError::Empty),
        };
        if !(first..=last).contains(&at) {
            return Err(AnalysisError::OutOfRange {
                label: label.to_string(),
                t: at,
                first,
                last,
            });
        }
        let s = traj.nearest(at).ok_or(AnalysisError::Empty)?;
        rows.push(ComparisonRow {
            label: label.to_string(),
            t: s.t,
            e_norm: s.e_norm,
        });
    }
    rows.sort_by(|a, b| a.e_norm.total_cmp(&b.e_norm));
    Ok(rows)
}

/// Comparison table as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("rank,run,t,||e||\n");
    for (k, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "{},{},{:e},{:e}", k + 1, r.label, r.t, r.e_norm);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{observer_rate, partition_laplacian, Network};
    use crate::sim::Sample;

    fn sample(t: f64, e: f64, mu: f64) -> Sample {
        Sample {
            t,
            mu,
            e_norm: e,
            v_tilde: e,
            x_bar: e,
            x_tilde: None,
            u_tilde: 0.0,
            phi: [Some(mu * e), None, None, None],
            e: vec![e],
        }
    }

    /// `e = kappa^2` sampled on a grid, schedule `T = 1`, `t0 = 0`.
    fn decaying() -> (Trajectory, MuSchedule) {
        let sched = MuSchedule::new(1.0, 0.0).unwrap();
        let mut samples: Vec<Sample> = (0..1000)
            .map(|k| {
                let t = k as f64 * 1e-3;
                sample(t, sched.kappa(t).powi(2), sched.mu(t).unwrap())
            })
            .collect();
        samples.push(sample(1.0, 0.0, 1.0));
        samples.push(sample(1.5, 0.0, 1.0));
        (
            Trajectory {
                output_dims: vec![1],
                samples,
                states: Vec::new(),
            },
            sched,
        )
    }

    #[test]
    fn zero_error_is_settled() {
        let sched = MuSchedule::new(1.0, 0.0).unwrap();
        let traj = Trajectory {
            output_dims: vec![1],
            samples: vec![sample(0.0, 0.0, 1.0), sample(0.5, 0.0, 2.0), sample(2.0, 0.0, 1.0)],
            states: Vec::new(),
        };
        let r = certify(&traj, &sched, Tolerances::default(), &Envelopes::default()).unwrap();
        assert!(r.settled);
        assert_eq!(r.e_at_t, 0.0);
        assert_eq!(r.t_at_t, 0.5);
    }

    #[test]
    fn decay_settles_and_fits_exponent() {
        let (traj, sched) = decaying();
        let env = Envelopes {
            observer: None,
            xbar_exponent: Some(2.0),
        };
        let r = certify(&traj, &sched, Tolerances::default(), &env).unwrap();
        assert!(r.settled);
        assert!((r.xbar_exponent.unwrap() - 2.0).abs() < 1e-9);
        // mu e = kappa / T peaks at the start.
        assert!((r.phi_max[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.phi_max[1], None);
    }

    #[test]
    fn late_error_is_not_settled() {
        let (mut traj, sched) = decaying();
        traj.samples.last_mut().unwrap().e_norm = 0.05;
        let r = certify(&traj, &sched, Tolerances::default(), &Envelopes::default()).unwrap();
        assert!(!r.settled);
        assert_eq!(r.e_post_max, 0.05);
    }

    #[test]
    fn requires_coverage_of_horizon() {
        let (mut traj, sched) = decaying();
        traj.samples.truncate(900);
        assert!(matches!(
            certify(&traj, &sched, Tolerances::default(), &Envelopes::default()),
            Err(AnalysisError::EndsBeforeHorizon { .. })
        ));
    }

    #[test]
    fn relative_tolerance_scales_with_initial_error() {
        let sched = MuSchedule::new(1.0, 0.0).unwrap();
        let traj = Trajectory {
            output_dims: vec![1],
            samples: vec![sample(0.0, 100.0, 1.0), sample(0.9, 0.1, 10.0), sample(1.1, 0.0, 1.0)],
            states: Vec::new(),
        };
        let tight = certify(&traj, &sched, Tolerances::default(), &Envelopes::default()).unwrap();
        assert!(tight.settled);
        let r = certify(&traj, &sched, Tolerances::new(1e-2, 0.0), &Envelopes::default()).unwrap();
        assert!(!r.settled);
    }

    #[test]
    fn observer_envelope_single_edge() {
        // H = 1 gives P_H = 1/2, rho_H = 1; scale 1, growth ||S0||.
        let net = Network::<f64>::chain(1);
        let rate = observer_rate(&partition_laplacian(&net)).unwrap();
        let s0 = Matrix::from_rows(&[&[0.0, 2.0], &[-2.0, 0.0]]);
        let env = ObserverEnvelope::new(&rate, 3.0, &s0).unwrap();
        assert!((env.scale - 1.0).abs() < 1e-12);
        assert!((env.exponent - 3.0).abs() < 1e-12);
        assert!((env.growth - 2.0).abs() < 1e-12);
        assert!((env.bound(2.0, 0.5, 0.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn envelope_violation_counted() {
        let (mut traj, sched) = decaying();
        let env = Envelopes {
            observer: Some(ObserverEnvelope {
                scale: 1.0,
                exponent: 2.0,
                growth: 0.0,
            }),
            xbar_exponent: None,
        };
        let r = certify(&traj, &sched, Tolerances::default(), &env).unwrap();
        assert_eq!(r.envelope_violations, 0);
        assert_eq!(r.envelope_checked, traj.len());
        traj.samples[500].v_tilde *= 1.01;
        let r = certify(&traj, &sched, Tolerances::default(), &env).unwrap();
        assert_eq!(r.envelope_violations, 1);
    }

    #[test]
    fn escape_gives_unsettled_report() {
        let (traj, sched) = decaying();
        let run = Err(SimError::FiniteEscape {
            t: 0.3,
            norm: 1e10,
            partial: Box::new(Trajectory {
                samples: traj.samples[..300].to_vec(),
                ..traj
            }),
        });
        let r = certify_run(&run, &sched, Tolerances::default(), &Envelopes::default()).unwrap();
        assert!(r.finite_escape && !r.settled);
        assert!(r.to_key_values().contains("settled = false"));
    }

    #[test]
    fn report_survives_csv_roundtrip() {
        let (traj, sched) = decaying();
        let back = Trajectory::read_csv(traj.to_csv_string().as_bytes()).unwrap();
        let env = Envelopes::default();
        let a = certify(&traj, &sched, Tolerances::default(), &env).unwrap();
        let b = certify(&back, &sched, Tolerances::default(), &env).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_key_values(), b.to_key_values());
    }

    #[test]
    fn comparison_ordering() {
        let (a, _) = decaying();
        let mut b = a.clone();
        for s in &mut b.samples {
            s.e_norm *= 2.0;
        }
        let rows = compare_runs(&[("slow", &b), ("fast", &a), ("fast2", &a)], 0.5).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["fast", "fast2", "slow"]);
        assert_eq!(rows[0].e_norm, rows[1].e_norm);
        assert_eq!(compare_runs(&[("one", &a)], 0.5).unwrap().len(), 1);
        assert!(matches!(
            compare_runs(&[("one", &a)], 3.0),
            Err(AnalysisError::OutOfRange { .. })
        ));
        assert!(comparison_csv(&rows).starts_with("rank,run,t,||e||\n1,fast,"));
    }
}
