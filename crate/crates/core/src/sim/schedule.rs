use super::SimError;

pub const DEFAULT_MU_CAP: f64 = 1e6;

/// `mu(t) = 1 / (T + t0 - t)` before the horizon, `a` afterwards, capped at `mu_cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSchedule {
    pub horizon: f64,
    pub t0: f64,
    pub a: f64,
    pub mu_cap: f64,
}

impl MuSchedule {
    /// Schedule with `a = 1/T` and the default cap.
    pub fn new(horizon: f64, t0: f64) -> Result<Self, SimError> {
        Self::with(horizon, t0, 1.0 / horizon, DEFAULT_MU_CAP)
    }

    pub fn with(horizon: f64, t0: f64, a: f64, mu_cap: f64) -> Result<Self, SimError> {
        let s = Self { horizon, t0, a, mu_cap };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSchedule(m.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("T must be positive");
        }
        if !self.t0.is_finite() {
            return bad("t0 must be finite");
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad("a must be positive");
        }
        if !(self.mu_cap.is_finite() && self.mu_cap >= self.a && self.mu_cap >= 1.0 / self.horizon) {
            return bad("mu_cap must be finite and at least max(a, 1/T)");
        }
        Ok(())
    }

    /// End of the horizon, `T + t0`.
    pub fn end(&self) -> f64 {
        self.t0 + self.horizon
    }

    /// Clamp gap before the horizon, `1 / mu_cap`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.mu_cap
    }

    pub fn mu(&self, t: f64) -> Result<f64, SimError> {
        if t < self.t0 {
            return Err(SimError::BeforeStart { t, t0: self.t0 });
        }
        Ok(self.mu_unchecked(t))
    }

    pub(crate) fn mu_unchecked(&self, t: f64) -> f64 {
        let end = self.end();
        if t < end {
            let rem = end - t;
            if rem * self.mu_cap <= 1.0 {
                self.mu_cap
            } else {
                1.0 / rem
            }
        } else {
            self.a
        }
    }

    /// `(T + t0 - t) / T` before the horizon, `0` afterwards.
    pub fn kappa(&self, t: f64) -> f64 {
        let end = self.end();
        if t < end {
            (end - t) / self.horizon
        } else {
            0.0
        }
    }

    /// `exp(-integral of the simulated mu)` from `t0` to `t`.
    ///
    /// Equals `kappa` until the clamp point `T + t0 - eps`, holds there across the
    /// skipped gap, and decays at rate `a` after the horizon.
    pub fn kappa_effective(&self, t: f64) -> f64 {
        let end = self.end();
        let eps = self.epsilon();
        if t < end - eps {
            (end - t) / self.horizon
        } else if t < end {
            eps / self.horizon
        } else {
            eps / self.horizon * (-self.a * (t - end)).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> MuSchedule {
        MuSchedule::new(2.0, 0.0).unwrap()
    }

    #[test]
    fn mu_values() {
        let s = two();
        assert_eq!(s.mu(0.0).unwrap(), 0.5);
        assert!((s.mu(1.9).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(s.mu(2.5).unwrap(), 0.5);
        assert_eq!(s.mu(2.0).unwrap(), 0.5);
        assert_eq!(s.mu(2.0 - 1e-9).unwrap(), DEFAULT_MU_CAP);
        assert!(matches!(s.mu(-0.1), Err(SimError::BeforeStart { .. })));
    }

    #[test]
    fn kappa_values() {
        let s = two();
        assert_eq!(s.kappa(0.0), 1.0);
        assert_eq!(s.kappa(2.0), 0.0);
        assert_eq!(s.kappa(1.0), 0.5);
        assert_eq!(s.kappa(3.0), 0.0);
    }

    #[test]
    fn effective_kappa_continues_after_horizon() {
        let s = two();
        assert_eq!(s.kappa_effective(1.0), 0.5);
        let at = s.kappa_effective(2.0);
        assert!((at - 0.5e-6).abs() < 1e-18);
        assert!((s.kappa_effective(4.0) - at * (-1.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(MuSchedule::new(0.0, 0.0).is_err());
        assert!(MuSchedule::with(2.0, 0.0, -1.0, 1e6).is_err());
        assert!(MuSchedule::with(2.0, 0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn mu_never_exceeds_cap() {
        let s = MuSchedule::with(1.0, 0.5, 1.0, 1e3).unwrap();
        for k in 0..=2000 {
            let t = 0.5 + k as f64 * 1e-3;
            let m = s.mu(t).unwrap();
            assert!(m.is_finite() && m <= 1e3 && m > 0.0);
        }
    }
}
