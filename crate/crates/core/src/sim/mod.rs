//! Closed-loop simulation through the prescribed-time gain blow-up.
//!
//! The integrator works in error coordinates `(v0, v_i - v0, x_i - X_i v0,
//! xhat_i - x_i)`, an exact linear change of variables of the physical state.
//! The `mu`-weighted feedback terms then act on small numbers directly instead
//! of on differences of order-one quantities, which keeps them free of
//! cancellation error as `mu` grows. The physical-coordinate right-hand sides
//! are available as well and agree with the error form.

mod integrate;
mod schedule;
mod system;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::plant::PlantError;

pub use integrate::integrate;
pub use schedule::{MuSchedule, DEFAULT_MU_CAP};
pub use system::{AgentState, ClosedLoop, ClosedLoopState, Layout, Signals};
pub use trajectory::{Sample, Trajectory, TrajectoryError, CSV_FIXED_COLUMNS};

/// Controller being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMode {
    StateFeedback,
    OutputFeedback,
    BaselineAsymptotic,
    BaselineFixedTime,
}

impl SimMode {
    pub const ALL: [SimMode; 4] = [
        SimMode::StateFeedback,
        SimMode::OutputFeedback,
        SimMode::BaselineAsymptotic,
        SimMode::BaselineFixedTime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::StateFeedback => "state_fb",
            SimMode::OutputFeedback => "output_fb",
            SimMode::BaselineAsymptotic => "baseline_asymptotic",
            SimMode::BaselineFixedTime => "baseline_fixed_time",
        }
    }

    /// Whether each agent runs a local state observer.
    pub fn has_observer(self) -> bool {
        self != SimMode::StateFeedback
    }

    /// Whether the controller uses the time-varying gain.
    pub fn uses_mu(self) -> bool {
        matches!(self, SimMode::StateFeedback | SimMode::OutputFeedback)
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "state_fb" => Ok(SimMode::StateFeedback),
            "output_fb" => Ok(SimMode::OutputFeedback),
            "baseline_asymptotic" | "asymptotic" => Ok(SimMode::BaselineAsymptotic),
            "baseline_fixed_time" | "fixed_time" => Ok(SimMode::BaselineFixedTime),
            other => Err(format!(
                "unknown mode `{other}` (expected state_fb, output_fb, asymptotic or fixed_time)"
            )),
        }
    }
}

/// Constants of the fixed-time baseline: `c1 x + c2 sign(x) + c3 sig(x)^c4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for BaselineConstants {
    fn default() -> Self {
        Self {
            c1: 5.0,
            c2: 5.0,
            c3: 5.0,
            c4: 1.1,
        }
    }
}

/// Step control and run length.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: SimMode,
    /// Base step size.
    pub dt: f64,
    /// Floor for the `mu`-guarded step.
    pub min_dt: f64,
    /// Guarded step is `guard_factor / mu`.
    pub guard_factor: f64,
    /// Total simulated time after `t0`.
    pub duration: f64,
    /// Record every `stride`-th base step.
    pub stride: usize,
    pub baseline: BaselineConstants,
    /// Abort once the physical state norm exceeds this.
    pub blowup: f64,
}

impl SimConfig {
    pub fn new(mode: SimMode, duration: f64) -> Self {
        Self {
            mode,
            dt: 1e-4,
            min_dt: 1e-12,
            guard_factor: 0.05,
            duration,
            stride: 10,
            baseline: BaselineConstants::default(),
            blowup: 1e9,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.min_dt > 0.0 && self.min_dt <= self.dt) {
            return bad("min_dt must satisfy 0 < min_dt <= dt");
        }
        if !(self.guard_factor > 0.0 && self.guard_factor.is_finite()) {
            return bad("guard_factor must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !(self.blowup > 0.0) {
            return bad("blowup threshold must be positive");
        }
        let c = self.baseline;
        if ![c.c1, c.c2, c.c3, c.c4].iter().all(|x| x.is_finite() && *x >= 0.0) {
            return bad("baseline constants must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("time {t} precedes the schedule start {t0}")]
    BeforeStart { t: f64, t0: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64, partial: Box<Trajectory> },
    #[error("finite-escape detected at t = {t} (state norm {norm:e})")]
    FiniteEscape {
        t: f64,
        norm: f64,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// `sign(x) |x|^c`, elementwise.
pub fn sig(x: f64, c: f64) -> f64 {
    sign(x) * x.abs().powf(c)
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
