use crate::numerics::norm2;

use super::{ClosedLoop, ClosedLoopState, Layout, MuSchedule, Sample, SimConfig, SimError, Trajectory};

struct Stepper<'a> {
    sys: &'a ClosedLoop,
    layout: Layout,
    cfg: &'a SimConfig,
    sched: &'a MuSchedule,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Stepper<'_> {
    fn mu(&self, t: f64) -> f64 {
        if self.cfg.mode.uses_mu() {
            self.sched.mu_unchecked(t)
        } else {
            0.0
        }
    }

    fn rhs(&self, t: f64, z: &[f64], dz: &mut [f64]) {
        let mu = self.mu(t);
        self.sys
            .rhs_error(&self.layout, self.cfg.mode, &self.cfg.baseline, mu, z, dz);
    }

    /// Classic fourth-order Runge-Kutta step.
    fn step(&mut self, t: f64, h: f64, z: &mut [f64]) {
        let n = z.len();
        let mut k = std::mem::take(&mut self.k);
        let mut tmp = std::mem::take(&mut self.tmp);
        self.rhs(t, z, &mut k[0]);
        for j in 0..n {
            tmp[j] = z[j] + 0.5 * h * k[0][j];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k[1]);
        for j in 0..n {
            tmp[j] = z[j] + 0.5 * h * k[1][j];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k[2]);
        for j in 0..n {
            tmp[j] = z[j] + h * k[2][j];
        }
        self.rhs(t + h, &tmp, &mut k[3]);
        for j in 0..n {
            z[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        self.k = k;
        self.tmp = tmp;
    }

    fn record(&self, traj: &mut Trajectory, t: f64, z: &[f64]) {
        let mu_used = self.mu(t);
        let sig = self
            .sys
            .signals(&self.layout, self.cfg.mode, &self.cfg.baseline, mu_used, z);
        traj.samples.push(Sample {
            t,
            mu: self.sched.mu_unchecked(t),
            e_norm: sig.e_norm,
            v_tilde: sig.v_tilde,
            x_bar: sig.x_bar,
            x_tilde: sig.x_tilde,
            u_tilde: sig.u_tilde,
            phi: sig.phi,
            e: sig.e,
        });
        let y = self.sys.to_physical(&self.layout, z);
        traj.states.push(self.layout.unpack(&y));
    }

    fn check(&self, traj: &mut Trajectory, t: f64, z: &[f64]) -> Result<(), SimError> {
        if z.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite {
                t,
                partial: Box::new(std::mem::replace(traj, Trajectory::empty(Vec::new()))),
            });
        }
        let norm = norm2(&self.sys.to_physical(&self.layout, z));
        if norm > self.cfg.blowup {
            return Err(SimError::FiniteEscape {
                t,
                norm,
                partial: Box::new(std::mem::replace(traj, Trajectory::empty(Vec::new()))),
            });
        }
        Ok(())
    }
}

/// Integrates the closed loop from `sched.t0` for `cfg.duration`.
///
/// Before the horizon the step is `min(dt, guard_factor / mu)`. Integration
/// stops at `T + t0 - 1/mu_cap`, records a sample, and resumes at `T + t0` on
/// the constant post-horizon gain with the state unchanged. Baseline modes do
/// not use `mu` and integrate straight across the gap instead.
///
/// Samples are taken every `stride` base steps, at every guarded step, at the
/// clamp point, at `T + t0` and at the final time.
pub fn integrate(
    sys: &ClosedLoop,
    init: &ClosedLoopState,
    sched: &MuSchedule,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    sched.validate()?;
    let layout = sys.layout(cfg.mode);
    let mut init = init.clone();
    if layout.has_observer() {
        for a in &mut init.agents {
            if a.xhat.is_none() {
                a.xhat = Some(vec![0.0; a.x.len()]);
            }
        }
    }
    let y0 = layout.pack(&init)?;
    let mut z = sys.to_error(&layout, &y0);
    let n = z.len();
    let mut st = Stepper {
        sys,
        layout,
        cfg,
        sched,
        k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        tmp: vec![0.0; n],
    };
    let mut traj = Trajectory::empty(sys.output_dims());

    let t0 = sched.t0;
    let t_end = t0 + cfg.duration;
    let clamp = sched.end() - sched.epsilon();
    let target = clamp.min(t_end);
    let dt = cfg.dt;
    let snap = 1e-9 * dt;
    let guarded_mode = cfg.mode.uses_mu();

    let mut t = t0;
    st.record(&mut traj, t, &z);
    st.check(&mut traj, t, &z)?;

    let mut k = 0usize;
    while t < target {
        let mut guarded = false;
        let mut t_next = t0 + (k + 1) as f64 * dt;
        if guarded_mode {
            let hg = (cfg.guard_factor / st.mu(t)).max(cfg.min_dt);
            if hg < dt {
                guarded = true;
                t_next = t + hg;
            }
        }
        if t_next > target - snap {
            t_next = target;
        }
        st.step(t, t_next - t, &mut z);
        t = t_next;
        if !guarded {
            k += 1;
        }
        st.check(&mut traj, t, &z)?;
        if guarded || k.is_multiple_of(cfg.stride) || t == target {
            st.record(&mut traj, t, &z);
        }
    }

    if t_end > clamp {
        let end = sched.end();
        if !guarded_mode {
            st.step(t, end - t, &mut z);
            st.check(&mut traj, end, &z)?;
        }
        t = end;
        st.record(&mut traj, t, &z);
        let mut k2 = 0usize;
        while t < t_end {
            let mut t_next = end + (k2 + 1) as f64 * dt;
            if t_next > t_end - snap {
                t_next = t_end;
            }
            st.step(t, t_next - t, &mut z);
            t = t_next;
            k2 += 1;
            st.check(&mut traj, t, &z)?;
            if k2.is_multiple_of(cfg.stride) || t == t_end {
                st.record(&mut traj, t, &z);
            }
        }
    }
    Ok(traj)
}
