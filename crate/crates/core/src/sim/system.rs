use std::ops::Range;

use crate::graph::Network;
use crate::numerics::{norm2, Matrix};
use crate::plant::{solve_regulator, AgentModel, Exosystem, RegulatorSolution};
use crate::synthesis::GainSet;

use super::{sig, sign, BaselineConstants, SimError, SimMode};

type Mat = Matrix<f64>;

/// Physical state of one follower.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    /// Local observer; treated as zero when an observer-based mode starts without one.
    pub xhat: Option<Vec<f64>>,
}

/// Physical state of the whole closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub v0: Vec<f64>,
    pub agents: Vec<AgentState>,
}

impl ClosedLoopState {
    /// Multiplies every component by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * s).collect::<Vec<_>>();
        Self {
            v0: sc(&self.v0),
            agents: self
                .agents
                .iter()
                .map(|a| AgentState {
                    v: sc(&a.v),
                    x: sc(&a.x),
                    xhat: a.xhat.as_ref().map(sc),
                })
                .collect(),
        }
    }
}

/// Offsets of each block in the flat state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    q: usize,
    n: Vec<usize>,
    observer: bool,
    v: Vec<usize>,
    x: Vec<usize>,
    xhat: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(q: usize, n: &[usize], observer: bool) -> Self {
        let mut off = q;
        let (mut v, mut x, mut xhat) = (Vec::new(), Vec::new(), Vec::new());
        for &ni in n {
            v.push(off);
            off += q;
            x.push(off);
            off += ni;
            if observer {
                xhat.push(off);
                off += ni;
            }
        }
        Self {
            q,
            n: n.to_vec(),
            observer,
            v,
            x,
            xhat,
            len: off,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn agents(&self) -> usize {
        self.n.len()
    }

    pub fn has_observer(&self) -> bool {
        self.observer
    }

    pub fn v0(&self) -> Range<usize> {
        0..self.q
    }

    pub fn v(&self, i: usize) -> Range<usize> {
        self.v[i]..self.v[i] + self.q
    }

    pub fn x(&self, i: usize) -> Range<usize> {
        self.x[i]..self.x[i] + self.n[i]
    }

    pub fn xhat(&self, i: usize) -> Option<Range<usize>> {
        self.observer.then(|| self.xhat[i]..self.xhat[i] + self.n[i])
    }

    pub fn pack(&self, s: &ClosedLoopState) -> Result<Vec<f64>, SimError> {
        let dim = |what: String| SimError::Dimension(what);
        if s.v0.len() != self.q {
            return Err(dim(format!("v0 has length {}, expected {}", s.v0.len(), self.q)));
        }
        if s.agents.len() != self.agents() {
            return Err(dim(format!(
                "{} agent states for {} agents",
                s.agents.len(),
                self.agents()
            )));
        }
        let mut y = vec![0.0; self.len];
        y[self.v0()].copy_from_slice(&s.v0);
        for (i, a) in s.agents.iter().enumerate() {
            if a.v.len() != self.q {
                return Err(dim(format!(
                    "agents[{i}].v has length {}, expected {}",
                    a.v.len(),
                    self.q
                )));
            }
            if a.x.len() != self.n[i] {
                return Err(dim(format!(
                    "agents[{i}].x has length {}, expected {}",
                    a.x.len(),
                    self.n[i]
                )));
            }
            y[self.v(i)].copy_from_slice(&a.v);
            y[self.x(i)].copy_from_slice(&a.x);
            if let (Some(r), Some(h)) = (self.xhat(i), &a.xhat) {
                if h.len() != self.n[i] {
                    return Err(dim(format!(
                        "agents[{i}].xhat has length {}, expected {}",
                        h.len(),
                        self.n[i]
                    )));
                }
                y[r].copy_from_slice(h);
            }
        }
        Ok(y)
    }

    pub fn unpack(&self, y: &[f64]) -> ClosedLoopState {
        ClosedLoopState {
            v0: y[self.v0()].to_vec(),
            agents: (0..self.agents())
                .map(|i| AgentState {
                    v: y[self.v(i)].to_vec(),
                    x: y[self.x(i)].to_vec(),
                    xhat: self.xhat(i).map(|r| y[r].to_vec()),
                })
                .collect(),
        }
    }
}

/// Derived signals at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    /// Regulated outputs of all agents, stacked.
    pub e: Vec<f64>,
    pub e_norm: f64,
    pub v_tilde: f64,
    pub x_bar: f64,
    pub x_tilde: Option<f64>,
    pub u_tilde: f64,
    /// Norms of the `mu`-weighted feedback terms; absent when the mode has no such term.
    pub phi: [Option<f64>; 4],
}

#[derive(Debug, Clone)]
struct Residuals {
    /// `A X + B U + E - X S0`
    rx: Mat,
    /// `C X + D U + F`
    re: Mat,
    /// `Kbar X + Ktil - U`
    m: Mat,
}

/// Everything the closed-loop vector field needs, with regulator solutions.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    network: Network<f64>,
    agents: Vec<AgentModel<f64>>,
    exo: Exosystem<f64>,
    regs: Vec<RegulatorSolution<f64>>,
    gains: GainSet<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    residuals: Vec<Residuals>,
}

fn add_mv(m: &Mat, v: &[f64], out: &mut [f64]) {
    m.mul_vec_acc(v, 1.0, out);
}

fn add_mv_scaled(m: &Mat, v: &[f64], alpha: f64, out: &mut [f64]) {
    m.mul_vec_acc(v, alpha, out);
}

impl ClosedLoop {
    /// Solves the regulator equations and checks every dimension.
    pub fn new(
        network: Network<f64>,
        agents: Vec<AgentModel<f64>>,
        exo: Exosystem<f64>,
        gains: GainSet<f64>,
    ) -> Result<Self, SimError> {
        for a in &agents {
            a.validate()?;
        }
        exo.validate()?;
        let regs = agents
            .iter()
            .map(|a| solve_regulator(a, &exo))
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_regulators(network, agents, exo, gains, regs)
    }

    pub fn with_regulators(
        network: Network<f64>,
        agents: Vec<AgentModel<f64>>,
        exo: Exosystem<f64>,
        gains: GainSet<f64>,
        regs: Vec<RegulatorSolution<f64>>,
    ) -> Result<Self, SimError> {
        let n = agents.len();
        if network.n_followers() != n || gains.agents.len() != n || regs.len() != n {
            return Err(SimError::Dimension(format!(
                "{} followers in the graph, {} agents, {} gain blocks, {} regulator solutions",
                network.n_followers(),
                n,
                gains.agents.len(),
                regs.len()
            )));
        }
        let q = exo.q();
        for (i, ((a, g), r)) in agents.iter().zip(&gains.agents).zip(&regs).enumerate() {
            let (ni, mi, pmi) = (a.n(), a.m(), a.pm());
            let checks = [
                ("E", a.e.shape(), (ni, q)),
                ("X", r.x.shape(), (ni, q)),
                ("U", r.u.shape(), (mi, q)),
                ("Kbar", g.kbar.shape(), (mi, ni)),
                ("Ktil", g.ktil.shape(), (mi, q)),
                ("K", g.k.shape(), (mi, ni)),
                ("L", g.l.shape(), (ni, pmi)),
                ("Ltil", g.ltil.shape(), (ni, pmi)),
            ];
            for (name, got, want) in checks {
                if got != want {
                    return Err(SimError::Dimension(format!(
                        "agents[{i}].{name} is {got:?}, expected {want:?}"
                    )));
                }
            }
        }
        let adj = network.adjacency();
        let neighbors = (1..=n)
            .map(|i| {
                (0..=n)
                    .filter(|&j| j != i && adj[(i, j)] > 0.0)
                    .map(|j| (j, adj[(i, j)]))
                    .collect()
            })
            .collect();
        let residuals = agents
            .iter()
            .zip(&gains.agents)
            .zip(&regs)
            .map(|((a, g), r)| {
                let (rx, re) = r.residual_matrices(a, &exo);
                let m = &(&(&g.kbar * &r.x) + &g.ktil) - &r.u;
                Residuals { rx, re, m }
            })
            .collect();
        Ok(Self {
            network,
            agents,
            exo,
            regs,
            gains,
            neighbors,
            residuals,
        })
    }

    pub fn network(&self) -> &Network<f64> {
        &self.network
    }

    pub fn agents(&self) -> &[AgentModel<f64>] {
        &self.agents
    }

    pub fn exosystem(&self) -> &Exosystem<f64> {
        &self.exo
    }

    pub fn regulators(&self) -> &[RegulatorSolution<f64>] {
        &self.regs
    }

    pub fn gains(&self) -> &GainSet<f64> {
        &self.gains
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.agents.iter().map(AgentModel::p).collect()
    }

    pub fn layout(&self, mode: SimMode) -> Layout {
        let n: Vec<usize> = self.agents.iter().map(AgentModel::n).collect();
        Layout::new(self.exo.q(), &n, mode.has_observer())
    }

    /// Physical state to `(v0, v - v0, x - X v0, xhat - x)`.
    pub fn to_error(&self, layout: &Layout, y: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        let v0 = &y[layout.v0()];
        for i in 0..layout.agents() {
            for (zk, v) in z[layout.v(i)].iter_mut().zip(v0) {
                *zk -= v;
            }
            add_mv_scaled(&self.regs[i].x, v0, -1.0, &mut z[layout.x(i)]);
            if let Some(h) = layout.xhat(i) {
                for (zk, xk) in z[h].iter_mut().zip(&y[layout.x(i)]) {
                    *zk -= xk;
                }
            }
        }
        z
    }

    /// Inverse of [`ClosedLoop::to_error`].
    pub fn to_physical(&self, layout: &Layout, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        let v0 = &z[layout.v0()];
        for i in 0..layout.agents() {
            for (yk, v) in y[layout.v(i)].iter_mut().zip(v0) {
                *yk += v;
            }
            add_mv(&self.regs[i].x, v0, &mut y[layout.x(i)]);
            if let Some(h) = layout.xhat(i) {
                let x = y[layout.x(i)].to_vec();
                for (yk, xk) in y[h].iter_mut().zip(&x) {
                    *yk += xk;
                }
            }
        }
        y
    }

    /// `sum_j a_ij (w_j - w_i)` where `node(0)` is the leader's entry.
    fn coupling<'a>(&self, i: usize, node: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
        let q = self.exo.q();
        let own = node(i + 1);
        let mut chi = vec![0.0; q];
        for &(j, w) in &self.neighbors[i] {
            for ((c, a), b) in chi.iter_mut().zip(node(j)).zip(own) {
                *c += w * (a - b);
            }
        }
        chi
    }

    fn observer_update(mode: SimMode, psi: f64, mu: f64, c: &BaselineConstants, chi: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(chi) {
            *o += match mode {
                SimMode::StateFeedback | SimMode::OutputFeedback => psi * mu * x,
                SimMode::BaselineAsymptotic => psi * x,
                SimMode::BaselineFixedTime => c.c1 * x + c.c2 * sign(x) + c.c3 * sig(x, c.c4),
            };
        }
    }

    /// `(L + mu Ltil) r` or the baseline variant, added to `out`.
    fn innovation_update(&self, mode: SimMode, i: usize, mu: f64, c: &BaselineConstants, r: &[f64], out: &mut [f64]) {
        let g = &self.gains.agents[i];
        add_mv(&g.l, r, out);
        match mode {
            SimMode::OutputFeedback => add_mv_scaled(&g.ltil, r, mu, out),
            SimMode::BaselineFixedTime => {
                let nl: Vec<f64> = r.iter().map(|&x| sign(x) + sig(x, c.c4)).collect();
                add_mv(&g.ltil, &nl, out);
            }
            _ => {}
        }
    }

    /// Control of agent `i` given its state estimate, observer state and `w = estimate - X v`.
    fn control_terms(&self, mode: SimMode, i: usize, mu: f64, c: &BaselineConstants, w: &[f64], out: &mut [f64]) {
        let g = &self.gains.agents[i];
        match mode {
            SimMode::StateFeedback | SimMode::OutputFeedback => add_mv_scaled(&g.k, w, mu, out),
            SimMode::BaselineFixedTime => {
                let nl: Vec<f64> = w.iter().map(|&x| sign(x) + sig(x, c.c4)).collect();
                add_mv(&g.k, &nl, out);
            }
            SimMode::BaselineAsymptotic => {}
        }
    }

    /// Right-hand side in physical coordinates.
    pub fn rhs_physical(
        &self,
        layout: &Layout,
        mode: SimMode,
        c: &BaselineConstants,
        mu: f64,
        y: &[f64],
        dy: &mut [f64],
    ) {
        let s0 = &self.exo.s0;
        let v0 = &y[layout.v0()];
        dy.iter_mut().for_each(|d| *d = 0.0);
        add_mv(s0, v0, &mut dy[layout.v0()]);
        for i in 0..layout.agents() {
            let (a, g, reg) = (&self.agents[i], &self.gains.agents[i], &self.regs[i]);
            let v = &y[layout.v(i)];
            let x = &y[layout.x(i)];
            let xhat = layout.xhat(i).map(|r| &y[r]);

            let chi = self.coupling(i, |j| if j == 0 { v0 } else { &y[layout.v(j - 1)] });
            let mut dv = vec![0.0; v.len()];
            add_mv(s0, v, &mut dv);
            Self::observer_update(mode, self.gains.psi, mu, c, &chi, &mut dv);
            dy[layout.v(i)].copy_from_slice(&dv);

            let est = xhat.unwrap_or(x);
            let mut w = est.to_vec();
            add_mv_scaled(&reg.x, v, -1.0, &mut w);
            let mut u = vec![0.0; a.m()];
            add_mv(&g.kbar, est, &mut u);
            add_mv(&g.ktil, v, &mut u);
            self.control_terms(mode, i, mu, c, &w, &mut u);

            let mut dx = vec![0.0; x.len()];
            add_mv(&a.a, x, &mut dx);
            add_mv(&a.b, &u, &mut dx);
            add_mv(&a.e, v0, &mut dx);
            dy[layout.x(i)].copy_from_slice(&dx);

            if let (Some(r), Some(xh)) = (layout.xhat(i), xhat) {
                let mut meas = vec![0.0; a.pm()];
                add_mv(&a.cm, x, &mut meas);
                add_mv(&a.dm, &u, &mut meas);
                add_mv(&a.fm, v0, &mut meas);
                let mut innov = meas;
                add_mv_scaled(&a.cm, xh, -1.0, &mut innov);
                add_mv_scaled(&a.dm, &u, -1.0, &mut innov);
                add_mv_scaled(&a.fm, v, -1.0, &mut innov);
                let mut dh = vec![0.0; xh.len()];
                add_mv(&a.a, xh, &mut dh);
                add_mv(&a.b, &u, &mut dh);
                add_mv(&a.e, v, &mut dh);
                self.innovation_update(mode, i, mu, c, &innov, &mut dh);
                dy[r].copy_from_slice(&dh);
            }
        }
    }

    /// `u_i - U_i v0` from error coordinates.
    fn u_tilde(&self, layout: &Layout, mode: SimMode, c: &BaselineConstants, mu: f64, i: usize, z: &[f64]) -> Vec<f64> {
        let (g, reg, res) = (&self.gains.agents[i], &self.regs[i], &self.residuals[i]);
        let v0 = &z[layout.v0()];
        let vt = &z[layout.v(i)];
        let mut est = z[layout.x(i)].to_vec();
        if let Some(r) = layout.xhat(i) {
            for (e, xt) in est.iter_mut().zip(&z[r]) {
                *e += xt;
            }
        }
        let mut w = est.clone();
        add_mv_scaled(&reg.x, vt, -1.0, &mut w);
        let mut u = vec![0.0; g.k.rows()];
        add_mv(&g.kbar, &est, &mut u);
        add_mv(&g.ktil, vt, &mut u);
        self.control_terms(mode, i, mu, c, &w, &mut u);
        add_mv(&res.m, v0, &mut u);
        u
    }

    /// Right-hand side in error coordinates.
    pub fn rhs_error(&self, layout: &Layout, mode: SimMode, c: &BaselineConstants, mu: f64, z: &[f64], dz: &mut [f64]) {
        let s0 = &self.exo.s0;
        let v0 = &z[layout.v0()];
        dz.iter_mut().for_each(|d| *d = 0.0);
        add_mv(s0, v0, &mut dz[layout.v0()]);
        let zero = vec![0.0; self.exo.q()];
        for i in 0..layout.agents() {
            let (a, res) = (&self.agents[i], &self.residuals[i]);
            let vt = &z[layout.v(i)];
            let xb = &z[layout.x(i)];

            let chi = self.coupling(i, |j| if j == 0 { &zero } else { &z[layout.v(j - 1)] });
            let mut dv = vec![0.0; vt.len()];
            add_mv(s0, vt, &mut dv);
            Self::observer_update(mode, self.gains.psi, mu, c, &chi, &mut dv);
            dz[layout.v(i)].copy_from_slice(&dv);

            let ut = self.u_tilde(layout, mode, c, mu, i, z);
            let mut dx = vec![0.0; xb.len()];
            add_mv(&a.a, xb, &mut dx);
            add_mv(&a.b, &ut, &mut dx);
            add_mv(&res.rx, v0, &mut dx);
            dz[layout.x(i)].copy_from_slice(&dx);

            if let Some(r) = layout.xhat(i) {
                let xt = &z[r.clone()];
                let mut innov = vec![0.0; a.pm()];
                add_mv_scaled(&a.cm, xt, -1.0, &mut innov);
                add_mv_scaled(&a.fm, vt, -1.0, &mut innov);
                let mut dh = vec![0.0; xt.len()];
                add_mv(&a.a, xt, &mut dh);
                add_mv(&a.e, vt, &mut dh);
                self.innovation_update(mode, i, mu, c, &innov, &mut dh);
                dz[r].copy_from_slice(&dh);
            }
        }
    }

    /// State-feedback vector field in physical coordinates at time `t`.
    pub fn rhs_state_fb(&self, sched: &super::MuSchedule, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        self.rhs_checked(
            SimMode::StateFeedback,
            &BaselineConstants::default(),
            sched.mu(t)?,
            t,
            y,
            dy,
        )
    }

    /// Output-feedback vector field in physical coordinates at time `t`.
    pub fn rhs_output_fb(&self, sched: &super::MuSchedule, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        self.rhs_checked(
            SimMode::OutputFeedback,
            &BaselineConstants::default(),
            sched.mu(t)?,
            t,
            y,
            dy,
        )
    }

    /// Baseline vector field in physical coordinates; `kind` must be a baseline mode.
    pub fn rhs_baseline(
        &self,
        kind: SimMode,
        c: &BaselineConstants,
        t: f64,
        y: &[f64],
        dy: &mut [f64],
    ) -> Result<(), SimError> {
        if kind.uses_mu() {
            return Err(SimError::InvalidConfig(format!("{kind} is not a baseline")));
        }
        self.rhs_checked(kind, c, 0.0, t, y, dy)
    }

    fn rhs_checked(
        &self,
        mode: SimMode,
        c: &BaselineConstants,
        mu: f64,
        t: f64,
        y: &[f64],
        dy: &mut [f64],
    ) -> Result<(), SimError> {
        let layout = self.layout(mode);
        if y.len() != layout.len() || dy.len() != layout.len() {
            return Err(SimError::Dimension(format!(
                "state vector has length {}, expected {}",
                y.len(),
                layout.len()
            )));
        }
        self.rhs_physical(&layout, mode, c, mu, y, dy);
        if dy.iter().all(|d| d.is_finite()) {
            Ok(())
        } else {
            Err(SimError::NonFinite {
                t,
                partial: Box::new(super::Trajectory::empty(self.output_dims())),
            })
        }
    }

    /// Regulated outputs, error norms and feedback magnitudes from error coordinates.
    pub fn signals(&self, layout: &Layout, mode: SimMode, c: &BaselineConstants, mu: f64, z: &[f64]) -> Signals {
        let v0 = &z[layout.v0()];
        let zero = vec![0.0; self.exo.q()];
        let mut e = Vec::new();
        let (mut vt2, mut xb2, mut xt2, mut ut2) = (0.0, 0.0, 0.0, 0.0);
        let (mut phi1, mut phi2, mut phi3, mut phi4) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..layout.agents() {
            let (a, reg, res) = (&self.agents[i], &self.regs[i], &self.residuals[i]);
            let vt = &z[layout.v(i)];
            let xb = &z[layout.x(i)];
            let xt = layout.xhat(i).map(|r| &z[r]);
            let ut = self.u_tilde(layout, mode, c, mu, i, z);

            let mut ei = vec![0.0; a.p()];
            add_mv(&a.c, xb, &mut ei);
            add_mv(&a.d, &ut, &mut ei);
            add_mv(&res.re, v0, &mut ei);
            e.extend_from_slice(&ei);

            vt2 += vt.iter().map(|x| x * x).sum::<f64>();
            xb2 += xb.iter().map(|x| x * x).sum::<f64>();
            ut2 += ut.iter().map(|x| x * x).sum::<f64>();

            for &(j, _) in &self.neighbors[i] {
                let vj = if j == 0 { &zero[..] } else { &z[layout.v(j - 1)] };
                phi1 += vj.iter().zip(vt).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let mut w = xb.to_vec();
            add_mv_scaled(&reg.x, vt, -1.0, &mut w);
            match xt {
                None => phi2 += w.iter().map(|x| x * x).sum::<f64>(),
                Some(xt) => {
                    xt2 += xt.iter().map(|x| x * x).sum::<f64>();
                    let mut innov = vec![0.0; a.pm()];
                    add_mv_scaled(&a.cm, xt, -1.0, &mut innov);
                    add_mv_scaled(&a.fm, vt, -1.0, &mut innov);
                    phi3 += innov.iter().map(|x| x * x).sum::<f64>();
                    for (wk, xk) in w.iter_mut().zip(xt) {
                        *wk += xk;
                    }
                    phi4 += w.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        let phi = match mode {
            SimMode::StateFeedback => [Some(mu * phi1.sqrt()), Some(mu * phi2.sqrt()), None, None],
            SimMode::OutputFeedback => [
                Some(mu * phi1.sqrt()),
                None,
                Some(mu * phi3.sqrt()),
                Some(mu * phi4.sqrt()),
            ],
            _ => [None; 4],
        };
        Signals {
            e_norm: norm2(&e),
            e,
            v_tilde: vt2.sqrt(),
            x_bar: xb2.sqrt(),
            x_tilde: layout.has_observer().then(|| xt2.sqrt()),
            u_tilde: ut2.sqrt(),
            phi,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sim::MuSchedule;
    use crate::synthesis::AgentGains;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Mat {
        Matrix::from_rows(rows)
    }

    /// Scalar chain `x' = -x + u`, `e = x - v0`, leader constant.
    pub(crate) fn scalar_loop(k: f64) -> ClosedLoop {
        let agent = AgentModel {
            a: m(&[&[-1.0]]),
            b: m(&[&[1.0]]),
            e: m(&[&[0.0]]),
            c: m(&[&[1.0]]),
            d: m(&[&[0.0]]),
            f: m(&[&[-1.0]]),
            cm: m(&[&[1.0]]),
            dm: m(&[&[0.0]]),
            fm: m(&[&[0.0]]),
        };
        let exo = Exosystem {
            s0: m(&[&[0.0]]),
            v0_init: vec![1.0],
        };
        let gains = GainSet {
            psi: 2.0,
            agents: vec![AgentGains {
                kbar: m(&[&[0.0]]),
                ktil: m(&[&[1.0]]),
                k: m(&[&[k]]),
                l: m(&[&[0.0]]),
                ltil: m(&[&[2.0]]),
            }],
        };
        ClosedLoop::new(Network::chain(1), vec![agent], exo, gains).unwrap()
    }

    fn rlc_loop() -> ClosedLoop {
        let s = |rows: &[&[f64]]| m(rows).scale(0.25);
        let agent = AgentModel {
            a: s(&[&[-1.0, -3.0], &[3.0, -3.0]]),
            b: s(&[&[1.0, 1.0], &[1.0, -3.0]]),
            e: Matrix::zeros(2, 2),
            c: s(&[&[-3.0, 3.0], &[-1.0, -3.0]]),
            d: s(&[&[3.0, 3.0], &[1.0, 1.0]]),
            f: Matrix::identity(2),
            cm: s(&[&[-1.0, -3.0], &[3.0, -3.0]]),
            dm: s(&[&[1.0, 1.0], &[3.0, -3.0]]),
            fm: Matrix::zeros(2, 2),
        };
        let exo = Exosystem {
            s0: m(&[&[0.0, 1.0], &[-1.0, 0.0]]),
            v0_init: vec![1.0, 1.0],
        };
        let g = AgentGains {
            kbar: Matrix::zeros(2, 2),
            ktil: m(&[&[-2.0, -1.0 / 3.0], &[0.0, -2.0 / 3.0]]),
            k: m(&[&[-9.0, -3.0], &[-3.0, 3.0]]),
            l: m(&[&[1.0, -2.0], &[2.0, -0.3]]),
            ltil: m(&[&[-4.0, 4.0], &[-4.0, -4.0 / 3.0]]),
        };
        let gains = GainSet {
            psi: 8.0,
            agents: vec![g; 3],
        };
        ClosedLoop::new(Network::chain(3), vec![agent; 3], exo, gains).unwrap()
    }

    #[test]
    fn scalar_state_fb_hand_derivative() {
        let sys = scalar_loop(-3.0);
        let sched = MuSchedule::new(2.0, 0.0).unwrap();
        // v0 = 1, v1 = 0, x1 = 2 at t = 0 (mu = 0.5), X = U = 1.
        let y = [1.0, 0.0, 2.0];
        let mut dy = [0.0; 3];
        sys.rhs_state_fb(&sched, 0.0, &y, &mut dy).unwrap();
        // v1' = psi mu (v0 - v1) = 1; u = Ktil v1 + mu K (x - X v1) = -3; x' = -2 - 3.
        assert_eq!(dy, [0.0, 1.0, -5.0]);
    }

    #[test]
    fn manifold_is_invariant() {
        let sys = rlc_loop();
        for mode in SimMode::ALL {
            let layout = sys.layout(mode);
            let v0 = [0.7, -0.2];
            let mut z = vec![0.0; layout.len()];
            z[layout.v0()].copy_from_slice(&v0);
            let y = sys.to_physical(&layout, &z);
            let mut dy = vec![0.0; y.len()];
            sys.rhs_physical(&layout, mode, &BaselineConstants::default(), 37.0, &y, &mut dy);
            // Error derivatives vanish: the state stays on the regulator manifold.
            let dz = sys.to_error(&layout, &dy);
            let sv0 = sys.exosystem().s0.mul_vec(&v0);
            for i in 0..3 {
                let xs0 = sys.regulators()[i].x.mul_vec(&sv0);
                for (k, &d) in dy[layout.x(i)].iter().enumerate() {
                    assert!((d - xs0[k]).abs() < 1e-12, "{mode}");
                }
                assert!(dz[layout.v(i)].iter().all(|d| d.abs() < 1e-12));
            }
            let sig = sys.signals(&layout, mode, &BaselineConstants::default(), 37.0, &z);
            assert!(sig.e_norm < 1e-14, "{mode}: {}", sig.e_norm);
        }
    }

    #[test]
    fn rlc_derivative_is_finite_at_start() {
        let sys = rlc_loop();
        let sched = MuSchedule::new(2.0, 0.0).unwrap();
        let layout = sys.layout(SimMode::OutputFeedback);
        let st = ClosedLoopState {
            v0: vec![1.0, 1.0],
            agents: vec![
                AgentState {
                    v: vec![0.0, 0.0],
                    x: vec![2.0, 2.0],
                    xhat: Some(vec![0.0, 0.0]),
                };
                3
            ],
        };
        let y = layout.pack(&st).unwrap();
        let mut dy = vec![0.0; y.len()];
        sys.rhs_output_fb(&sched, 0.0, &y, &mut dy).unwrap();
        assert!(dy.iter().all(|d| d.is_finite()));
        assert!(dy.iter().any(|d| d.abs() > 0.0));
        assert_eq!(layout.unpack(&y), st);
    }

    #[test]
    fn zero_coupling_gives_free_observer() {
        let sys = rlc_loop();
        let layout = sys.layout(SimMode::BaselineFixedTime);
        let mut z = vec![0.3; layout.len()];
        for i in 0..3 {
            z[layout.v(i)].iter_mut().for_each(|x| *x = 0.0);
        }
        let mut dz = vec![0.0; z.len()];
        sys.rhs_error(
            &layout,
            SimMode::BaselineFixedTime,
            &BaselineConstants::default(),
            0.0,
            &z,
            &mut dz,
        );
        assert!(dz[layout.v(0)].iter().all(|d| *d == 0.0));
    }

    #[test]
    fn pack_rejects_wrong_lengths() {
        let sys = rlc_loop();
        let layout = sys.layout(SimMode::StateFeedback);
        let st = ClosedLoopState {
            v0: vec![1.0],
            agents: vec![],
        };
        assert!(matches!(layout.pack(&st), Err(SimError::Dimension(_))));
    }

    proptest! {
        #[test]
        fn error_form_matches_physical_form(
            seed in prop::collection::vec(-3.0f64..3.0, 40),
            mu in 0.1f64..1e4,
            mode_idx in 0usize..4,
        ) {
            let sys = rlc_loop();
            let mode = SimMode::ALL[mode_idx];
            let layout = sys.layout(mode);
            let y: Vec<f64> = seed.iter().cycle().take(layout.len()).copied().collect();
            let c = BaselineConstants::default();
            let mut dy = vec![0.0; y.len()];
            sys.rhs_physical(&layout, mode, &c, mu, &y, &mut dy);
            let z = sys.to_error(&layout, &y);
            let mut dz = vec![0.0; z.len()];
            sys.rhs_error(&layout, mode, &c, mu, &z, &mut dz);
            // The change of variables is linear and time-invariant.
            let want = sys.to_error(&layout, &dy);
            let scale = 1.0 + dy.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            for (a, b) in dz.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-9 * scale, "{} vs {}", a, b);
            }
            let back = sys.to_physical(&layout, &z);
            for (a, b) in back.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
