//! Scenario files: plant, network, gains, schedule and initial conditions in TOML.
//!
//! Matrices are written as `{ rows = r, cols = c, data = [...] }` with `data`
//! in row-major order. Entries of `[agent_defaults]` apply to every agent that
//! does not set the same key itself. Gains `K` and `Ltil` may instead be given
//! as `{ mbar = m }`, selecting the closed-form construction; an absent `Ktil`
//! is derived from the regulator solution.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Envelopes, ObserverEnvelope};
use crate::graph::{has_leader_spanning_tree, observer_rate, partition_laplacian, GraphError, Network};
use crate::numerics::Matrix;
use crate::plant::{
    check_full_rank_io, check_regulation_rank, solve_regulator, AgentModel, Exosystem, PlantError, RegulatorSolution,
};
use crate::sim::{AgentState, ClosedLoop, ClosedLoopState, MuSchedule, SimConfig, SimError, SimMode, DEFAULT_MU_CAP};
use crate::synthesis::{
    agent_rates, realize_gains, verify_gains, AgentGainSpec, ConditionReport, GainSet, GainSource, GainSpec, Mode,
    SynthError,
};

type Mat = Matrix<f64>;

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("example1_rlc", include_str!("../scenarios/example1_rlc.toml")),
    ("example2_ccvsi", include_str!("../scenarios/example2_ccvsi.toml")),
];

/// One schema violation, located by a dotted field path such as `agents[0].B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Schema(Vec<SchemaError>),
    #[error("unknown bundled scenario `{0}`")]
    UnknownBundled(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    /// Short category used as an error-message prefix.
    pub fn category(&self) -> &'static str {
        match self {
            ScenarioError::Io { .. } => "io",
            ScenarioError::Parse(_) | ScenarioError::Schema(_) | ScenarioError::UnknownBundled(_) => "scenario",
            ScenarioError::Plant(_) => "plant",
            ScenarioError::Graph(_) => "graph",
            ScenarioError::Synth(_) => "synthesis",
            ScenarioError::Sim(_) => "simulation",
        }
    }
}

/// Simulation settings other than the gain schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub mode: SimMode,
    pub duration: f64,
    pub dt: f64,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub network: Network<f64>,
    pub agents: Vec<AgentModel<f64>>,
    pub exosystem: Exosystem<f64>,
    pub gains: GainSpec<f64>,
    pub schedule: MuSchedule,
    pub sim: SimSettings,
    pub initial: ClosedLoopState,
}

// ---- raw file layout ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawGain {
    Synthesize { mbar: f64 },
    Matrix(RawMatrix),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<RawMatrix>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<RawMatrix>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    e: Option<RawMatrix>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<RawMatrix>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<RawMatrix>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    f: Option<RawMatrix>,
    #[serde(rename = "Cm", default, skip_serializing_if = "Option::is_none")]
    cm: Option<RawMatrix>,
    #[serde(rename = "Dm", default, skip_serializing_if = "Option::is_none")]
    dm: Option<RawMatrix>,
    #[serde(rename = "Fm", default, skip_serializing_if = "Option::is_none")]
    fm: Option<RawMatrix>,
    #[serde(rename = "Kbar", default, skip_serializing_if = "Option::is_none")]
    kbar: Option<RawMatrix>,
    #[serde(rename = "Ktil", default, skip_serializing_if = "Option::is_none")]
    ktil: Option<RawMatrix>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    k: Option<RawGain>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    l: Option<RawMatrix>,
    #[serde(rename = "Ltil", default, skip_serializing_if = "Option::is_none")]
    ltil: Option<RawGain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xhat0: Option<Vec<f64>>,
}

impl RawAgent {
    fn merged(&self, d: &RawAgent) -> RawAgent {
        macro_rules! pick {
            ($($f:ident),*) => { RawAgent { $($f: self.$f.clone().or_else(|| d.$f.clone()),)* } };
        }
        pick!(a, b, e, c, d, f, cm, dm, fm, kbar, ktil, k, l, ltil, x0, v0, xhat0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExo {
    #[serde(rename = "S0")]
    s0: RawMatrix,
    v0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    followers: usize,
    /// `[from, to, weight]`; node 0 is the leader.
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    mode: String,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(default)]
    t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_cap: Option<f64>,
    duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    sim: RawSim,
    gains: RawGains,
    exosystem: RawExo,
    graph: RawGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agent_defaults: Option<RawAgent>,
    agents: Vec<RawAgent>,
}

// ---- validation ----

#[derive(Default)]
struct Errors(Vec<SchemaError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(SchemaError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn matrix(&mut self, path: &str, raw: &RawMatrix, shape: Option<(usize, usize)>) -> Option<Mat> {
        if raw.data.len() != raw.rows * raw.cols {
            self.push(
                path,
                format!(
                    "declared {}x{} but data has {} entries",
                    raw.rows,
                    raw.cols,
                    raw.data.len()
                ),
            );
            return None;
        }
        if raw.data.iter().any(|x| !x.is_finite()) {
            self.push(path, "entries must be finite");
            return None;
        }
        if let Some((r, c)) = shape {
            if (raw.rows, raw.cols) != (r, c) {
                self.push(path, format!("expected {r}x{c}, got {}x{}", raw.rows, raw.cols));
                return None;
            }
        }
        Matrix::from_row_major(raw.rows, raw.cols, raw.data.clone()).ok()
    }

    fn optional(&mut self, path: &str, raw: &Option<RawMatrix>, shape: (usize, usize)) -> Option<Option<Mat>> {
        match raw {
            None => Some(None),
            Some(m) => self.matrix(path, m, Some(shape)).map(Some),
        }
    }

    fn vector(&mut self, path: &str, v: &[f64], len: usize) -> bool {
        if v.len() != len {
            self.push(path, format!("expected length {len}, got {}", v.len()));
            false
        } else if v.iter().any(|x| !x.is_finite()) {
            self.push(path, "entries must be finite");
            false
        } else {
            true
        }
    }

    fn gain(&mut self, path: &str, raw: &RawGain, shape: (usize, usize)) -> Option<GainSource<f64>> {
        match raw {
            RawGain::Synthesize { mbar } => {
                if mbar.is_finite() && *mbar > 1.0 {
                    Some(GainSource::Synthesize { mbar: *mbar })
                } else {
                    self.push(
                        format!("{path}.mbar"),
                        format!("must be a finite number above 1, got {mbar}"),
                    );
                    None
                }
            }
            RawGain::Matrix(m) => self.matrix(path, m, Some(shape)).map(GainSource::Explicit),
        }
    }
}

fn zeros_or(m: Option<Mat>, r: usize, c: usize) -> Mat {
    m.unwrap_or_else(|| Matrix::zeros(r, c))
}

struct AgentParts {
    model: AgentModel<f64>,
    gains: AgentGainSpec<f64>,
    state: AgentState,
}

fn agent_from_raw(errs: &mut Errors, i: usize, raw: &RawAgent, q: usize) -> Option<AgentParts> {
    let p = |f: &str| format!("agents[{i}].{f}");
    let need = |errs: &mut Errors, f: &str, m: &Option<RawMatrix>| -> Option<RawMatrix> {
        if m.is_none() {
            errs.push(p(f), "missing (set it on the agent or in agent_defaults)");
        }
        m.clone()
    };
    let (ra, rb, rc, rcm) = (
        need(errs, "A", &raw.a),
        need(errs, "B", &raw.b),
        need(errs, "C", &raw.c),
        need(errs, "Cm", &raw.cm),
    );
    if raw.k.is_none() {
        errs.push(p("K"), "missing (matrix or { mbar = ... })");
    }
    let a = errs.matrix(&p("A"), &ra?, None)?;
    if !a.is_square() {
        errs.push(p("A"), format!("must be square, got {}x{}", a.rows(), a.cols()));
        return None;
    }
    let n = a.rows();
    let rb = rb?;
    let b = errs.matrix(&p("B"), &rb, Some((n, rb.cols)))?;
    let m = b.cols();
    let rc = rc?;
    let c = errs.matrix(&p("C"), &rc, Some((rc.rows, n)))?;
    let pdim = c.rows();
    let rcm = rcm?;
    let cm = errs.matrix(&p("Cm"), &rcm, Some((rcm.rows, n)))?;
    let pm = cm.rows();

    let e = errs.optional(&p("E"), &raw.e, (n, q));
    let d = errs.optional(&p("D"), &raw.d, (pdim, m));
    let f = errs.optional(&p("F"), &raw.f, (pdim, q));
    let dm = errs.optional(&p("Dm"), &raw.dm, (pm, m));
    let fm = errs.optional(&p("Fm"), &raw.fm, (pm, q));
    let kbar = errs.optional(&p("Kbar"), &raw.kbar, (m, n));
    let ktil = errs.optional(&p("Ktil"), &raw.ktil, (m, q));
    let l = errs.optional(&p("L"), &raw.l, (n, pm));
    let k = raw.k.as_ref().and_then(|k| errs.gain(&p("K"), k, (m, n)));
    let ltil = match &raw.ltil {
        None => Some(None),
        Some(g) => errs.gain(&p("Ltil"), g, (n, pm)).map(Some),
    };

    let x = match &raw.x0 {
        Some(x) => errs.vector(&p("x0"), x, n).then(|| x.clone()),
        None => {
            errs.push(p("x0"), "missing initial state");
            None
        }
    };
    let v = match &raw.v0 {
        Some(v) => errs.vector(&p("v0"), v, q).then(|| v.clone()),
        None => Some(vec![0.0; q]),
    };
    let xhat = match &raw.xhat0 {
        Some(h) => errs.vector(&p("xhat0"), h, n).then(|| Some(h.clone())),
        None => Some(None),
    };

    Some(AgentParts {
        model: AgentModel {
            a,
            b,
            e: zeros_or(e?, n, q),
            c,
            d: zeros_or(d?, pdim, m),
            f: zeros_or(f?, pdim, q),
            cm,
            dm: zeros_or(dm?, pm, m),
            fm: zeros_or(fm?, pm, q),
        },
        gains: AgentGainSpec {
            kbar: kbar?,
            ktil: ktil?,
            k: k?,
            l: l?,
            ltil: ltil?,
        },
        state: AgentState {
            v: v?,
            x: x?,
            xhat: xhat?,
        },
    })
}

fn from_raw(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let mut errs = Errors::default();
    let exo = errs.matrix("exosystem.S0", &raw.exosystem.s0, None).and_then(|s0| {
        if !s0.is_square() {
            errs.push("exosystem.S0", "must be square");
            return None;
        }
        errs.vector("exosystem.v0", &raw.exosystem.v0, s0.rows())
            .then(|| Exosystem {
                s0,
                v0_init: raw.exosystem.v0.clone(),
            })
    });
    let q = exo.as_ref().map_or(0, Exosystem::q);

    if raw.graph.followers != raw.agents.len() {
        errs.push(
            "graph.followers",
            format!(
                "{} followers but {} [[agents]] entries",
                raw.graph.followers,
                raw.agents.len()
            ),
        );
    }
    let network = match Network::from_edges(raw.graph.followers, &raw.graph.edges) {
        Ok(n) => Some(n),
        Err(e) => {
            errs.push("graph.edges", e.to_string());
            None
        }
    };

    let defaults = raw.agent_defaults.clone().unwrap_or_default();
    let parts: Vec<Option<AgentParts>> = if exo.is_some() {
        raw.agents
            .iter()
            .enumerate()
            .map(|(i, a)| agent_from_raw(&mut errs, i, &a.merged(&defaults), q))
            .collect()
    } else {
        Vec::new()
    };

    if !(raw.gains.psi.is_finite() && raw.gains.psi > 0.0) {
        errs.push("gains.psi", "must be positive");
    }
    let mode = match raw.sim.mode.parse::<SimMode>() {
        Ok(m) => Some(m),
        Err(e) => {
            errs.push("sim.mode", e);
            None
        }
    };
    let a = raw.sim.a.unwrap_or(1.0 / raw.sim.horizon);
    let cap = raw.sim.mu_cap.unwrap_or(DEFAULT_MU_CAP);
    let schedule = match MuSchedule::with(raw.sim.horizon, raw.sim.t0, a, cap) {
        Ok(s) => Some(s),
        Err(e) => {
            errs.push("sim", e.to_string());
            None
        }
    };
    let sim = mode.map(|mode| SimSettings {
        mode,
        duration: raw.sim.duration,
        dt: raw.sim.dt.unwrap_or(1e-4),
        stride: raw.sim.stride.unwrap_or(10),
    });
    if let Some(s) = &sim {
        let mut cfg = SimConfig::new(s.mode, s.duration);
        cfg.dt = s.dt;
        cfg.stride = s.stride;
        if let Err(e) = cfg.validate() {
            errs.push("sim", e.to_string());
        }
    }

    if !errs.0.is_empty() {
        return Err(ScenarioError::Schema(errs.0));
    }
    let parts: Vec<AgentParts> = parts.into_iter().map(|p| p.expect("errors reported above")).collect();
    let exo = exo.expect("checked");
    let mut agents = Vec::new();
    let mut gains = Vec::new();
    let mut states = Vec::new();
    for p in parts {
        agents.push(p.model);
        gains.push(p.gains);
        states.push(p.state);
    }
    Ok(Scenario {
        name: raw.name,
        network: network.expect("checked"),
        initial: ClosedLoopState {
            v0: exo.v0_init.clone(),
            agents: states,
        },
        agents,
        exosystem: exo,
        gains: GainSpec {
            psi: raw.gains.psi,
            agents: gains,
        },
        schedule: schedule.expect("checked"),
        sim: sim.expect("checked"),
    })
}

fn raw_matrix(m: &Mat) -> RawMatrix {
    RawMatrix {
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice().to_vec(),
    }
}

fn raw_gain(g: &GainSource<f64>) -> RawGain {
    match g {
        GainSource::Explicit(m) => RawGain::Matrix(raw_matrix(m)),
        GainSource::Synthesize { mbar } => RawGain::Synthesize { mbar: *mbar },
    }
}

/// Outcome of one standing assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Everything `check` reports for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub assumptions: Vec<AssumptionCheck>,
    pub conditions: ConditionReport,
    pub warnings: Vec<String>,
}

impl CheckReport {
    pub fn assumptions_hold(&self) -> bool {
        self.assumptions.iter().all(|a| a.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for a in &self.assumptions {
            s.push_str(&format!(
                "{:<28} {:<5} {}\n",
                a.name,
                if a.passed { "ok" } else { "FAIL" },
                a.detail
            ));
        }
        s.push('\n');
        s.push_str(&self.conditions.render_table());
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        from_raw(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))?;
        Self::from_toml_str(text)
    }

    /// Bundled name or file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        if BUNDLED.iter().any(|(n, _)| *n == name_or_path) {
            Self::bundled(name_or_path)
        } else {
            Self::load(name_or_path)
        }
    }

    /// Fully expanded TOML; loading it gives back an equal scenario.
    pub fn to_toml_string(&self) -> String {
        let agents = self
            .agents
            .iter()
            .zip(&self.gains.agents)
            .zip(&self.initial.agents)
            .map(|((a, g), s)| RawAgent {
                a: Some(raw_matrix(&a.a)),
                b: Some(raw_matrix(&a.b)),
                e: Some(raw_matrix(&a.e)),
                c: Some(raw_matrix(&a.c)),
                d: Some(raw_matrix(&a.d)),
                f: Some(raw_matrix(&a.f)),
                cm: Some(raw_matrix(&a.cm)),
                dm: Some(raw_matrix(&a.dm)),
                fm: Some(raw_matrix(&a.fm)),
                kbar: g.kbar.as_ref().map(raw_matrix),
                ktil: g.ktil.as_ref().map(raw_matrix),
                k: Some(raw_gain(&g.k)),
                l: g.l.as_ref().map(raw_matrix),
                ltil: g.ltil.as_ref().map(raw_gain),
                x0: Some(s.x.clone()),
                v0: Some(s.v.clone()),
                xhat0: s.xhat.clone(),
            })
            .collect();
        let raw = RawScenario {
            name: self.name.clone(),
            sim: RawSim {
                mode: self.sim.mode.as_str().to_string(),
                horizon: self.schedule.horizon,
                t0: self.schedule.t0,
                a: Some(self.schedule.a),
                mu_cap: Some(self.schedule.mu_cap),
                duration: self.sim.duration,
                dt: Some(self.sim.dt),
                stride: Some(self.sim.stride),
            },
            gains: RawGains { psi: self.gains.psi },
            exosystem: RawExo {
                s0: raw_matrix(&self.exosystem.s0),
                v0: self.exosystem.v0_init.clone(),
            },
            graph: RawGraph {
                followers: self.network.n_followers(),
                edges: self.network.edges(),
            },
            agent_defaults: None,
            agents,
        };
        toml::to_string(&raw).expect("scenario serializes")
    }

    pub fn regulators(&self) -> Result<Vec<RegulatorSolution<f64>>, ScenarioError> {
        Ok(self
            .agents
            .iter()
            .map(|a| solve_regulator(a, &self.exosystem))
            .collect::<Result<_, _>>()?)
    }

    pub fn gain_set(&self, regs: &[RegulatorSolution<f64>]) -> Result<GainSet<f64>, ScenarioError> {
        Ok(realize_gains(&self.gains, &self.agents, regs)?)
    }

    /// Regulator solutions, realized gains and the closed loop.
    pub fn closed_loop(&self) -> Result<ClosedLoop, ScenarioError> {
        let regs = self.regulators()?;
        let gains = self.gain_set(&regs)?;
        Ok(ClosedLoop::with_regulators(
            self.network.clone(),
            self.agents.clone(),
            self.exosystem.clone(),
            gains,
            regs,
        )?)
    }

    /// Copy with every gain replaced by its explicit value.
    pub fn synthesized(&self) -> Result<Self, ScenarioError> {
        let regs = self.regulators()?;
        let gains = self.gain_set(&regs)?;
        let mut out = self.clone();
        out.gains.agents = gains
            .agents
            .into_iter()
            .map(|g| AgentGainSpec {
                kbar: Some(g.kbar),
                ktil: Some(g.ktil),
                k: GainSource::Explicit(g.k),
                l: Some(g.l),
                ltil: Some(GainSource::Explicit(g.ltil)),
            })
            .collect();
        Ok(out)
    }

    /// Raises `psi`, the `K` margin and the `Ltil` margin by `factor`.
    ///
    /// Explicit matrices are scaled, which scales the eigenvalues of `B K` and
    /// `Ltil Cm` by the same factor.
    pub fn with_scaled_margins(&self, factor: f64) -> Self {
        let scale = |g: &GainSource<f64>| match g {
            GainSource::Explicit(m) => GainSource::Explicit(m.scale(factor)),
            GainSource::Synthesize { mbar } => GainSource::Synthesize { mbar: mbar * factor },
        };
        let mut out = self.clone();
        out.gains.psi *= factor;
        for g in &mut out.gains.agents {
            g.k = scale(&g.k);
            g.ltil = g.ltil.as_ref().map(scale);
        }
        out
    }

    /// Simulation config for `mode` using the scenario's step settings.
    pub fn sim_config(&self, mode: SimMode) -> SimConfig {
        let mut cfg = SimConfig::new(mode, self.sim.duration);
        cfg.dt = self.sim.dt;
        cfg.stride = self.sim.stride;
        cfg
    }

    /// Observer envelope and expected `x_bar` exponent for certification.
    /// Baseline modes have neither.
    pub fn envelopes(&self, mode: SimMode, gains: &GainSet<f64>) -> Result<Envelopes, ScenarioError> {
        if !mode.uses_mu() {
            return Ok(Envelopes::default());
        }
        let rate = observer_rate(&partition_laplacian(&self.network))?;
        let observer = ObserverEnvelope::new(&rate, gains.psi, &self.exosystem.s0).ok();
        let mut expected = gains.psi * rate.rho_h;
        for (a, g) in self.agents.iter().zip(&gains.agents) {
            match agent_rates(a, g)?.theta {
                Some(theta) => expected = expected.min(theta),
                None => {
                    return Ok(Envelopes {
                        observer,
                        xbar_exponent: None,
                    })
                }
            }
        }
        Ok(Envelopes {
            observer,
            xbar_exponent: Some(expected),
        })
    }

    /// Standing assumptions plus every gain condition for `mode`.
    pub fn check(&self, mode: SimMode) -> Result<CheckReport, ScenarioError> {
        let mut assumptions = Vec::new();
        let mut warnings = Vec::new();
        if let Some(w) = self.exosystem.neutral_stability_warning()? {
            warnings.push(w);
        }

        let mut bad = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let r = check_regulation_rank(a, &self.exosystem)?;
            for d in r.details.iter().filter(|d| !d.ok()) {
                bad.push(format!(
                    "agent {}: rank {} < {} at {:.4}{:+.4}i",
                    i + 1,
                    d.rank,
                    d.required,
                    d.eigenvalue.re,
                    d.eigenvalue.im
                ));
            }
        }
        assumptions.push(AssumptionCheck {
            name: "transmission_zeros",
            passed: bad.is_empty(),
            detail: if bad.is_empty() {
                "rank [A - lambda I, B; C, D] = n + p at every eigenvalue of S0".to_string()
            } else {
                bad.join("; ")
            },
        });

        let rooted = has_leader_spanning_tree(&self.network);
        assumptions.push(AssumptionCheck {
            name: "leader_spanning_tree",
            passed: rooted,
            detail: if rooted {
                "every follower is reachable from the leader".to_string()
            } else {
                "some follower is not reachable from the leader".to_string()
            },
        });

        let not_full: Vec<String> = self
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| !check_full_rank_io(a))
            .map(|(i, _)| format!("agent {}", i + 1))
            .collect();
        assumptions.push(AssumptionCheck {
            name: "full_rank_input_measurement",
            passed: not_full.is_empty(),
            detail: if not_full.is_empty() {
                "rank B = rank Cm = n for every agent".to_string()
            } else {
                format!("rank B or rank Cm below n: {}", not_full.join(", "))
            },
        });

        if !rooted {
            return Ok(CheckReport {
                assumptions,
                conditions: ConditionReport::default(),
                warnings,
            });
        }
        let regs = self.regulators()?;
        let gains = self.gain_set(&regs)?;
        let rate = observer_rate(&partition_laplacian(&self.network))?;
        let smode = if mode == SimMode::StateFeedback {
            Mode::StateFeedback
        } else {
            Mode::OutputFeedback
        };
        let conditions = verify_gains(smode, &gains, &rate, &self.agents, &regs)?;
        let mut unmet: Vec<&str> = Vec::new();
        for c in conditions.failures() {
            if !unmet.contains(&c.name) {
                unmet.push(c.name);
            }
        }
        if !unmet.is_empty() {
            warnings.push(format!(
                "{} of {} sufficient conditions not met: {}",
                conditions.failures().count(),
                conditions.conditions.len(),
                unmet.join(", ")
            ));
        }
        Ok(CheckReport {
            assumptions,
            conditions,
            warnings,
        })
    }
}
