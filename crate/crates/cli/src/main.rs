use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};

use ptcor::analysis::{
    certify, certify_run, compare_runs, comparison_csv, AnalysisError, ConvergenceReport, Tolerances,
};
use ptcor::scenario::{Scenario, ScenarioError, BUNDLED};
use ptcor::sim::{integrate, MuSchedule, SimError, SimMode, Trajectory, TrajectoryError};

/// Prescribed-time cooperative output regulation: check, synthesize, simulate, certify and compare.
///
/// SCENARIO is a TOML file or the name of a bundled scenario
/// (example1_rlc, example2_ccvsi).
#[derive(Debug, Parser)]
#[command(name = "ptcor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the standing assumptions and every gain condition.
    Check {
        scenario: String,
        #[arg(long)]
        mode: Option<SimMode>,
    },
    /// Fill in synthesized and derived gains and write the explicit scenario.
    Synth {
        scenario: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Integrate the closed loop and write the trajectory CSV.
    Simulate {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Certify convergence; exits with status 2 when the run has not settled.
    Certify {
        scenario: String,
        /// Certify an existing trajectory CSV instead of simulating.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Run the prescribed-time controller against baselines and rank ||e|| at a time.
    Compare {
        scenario: String,
        /// Comma-separated baselines: asymptotic, fixed_time.
        #[arg(long, value_delimiter = ',', default_value = "asymptotic,fixed_time")]
        baselines: Vec<SimMode>,
        /// Comparison time; defaults to T + t0.
        #[arg(long)]
        at: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Controller: state_fb, output_fb, asymptotic or fixed_time.
    #[arg(long)]
    mode: Option<SimMode>,
    /// Prescribed horizon T; the post-horizon gain becomes 1/T.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    mu_cap: Option<f64>,
    /// Base step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TolArgs {
    #[arg(long, default_value_t = 1e-2)]
    tol_abs: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol_rel: f64,
}

#[derive(Debug)]
struct CliError {
    category: &'static str,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category, self.message)
    }
}

impl CliError {
    fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        Self::new(e.category(), e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::new("simulation", e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        Self::new("analysis", e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        Self::new("trajectory", e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load(name: &str) -> Result<Scenario, CliError> {
    Scenario::resolve(name).map_err(|e| match e {
        ScenarioError::Io { .. } => CliError::new(
            "scenario",
            format!(
                "{e} (bundled scenarios: {})",
                BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        ),
        other => other.into(),
    })
}

/// Applies the schedule and step overrides; returns the mode to run.
fn apply(s: &mut Scenario, run: &RunArgs) -> Result<SimMode, CliError> {
    if let Some(t) = run.horizon {
        s.schedule = MuSchedule::with(t, s.schedule.t0, 1.0 / t, s.schedule.mu_cap)?;
    }
    if let Some(cap) = run.mu_cap {
        s.schedule = MuSchedule::with(s.schedule.horizon, s.schedule.t0, s.schedule.a, cap)?;
    }
    if let Some(dt) = run.dt {
        s.sim.dt = dt;
    }
    if s.sim.duration <= s.schedule.horizon {
        eprintln!(
            "warning: duration {} does not extend past T = {}; certification needs a longer run",
            s.sim.duration, s.schedule.horizon
        );
    }
    Ok(run.mode.unwrap_or(s.sim.mode))
}

fn simulate(s: &Scenario, mode: SimMode) -> Result<Result<Trajectory, SimError>, CliError> {
    let cl = s.closed_loop()?;
    Ok(integrate(&cl, &s.initial, &s.schedule, &s.sim_config(mode)))
}

fn stem(s: &Scenario, mode: SimMode) -> String {
    format!("{}_{}", s.name, mode.as_str())
}

fn cmd_check(name: &str, mode: Option<SimMode>) -> Result<ExitCode, CliError> {
    let s = load(name)?;
    let mode = mode.unwrap_or(s.sim.mode);
    let report = s.check(mode)?;
    println!("scenario {} ({} followers, mode {mode})\n", s.name, s.agents.len());
    print!("{}", report.render());
    Ok(if report.assumptions_hold() && !report.conditions.has_errors() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_synth(name: &str, out: &Path) -> Result<ExitCode, CliError> {
    let s = load(name)?.synthesized()?;
    for (i, g) in s.closed_loop()?.gains().agents.iter().enumerate() {
        println!(
            "agent {}\n  K =\n{}  Ltil =\n{}  Ktil =\n{}",
            i + 1,
            g.k,
            g.ltil,
            g.ktil
        );
    }
    write_file(&out.join(format!("{}.synth.toml", s.name)), &s.to_toml_string())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(name: &str, run: &RunArgs) -> Result<ExitCode, CliError> {
    let mut s = load(name)?;
    let mode = apply(&mut s, run)?;
    let traj = simulate(&s, mode)??;
    let stem = stem(&s, mode);
    write_file(&run.out.join(format!("{stem}.csv")), &traj.to_csv_string())?;
    write_file(&run.out.join(format!("{}.scenario.toml", s.name)), &s.to_toml_string())?;
    if let Some(last) = traj.last() {
        println!(
            "{} samples, t = {} .. {}, final ||e|| = {:e}",
            traj.len(),
            s.schedule.t0,
            last.t,
            last.e_norm
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &ConvergenceReport) {
    print!("{}", r.to_key_values());
}

fn cmd_certify(name: &str, trajectory: Option<&Path>, run: &RunArgs, tol: &TolArgs) -> Result<ExitCode, CliError> {
    let mut s = load(name)?;
    let mode = apply(&mut s, run)?;
    let tols = Tolerances::new(tol.tol_abs, tol.tol_rel);
    let cl = s.closed_loop()?;
    let env = s.envelopes(mode, cl.gains())?;
    let stem = stem(&s, mode);
    let report = match trajectory {
        Some(path) => {
            let file = fs::File::open(path).map_err(io_err(path))?;
            certify(&Trajectory::read_csv(file)?, &s.schedule, tols, &env)?
        }
        None => {
            let result = integrate(&cl, &s.initial, &s.schedule, &s.sim_config(mode));
            let traj = match &result {
                Ok(t) => t,
                Err(SimError::FiniteEscape { partial, .. }) | Err(SimError::NonFinite { partial, .. }) => partial,
                Err(e) => return Err(e.clone().into()),
            };
            write_file(&run.out.join(format!("{stem}.csv")), &traj.to_csv_string())?;
            certify_run(&result, &s.schedule, tols, &env)?
        }
    };
    write_file(&run.out.join(format!("{stem}.report.txt")), &report.to_key_values())?;
    print_report(&report);
    Ok(if report.settled {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_compare(name: &str, baselines: &[SimMode], at: Option<f64>, run: &RunArgs) -> Result<ExitCode, CliError> {
    let mut s = load(name)?;
    let ptcor = apply(&mut s, run)?;
    let mut modes = vec![ptcor];
    modes.extend(baselines.iter().copied().filter(|m| *m != ptcor));
    let at = at.unwrap_or_else(|| s.schedule.end());

    let results: Vec<Result<Trajectory, CliError>> = thread::scope(|scope| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&m| {
                let s = &s;
                scope.spawn(move || simulate(s, m).and_then(|r| r.map_err(CliError::from)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let mut runs = Vec::new();
    for (m, r) in modes.iter().zip(results) {
        let traj = r?;
        write_file(&run.out.join(format!("{}.csv", stem(&s, *m))), &traj.to_csv_string())?;
        runs.push((m.as_str(), traj));
    }
    let refs: Vec<(&str, &Trajectory)> = runs.iter().map(|(l, t)| (*l, t)).collect();
    let rows = compare_runs(&refs, at)?;
    let table = comparison_csv(&rows);
    write_file(&run.out.join(format!("{}_compare.csv", s.name)), &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { scenario, mode } => cmd_check(scenario, *mode),
        Command::Synth { scenario, out } => cmd_synth(scenario, out),
        Command::Simulate { scenario, run } => cmd_simulate(scenario, run),
        Command::Certify {
            scenario,
            trajectory,
            run,
            tol,
        } => cmd_certify(scenario, trajectory.as_deref(), run, tol),
        Command::Compare {
            scenario,
            baselines,
            at,
            run,
        } => cmd_compare(scenario, baselines, *at, run),
    };
    result.unwrap_or_else(|e| {
        eprintln!("{e}");
        ExitCode::FAILURE
    })
}
