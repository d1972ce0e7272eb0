//! Scenario file to certified report, through the on-disk trajectory format.

use std::fs::File;

use proptest::prelude::*;

use ptcor::analysis::{certify, compare_runs, Tolerances};
use ptcor::scenario::Scenario;
use ptcor::sim::{integrate, SimMode, Trajectory};

const SCALAR: &str = r#"
name = "scalar"

[sim]
mode = "state_fb"
T = 1.0
duration = 2.0
dt = 1e-3

[gains]
psi = 3.0

[exosystem]
S0 = { rows = 1, cols = 1, data = [0.0] }
v0 = [1.0]

[graph]
followers = 2
edges = [[0, 1, 1.0], [1, 2, 1.0]]

[agent_defaults]
A = { rows = 1, cols = 1, data = [-1.0] }
B = { rows = 1, cols = 1, data = [1.0] }
C = { rows = 1, cols = 1, data = [1.0] }
F = { rows = 1, cols = 1, data = [-1.0] }
Cm = { rows = 1, cols = 1, data = [1.0] }
K = { mbar = 2.0 }

[[agents]]
x0 = [1.0]

[[agents]]
x0 = [2.0]
B = { rows = 1, cols = 1, data = [2.0] }
"#;

fn run(s: &Scenario, mode: SimMode) -> Trajectory {
    integrate(&s.closed_loop().unwrap(), &s.initial, &s.schedule, &s.sim_config(mode)).unwrap()
}

#[test]
fn bundled_run_survives_disk_round_trip() {
    let s = Scenario::bundled("example2_ccvsi").unwrap();
    let mode = SimMode::OutputFeedback;
    let traj = run(&s, mode);
    let env = s.envelopes(mode, s.closed_loop().unwrap().gains()).unwrap();
    let direct = certify(&traj, &s.schedule, Tolerances::default(), &env).unwrap();
    assert!(direct.settled);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    traj.write_csv(File::create(&path).unwrap()).unwrap();
    let back = Trajectory::read_csv(File::open(&path).unwrap()).unwrap();
    assert_eq!(back.samples, traj.samples);
    let reread = certify(&back, &s.schedule, Tolerances::default(), &env).unwrap();
    assert_eq!(reread, direct);
}

#[test]
fn saved_scenario_reproduces_run() {
    let s = Scenario::from_toml_str(SCALAR).unwrap().synthesized().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scalar.toml");
    std::fs::write(&path, s.to_toml_string()).unwrap();
    let loaded = Scenario::load(&path).unwrap();
    assert_eq!(
        run(&loaded, SimMode::StateFeedback).samples,
        run(&s, SimMode::StateFeedback).samples
    );
}

#[test]
fn prescribed_time_beats_baselines_at_horizon() {
    let s = Scenario::from_toml_str(SCALAR).unwrap();
    let runs: Vec<(SimMode, Trajectory)> = [SimMode::BaselineAsymptotic, SimMode::StateFeedback]
        .into_iter()
        .map(|m| (m, run(&s, m)))
        .collect();
    let refs: Vec<(&str, &Trajectory)> = runs.iter().map(|(m, t)| (m.as_str(), t)).collect();
    let rows = compare_runs(&refs, s.schedule.end()).unwrap();
    assert_eq!(rows[0].label, "state_fb");
    assert!(rows[0].e_norm < 1e-6 * rows[1].e_norm);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn horizon_does_not_depend_on_initial_state(
        x in prop::collection::vec(-50.0..50.0f64, 2),
        v0 in -10.0..10.0f64,
    ) {
        let mut s = Scenario::from_toml_str(SCALAR).unwrap();
        s.initial.v0 = vec![v0];
        for (a, xi) in s.initial.agents.iter_mut().zip(&x) {
            a.x = vec![*xi];
        }
        let traj = run(&s, SimMode::StateFeedback);
        let env = s.envelopes(SimMode::StateFeedback, s.closed_loop().unwrap().gains()).unwrap();
        let r = certify(&traj, &s.schedule, Tolerances::default(), &env).unwrap();
        prop_assert!(r.settled, "{}", r.to_key_values());
        prop_assert_eq!(r.envelope_violations, 0);
    }
}
