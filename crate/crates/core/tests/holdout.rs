use std::path::PathBuf;

use regatta::eval::parse_key;
use regatta::harness::{holdout_report, Experiment, Solution};

#[test]
fn evolved_solutions_beat_the_static_route_under_shifting_wind() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/variable_wind.json");
    let exp = Experiment::load(&path).unwrap();
    let problem = exp.problem(exp.training_scenarios().unwrap(), None).unwrap();
    let out = exp.evolve(&problem, 2, false).unwrap();
    let top: Vec<(String, Solution)> = out
        .top(10)
        .into_iter()
        .enumerate()
        .map(|(i, (k, _))| (format!("top{}", i + 1), Solution::Waypoints(parse_key(&k).unwrap())))
        .collect();
    let holdout = exp.holdout_scenarios().unwrap();
    let report = holdout_report(&problem, &holdout, &top).unwrap();
    assert_eq!(report.rows.len(), 11 * holdout.len());
    let base = report.rows.iter().filter(|r| r.0 == "s_w0").map(|r| r.2).sum::<f64>() / holdout.len() as f64;
    let better = report.summary.iter().filter(|s| s.mean_cost < base).count();
    assert!(better > 5, "{better} of 10 beat s_w0");
}
