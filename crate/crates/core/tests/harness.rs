use std::fs;

use cnrq::harness::config::EnvironmentPreset;
use cnrq::harness::run::{metrics_path, resolve_output_dir, summary_path};
use cnrq::harness::{
    compare_runs, emit_plot_series, read_metrics, run_experiment, Algorithm, ExperimentConfig, ExperimentSummary,
};
use cnrq::Error;

fn fixture(algorithm: Algorithm, iterations: u64, seeds: Vec<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(EnvironmentPreset::TwoAgentFixture, algorithm, iterations, seeds);
    c.name = format!("fixture-{}", algorithm.name());
    c
}

#[test]
fn one_iteration_one_row_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(Algorithm::Cnrq, 1, vec![9]);
    let summary = run_experiment(&config, dir.path()).unwrap();
    let text = fs::read_to_string(metrics_path(dir.path(), &config.name, 9)).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(summary.runs.len(), 1);
    let loaded = ExperimentSummary::load(&summary_path(dir.path(), &config.name)).unwrap();
    assert_eq!(loaded, summary);
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    for algorithm in [Algorithm::Cnrq, Algorithm::CeqSemi, Algorithm::Qnr] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut config = fixture(algorithm, 1500, vec![4]);
        config.learning.observation_noise = Some(0.5);
        config.learning.inner_iterations = Some(10);
        run_experiment(&config, a.path()).unwrap();
        run_experiment(&config, b.path()).unwrap();
        let read = |d: &std::path::Path| fs::read(metrics_path(d, &config.name, 4)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{}", algorithm.name());
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(Algorithm::Cnrq, 500, vec![1, 2]);
    run_experiment(&config, dir.path()).unwrap();
    let one = fs::read(metrics_path(dir.path(), &config.name, 1)).unwrap();
    let two = fs::read(metrics_path(dir.path(), &config.name, 2)).unwrap();
    assert_ne!(one, two);
}

#[test]
fn thinning_keeps_prefix_interval_tail_and_last() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture(Algorithm::RegretMatching, 2345, vec![0]);
    config.metrics.dense_prefix = 1000;
    config.metrics.interval = 100;
    run_experiment(&config, dir.path()).unwrap();
    let rows = read_metrics(fs::File::open(metrics_path(dir.path(), &config.name, 0)).unwrap()).unwrap();
    let n: Vec<u64> = rows.iter().map(|r| r.iteration).collect();
    let mut expected: Vec<u64> = (1..=1000).chain((1100..=2300).step_by(100)).collect();
    // tail window starts at 2345 - 234 + 1
    expected.extend([2112, 2345]);
    expected.sort_unstable();
    assert_eq!(n, expected);
}

#[test]
fn every_algorithm_shares_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut headers = Vec::new();
    for algorithm in [
        Algorithm::Cnrq,
        Algorithm::CeqCentral,
        Algorithm::CeqSemi,
        Algorithm::Qnr,
        Algorithm::RegretMatching,
    ] {
        let mut config = fixture(algorithm, 20, vec![0]);
        config.learning.inner_iterations = Some(5);
        run_experiment(&config, dir.path()).unwrap();
        let text = fs::read_to_string(metrics_path(dir.path(), &config.name, 0)).unwrap();
        headers.push(text.lines().next().unwrap().to_string());
    }
    assert!(headers.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn compare_rejects_mismatched_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&fixture(Algorithm::Cnrq, 10, vec![0]), dir.path()).unwrap();
    let b = run_experiment(&fixture(Algorithm::RegretMatching, 20, vec![0]), dir.path()).unwrap();
    assert!(matches!(compare_runs(&[a.clone(), b], 0.0), Err(Error::MismatchedConfigs(_))));
    let rows = compare_runs(&[a.clone(), a], 0.0).unwrap();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn plot_series_lengths_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(Algorithm::Cnrq, 50, vec![0]);
    run_experiment(&config, dir.path()).unwrap();
    let rows = read_metrics(fs::File::open(metrics_path(dir.path(), &config.name, 0)).unwrap()).unwrap();
    let n = emit_plot_series(&rows, "n", 1).unwrap();
    assert!(n.iter().all(|&(i, v)| v == i as f64));
    for window in [1, 2, 7] {
        let s = emit_plot_series(&rows, "freq_0_0", window).unwrap();
        assert_eq!(s.len(), 50 - window + 1);
    }
    assert!(matches!(emit_plot_series(&rows, "welfare_9", 1), Err(Error::UnknownQuantity(_))));
}

#[test]
fn output_directory_precedence() {
    let mut config = fixture(Algorithm::Cnrq, 1, vec![0]);
    let explicit = std::path::Path::new("/tmp/explicit");
    assert_eq!(resolve_output_dir(Some(explicit), &config), explicit);
    config.output.dir = Some("from-config".into());
    assert_eq!(resolve_output_dir(None, &config), std::path::Path::new("from-config"));
}

#[test]
fn presets_match_their_environments() {
    let up = ExperimentConfig::named_preset("uplink-paper").unwrap();
    let game = up.environment.build().unwrap();
    assert_eq!(game.num_agents(), 4);
    assert_eq!(game.num_states(), 2);
    assert_eq!(game.cost_bound(0), 0.75);
    let down = ExperimentConfig::named_preset("downlink-paper").unwrap();
    let game = down.environment.build().unwrap();
    assert_eq!(game.num_states(), 21);
    assert_eq!(game.cost_bound(3), 10.0);
    assert_eq!(game.joint_space().size(), 81);
}
