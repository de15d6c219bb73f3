//! Seeded experiment runs: metrics files and tail-window summaries.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baselines::{CeqRun, CeqVariant, QnrRun, RegretMatchingRun};
use crate::cnrq::CnrqRun;
use crate::error::{Error, Result};
use crate::game::Game;
use crate::harness::config::{Algorithm, EnvironmentConfig, ExperimentConfig, LearningConfig, OUT_DIR_VAR};
use crate::harness::metrics::{MetricsRecord, MetricsTracker, MetricsWriter, Thinning};
use crate::learner::MultiAgentLearner;

/// Share of the run averaged in the summary.
pub const TAIL_FRACTION: f64 = 0.1;

/// Iteration whose residual is reported as the early reference point.
pub const EARLY_ITERATION: u64 = 1000;

pub fn make_learner(
    algorithm: Algorithm,
    game: Arc<dyn Game>,
    learning: &LearningConfig,
    seed: u64,
) -> Result<Box<dyn MultiAgentLearner>> {
    Ok(match algorithm {
        Algorithm::Cnrq => Box::new(CnrqRun::new(game, learning.cnrq(), seed)?),
        Algorithm::CeqCentral => Box::new(CeqRun::new(game, CeqVariant::Centralized, learning.ceq(), seed)?),
        Algorithm::CeqSemi => Box::new(CeqRun::new(game, CeqVariant::SemiDistributed, learning.ceq(), seed)?),
        Algorithm::Qnr => Box::new(QnrRun::new(game, learning.qnr(), seed)?),
        Algorithm::RegretMatching => Box::new(RegretMatchingRun::new(game, learning.regret_matching(), seed)?),
    })
}

/// First iteration of the tail window of a run of `iterations` steps.
pub fn tail_start(iterations: u64) -> u64 {
    let len = ((iterations as f64 * TAIL_FRACTION) as u64).max(1);
    iterations - len + 1
}

/// Tail-window averages of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub iterations: u64,
    pub tail_start: u64,
    /// Mean over the tail window of the summed utilities.
    pub tail_welfare: f64,
    pub tail_utilities: Vec<f64>,
    pub tail_costs: Vec<f64>,
    pub cost_bounds: Vec<f64>,
    pub tail_lambdas: Vec<f64>,
    /// Residual at [`EARLY_ITERATION`] (or the last iteration if earlier).
    pub early_residual: Option<f64>,
    /// Mean residual over the diagnosed rows of the tail window.
    pub tail_residual: Option<f64>,
    /// Mean Lyapunov value over the diagnosed rows of consecutive blocks of
    /// the tail window.
    pub lyapunov_blocks: Vec<f64>,
    /// Share of tail iterations in which the agents selected different
    /// equilibria (semi-distributed CE-Q only).
    pub tail_miscoordination: Option<f64>,
    pub metrics_file: Option<PathBuf>,
}

impl RunSummary {
    /// `(agent, excess)` for every agent whose tail cost exceeds its bound by
    /// more than `tolerance`.
    pub fn violations(&self, tolerance: f64) -> Vec<(usize, f64)> {
        self.tail_costs
            .iter()
            .zip(&self.cost_bounds)
            .enumerate()
            .filter(|(_, (c, b))| **c > **b + tolerance)
            .map(|(k, (c, b))| (k, c - b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub game: String,
    pub environment: EnvironmentConfig,
    pub iterations: u64,
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn mean_tail_welfare(&self) -> f64 {
        self.runs.iter().map(|r| r.tail_welfare).sum::<f64>() / self.runs.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Metrics(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Metrics(format!("summary: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Runs one seed, handing every kept row to `sink`.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<RunSummary> {
    let game = config.environment.build()?;
    let k = game.num_agents();
    let mut learner = make_learner(config.algorithm, Arc::clone(&game), &config.learning, seed)?;
    let mut tracker = MetricsTracker::new(game.joint_space().action_counts(), game.discount());
    let thinning = Thinning {
        dense_prefix: config.metrics.dense_prefix,
        interval: config.metrics.interval,
    };
    let n_total = config.iterations;
    let tail = tail_start(n_total);
    let tail_len = (n_total - tail + 1) as f64;
    let early = EARLY_ITERATION.min(n_total);
    let blocks = config.metrics.lyapunov_blocks;

    let mut welfare = 0.0;
    let mut utilities = vec![0.0; k];
    let mut costs = vec![0.0; k];
    let mut lambdas = vec![0.0; k];
    let mut miscoordinated: Option<u64> = None;
    let mut early_residual = None;
    let (mut residual_sum, mut residual_rows) = (0.0, 0u64);
    let mut block_sums = vec![(0.0, 0u64); blocks];

    for n in 1..=n_total {
        let t = learner.step()?;
        let keep = thinning.keeps(n) || n == tail || n == n_total;
        let diagnose = (keep && config.metrics.diagnostics) || n == early;
        let d = if diagnose { Some(learner.diagnostics()?) } else { None };
        let record = tracker.observe(&t, d);
        if n == early {
            early_residual = d.map(|d| d.max_positive_residual);
        }
        if n >= tail {
            welfare += record.welfare;
            for i in 0..k {
                utilities[i] += t.utilities[i];
                costs[i] += t.costs[i];
                lambdas[i] += t.lambdas[i];
            }
            if let Some(m) = t.miscoordinated {
                *miscoordinated.get_or_insert(0) += m as u64;
            }
            if let (Some(d), true) = (d, keep) {
                residual_sum += d.max_positive_residual;
                residual_rows += 1;
                let b = ((n - tail) as usize * blocks) / tail_len as usize;
                let slot = &mut block_sums[b.min(blocks - 1)];
                slot.0 += d.lyapunov;
                slot.1 += 1;
            }
        }
        if keep {
            sink(&record)?;
        }
    }
    let mean = |v: Vec<f64>| v.into_iter().map(|x| x / tail_len).collect::<Vec<_>>();
    Ok(RunSummary {
        seed,
        iterations: n_total,
        tail_start: tail,
        tail_welfare: welfare / tail_len,
        tail_utilities: mean(utilities),
        tail_costs: mean(costs),
        cost_bounds: (0..k).map(|i| game.cost_bound(i)).collect(),
        tail_lambdas: mean(lambdas),
        early_residual,
        tail_residual: (residual_rows > 0).then(|| residual_sum / residual_rows as f64),
        lyapunov_blocks: block_sums
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect(),
        tail_miscoordination: miscoordinated.map(|m| m as f64 / tail_len),
        metrics_file: None,
    })
}

/// Output directory: the explicit choice, else the config's, else
/// `$CNRQ_OUT_DIR`, else `runs`.
pub fn resolve_output_dir(explicit: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn metrics_path(dir: &Path, name: &str, seed: u64) -> PathBuf {
    dir.join(format!("{name}-seed{seed}.csv"))
}

pub fn summary_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.summary.json"))
}

/// Runs every seed of `config`, writing `<name>-seed<seed>.csv` per seed and
/// `<name>.summary.json` into `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let game = config.environment.build()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let path = metrics_path(dir, &config.name, seed);
        let mut writer = MetricsWriter::new(BufWriter::new(File::create(&path)?), game.joint_space().action_counts())?;
        info!("{}: seed {seed} -> {}", config.name, path.display());
        let mut summary = run_seed(config, seed, &mut |r| writer.write(r))?;
        writer.finish()?;
        summary.metrics_file = Some(path);
        runs.push(summary);
    }
    let summary = ExperimentSummary {
        name: config.name.clone(),
        algorithm: config.algorithm,
        game: game.name().to_string(),
        environment: config.environment.clone(),
        iterations: config.iterations,
        runs,
    };
    fs::write(summary_path(dir, &config.name), summary.to_json()?)?;
    Ok(summary)
}
