//! Experiment runner: scheduling of (algorithm, seed) training runs,
//! crash-safe metric persistence, summary and learning-curve export.
//!
//! Each run writes its own record and drift-log files, so runs share
//! nothing and can execute on parallel workers (at most one per logical
//! core; every run itself is single-threaded and deterministic). Output
//! is byte-stable across reruns of the same spec: wall-clock timing is
//! recorded only when `record_timing` is enabled, because real timings
//! are the one nondeterministic column.

pub mod records;
mod specfile;
pub mod summary;

pub use records::{
    read_all_records, read_records, read_transitions, records_file_name, transitions_file_name,
    EpisodeRecord, RecordWriter, TransitionWriter, RECORD_SCHEMA_VERSION,
};
pub use specfile::{load_spec, parse_spec};
pub use summary::{
    export_curves, summarize, AlgorithmSummary, CoverageRatio, PairComparison, RunSummary,
    DEFAULT_FINAL_WINDOW, SUMMARY_SCHEMA_VERSION,
};

use crate::nn;
use crate::stats::StatsError;
use crate::train::{
    self, Algorithm, CriticBank, Learners, TrainError, TrainRunConfig,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("spec: {0}")]
    Parse(String),
    #[error("records: {0}")]
    BadRecords(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A fully resolved experiment: which algorithms and seeds to run, the
/// episode budget, and one type-checked training config per algorithm.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub final_window: usize,
    pub smoke_mode: bool,
    pub record_timing: bool,
    pub out_dir: PathBuf,
    pub(crate) configs: BTreeMap<Algorithm, TrainRunConfig>,
}

/// Smoke mode caps the protocol at 200 episodes on the first seed.
const SMOKE_EPISODES: usize = 200;

impl ExperimentSpec {
    /// The effective training config for one algorithm, with smoke-mode
    /// reductions applied.
    pub fn train_config(&self, algorithm: Algorithm) -> TrainRunConfig {
        let mut cfg = self.configs[&algorithm].clone();
        cfg.episodes = self.effective_episodes();
        cfg.seeds = self.effective_seeds();
        cfg
    }

    pub fn effective_episodes(&self) -> usize {
        if self.smoke_mode {
            self.episodes.min(SMOKE_EPISODES)
        } else {
            self.episodes
        }
    }

    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.smoke_mode {
            vec![self.seeds[0]]
        } else {
            self.seeds.clone()
        }
    }
}

/// Completion state of one (algorithm, seed) run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunStatus {
    pub algorithm: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub episodes: usize,
    pub network_parameter_counts: Vec<(String, usize)>,
}

/// Everything `run` leaves behind besides the files on disk.
#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub statuses: Vec<RunStatus>,
}

fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints")
}

fn save_learner_checkpoints(
    dir: &Path,
    algorithm: Algorithm,
    seed: u64,
    learners: &Learners,
) -> Result<(), HarnessError> {
    let algo = algorithm.name();
    for (i, actor) in learners.actors.iter().enumerate() {
        nn::save_checkpoint(&dir.join(format!("{algo}_{seed}_{i}_actor.ckpt")), &actor.params)
            .map_err(TrainError::from)?;
    }
    match &learners.critics {
        CriticBank::Shared(critic) => {
            nn::save_checkpoint(&dir.join(format!("{algo}_{seed}_shared_critic.ckpt")), &critic.params)
                .map_err(TrainError::from)?;
        }
        CriticBank::PerAgent(critics) => {
            for (i, critic) in critics.iter().enumerate() {
                nn::save_checkpoint(
                    &dir.join(format!("{algo}_{seed}_{i}_critic.ckpt")),
                    &critic.params,
                )
                .map_err(TrainError::from)?;
            }
        }
    }
    if let Some(shapers) = &learners.shapers {
        for (i, shaper) in shapers.iter().enumerate() {
            nn::save_checkpoint(&dir.join(format!("{algo}_{seed}_{i}_shaper.ckpt")), &shaper.params)
                .map_err(TrainError::from)?;
        }
    }
    Ok(())
}

/// Execute one training run, streaming records and drift-log transitions
/// to disk with a flush per update chunk.
fn run_one(spec: &ExperimentSpec, algorithm: Algorithm, seed: u64) -> Result<RunStatus, HarnessError> {
    let cfg = spec.train_config(algorithm);
    let algo = algorithm.name();
    let started = Instant::now();

    let mut record_writer =
        RecordWriter::create(&spec.out_dir.join(records_file_name(algo, seed)))?;
    let mut transition_writer =
        TransitionWriter::create(&spec.out_dir.join(transitions_file_name(algo, seed)))?;

    let sizes = Learners::new(&cfg, seed).network_sizes();
    eprintln!(
        "[{algo} seed {seed}] networks: {}",
        sizes
            .iter()
            .map(|(name, n)| format!("{name}={n}"))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let record_timing = spec.record_timing;
    let mut sink_error: Option<HarnessError> = None;
    let result = train::train_run(&cfg, seed, |metrics, transitions| {
        let wall_clock_ms =
            if record_timing { started.elapsed().as_millis() as u64 } else { 0 };
        let io = (|| -> Result<(), HarnessError> {
            for m in metrics {
                record_writer.append(&EpisodeRecord {
                    schema_version: RECORD_SCHEMA_VERSION,
                    algorithm: algo.to_string(),
                    seed,
                    episode_index: m.episode_index,
                    mean_agent_total_reward: m.mean_agent_total_reward,
                    env_reward_component: m.env_component,
                    heuristic_component: m.heuristic_component,
                    shaped_component: m.shaped_component,
                    landmarks_covered_final: m.landmarks_covered_final,
                    collision_count: m.collision_count,
                    wall_clock_ms,
                })?;
            }
            transition_writer.append(transitions)?;
            record_writer.flush()?;
            transition_writer.flush()?;
            Ok(())
        })();
        io.map_err(|e| {
            let msg = e.to_string();
            sink_error = Some(e);
            TrainError::Sink(msg)
        })
    });

    match result {
        Ok(learners) => {
            save_learner_checkpoints(&checkpoint_dir(&spec.out_dir), algorithm, seed, &learners)?;
            Ok(RunStatus {
                algorithm: algo.to_string(),
                seed,
                ok: true,
                error: None,
                episodes: cfg.episodes,
                network_parameter_counts: sizes,
            })
        }
        Err(e) => {
            if let Some(io) = sink_error {
                return Err(io);
            }
            Ok(RunStatus {
                algorithm: algo.to_string(),
                seed,
                ok: false,
                error: Some(e.to_string()),
                episodes: cfg.episodes,
                network_parameter_counts: sizes,
            })
        }
    }
}

/// Run the experiment: one training run per (algorithm, seed) scheduled
/// over at most `available_parallelism` workers, then a summary computed
/// from the records read back off disk. A run that fails (for example on
/// a non-finite loss) is marked failed while the others continue; the
/// summary covers whatever completed.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput, HarnessError> {
    std::fs::create_dir_all(&spec.out_dir)?;
    std::fs::create_dir_all(checkpoint_dir(&spec.out_dir))?;

    let mut tasks: Vec<(Algorithm, u64)> = Vec::new();
    for &algorithm in &spec.algorithms {
        for &seed in &spec.effective_seeds() {
            tasks.push((algorithm, seed));
        }
    }

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(tasks.len().max(1));
    let queue = Mutex::new(tasks.clone().into_iter().collect::<std::collections::VecDeque<_>>());
    let outcomes: Mutex<Vec<(Algorithm, u64, Result<RunStatus, HarnessError>)>> =
        Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().expect("queue lock").pop_front();
                let Some((algorithm, seed)) = task else { break };
                let status = run_one(spec, algorithm, seed);
                outcomes.lock().expect("outcomes lock").push((algorithm, seed, status));
            });
        }
    });

    // Deterministic status order regardless of completion order.
    let mut outcomes = outcomes.into_inner().expect("outcomes lock");
    outcomes.sort_by_key(|(a, s, _)| (*a, *s));
    let mut statuses = Vec::with_capacity(outcomes.len());
    for (_, _, outcome) in outcomes {
        statuses.push(outcome?);
    }

    let records = read_all_records(&spec.out_dir)?;
    let summary = summarize(&records, spec.final_window)?;
    let summary_json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(spec.out_dir.join("summary.json"), summary_json)?;
    let meta = serde_json::to_string_pretty(&statuses)?;
    std::fs::write(spec.out_dir.join("runs_meta.json"), meta)?;

    Ok(RunOutput { summary, statuses })
}
