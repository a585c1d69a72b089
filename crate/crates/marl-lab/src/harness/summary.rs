//! Aggregation of persisted records into the comparison summary and
//! learning-curve export. Both are pure functions of the records, so
//! recomputing from disk reproduces the persisted summary byte-for-byte.

use super::records::EpisodeRecord;
use super::HarnessError;
use crate::stats::{self, ComparisonResult, SampleSummary};
use crate::train::Algorithm;
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub per_seed_final_reward: Vec<f64>,
    pub final_reward: SampleSummary,
    pub per_seed_coverage: Vec<f64>,
    pub landmark_coverage: SampleSummary,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub final_reward: ComparisonResult,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CoverageRatio {
    pub algorithm: String,
    pub ratio_vs_mappo: f64,
}

/// Cross-seed aggregates over the final window, pairwise tests, and
/// coverage ratios against the centralized baseline.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub window: usize,
    pub algorithms: Vec<AlgorithmSummary>,
    pub comparisons: Vec<PairComparison>,
    pub coverage_ratios_vs_mappo: Vec<CoverageRatio>,
}

impl RunSummary {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == name)
    }

    pub fn comparison(&self, a: &str, b: &str) -> Option<&PairComparison> {
        self.comparisons.iter().find(|c| c.a == a && c.b == b)
    }
}

type SeedSeries = BTreeMap<u64, Vec<EpisodeRecord>>;

fn group_records(records: &[EpisodeRecord]) -> Result<BTreeMap<Algorithm, SeedSeries>, HarnessError> {
    let mut grouped: BTreeMap<Algorithm, SeedSeries> = BTreeMap::new();
    for r in records {
        let algorithm: Algorithm = r
            .algorithm
            .parse()
            .map_err(|e: String| HarnessError::BadRecords(e))?;
        grouped
            .entry(algorithm)
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r.clone());
    }
    for series in grouped.values_mut() {
        for episodes in series.values_mut() {
            episodes.sort_by_key(|r| r.episode_index);
        }
    }
    Ok(grouped)
}

fn final_window_mean<F: Fn(&EpisodeRecord) -> f64>(
    episodes: &[EpisodeRecord],
    window: usize,
    value: F,
) -> f64 {
    let w = window.min(episodes.len()).max(1);
    let tail = &episodes[episodes.len() - w..];
    tail.iter().map(&value).sum::<f64>() / w as f64
}

fn seed_summary(per_seed: &[f64]) -> Result<SampleSummary, HarnessError> {
    if per_seed.len() >= 2 {
        Ok(stats::aggregate_seeds(per_seed)?)
    } else {
        Ok(SampleSummary::new(per_seed[0], 0.0, 1)?)
    }
}

/// Final-window aggregation per algorithm, Welch/Cohen for all algorithm
/// pairs with at least two seeds each, and landmark-coverage ratios
/// against the centralized baseline.
pub fn summarize(records: &[EpisodeRecord], window: usize) -> Result<RunSummary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::BadRecords("no records to summarize".into()));
    }
    let grouped = group_records(records)?;

    let mut algorithms = Vec::new();
    let mut per_algo_rewards: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
    for algo in Algorithm::ALL {
        let Some(series) = grouped.get(&algo) else { continue };
        let seeds: Vec<u64> = series.keys().copied().collect();
        let per_seed_final_reward: Vec<f64> = series
            .values()
            .map(|eps| final_window_mean(eps, window, |r| r.mean_agent_total_reward))
            .collect();
        let per_seed_coverage: Vec<f64> = series
            .values()
            .map(|eps| final_window_mean(eps, window, |r| r.landmarks_covered_final as f64))
            .collect();
        algorithms.push(AlgorithmSummary {
            algorithm: algo.name().to_string(),
            seeds,
            final_reward: seed_summary(&per_seed_final_reward)?,
            landmark_coverage: seed_summary(&per_seed_coverage)?,
            per_seed_final_reward: per_seed_final_reward.clone(),
            per_seed_coverage,
        });
        per_algo_rewards.insert(algo, per_seed_final_reward);
    }

    let mut comparisons = Vec::new();
    for (i, a) in Algorithm::ALL.iter().enumerate() {
        for b in Algorithm::ALL.iter().skip(i + 1) {
            let (Some(ra), Some(rb)) = (per_algo_rewards.get(a), per_algo_rewards.get(b)) else {
                continue;
            };
            if ra.len() < 2 || rb.len() < 2 {
                continue;
            }
            let result =
                stats::compare(&stats::aggregate_seeds(ra)?, &stats::aggregate_seeds(rb)?)?;
            comparisons.push(PairComparison {
                a: a.name().to_string(),
                b: b.name().to_string(),
                final_reward: result,
            });
        }
    }

    let mut coverage_ratios_vs_mappo = Vec::new();
    if let Some(mappo) = algorithms.iter().find(|s| s.algorithm == Algorithm::Mappo.name()) {
        let base = mappo.landmark_coverage.mean;
        if base > 0.0 {
            for s in &algorithms {
                if s.algorithm != Algorithm::Mappo.name() {
                    coverage_ratios_vs_mappo.push(CoverageRatio {
                        algorithm: s.algorithm.clone(),
                        ratio_vs_mappo: s.landmark_coverage.mean / base,
                    });
                }
            }
        }
    }

    Ok(RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        window,
        algorithms,
        comparisons,
        coverage_ratios_vs_mappo,
    })
}

/// Rolling-mean learning curves: per (algorithm, seed), the reward mean
/// over each full `window` of episodes at `stride` spacing, plus the
/// cross-seed mean and n-1 std of that rolling mean at the same position.
/// Plain CSV text, one row per (algorithm, seed, position).
pub fn export_curves(
    records: &[EpisodeRecord],
    window: usize,
    stride: usize,
) -> Result<String, HarnessError> {
    if window == 0 || stride == 0 {
        return Err(HarnessError::BadRecords("window and stride must be >= 1".into()));
    }
    let grouped = group_records(records)?;
    let mut out = String::new();
    out.push_str("algorithm,seed,window_end_episode,rolling_mean,cross_seed_mean,cross_seed_std\n");
    for algo in Algorithm::ALL {
        let Some(series) = grouped.get(&algo) else { continue };
        // Rolling means per seed at each stride position (full windows
        // only; a window larger than the series clamps to one row).
        let mut per_seed_rows: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for (&seed, episodes) in series {
            let n = episodes.len();
            let w = window.min(n);
            let mut rows = Vec::new();
            let mut end = w;
            while end <= n {
                let mean = episodes[end - w..end]
                    .iter()
                    .map(|r| r.mean_agent_total_reward)
                    .sum::<f64>()
                    / w as f64;
                rows.push((episodes[end - 1].episode_index, mean));
                if window > n {
                    break;
                }
                end += stride;
            }
            per_seed_rows.insert(seed, rows);
        }
        // Cross-seed band per position index.
        let max_len = per_seed_rows.values().map(Vec::len).max().unwrap_or(0);
        let mut band = Vec::with_capacity(max_len);
        for pos in 0..max_len {
            let vals: Vec<f64> = per_seed_rows
                .values()
                .filter_map(|rows| rows.get(pos).map(|(_, m)| *m))
                .collect();
            let summary = seed_summary(&vals)?;
            band.push((summary.mean, summary.std));
        }
        for (seed, rows) in &per_seed_rows {
            for (pos, (end_episode, mean)) in rows.iter().enumerate() {
                let (cross_mean, cross_std) = band[pos];
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    algo.name(),
                    seed,
                    end_episode,
                    mean,
                    cross_mean,
                    cross_std
                )
                .expect("string write");
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::records::RECORD_SCHEMA_VERSION;

    fn record(algorithm: &str, seed: u64, episode_index: usize, reward: f64, covered: usize) -> EpisodeRecord {
        EpisodeRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            algorithm: algorithm.into(),
            seed,
            episode_index,
            mean_agent_total_reward: reward,
            env_reward_component: reward,
            heuristic_component: 0.0,
            shaped_component: 0.0,
            landmarks_covered_final: covered,
            collision_count: 0,
            wall_clock_ms: 0,
        }
    }

    fn constant_run(algorithm: &str, seed: u64, episodes: usize, reward: f64, covered: usize) -> Vec<EpisodeRecord> {
        (0..episodes).map(|i| record(algorithm, seed, i, reward, covered)).collect()
    }

    #[test]
    fn summarize_hand_checked_means() {
        let mut records = Vec::new();
        // Final 2-window means: seed 1 -> 3.5, seed 2 -> 7.5.
        records.extend([
            record("IPPO", 1, 0, 100.0, 0),
            record("IPPO", 1, 1, 3.0, 1),
            record("IPPO", 1, 2, 4.0, 1),
            record("IPPO", 2, 0, -100.0, 0),
            record("IPPO", 2, 1, 7.0, 2),
            record("IPPO", 2, 2, 8.0, 2),
        ]);
        let summary = summarize(&records, 2).unwrap();
        let ippo = summary.algorithm("IPPO").unwrap();
        assert_eq!(ippo.per_seed_final_reward, vec![3.5, 7.5]);
        assert!((ippo.final_reward.mean - 5.5).abs() < 1e-12);
        assert_eq!(ippo.per_seed_coverage, vec![1.0, 2.0]);
        assert!(summary.comparisons.is_empty());
    }

    #[test]
    fn identical_algorithm_records_give_p_one() {
        let mut records = Vec::new();
        for seed in [1, 2, 3] {
            // Identical per-seed series for both algorithms, with spread
            // across seeds so variances are nonzero.
            records.extend(constant_run("IPPO", seed, 10, seed as f64, 1));
            records.extend(constant_run("DMARL_RSA", seed, 10, seed as f64, 1));
        }
        let summary = summarize(&records, 5).unwrap();
        let pair = summary.comparison("IPPO", "DMARL_RSA").unwrap();
        assert_eq!(pair.final_reward.t_statistic, 0.0);
        assert_eq!(pair.final_reward.p_value, 1.0);
    }

    /// The published coverage ratios: 0.888 over 0.273 is about 3.25x and
    /// 0.960 over 0.273 about 3.52x.
    #[test]
    fn coverage_ratio_reproduces_published_arithmetic() {
        assert!((0.888f64 / 0.273 - 3.25).abs() < 0.01);
        assert!((0.960f64 / 0.273 - 3.52).abs() < 0.01);
    }

    #[test]
    fn coverage_ratios_come_from_aggregates() {
        let mut records = Vec::new();
        for seed in [1, 2] {
            records.extend(constant_run("MAPPO", seed, 6, 1.0, 1));
            // Coverage 3 at every final step -> ratio 3.
            records.extend(constant_run("IPPO", seed, 6, -1.0, 3));
        }
        let summary = summarize(&records, 3).unwrap();
        assert_eq!(summary.coverage_ratios_vs_mappo.len(), 1);
        let r = &summary.coverage_ratios_vs_mappo[0];
        assert_eq!(r.algorithm, "IPPO");
        assert!((r.ratio_vs_mappo - 3.0).abs() < 1e-12);
    }

    #[test]
    fn summary_json_round_trips_bit_for_bit() {
        let mut records = Vec::new();
        for seed in [1, 2, 3] {
            records.extend(constant_run("MAPPO", seed, 20, 1.9 + seed as f64 * 0.013, 1));
            records.extend(constant_run("IPPO", seed, 20, -23.0 - seed as f64 * 0.7, 2));
        }
        let summary = summarize(&records, 10).unwrap();
        let json_a = serde_json::to_string_pretty(&summary).unwrap();
        let summary_again = summarize(&records, 10).unwrap();
        let json_b = serde_json::to_string_pretty(&summary_again).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn curves_constant_stream_is_flat() {
        let records = constant_run("IPPO", 1, 50, -3.25, 0);
        let csv = export_curves(&records, 10, 5).unwrap();
        let mut lines = csv.lines();
        lines.next();
        let mut count = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[3].parse::<f64>().unwrap(), -3.25);
            assert_eq!(fields[4].parse::<f64>().unwrap(), -3.25);
            count += 1;
        }
        // Full windows at ends 10, 15, ..., 50.
        assert_eq!(count, (50 - 10) / 5 + 1);
    }

    #[test]
    fn curves_window_larger_than_series_gives_single_row_per_seed() {
        let mut records = constant_run("IPPO", 1, 7, 2.0, 0);
        records.extend(constant_run("IPPO", 2, 7, 4.0, 0));
        let csv = export_curves(&records, 100, 10).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        for row in rows {
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields[2], "6");
            assert_eq!(fields[4].parse::<f64>().unwrap(), 3.0);
        }
    }

    /// 5000 episodes, window 100, stride 10: 491 full windows per seed.
    #[test]
    fn curves_row_count_matches_full_window_arithmetic() {
        let records = constant_run("IPPO", 1, 5000, 0.0, 0);
        let csv = export_curves(&records, 100, 10).unwrap();
        assert_eq!(csv.lines().count() - 1, 491);
    }
}
