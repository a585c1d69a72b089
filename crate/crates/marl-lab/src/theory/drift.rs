//! Empirical non-stationarity drift: how much the per-agent effective
//! transition kernel `P(next | state, own action)` changes between an
//! early and a late stretch of training. Local states are coarsened to
//! sign-quantized nearest-landmark offsets so cells stay populated, and
//! the statistic is the total-variation distance between the empirical
//! conditional next-state distributions, averaged over sufficiently
//! sampled cells.

use super::TheoryError;
use crate::env::{AgentObservation, N_LANDMARKS};
use std::collections::HashMap;

/// Cells need at least this many samples in both windows to count.
pub const DEFAULT_MIN_CELL_SAMPLES: usize = 30;

/// Sign quantization of the relative offset to the nearest landmark:
/// three levels per coordinate (below `-threshold`, within, above), nine
/// buckets total.
#[derive(Debug, Clone, Copy)]
pub struct SignBucketing {
    pub threshold: f64,
}

impl Default for SignBucketing {
    fn default() -> Self {
        Self { threshold: 0.1 }
    }
}

impl SignBucketing {
    pub const N_BUCKETS: u32 = 9;

    fn level(&self, x: f64) -> u32 {
        if x < -self.threshold {
            0
        } else if x > self.threshold {
            2
        } else {
            1
        }
    }

    /// Bucket id of an observation from the agent's nearest-landmark
    /// relative offset.
    pub fn bucket(&self, obs: &AgentObservation) -> u32 {
        let v = obs.as_array();
        let mut best = (f64::INFINITY, 0usize);
        for lm in 0..N_LANDMARKS {
            let dx = v[4 + 2 * lm];
            let dy = v[4 + 2 * lm + 1];
            let d2 = dx * dx + dy * dy;
            if d2 < best.0 {
                best = (d2, lm);
            }
        }
        let dx = v[4 + 2 * best.1];
        let dy = v[4 + 2 * best.1 + 1];
        3 * self.level(dx) + self.level(dy)
    }
}

/// One bucketed step of one agent: enough to estimate that agent's
/// effective transition kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionEvent {
    pub episode: usize,
    pub agent: usize,
    pub state_bucket: u32,
    pub action: usize,
    pub next_bucket: u32,
}

/// Half-open episode range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct EpisodeWindow {
    pub start: usize,
    pub end: usize,
}

impl EpisodeWindow {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    fn contains(&self, episode: usize) -> bool {
        episode >= self.start && episode < self.end
    }
}

/// Total-variation drift of one qualifying (agent, bucket, action) cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DriftCell {
    pub agent: usize,
    pub state_bucket: u32,
    pub action: usize,
    pub early_samples: usize,
    pub late_samples: usize,
    pub tv_distance: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowPairDrift {
    pub early: EpisodeWindow,
    pub late: EpisodeWindow,
    pub cells: Vec<DriftCell>,
    /// Plain mean of `tv_distance` over the qualifying cells.
    pub mean_tv: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DriftReport {
    pub min_cell_samples: usize,
    pub pairs: Vec<WindowPairDrift>,
}

type CellKey = (usize, u32, usize);

fn histograms(
    events: &[TransitionEvent],
    window: &EpisodeWindow,
) -> HashMap<CellKey, HashMap<u32, usize>> {
    let mut cells: HashMap<CellKey, HashMap<u32, usize>> = HashMap::new();
    for e in events {
        if window.contains(e.episode) {
            *cells
                .entry((e.agent, e.state_bucket, e.action))
                .or_default()
                .entry(e.next_bucket)
                .or_default() += 1;
        }
    }
    cells
}

fn total_variation(a: &HashMap<u32, usize>, b: &HashMap<u32, usize>) -> f64 {
    let na: usize = a.values().sum();
    let nb: usize = b.values().sum();
    let mut keys: Vec<u32> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| {
            let pa = *a.get(k).unwrap_or(&0) as f64 / na as f64;
            let pb = *b.get(k).unwrap_or(&0) as f64 / nb as f64;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

/// Empirical kernel drift between window pairs. For each pair, every
/// (agent, state-bucket, action) cell with at least `min_cell_samples`
/// samples in both windows contributes the total-variation distance
/// between its two empirical next-state distributions. A pair with no
/// qualifying cell is an explicit insufficient-data error.
pub fn nonstationarity_drift(
    events: &[TransitionEvent],
    window_pairs: &[(EpisodeWindow, EpisodeWindow)],
    min_cell_samples: usize,
) -> Result<DriftReport, TheoryError> {
    let mut pairs = Vec::with_capacity(window_pairs.len());
    for (early, late) in window_pairs {
        let early_hist = histograms(events, early);
        let late_hist = histograms(events, late);
        let mut cells = Vec::new();
        let mut keys: Vec<CellKey> = early_hist.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let (Some(a), Some(b)) = (early_hist.get(&key), late_hist.get(&key)) else {
                continue;
            };
            let na: usize = a.values().sum();
            let nb: usize = b.values().sum();
            if na < min_cell_samples || nb < min_cell_samples {
                continue;
            }
            cells.push(DriftCell {
                agent: key.0,
                state_bucket: key.1,
                action: key.2,
                early_samples: na,
                late_samples: nb,
                tv_distance: total_variation(a, b),
            });
        }
        if cells.is_empty() {
            return Err(TheoryError::InsufficientData { min_samples: min_cell_samples });
        }
        let mean_tv = cells.iter().map(|c| c.tv_distance).sum::<f64>() / cells.len() as f64;
        pairs.push(WindowPairDrift { early: *early, late: *late, cells, mean_tv });
    }
    Ok(DriftReport { min_cell_samples, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_events(
        rng: &mut ChaCha8Rng,
        episodes: std::ops::Range<usize>,
        next_dist: &[(u32, f64)],
        per_episode: usize,
    ) -> Vec<TransitionEvent> {
        let mut events = Vec::new();
        for episode in episodes {
            for _ in 0..per_episode {
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut cum = 0.0;
                let mut next = next_dist[next_dist.len() - 1].0;
                for &(bucket, p) in next_dist {
                    cum += p;
                    if u < cum {
                        next = bucket;
                        break;
                    }
                }
                events.push(TransitionEvent {
                    episode,
                    agent: 0,
                    state_bucket: 4,
                    action: 2,
                    next_bucket: next,
                });
            }
        }
        events
    }

    /// Stationary generator: drift stays within sampling noise at 1000
    /// samples per cell per window.
    #[test]
    fn stationary_log_has_small_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = [(0u32, 0.4), (1, 0.3), (4, 0.2), (8, 0.1)];
        let mut events = synthetic_events(&mut rng, 0..10, &dist, 100);
        events.extend(synthetic_events(&mut rng, 90..100, &dist, 100));
        let report = nonstationarity_drift(
            &events,
            &[(EpisodeWindow::new(0, 10), EpisodeWindow::new(90, 100))],
            DEFAULT_MIN_CELL_SAMPLES,
        )
        .unwrap();
        assert_eq!(report.pairs[0].cells[0].early_samples, 1000);
        assert!(report.pairs[0].mean_tv < 0.1, "tv = {}", report.pairs[0].mean_tv);
    }

    /// A deterministic kernel flip between windows drives TV to exactly 1.
    #[test]
    fn deterministic_flip_gives_unit_tv() {
        let mut events = Vec::new();
        for episode in 0..2 {
            for _ in 0..40 {
                events.push(TransitionEvent {
                    episode,
                    agent: 1,
                    state_bucket: 0,
                    action: 0,
                    next_bucket: 0,
                });
            }
        }
        for episode in 8..10 {
            for _ in 0..40 {
                events.push(TransitionEvent {
                    episode,
                    agent: 1,
                    state_bucket: 0,
                    action: 0,
                    next_bucket: 1,
                });
            }
        }
        let report = nonstationarity_drift(
            &events,
            &[(EpisodeWindow::new(0, 2), EpisodeWindow::new(8, 10))],
            DEFAULT_MIN_CELL_SAMPLES,
        )
        .unwrap();
        assert_eq!(report.pairs[0].mean_tv, 1.0);
    }

    #[test]
    fn tv_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let da = [(0u32, 0.5), (1, 0.5)];
            let db = [(0u32, rng.gen_range(0.0..1.0)), (1, 1.0)];
            let mut events = synthetic_events(&mut rng, 0..1, &da, 200);
            events.extend(synthetic_events(&mut rng, 9..10, &db, 200));
            let report = nonstationarity_drift(
                &events,
                &[(EpisodeWindow::new(0, 1), EpisodeWindow::new(9, 10))],
                DEFAULT_MIN_CELL_SAMPLES,
            )
            .unwrap();
            let tv = report.pairs[0].mean_tv;
            assert!((0.0..=1.0).contains(&tv));
        }
    }

    #[test]
    fn insufficient_data_is_an_explicit_error() {
        let events = vec![TransitionEvent {
            episode: 0,
            agent: 0,
            state_bucket: 0,
            action: 0,
            next_bucket: 0,
        }];
        let err = nonstationarity_drift(
            &events,
            &[(EpisodeWindow::new(0, 1), EpisodeWindow::new(1, 2))],
            DEFAULT_MIN_CELL_SAMPLES,
        )
        .unwrap_err();
        assert!(matches!(err, TheoryError::InsufficientData { .. }));
    }

    #[test]
    fn bucketing_uses_nearest_landmark_offset_signs() {
        let mut v = [0.0f64; crate::env::OBS_DIM];
        // Landmark 1 is nearest at offset (0.5, -0.3): levels (2, 0).
        v[4] = 5.0;
        v[5] = 5.0;
        v[6] = 0.5;
        v[7] = -0.3;
        v[8] = -4.0;
        v[9] = 4.0;
        let obs = AgentObservation(v);
        let b = SignBucketing::default();
        assert_eq!(b.bucket(&obs), 3 * 2);

        // Inside the dead zone on both axes: center bucket.
        v[6] = 0.05;
        v[7] = -0.05;
        let obs = AgentObservation(v);
        assert_eq!(b.bucket(&obs), 4);
    }
}
