//! Deterministic, seedable cooperative-navigation environment.
//!
//! Three agents must cover three static landmarks on an unbounded 2-D
//! plane within 25 steps. Physics, radii, and reward structure follow the
//! conventions of the multi-particle-environment Simple Spread task:
//! discrete acceleration actions, velocity damping, soft contact forces
//! between overlapping agents, a shared distance reward, and a -1.0
//! penalty per colliding pair per involved agent. Rewards are reported
//! decomposed (distance/collision vs heuristic bonus) so trainers can
//! assemble different totals from the same rollout.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of agents. The observation layout is fixed to this value.
pub const N_AGENTS: usize = 3;
/// Number of landmarks. The observation layout is fixed to this value.
pub const N_LANDMARKS: usize = 3;
/// Length of a single agent's observation vector.
pub const OBS_DIM: usize = 18;
/// Size of the discrete action space.
pub const N_ACTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("step called on a finished episode (step_index = {step_index})")]
    EpisodeFinished { step_index: usize },
    #[error("agent index {agent} out of range (0..{})", N_AGENTS)]
    AgentIndexOutOfRange { agent: usize },
    #[error("invalid action id {id} (valid: 0..{})", N_ACTIONS)]
    InvalidAction { id: usize },
}

/// Which min-distance aggregation the shared distance reward uses.
///
/// The two readings differ: summing over landmarks the distance to the
/// nearest agent rewards covering every landmark, while summing over
/// agents the distance to the nearest landmark is indifferent to how many
/// distinct landmarks are covered. Both are implemented; the default
/// matches the reference Simple Spread environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DistanceSemantics {
    /// `-sum over landmarks of min over agents of distance` (default).
    PerLandmarkMinOverAgents,
    /// `-sum over agents of min over landmarks of distance`.
    PerAgentMinOverLandmarks,
}

impl std::str::FromStr for DistanceSemantics {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_landmark_min_over_agents" => Ok(Self::PerLandmarkMinOverAgents),
            "per_agent_min_over_landmarks" => Ok(Self::PerAgentMinOverLandmarks),
            other => Err(format!("unknown distance semantics `{other}`")),
        }
    }
}

/// Static environment parameters. Defaults reproduce the reference
/// multi-particle-environment constants.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_landmarks: usize,
    pub max_steps: usize,
    /// Integration step, seconds.
    pub dt: f64,
    /// Velocity damping factor per step, in [0, 1).
    pub damping: f64,
    /// Acceleration magnitude of a movement action, world-units/s^2.
    pub accel: f64,
    pub agent_radius: f64,
    pub landmark_radius: f64,
    /// A landmark counts as covered when some agent is closer than this.
    pub coverage_threshold: f64,
    pub contact_force: f64,
    pub contact_margin: f64,
    pub distance_semantics: DistanceSemantics,
    /// Default master seed for experiments using this config.
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: N_AGENTS,
            n_landmarks: N_LANDMARKS,
            max_steps: 25,
            dt: 0.1,
            damping: 0.25,
            accel: 5.0,
            agent_radius: 0.15,
            landmark_radius: 0.05,
            coverage_threshold: 0.1,
            contact_force: 100.0,
            contact_margin: 0.001,
            distance_semantics: DistanceSemantics::PerLandmarkMinOverAgents,
            seed: 42,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::InvalidConfig(m));
        if self.n_agents != N_AGENTS || self.n_landmarks != N_LANDMARKS {
            return err(format!(
                "observation layout requires {N_AGENTS} agents and {N_LANDMARKS} landmarks, got {}/{}",
                self.n_agents, self.n_landmarks
            ));
        }
        if self.max_steps < 1 {
            return err("max_steps must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            return err("dt must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.damping) {
            return err("damping must be in [0, 1)".into());
        }
        if !(self.agent_radius > 0.0) || !(self.landmark_radius > 0.0) {
            return err("radii must be > 0".into());
        }
        if !(self.coverage_threshold > 0.0) {
            return err("coverage_threshold must be > 0".into());
        }
        if !(self.accel > 0.0) || !(self.contact_force >= 0.0) || !(self.contact_margin > 0.0) {
            return err("accel/contact parameters out of range".into());
        }
        Ok(())
    }
}

/// Full simulation state: everything needed to continue or replay.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub agent_pos: [[f64; 2]; N_AGENTS],
    pub agent_vel: [[f64; 2]; N_AGENTS],
    pub landmark_pos: [[f64; 2]; N_LANDMARKS],
    pub step_index: usize,
}

/// Discrete movement action: no-op or unit acceleration along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Noop,
    DecX,
    IncX,
    DecY,
    IncY,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] =
        [Action::Noop, Action::DecX, Action::IncX, Action::DecY, Action::IncY];

    pub fn index(self) -> usize {
        match self {
            Action::Noop => 0,
            Action::DecX => 1,
            Action::IncX => 2,
            Action::DecY => 3,
            Action::IncY => 4,
        }
    }

    pub fn from_index(id: usize) -> Result<Self, EnvError> {
        Self::ALL.get(id).copied().ok_or(EnvError::InvalidAction { id })
    }

    fn direction(self) -> [f64; 2] {
        match self {
            Action::Noop => [0.0, 0.0],
            Action::DecX => [-1.0, 0.0],
            Action::IncX => [1.0, 0.0],
            Action::DecY => [0.0, -1.0],
            Action::IncY => [0.0, 1.0],
        }
    }
}

/// One agent's local view: `[self_vel(2), self_pos(2), landmark_rel(3x2),
/// other_agent_rel(2x2), comm_pad(4 zeros)]`. Other agents appear in
/// ascending index order, skipping self.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation(pub [f64; OBS_DIM]);

impl AgentObservation {
    pub fn as_array(&self) -> &[f64; OBS_DIM] {
        &self.0
    }
}

impl AsRef<[f64]> for AgentObservation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-step reward breakdown, computed on the post-integration state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Shared distance reward plus the agent's own collision penalties.
    pub per_agent_env_reward: [f64; N_AGENTS],
    /// -1.0 per colliding pair involving the agent; always <= 0.
    pub per_agent_collision_penalty: [f64; N_AGENTS],
    /// Coverage bonus (shared) plus individual proximity bonus; >= 0.
    pub per_agent_heuristic_bonus: [f64; N_AGENTS],
    pub landmarks_covered: usize,
    pub done: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Numerically stable log(1 + exp(x)).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Draw a fresh world: positions i.i.d. uniform over [-1, 1]^2, zero
/// velocities. Agents are drawn before landmarks, x before y, so the same
/// seed reproduces the same state bit-for-bit.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<WorldState, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset_with_rng(config, &mut rng)
}

/// Like [`reset`] but drawing from a caller-owned stream, so a sequence of
/// episodes can share one generator.
pub fn reset_with_rng(config: &EnvConfig, rng: &mut impl Rng) -> Result<WorldState, EnvError> {
    config.validate()?;
    let mut draw = || [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
    let agent_pos = [draw(), draw(), draw()];
    let landmark_pos = [draw(), draw(), draw()];
    Ok(WorldState {
        agent_pos,
        agent_vel: [[0.0; 2]; N_AGENTS],
        landmark_pos,
        step_index: 0,
    })
}

/// Advance the world by one step and score the resulting state.
///
/// Forces: `accel` along the action direction plus soft contact forces on
/// overlapping agent pairs. Integration: `vel <- vel*(1-damping) +
/// force*dt; pos <- pos + vel*dt`. Landmarks are static and
/// non-collidable. Calling `step` on a finished episode is an error.
pub fn step(
    config: &EnvConfig,
    state: &WorldState,
    actions: &[Action; N_AGENTS],
) -> Result<(WorldState, StepOutcome), EnvError> {
    if state.step_index >= config.max_steps {
        return Err(EnvError::EpisodeFinished { step_index: state.step_index });
    }

    let mut force = [[0.0f64; 2]; N_AGENTS];
    for (i, action) in actions.iter().enumerate() {
        let dir = action.direction();
        force[i][0] += config.accel * dir[0];
        force[i][1] += config.accel * dir[1];
    }

    // Soft contact between agent pairs; landmarks exert no force.
    let radius_sum = 2.0 * config.agent_radius;
    for i in 0..N_AGENTS {
        for j in (i + 1)..N_AGENTS {
            let delta = [
                state.agent_pos[i][0] - state.agent_pos[j][0],
                state.agent_pos[i][1] - state.agent_pos[j][1],
            ];
            let d = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
            if d <= 1e-12 {
                // Coincident centers: no defined separation axis.
                continue;
            }
            let penetration = softplus((radius_sum - d) / config.contact_margin)
                * config.contact_margin;
            let magnitude = config.contact_force * penetration;
            let fx = magnitude * delta[0] / d;
            let fy = magnitude * delta[1] / d;
            force[i][0] += fx;
            force[i][1] += fy;
            force[j][0] -= fx;
            force[j][1] -= fy;
        }
    }

    let mut next = state.clone();
    for i in 0..N_AGENTS {
        for k in 0..2 {
            next.agent_vel[i][k] =
                next.agent_vel[i][k] * (1.0 - config.damping) + force[i][k] * config.dt;
            next.agent_pos[i][k] += next.agent_vel[i][k] * config.dt;
        }
    }
    next.step_index += 1;

    let shared_distance = distance_reward(&next, config.distance_semantics);
    let mut collision_penalty = [0.0f64; N_AGENTS];
    for i in 0..N_AGENTS {
        for j in (i + 1)..N_AGENTS {
            if dist(next.agent_pos[i], next.agent_pos[j]) < radius_sum {
                collision_penalty[i] -= 1.0;
                collision_penalty[j] -= 1.0;
            }
        }
    }
    let mut env_reward = [0.0f64; N_AGENTS];
    for i in 0..N_AGENTS {
        env_reward[i] = shared_distance + collision_penalty[i];
    }

    let landmarks_covered = count_covered_landmarks(&next, config.coverage_threshold);
    let heuristic = heuristic_bonus(&next, config.coverage_threshold);
    let done = next.step_index == config.max_steps;

    Ok((
        next,
        StepOutcome {
            per_agent_env_reward: env_reward,
            per_agent_collision_penalty: collision_penalty,
            per_agent_heuristic_bonus: heuristic,
            landmarks_covered,
            done,
        },
    ))
}

/// Local observation of one agent. Pure function of the state.
pub fn observe(state: &WorldState, agent: usize) -> Result<AgentObservation, EnvError> {
    if agent >= N_AGENTS {
        return Err(EnvError::AgentIndexOutOfRange { agent });
    }
    let mut v = [0.0f64; OBS_DIM];
    v[0] = state.agent_vel[agent][0];
    v[1] = state.agent_vel[agent][1];
    v[2] = state.agent_pos[agent][0];
    v[3] = state.agent_pos[agent][1];
    let mut k = 4;
    for lm in 0..N_LANDMARKS {
        v[k] = state.landmark_pos[lm][0] - state.agent_pos[agent][0];
        v[k + 1] = state.landmark_pos[lm][1] - state.agent_pos[agent][1];
        k += 2;
    }
    for other in 0..N_AGENTS {
        if other == agent {
            continue;
        }
        v[k] = state.agent_pos[other][0] - state.agent_pos[agent][0];
        v[k + 1] = state.agent_pos[other][1] - state.agent_pos[agent][1];
        k += 2;
    }
    // Remaining 4 entries are the zero communication pad.
    Ok(AgentObservation(v))
}

/// Shared distance reward under the chosen semantics. Identical for all
/// agents.
pub fn distance_reward(state: &WorldState, semantics: DistanceSemantics) -> f64 {
    match semantics {
        DistanceSemantics::PerLandmarkMinOverAgents => -state
            .landmark_pos
            .iter()
            .map(|lm| {
                state
                    .agent_pos
                    .iter()
                    .map(|a| dist(*a, *lm))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>(),
        DistanceSemantics::PerAgentMinOverLandmarks => -state
            .agent_pos
            .iter()
            .map(|a| {
                state
                    .landmark_pos
                    .iter()
                    .map(|lm| dist(*a, *lm))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>(),
    }
}

/// Number of landmarks whose nearest agent is strictly within `threshold`.
pub fn count_covered_landmarks(state: &WorldState, threshold: f64) -> usize {
    state
        .landmark_pos
        .iter()
        .filter(|lm| {
            state
                .agent_pos
                .iter()
                .map(|a| dist(*a, **lm))
                .fold(f64::INFINITY, f64::min)
                < threshold
        })
        .count()
}

/// Heuristic shaping bonus: shared `0.5 * landmarks_covered` plus an
/// individual proximity term `0.05 * max(0, 1 - min landmark distance)`.
pub fn heuristic_bonus(state: &WorldState, coverage_threshold: f64) -> [f64; N_AGENTS] {
    let covered = count_covered_landmarks(state, coverage_threshold) as f64;
    let shared = 0.5 * covered;
    let mut bonus = [0.0f64; N_AGENTS];
    for (i, a) in state.agent_pos.iter().enumerate() {
        let min_dist = state
            .landmark_pos
            .iter()
            .map(|lm| dist(*a, *lm))
            .fold(f64::INFINITY, f64::min);
        bonus[i] = shared + 0.05 * (1.0 - min_dist).max(0.0);
    }
    bonus
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let a = reset(&cfg(), 42).unwrap();
        let b = reset(&cfg(), 42).unwrap();
        assert_eq!(a, b);
        let c = reset(&cfg(), 123).unwrap();
        assert_ne!(a.agent_pos, c.agent_pos);
    }

    #[test]
    fn reset_respects_bounds_and_zero_velocity() {
        for seed in 0..20 {
            let s = reset(&cfg(), seed).unwrap();
            for p in s.agent_pos.iter().chain(s.landmark_pos.iter()) {
                assert!(p[0] >= -1.0 && p[0] <= 1.0);
                assert!(p[1] >= -1.0 && p[1] <= 1.0);
            }
            assert_eq!(s.agent_vel, [[0.0; 2]; N_AGENTS]);
            assert_eq!(s.step_index, 0);
        }
    }

    /// Hand evaluation: from rest, +x gives vel = 0*0.75 + 5.0*0.1 = 0.5
    /// and pos advances by vel*dt = 0.05.
    #[test]
    fn step_single_agent_plus_x_from_rest() {
        let mut s = reset(&cfg(), 7).unwrap();
        // Spread the agents far apart so no contact forces apply.
        s.agent_pos = [[-10.0, 0.0], [0.0, 10.0], [10.0, 0.0]];
        let (next, _) = step(&cfg(), &s, &[Action::IncX, Action::Noop, Action::Noop]).unwrap();
        assert!((next.agent_vel[0][0] - 0.5).abs() < 1e-12);
        assert!((next.agent_vel[0][1]).abs() < 1e-12);
        assert!((next.agent_pos[0][0] - (-10.0 + 0.05)).abs() < 1e-12);
        assert!((next.agent_pos[0][1]).abs() < 1e-12);
    }

    #[test]
    fn step_noop_from_rest_without_overlap_keeps_positions() {
        let mut s = reset(&cfg(), 7).unwrap();
        s.agent_pos = [[-10.0, 0.0], [0.0, 10.0], [10.0, 0.0]];
        let (next, _) = step(&cfg(), &s, &[Action::Noop; 3]).unwrap();
        assert_eq!(next.agent_pos, s.agent_pos);
        assert_eq!(next.agent_vel, [[0.0; 2]; N_AGENTS]);
    }

    #[test]
    fn overlapping_pair_pays_minus_one_each() {
        let mut s = reset(&cfg(), 7).unwrap();
        // Two agents fly at each other; after integration they sit 0.05
        // apart (< 0.3 radius sum), which is the state the reward sees.
        s.agent_pos = [[0.0, 0.0], [0.4, 0.0], [10.0, 10.0]];
        s.agent_vel = [[3.0, 0.0], [-3.0, 0.0], [0.0, 0.0]];
        let (next, out) = step(&cfg(), &s, &[Action::Noop; 3]).unwrap();
        let d = next.agent_pos[1][0] - next.agent_pos[0][0];
        assert!(d.abs() < 2.0 * cfg().agent_radius);
        assert_eq!(out.per_agent_collision_penalty[0], -1.0);
        assert_eq!(out.per_agent_collision_penalty[1], -1.0);
        assert_eq!(out.per_agent_collision_penalty[2], 0.0);
    }

    #[test]
    fn step_after_done_is_an_error() {
        let mut s = reset(&cfg(), 7).unwrap();
        s.step_index = cfg().max_steps;
        let err = step(&cfg(), &s, &[Action::Noop; 3]).unwrap_err();
        assert!(matches!(err, EnvError::EpisodeFinished { .. }));
    }

    #[test]
    fn done_exactly_at_max_steps() {
        let c = cfg();
        let mut s = reset(&c, 11).unwrap();
        for expect_done in (1..=c.max_steps).map(|i| i == c.max_steps) {
            let (next, out) = step(&c, &s, &[Action::Noop; 3]).unwrap();
            assert_eq!(out.done, expect_done);
            s = next;
        }
    }

    #[test]
    fn observe_layout_and_purity() {
        let mut s = reset(&cfg(), 7).unwrap();
        s.agent_pos = [[0.0, 0.0], [0.3, 0.4], [-0.5, 0.2]];
        s.agent_vel = [[0.0, 0.0]; 3];
        s.landmark_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let o = observe(&s, 0).unwrap();
        assert_eq!(o.0[4], 1.0);
        assert_eq!(o.0[5], 0.0);
        // Other agents in ascending order, skipping self.
        assert_eq!(&o.0[10..14], &[0.3, 0.4, -0.5, 0.2]);
        // Comm pad is exactly zero.
        assert_eq!(&o.0[14..18], &[0.0; 4]);
        assert_eq!(observe(&s, 0).unwrap(), o);
        assert!(matches!(
            observe(&s, 3),
            Err(EnvError::AgentIndexOutOfRange { agent: 3 })
        ));
    }

    #[test]
    fn observe_all_entities_at_origin_is_zero_vector() {
        let s = WorldState {
            agent_pos: [[0.0; 2]; 3],
            agent_vel: [[0.0; 2]; 3],
            landmark_pos: [[0.0; 2]; 3],
            step_index: 0,
        };
        for agent in 0..N_AGENTS {
            assert_eq!(observe(&s, agent).unwrap().0, [0.0; OBS_DIM]);
        }
    }

    #[test]
    fn distance_reward_examples() {
        let mut s = reset(&cfg(), 7).unwrap();
        // Each agent exactly on a distinct landmark: 0 under both readings.
        s.agent_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        s.landmark_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        assert_eq!(distance_reward(&s, DistanceSemantics::PerLandmarkMinOverAgents), 0.0);
        assert_eq!(distance_reward(&s, DistanceSemantics::PerAgentMinOverLandmarks), 0.0);

        // All agents at the origin: per-landmark semantics sums the three
        // unit distances.
        s.agent_pos = [[0.0, 0.0]; 3];
        let r = distance_reward(&s, DistanceSemantics::PerLandmarkMinOverAgents);
        assert!((r - (-3.0)).abs() < 1e-12);
        // Per-agent semantics also sums three unit distances here, but for
        // a different reason: each agent's nearest landmark is 1 away.
        let r = distance_reward(&s, DistanceSemantics::PerAgentMinOverLandmarks);
        assert!((r - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn distance_semantics_agree_when_assignment_is_a_bijection() {
        // With one agent near each landmark and the pairing unambiguous,
        // both formulas sum the same three distances.
        let mut s = reset(&cfg(), 7).unwrap();
        s.agent_pos = [[1.1, 0.0], [0.0, 1.2], [-0.9, 0.0]];
        s.landmark_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let a = distance_reward(&s, DistanceSemantics::PerLandmarkMinOverAgents);
        let b = distance_reward(&s, DistanceSemantics::PerAgentMinOverLandmarks);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn covered_landmark_counting() {
        let mut s = reset(&cfg(), 7).unwrap();
        s.landmark_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        s.agent_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        assert_eq!(count_covered_landmarks(&s, 0.1), 3);

        s.agent_pos = [[1.25, 0.0], [0.25, 1.0], [-0.75, 0.0]];
        assert_eq!(count_covered_landmarks(&s, 0.1), 0);

        s.agent_pos = [[1.05, 0.0], [5.0, 5.0], [-5.0, -5.0]];
        assert_eq!(count_covered_landmarks(&s, 0.1), 1);
    }

    #[test]
    fn coverage_monotone_in_threshold() {
        for seed in 0..30 {
            let s = reset(&cfg(), seed).unwrap();
            let mut prev = 0;
            for threshold in [0.01, 0.05, 0.1, 0.5, 1.0, 3.0] {
                let c = count_covered_landmarks(&s, threshold);
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn heuristic_bonus_examples() {
        let mut s = reset(&cfg(), 7).unwrap();
        s.landmark_pos = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        // Agent 0 sits on landmark 0; agent 1 sits on landmark 1; agent 2
        // is far away, so exactly 2 landmarks are covered.
        s.agent_pos = [[1.0, 0.0], [0.0, 1.0], [30.0, 30.0]];
        let b = heuristic_bonus(&s, 0.1);
        // Shared term 1.0, proximity term 0.05 at distance zero.
        assert!((b[0] - 1.05).abs() < 1e-12);
        assert!((b[1] - 1.05).abs() < 1e-12);
        // Far agent: shared term only.
        assert!((b[2] - 1.0).abs() < 1e-12);

        // Zero coverage and everyone >= 1 unit away: bonus vanishes.
        s.agent_pos = [[10.0, 0.0], [0.0, 10.0], [30.0, 30.0]];
        assert_eq!(heuristic_bonus(&s, 0.1), [0.0; 3]);
    }

    #[test]
    fn heuristic_bonus_is_nonnegative() {
        for seed in 0..50 {
            let s = reset(&cfg(), seed).unwrap();
            for b in heuristic_bonus(&s, 0.1) {
                assert!(b >= 0.0);
            }
        }
    }

    #[test]
    fn env_reward_decomposes_exactly() {
        let c = cfg();
        let mut s = reset(&c, 3).unwrap();
        for _ in 0..c.max_steps {
            let actions = [Action::IncX, Action::DecY, Action::Noop];
            let (next, out) = step(&c, &s, &actions).unwrap();
            let shared = distance_reward(&next, c.distance_semantics);
            for i in 0..N_AGENTS {
                let rebuilt = shared + out.per_agent_collision_penalty[i];
                assert_eq!(out.per_agent_env_reward[i], rebuilt);
            }
            s = next;
        }
    }

    #[test]
    fn trajectories_replay_bit_for_bit() {
        let c = cfg();
        let run = || {
            let mut s = reset(&c, 99).unwrap();
            let mut log = Vec::new();
            for t in 0..c.max_steps {
                let actions = [
                    Action::from_index(t % 5).unwrap(),
                    Action::from_index((t + 1) % 5).unwrap(),
                    Action::from_index((t + 2) % 5).unwrap(),
                ];
                let (next, out) = step(&c, &s, &actions).unwrap();
                log.push((next.clone(), out));
                s = next;
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kinetic_energy_non_increasing_under_noop_without_contacts() {
        let c = cfg();
        let mut s = reset(&c, 5).unwrap();
        s.agent_pos = [[-20.0, 0.0], [0.0, 20.0], [20.0, 0.0]];
        s.agent_vel = [[1.0, -0.5], [0.3, 0.2], [-0.7, 0.9]];
        let energy = |w: &WorldState| -> f64 {
            w.agent_vel.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum()
        };
        let mut prev = energy(&s);
        for _ in 0..c.max_steps {
            let (next, _) = step(&c, &s, &[Action::Noop; 3]).unwrap();
            let e = energy(&next);
            assert!(e <= prev + 1e-12);
            prev = e;
            s = next;
        }
    }

    #[test]
    fn observation_reconstructs_other_agent_positions() {
        for seed in 0..20 {
            let s = reset(&cfg(), seed).unwrap();
            for agent in 0..N_AGENTS {
                let o = observe(&s, agent).unwrap();
                let self_pos = [o.0[2], o.0[3]];
                let mut k = 10;
                for other in (0..N_AGENTS).filter(|&j| j != agent) {
                    let rebuilt = [self_pos[0] + o.0[k], self_pos[1] + o.0[k + 1]];
                    assert!((rebuilt[0] - s.agent_pos[other][0]).abs() < 1e-14);
                    assert!((rebuilt[1] - s.agent_pos[other][1]).abs() < 1e-14);
                    k += 2;
                }
            }
        }
    }
}
