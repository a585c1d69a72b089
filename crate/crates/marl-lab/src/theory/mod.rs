//! Executable demonstrations of the coordination barriers on
//! exactly-solvable instances: potential-based shaping invariance checked
//! against a value-iteration oracle, pure-Nash-vs-global-optimum
//! enumeration for matrix games, exact counterfactual action-combination
//! counts, and an empirical non-stationarity drift statistic
//! ([`drift`]).

mod drift;

pub use drift::{
    nonstationarity_drift, DriftCell, DriftReport, EpisodeWindow, SignBucketing,
    TransitionEvent, WindowPairDrift, DEFAULT_MIN_CELL_SAMPLES,
};

use num_bigint::BigUint;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("game too large for brute force: {joint} joint profiles (limit {limit})")]
    GameTooLarge { joint: usize, limit: usize },
    #[error("counterfactual count out of supported range: exponent {exponent} exceeds {limit} bits")]
    CountTooLarge { exponent: BigUint, limit: u64 },
    #[error("inputs must be >= 1")]
    InvalidCount,
    #[error("insufficient data: no (state-bucket, action) cell has {min_samples} samples in both windows")]
    InsufficientData { min_samples: usize },
}

/// Finite MDP with explicit transition and reward tensors indexed
/// `[state][action][next_state]`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        gamma: f64,
    ) -> Result<Self, TheoryError> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(TheoryError::InvalidMdp("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(TheoryError::InvalidMdp("no actions".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TheoryError::InvalidMdp("gamma must be in (0, 1)".into()));
        }
        if reward.len() != n_states {
            return Err(TheoryError::InvalidMdp("reward/transition shape mismatch".into()));
        }
        for s in 0..n_states {
            if transition[s].len() != n_actions || reward[s].len() != n_actions {
                return Err(TheoryError::InvalidMdp("ragged action dimension".into()));
            }
            for a in 0..n_actions {
                if transition[s][a].len() != n_states || reward[s][a].len() != n_states {
                    return Err(TheoryError::InvalidMdp("ragged next-state dimension".into()));
                }
                let row_sum: f64 = transition[s][a].iter().sum();
                if (row_sum - 1.0).abs() > 1e-12 {
                    return Err(TheoryError::InvalidMdp(format!(
                        "transition row [{s}][{a}] sums to {row_sum}, not 1"
                    )));
                }
                if transition[s][a].iter().any(|&p| p < 0.0) {
                    return Err(TheoryError::InvalidMdp("negative transition probability".into()));
                }
            }
        }
        Ok(Self { n_states, n_actions, transition, reward, gamma })
    }
}

/// Value iteration to sup-norm tolerance `tol`, returning the value
/// function and the greedy policy with lowest-index tie-breaking.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> (Vec<f64>, Vec<usize>) {
    let mut values = vec![0.0; mdp.n_states];
    // gamma < 1 guarantees geometric convergence; the cap is a failsafe.
    for _ in 0..10_000_000u64 {
        let mut next = vec![0.0; mdp.n_states];
        let mut diff: f64 = 0.0;
        for s in 0..mdp.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = q_value(mdp, &values, s, a);
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            diff = diff.max((next[s] - values[s]).abs());
        }
        values = next;
        if diff < tol {
            break;
        }
    }
    let policy = greedy_policy(mdp, &values);
    (values, policy)
}

fn q_value(mdp: &TabularMdp, values: &[f64], s: usize, a: usize) -> f64 {
    mdp.transition[s][a]
        .iter()
        .zip(&mdp.reward[s][a])
        .zip(values)
        .map(|((&p, &r), &v)| p * (r + mdp.gamma * v))
        .sum()
}

fn greedy_policy(mdp: &TabularMdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = q_value(mdp, values, s, a);
                // Strict improvement keeps the lowest-index maximizer.
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Add the shaping term `gamma * phi(s') - phi(s)` to every reward entry.
/// The greedy policy of the result matches the original's.
pub fn apply_potential_shaping(mdp: &TabularMdp, phi: &[f64]) -> Result<TabularMdp, TheoryError> {
    if phi.len() != mdp.n_states {
        return Err(TheoryError::InvalidMdp(format!(
            "potential has {} entries for {} states",
            phi.len(),
            mdp.n_states
        )));
    }
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(TheoryError::InvalidMdp("non-finite potential".into()));
    }
    let mut shaped = mdp.clone();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            for s2 in 0..mdp.n_states {
                shaped.reward[s][a][s2] += mdp.gamma * phi[s2] - phi[s];
            }
        }
    }
    Ok(shaped)
}

/// Random dense MDP: transition rows are normalized positive draws,
/// rewards uniform on [-1, 1].
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, rng: &mut impl Rng) -> TabularMdp {
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut row: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
            // Renormalize exactly so the row-sum invariant holds to 1e-12.
            let sum: f64 = row.iter().sum();
            row[n_states - 1] += 1.0 - sum;
            transition[s][a] = row;
            for s2 in 0..n_states {
                reward[s][a][s2] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    TabularMdp::new(transition, reward, gamma).expect("constructed rows are stochastic")
}

/// Outcome of the shaping-invariance sweep over random instances.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ShapingCheckReport {
    pub instances: usize,
    pub policy_mismatches: usize,
    pub max_value_shift_error: f64,
}

/// On `instances` random MDPs with random potentials, compare greedy
/// policies before and after shaping (identical tie-breaking) and check
/// that shaped values differ from original values by `phi` up to the
/// iteration tolerance.
pub fn shaping_invariance_check(
    instances: usize,
    n_states: usize,
    n_actions: usize,
    rng: &mut impl Rng,
) -> ShapingCheckReport {
    let tol = 1e-12;
    let mut mismatches = 0;
    let mut max_shift_err: f64 = 0.0;
    for _ in 0..instances {
        let gamma = rng.gen_range(0.8..0.99);
        let mdp = random_mdp(n_states, n_actions, gamma, rng);
        let phi: Vec<f64> = (0..n_states).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shaped = apply_potential_shaping(&mdp, &phi).unwrap();
        let (v0, p0) = value_iteration(&mdp, tol);
        let (v1, p1) = value_iteration(&shaped, tol);
        if p0 != p1 {
            mismatches += 1;
        }
        // V_shaped(s) = V(s) - phi(s).
        for s in 0..n_states {
            max_shift_err = max_shift_err.max((v1[s] - (v0[s] - phi[s])).abs());
        }
    }
    ShapingCheckReport {
        instances,
        policy_mismatches: mismatches,
        max_value_shift_error: max_shift_err,
    }
}

/// Normal-form game: one payoff tensor per player, indexed by a
/// mixed-radix joint-action code with player 0 most significant.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    pub n_players: usize,
    pub actions_per_player: Vec<usize>,
    pub payoffs: Vec<Vec<f64>>,
}

impl MatrixGame {
    pub fn new(actions_per_player: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        let n_players = actions_per_player.len();
        if n_players == 0 || actions_per_player.iter().any(|&a| a == 0) {
            return Err(TheoryError::InvalidGame("players need at least one action".into()));
        }
        let joint: usize = actions_per_player.iter().product();
        if payoffs.len() != n_players || payoffs.iter().any(|p| p.len() != joint) {
            return Err(TheoryError::InvalidGame(format!(
                "expected {n_players} payoff vectors of length {joint}"
            )));
        }
        Ok(Self { n_players, actions_per_player, payoffs })
    }

    pub fn joint_action_count(&self) -> usize {
        self.actions_per_player.iter().product()
    }

    fn index_of(&self, profile: &[usize]) -> usize {
        let mut idx = 0;
        for (p, &a) in profile.iter().enumerate() {
            idx = idx * self.actions_per_player[p] + a;
        }
        idx
    }

    fn profile_of(&self, mut idx: usize) -> Vec<usize> {
        let mut profile = vec![0; self.n_players];
        for p in (0..self.n_players).rev() {
            profile[p] = idx % self.actions_per_player[p];
            idx /= self.actions_per_player[p];
        }
        profile
    }
}

/// Brute-force comparison of pure Nash equilibria against the maximizers
/// of the summed payoff.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NashAnalysis {
    pub pure_nash: Vec<Vec<usize>>,
    pub global_optima: Vec<Vec<usize>>,
    pub misaligned: bool,
}

const BRUTE_FORCE_LIMIT: usize = 1_000_000;

/// Enumerate every profile: a pure Nash admits no strictly improving
/// unilateral deviation; global optima maximize the payoff sum. The game
/// is misaligned when some Nash profile is not a global optimum.
pub fn nash_vs_global(game: &MatrixGame) -> Result<NashAnalysis, TheoryError> {
    let joint = game.joint_action_count();
    if joint > BRUTE_FORCE_LIMIT {
        return Err(TheoryError::GameTooLarge { joint, limit: BRUTE_FORCE_LIMIT });
    }

    let mut pure_nash = Vec::new();
    let mut best_sum = f64::NEG_INFINITY;
    let mut global_optima: Vec<Vec<usize>> = Vec::new();
    for idx in 0..joint {
        let profile = game.profile_of(idx);
        let mut is_nash = true;
        'players: for p in 0..game.n_players {
            let own = game.payoffs[p][idx];
            let mut deviation = profile.clone();
            for a in 0..game.actions_per_player[p] {
                if a == profile[p] {
                    continue;
                }
                deviation[p] = a;
                if game.payoffs[p][game.index_of(&deviation)] > own {
                    is_nash = false;
                    break 'players;
                }
            }
        }
        if is_nash {
            pure_nash.push(profile.clone());
        }
        let sum: f64 = game.payoffs.iter().map(|pp| pp[idx]).sum();
        if sum > best_sum {
            best_sum = sum;
            global_optima.clear();
            global_optima.push(profile);
        } else if sum == best_sum {
            global_optima.push(profile);
        }
    }
    let misaligned = pure_nash.iter().any(|nash| !global_optima.contains(nash));
    Ok(NashAnalysis { pure_nash, global_optima, misaligned })
}

/// The bundled two-player demonstration game. Action 0 is the high-payoff
/// cooperative choice, action 1 the safe one: both-0 pays (4,4), both-1
/// pays (3,3), and mixing pays the defector 3 and the cooperator 0. Both
/// symmetric profiles are Nash, only one maximizes the sum.
pub fn stag_hunt() -> MatrixGame {
    MatrixGame::new(
        vec![2, 2],
        vec![
            vec![4.0, 0.0, 3.0, 3.0], // row player
            vec![4.0, 3.0, 0.0, 3.0], // column player
        ],
    )
    .expect("static game is well-formed")
}

/// Exact counterfactual combination counts for one agent reasoning about
/// `n_agents - 1` others with `action_space_size` actions each.
#[derive(Debug, Clone)]
pub struct CounterfactualCount {
    /// Joint action combinations of the other agents: `|A|^(n-1)`.
    pub others_joint_actions: BigUint,
    /// Subsets of those combinations: `2^(|A|^(n-1))`. This is the larger
    /// published expression; it counts subsets rather than the joint
    /// actions themselves, and both are reported.
    pub joint_action_subsets: BigUint,
}

/// Bit-length cap on the subset count, so the exponent stays practical.
pub const COUNTERFACTUAL_BIT_LIMIT: u64 = 1_000_000;

pub fn counterfactual_count(
    action_space_size: u64,
    n_agents: u64,
) -> Result<CounterfactualCount, TheoryError> {
    if action_space_size < 1 || n_agents < 1 {
        return Err(TheoryError::InvalidCount);
    }
    let base = BigUint::from(action_space_size);
    let others = base.pow((n_agents - 1) as u32);
    let exponent: u64 = match u64::try_from(&others) {
        Ok(e) if e <= COUNTERFACTUAL_BIT_LIMIT => e,
        _ => {
            return Err(TheoryError::CountTooLarge {
                exponent: others,
                limit: COUNTERFACTUAL_BIT_LIMIT,
            })
        }
    };
    let subsets = BigUint::from(1u8) << exponent;
    Ok(CounterfactualCount { others_joint_actions: others, joint_action_subsets: subsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state_mdp(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(
            vec![vec![vec![1.0]]],
            vec![vec![vec![reward]]],
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = single_state_mdp(1.0, 0.5);
        let (v, policy) = value_iteration(&mdp, 1e-12);
        assert!((v[0] - 2.0).abs() < 1e-9);
        assert_eq!(policy, vec![0]);
    }

    #[test]
    fn value_iteration_zero_rewards() {
        let mdp = random_mdp(5, 3, 0.9, &mut ChaCha8Rng::seed_from_u64(1));
        let zeroed = TabularMdp::new(
            mdp.transition.clone(),
            vec![vec![vec![0.0; 5]; 3]; 5],
            0.9,
        )
        .unwrap();
        let (v, _) = value_iteration(&zeroed, 1e-12);
        assert!(v.iter().all(|&x| x.abs() < 1e-9));
    }

    /// Hand dynamic program on a three-state chain: advancing from state 1
    /// into the absorbing state 2 pays 1, everything else pays 0, and
    /// gamma = 0.9, so V = [0.9, 1.0, 0.0].
    #[test]
    fn value_iteration_three_state_chain() {
        let n = 3;
        let mut transition = vec![vec![vec![0.0; n]; 2]; n];
        let mut reward = vec![vec![vec![0.0; n]; 2]; n];
        for s in 0..n {
            transition[s][0][s] = 1.0; // stay
            let next = (s + 1).min(n - 1);
            transition[s][1][next] = 1.0; // advance
        }
        reward[1][1][2] = 1.0;
        // State 2 is absorbing under both actions.
        transition[2][1] = vec![0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(transition, reward, 0.9).unwrap();
        let (v, policy) = value_iteration(&mdp, 1e-12);
        assert!((v[0] - 0.9).abs() < 1e-9);
        assert!((v[1] - 1.0).abs() < 1e-9);
        assert!(v[2].abs() < 1e-9);
        // Lowest-index tie-breaking in state 2, where both actions tie.
        assert_eq!(policy, vec![1, 1, 0]);
    }

    #[test]
    fn shaping_with_zero_potential_is_identity() {
        let mdp = random_mdp(4, 2, 0.9, &mut ChaCha8Rng::seed_from_u64(2));
        let shaped = apply_potential_shaping(&mdp, &[0.0; 4]).unwrap();
        assert_eq!(shaped.reward, mdp.reward);
        assert_eq!(shaped.transition, mdp.transition);
    }

    #[test]
    fn shaping_with_constant_potential_shifts_rewards_uniformly() {
        let mdp = random_mdp(4, 2, 0.9, &mut ChaCha8Rng::seed_from_u64(3));
        let c = 2.5;
        let shaped = apply_potential_shaping(&mdp, &[c; 4]).unwrap();
        let shift = (0.9 - 1.0) * c;
        for s in 0..4 {
            for a in 0..2 {
                for s2 in 0..4 {
                    assert!((shaped.reward[s][a][s2] - (mdp.reward[s][a][s2] + shift)).abs() < 1e-12);
                }
            }
        }
        let (_, p0) = value_iteration(&mdp, 1e-12);
        let (_, p1) = value_iteration(&shaped, 1e-12);
        assert_eq!(p0, p1);
    }

    #[test]
    fn shaping_invariance_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = shaping_invariance_check(100, 6, 3, &mut rng);
        assert_eq!(report.policy_mismatches, 0);
        assert!(report.max_value_shift_error < 1e-6);
    }

    #[test]
    fn stag_hunt_is_misaligned() {
        let analysis = nash_vs_global(&stag_hunt()).unwrap();
        assert_eq!(analysis.pure_nash, vec![vec![0, 0], vec![1, 1]]);
        assert_eq!(analysis.global_optima, vec![vec![0, 0]]);
        assert!(analysis.misaligned);
    }

    #[test]
    fn identical_interest_game_with_dominant_maximum_is_aligned() {
        let shared = vec![3.0, 2.0, 1.0, 0.0];
        let game = MatrixGame::new(vec![2, 2], vec![shared.clone(), shared]).unwrap();
        let analysis = nash_vs_global(&game).unwrap();
        assert_eq!(analysis.pure_nash, vec![vec![0, 0]]);
        assert_eq!(analysis.global_optima, vec![vec![0, 0]]);
        assert!(!analysis.misaligned);
    }

    #[test]
    fn zero_game_every_profile_nash_and_global() {
        let game = MatrixGame::new(vec![2, 2], vec![vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let analysis = nash_vs_global(&game).unwrap();
        assert_eq!(analysis.pure_nash.len(), 4);
        assert_eq!(analysis.global_optima.len(), 4);
        assert!(!analysis.misaligned);
    }

    #[test]
    fn prisoners_dilemma_two_by_two_hand_enumeration() {
        // Defect strictly dominates; the unique Nash (1,1) is not the
        // payoff-sum maximizer (0,0).
        let game = MatrixGame::new(
            vec![2, 2],
            vec![vec![3.0, 0.0, 5.0, 1.0], vec![3.0, 5.0, 0.0, 1.0]],
        )
        .unwrap();
        let analysis = nash_vs_global(&game).unwrap();
        assert_eq!(analysis.pure_nash, vec![vec![1, 1]]);
        assert_eq!(analysis.global_optima, vec![vec![0, 0]]);
        assert!(analysis.misaligned);
    }

    #[test]
    fn matching_pennies_has_no_pure_nash() {
        let game = MatrixGame::new(
            vec![2, 2],
            vec![vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]],
        )
        .unwrap();
        let analysis = nash_vs_global(&game).unwrap();
        assert!(analysis.pure_nash.is_empty());
        assert!(!analysis.misaligned);
    }

    #[test]
    fn counterfactual_counts() {
        let c = counterfactual_count(5, 3).unwrap();
        assert_eq!(c.others_joint_actions, BigUint::from(25u32));
        assert_eq!(c.joint_action_subsets, BigUint::from(33_554_432u64));

        let c = counterfactual_count(1, 7).unwrap();
        assert_eq!(c.others_joint_actions, BigUint::from(1u8));
        assert_eq!(c.joint_action_subsets, BigUint::from(2u8));

        let c = counterfactual_count(2, 2).unwrap();
        assert_eq!(c.others_joint_actions, BigUint::from(2u8));
        assert_eq!(c.joint_action_subsets, BigUint::from(4u8));

        // Big-integer path: 5^5 = 3125, so the subset count has 3126 bits.
        let c = counterfactual_count(5, 6).unwrap();
        assert_eq!(c.others_joint_actions, BigUint::from(3125u32));
        assert_eq!(c.joint_action_subsets.bits(), 3126);

        assert!(matches!(counterfactual_count(0, 3), Err(TheoryError::InvalidCount)));
        assert!(matches!(
            counterfactual_count(10, 10),
            Err(TheoryError::CountTooLarge { .. })
        ));
    }
}
