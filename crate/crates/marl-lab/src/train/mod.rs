//! The three algorithm orchestrations over the environment and the PPO
//! core: centralized-critic training (MAPPO), independent learners
//! (IPPO), and independent learners with per-agent learnable reward
//! shaping (DMARL-RSA).
//!
//! A training run is strictly sequential and deterministic: every random
//! draw comes from named substreams of one master seed (environment
//! resets, action sampling, and each network's initialization use
//! separate streams, so algorithms that share a seed see identical
//! episodes).

mod shaper;
mod updates;

pub use shaper::shaped_reward;
pub use updates::{update_dmarl, update_ippo, update_mappo};

use crate::env::{
    self, Action, AgentObservation, EnvConfig, EnvError, N_ACTIONS, N_AGENTS, OBS_DIM,
};
use crate::nn::{self, AdamState, InitScheme, MlpSpec, NnError, ParamSet};
use crate::ppo::{AgentRows, LossReport, PpoConfig, PpoError, TrajectoryBatch};
use crate::theory::{SignBucketing, TransitionEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Width of the concatenated global observation fed to the shared critic.
pub const GLOBAL_STATE_DIM: usize = N_AGENTS * OBS_DIM;
/// Width of the reward-shaper input: obs, one-hot action, next obs.
pub const SHAPER_INPUT_DIM: usize = 2 * OBS_DIM + N_ACTIONS;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("algorithm requires a shaper but none is present")]
    MissingShaper,
    #[error("batch is missing the stored global states required by the shared critic")]
    MissingGlobalState,
    #[error("global state has width {got}, shared critic expects {expected}")]
    GlobalStateWidth { expected: usize, got: usize },
    #[error("learners hold a {got} critic bank, algorithm needs {expected}")]
    WrongCriticBank { expected: &'static str, got: &'static str },
    #[error("record sink: {0}")]
    Sink(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
}

/// The three compared training algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Mappo,
    Ippo,
    DmarlRsa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Mappo, Algorithm::Ippo, Algorithm::DmarlRsa];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mappo => "MAPPO",
            Algorithm::Ippo => "IPPO",
            Algorithm::DmarlRsa => "DMARL_RSA",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "MAPPO" => Ok(Algorithm::Mappo),
            "IPPO" => Ok(Algorithm::Ippo),
            "DMARL_RSA" | "DMARL" => Ok(Algorithm::DmarlRsa),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

/// How the reward shaper is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShaperVariant {
    /// Provisional one-step actor update from shaped advantages; the
    /// shaper ascends the extrinsic surrogate evaluated under that
    /// provisional actor (first-order).
    MetaGradient,
    /// Chain rule of the actor's policy loss through the advantages'
    /// dependence on shaped rewards, with an output-L2 regularizer
    /// against reward inflation.
    NaiveJoint,
}

impl std::str::FromStr for ShaperVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "meta_gradient" | "meta-gradient" => Ok(ShaperVariant::MetaGradient),
            "naive_joint" | "naive-joint" => Ok(ShaperVariant::NaiveJoint),
            other => Err(format!("unknown shaper variant `{other}`")),
        }
    }
}

/// Reward-shaper configuration. The shaper learns at half the actor rate.
#[derive(Debug, Clone)]
pub struct ShaperConfig {
    pub alpha: f64,
    pub lr: f64,
    pub variant: ShaperVariant,
    /// Output-magnitude regularizer weight; naive_joint only.
    pub output_l2_coef: f64,
}

impl Default for ShaperConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lr: 3e-4 / 2.0,
            variant: ShaperVariant::MetaGradient,
            output_l2_coef: 0.01,
        }
    }
}

/// Weight initialization style for every network of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStyle {
    /// Orthogonal, gain sqrt(2) on hidden layers; policy heads use gain
    /// 0.01 so initial policies start near uniform, and shaper heads use
    /// gain 0.01 so learned shaping starts near zero.
    Orthogonal,
    /// Xavier-uniform everywhere.
    Xavier,
}

impl std::str::FromStr for InitStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orthogonal" => Ok(InitStyle::Orthogonal),
            "xavier" | "xavier_uniform" => Ok(InitStyle::Xavier),
            other => Err(format!("unknown init style `{other}`")),
        }
    }
}

/// Full configuration of one training run.
#[derive(Debug, Clone)]
pub struct TrainRunConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub episodes_per_update: usize,
    pub ppo: PpoConfig,
    pub shaper: ShaperConfig,
    pub env: EnvConfig,
    pub init: InitStyle,
}

impl TrainRunConfig {
    /// Protocol defaults: 5000 episodes over seeds 42/123/999, updates
    /// every 10 episodes; the centralized trainer runs at 5e-4 with 4
    /// epochs, the decentralized ones at 3e-4 with 3.
    pub fn defaults_for(algorithm: Algorithm) -> Self {
        let ppo = match algorithm {
            Algorithm::Mappo => PpoConfig {
                learning_rate: 5e-4,
                update_epochs: 4,
                ..PpoConfig::default()
            },
            _ => PpoConfig::default(),
        };
        let shaper = ShaperConfig { lr: ppo.learning_rate / 2.0, ..ShaperConfig::default() };
        Self {
            algorithm,
            episodes: 5000,
            seeds: vec![42, 123, 999],
            episodes_per_update: 10,
            ppo,
            shaper,
            env: EnvConfig::default(),
            init: InitStyle::Orthogonal,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        self.ppo.validate()?;
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("seeds must be non-empty".into()));
        }
        if self.episodes_per_update < 1 {
            return Err(TrainError::InvalidConfig("episodes_per_update must be >= 1".into()));
        }
        if self.episodes < self.episodes_per_update {
            return Err(TrainError::InvalidConfig(
                "episodes must be >= episodes_per_update".into(),
            ));
        }
        if !(self.shaper.alpha >= 0.0) {
            return Err(TrainError::InvalidConfig("shaper alpha must be >= 0".into()));
        }
        if !(self.shaper.lr >= 0.0) || !(self.shaper.output_l2_coef >= 0.0) {
            return Err(TrainError::InvalidConfig("shaper rates must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn actor_spec() -> MlpSpec {
    MlpSpec::new(vec![OBS_DIM, 64, 64, N_ACTIONS]).expect("static spec")
}

pub fn local_critic_spec() -> MlpSpec {
    MlpSpec::new(vec![OBS_DIM, 64, 64, 1]).expect("static spec")
}

pub fn shared_critic_spec() -> MlpSpec {
    MlpSpec::new(vec![GLOBAL_STATE_DIM, 64, 64, 1]).expect("static spec")
}

pub fn shaper_spec() -> MlpSpec {
    MlpSpec::new(vec![SHAPER_INPUT_DIM, 64, 32, 16, 1]).expect("static spec")
}

/// One network with its optimizer state.
#[derive(Debug, Clone)]
pub struct Net {
    pub params: ParamSet,
    pub opt: AdamState,
}

impl Net {
    pub fn new(params: ParamSet) -> Self {
        let opt = AdamState::new(params.param_count());
        Self { params, opt }
    }
}

/// Per-agent critics for independent learners, or one critic shared
/// across agents for centralized training.
#[derive(Debug, Clone)]
pub enum CriticBank {
    Shared(Net),
    PerAgent(Vec<Net>),
}

impl CriticBank {
    fn kind(&self) -> &'static str {
        match self {
            CriticBank::Shared(_) => "shared",
            CriticBank::PerAgent(_) => "per-agent",
        }
    }
}

/// All learnable state of one run: three actors, a critic bank, and
/// (for the reward-shaping algorithm only) three shapers.
#[derive(Debug, Clone)]
pub struct Learners {
    pub algorithm: Algorithm,
    pub actors: Vec<Net>,
    pub critics: CriticBank,
    pub shapers: Option<Vec<Net>>,
}

/// Deterministic named substream of a master seed.
pub fn stream_seed(master: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ master.rotate_left(17);
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, tag))
}

impl Learners {
    pub fn new(cfg: &TrainRunConfig, master_seed: u64) -> Self {
        let init_net = |spec: &MlpSpec, head: InitScheme, tag: &str| -> Net {
            let mut rng = stream_rng(master_seed, tag);
            let params = match cfg.init {
                InitStyle::Orthogonal => {
                    nn::init_params_mixed(spec, InitScheme::OrthogonalSqrt2, head, &mut rng)
                }
                InitStyle::Xavier => nn::init_params(spec, InitScheme::XavierUniform, &mut rng),
            };
            Net::new(params)
        };

        let actors = (0..N_AGENTS)
            .map(|i| init_net(&actor_spec(), InitScheme::OrthogonalSmall, &format!("init/actor/{i}")))
            .collect();
        let critics = match cfg.algorithm {
            Algorithm::Mappo => CriticBank::Shared(init_net(
                &shared_critic_spec(),
                InitScheme::OrthogonalSqrt2,
                "init/critic/shared",
            )),
            _ => CriticBank::PerAgent(
                (0..N_AGENTS)
                    .map(|i| {
                        init_net(
                            &local_critic_spec(),
                            InitScheme::OrthogonalSqrt2,
                            &format!("init/critic/{i}"),
                        )
                    })
                    .collect(),
            ),
        };
        let shapers = match cfg.algorithm {
            Algorithm::DmarlRsa => Some(
                (0..N_AGENTS)
                    .map(|i| {
                        init_net(
                            &shaper_spec(),
                            InitScheme::OrthogonalSmall,
                            &format!("init/shaper/{i}"),
                        )
                    })
                    .collect(),
            ),
            _ => None,
        };
        Self { algorithm: cfg.algorithm, actors, critics, shapers }
    }

    /// Network names and true parameter counts, for the startup audit log.
    pub fn network_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.actors.iter().enumerate() {
            out.push((format!("actor[{i}]"), a.params.param_count()));
        }
        match &self.critics {
            CriticBank::Shared(c) => out.push(("critic[shared]".into(), c.params.param_count())),
            CriticBank::PerAgent(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    out.push((format!("critic[{i}]"), c.params.param_count()));
                }
            }
        }
        if let Some(shapers) = &self.shapers {
            for (i, s) in shapers.iter().enumerate() {
                out.push((format!("shaper[{i}]"), s.params.param_count()));
            }
        }
        out
    }
}

/// Concatenate the three local observations in agent-index order.
pub fn build_global_state(observations: &[AgentObservation; N_AGENTS]) -> Vec<f64> {
    let mut global = Vec::with_capacity(GLOBAL_STATE_DIM);
    for obs in observations {
        global.extend_from_slice(obs.as_array());
    }
    global
}

/// Per-episode metrics: the episode reward is the mean over agents of
/// each agent's per-step total summed over the episode, decomposed into
/// its environmental / heuristic / learned-shaping parts.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode_index: usize,
    pub mean_agent_total_reward: f64,
    pub env_component: f64,
    pub heuristic_component: f64,
    pub shaped_component: f64,
    pub landmarks_covered_final: usize,
    /// Colliding agent pairs summed over the episode's steps.
    pub collision_count: u64,
    pub per_agent_total: [f64; N_AGENTS],
}

/// Rollout state carried across updates within one run: the action
/// sampling stream, the episode counter (environment resets derive from
/// it), and the drift-log bucketing.
pub struct RolloutCtx {
    master_seed: u64,
    policy_rng: ChaCha8Rng,
    next_episode: usize,
    bucketing: SignBucketing,
}

impl RolloutCtx {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            policy_rng: stream_rng(master_seed, "policy"),
            next_episode: 0,
            bucketing: SignBucketing::default(),
        }
    }

    pub fn episode_index(&self) -> usize {
        self.next_episode
    }
}

/// Everything one collection phase produces.
pub struct Rollout {
    pub batch: TrajectoryBatch,
    pub metrics: Vec<EpisodeMetrics>,
    pub transitions: Vec<TransitionEvent>,
}

/// Action selection sees exactly one local observation; this signature is
/// the decentralized-execution guarantee for every algorithm.
fn select_action(
    actor: &ParamSet,
    obs: &AgentObservation,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64), NnError> {
    let logits = nn::evaluate(actor, obs.as_ref())?;
    nn::sample_categorical(&logits, rng)
}

/// Roll out `n_episodes` full episodes under the current policies,
/// recording decomposed rewards, values (local critics, or the shared
/// critic on the concatenated observation), per-episode metrics, and
/// bucketed transition events for the drift log.
pub fn collect_episodes(
    cfg: &TrainRunConfig,
    learners: &Learners,
    n_episodes: usize,
    ctx: &mut RolloutCtx,
) -> Result<Rollout, TrainError> {
    let alpha = cfg.shaper.alpha;
    let mut batch = TrajectoryBatch {
        per_agent: vec![AgentRows::default(); N_AGENTS],
        global_state: matches!(learners.critics, CriticBank::Shared(_)).then(Vec::new),
    };
    let mut metrics = Vec::with_capacity(n_episodes);
    let mut transitions = Vec::new();

    for _ in 0..n_episodes {
        let episode_index = ctx.next_episode;
        ctx.next_episode += 1;
        let mut state = env::reset(
            &cfg.env,
            stream_seed(ctx.master_seed, &format!("env/{episode_index}")),
        )?;
        let mut per_agent_env = [0.0f64; N_AGENTS];
        let mut per_agent_heur = [0.0f64; N_AGENTS];
        let mut per_agent_shaped = [0.0f64; N_AGENTS];
        let mut collision_count = 0u64;
        let mut final_covered = 0usize;

        for _ in 0..cfg.env.max_steps {
            let observations = [
                env::observe(&state, 0)?,
                env::observe(&state, 1)?,
                env::observe(&state, 2)?,
            ];
            let global = build_global_state(&observations);
            let values: [f64; N_AGENTS] = match &learners.critics {
                CriticBank::Shared(critic) => {
                    let v = nn::evaluate(&critic.params, &global)?[0];
                    [v; N_AGENTS]
                }
                CriticBank::PerAgent(critics) => {
                    let mut v = [0.0; N_AGENTS];
                    for i in 0..N_AGENTS {
                        v[i] = nn::evaluate(&critics[i].params, observations[i].as_ref())?[0];
                    }
                    v
                }
            };

            let mut actions = [Action::Noop; N_AGENTS];
            let mut action_ids = [0usize; N_AGENTS];
            let mut log_probs = [0.0f64; N_AGENTS];
            for i in 0..N_AGENTS {
                let (a, lp) =
                    select_action(&learners.actors[i].params, &observations[i], &mut ctx.policy_rng)?;
                actions[i] = Action::from_index(a)?;
                action_ids[i] = a;
                log_probs[i] = lp;
            }

            let (next_state, outcome) = env::step(&cfg.env, &state, &actions)?;
            let next_observations = [
                env::observe(&next_state, 0)?,
                env::observe(&next_state, 1)?,
                env::observe(&next_state, 2)?,
            ];

            let pair_involvements: f64 = outcome
                .per_agent_collision_penalty
                .iter()
                .map(|p| -p)
                .sum();
            collision_count += (pair_involvements / 2.0).round() as u64;
            final_covered = outcome.landmarks_covered;

            if let Some(global_rows) = batch.global_state.as_mut() {
                global_rows.push(global);
            }
            for i in 0..N_AGENTS {
                let shaped = match &learners.shapers {
                    Some(shapers) => shaped_reward(
                        &shapers[i].params,
                        &observations[i],
                        action_ids[i],
                        &next_observations[i],
                        alpha,
                    )?,
                    None => 0.0,
                };
                per_agent_env[i] += outcome.per_agent_env_reward[i];
                per_agent_heur[i] += outcome.per_agent_heuristic_bonus[i];
                per_agent_shaped[i] += shaped;

                let rows = &mut batch.per_agent[i];
                rows.obs.push(*observations[i].as_array());
                rows.next_obs.push(*next_observations[i].as_array());
                rows.actions.push(action_ids[i]);
                rows.log_prob_old.push(log_probs[i]);
                rows.value_old.push(values[i]);
                rows.reward_env.push(outcome.per_agent_env_reward[i]);
                rows.reward_heuristic.push(outcome.per_agent_heuristic_bonus[i]);
                rows.reward_shaped.push(shaped);
                rows.done.push(outcome.done);

                transitions.push(TransitionEvent {
                    episode: episode_index,
                    agent: i,
                    state_bucket: ctx.bucketing.bucket(&observations[i]),
                    action: action_ids[i],
                    next_bucket: ctx.bucketing.bucket(&next_observations[i]),
                });
            }
            state = next_state;
        }

        let per_agent_total = [
            per_agent_env[0] + per_agent_heur[0] + per_agent_shaped[0],
            per_agent_env[1] + per_agent_heur[1] + per_agent_shaped[1],
            per_agent_env[2] + per_agent_heur[2] + per_agent_shaped[2],
        ];
        let n = N_AGENTS as f64;
        metrics.push(EpisodeMetrics {
            episode_index,
            mean_agent_total_reward: per_agent_total.iter().sum::<f64>() / n,
            env_component: per_agent_env.iter().sum::<f64>() / n,
            heuristic_component: per_agent_heur.iter().sum::<f64>() / n,
            shaped_component: per_agent_shaped.iter().sum::<f64>() / n,
            landmarks_covered_final: final_covered,
            collision_count,
            per_agent_total,
        });
    }
    Ok(Rollout { batch, metrics, transitions })
}

/// Dispatch one update per the learners' algorithm.
pub fn apply_update(
    learners: &mut Learners,
    batch: &TrajectoryBatch,
    cfg: &TrainRunConfig,
) -> Result<Vec<LossReport>, TrainError> {
    match learners.algorithm {
        Algorithm::Ippo => update_ippo(learners, batch, &cfg.ppo),
        Algorithm::Mappo => update_mappo(learners, batch, &cfg.ppo),
        Algorithm::DmarlRsa => update_dmarl(learners, batch, &cfg.ppo, &cfg.shaper),
    }
}

/// Run one full training run for `cfg.episodes` episodes, invoking
/// `on_chunk` after every update with that chunk's episode metrics and
/// drift-log events (the crash-safe flush point). Returns the trained
/// learners.
pub fn train_run(
    cfg: &TrainRunConfig,
    master_seed: u64,
    mut on_chunk: impl FnMut(&[EpisodeMetrics], &[TransitionEvent]) -> Result<(), TrainError>,
) -> Result<Learners, TrainError> {
    cfg.validate()?;
    let mut learners = Learners::new(cfg, master_seed);
    let mut ctx = RolloutCtx::new(master_seed);
    let mut remaining = cfg.episodes;
    while remaining > 0 {
        let chunk = remaining.min(cfg.episodes_per_update);
        let rollout = collect_episodes(cfg, &learners, chunk, &mut ctx)?;
        apply_update(&mut learners, &rollout.batch, cfg)?;
        on_chunk(&rollout.metrics, &rollout.transitions)?;
        remaining -= chunk;
    }
    Ok(learners)
}
