//! Algorithm-agnostic PPO machinery shared by all three trainers:
//! generalized advantage estimation, the clipped surrogate objective,
//! value loss, entropy bonus, and the epoch-wise full-batch update loop.

use crate::env::{N_ACTIONS, OBS_DIM};
use crate::nn::{self, AdamState, NnError, ParamSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {what} in epoch {epoch}; update aborted")]
    NonFiniteLoss { what: &'static str, epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// PPO hyperparameters. Defaults are the shared core configuration
/// (3e-4 learning rate, 3 update epochs); the centralized trainer
/// overrides the rate and epoch count.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub update_epochs: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            update_epochs: 3,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return err("clip_ratio must be > 0");
        }
        if self.update_epochs < 1 {
            return err("update_epochs must be >= 1");
        }
        if !(self.max_grad_norm > 0.0) {
            return err("max_grad_norm must be > 0");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return err("learning_rate must be finite and >= 0");
        }
        Ok(())
    }
}

/// Per-step rollout records for one agent, in collection order. Episode
/// boundaries are marked by `done`; rewards are stored decomposed and the
/// trainers pick which components enter a given update.
#[derive(Debug, Clone, Default)]
pub struct AgentRows {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub next_obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<usize>,
    pub log_prob_old: Vec<f64>,
    pub value_old: Vec<f64>,
    pub reward_env: Vec<f64>,
    pub reward_heuristic: Vec<f64>,
    pub reward_shaped: Vec<f64>,
    pub done: Vec<bool>,
}

impl AgentRows {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Environmental plus heuristic reward: what MAPPO and IPPO train on.
    pub fn rewards_extrinsic(&self) -> Vec<f64> {
        self.reward_env
            .iter()
            .zip(&self.reward_heuristic)
            .map(|(e, h)| e + h)
            .collect()
    }

    /// Full decomposed total, including the learned shaping component.
    pub fn rewards_total(&self) -> Vec<f64> {
        self.reward_env
            .iter()
            .zip(&self.reward_heuristic)
            .zip(&self.reward_shaped)
            .map(|((e, h), s)| e + h + s)
            .collect()
    }
}

/// One update's worth of rollouts for every agent, plus the concatenated
/// global observations when a centralized critic is in play.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub per_agent: Vec<AgentRows>,
    pub global_state: Option<Vec<Vec<f64>>>,
}

/// GAE output. `returns[t] = advantages[t] + value_old[t]`. When
/// [`AdvantageEstimate::normalize`] has run, `normalization` records the
/// (mean, std) that was divided out.
#[derive(Debug, Clone)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub normalization: Option<(f64, f64)>,
}

impl AdvantageEstimate {
    /// Normalize advantages to zero mean and unit (population) std over
    /// the batch, recording the overall (mean, std) divided out. Constant
    /// batches divide by 1.
    ///
    /// Centering is per within-episode step index (episode starts derived
    /// from `dones`): with a fixed 25-step horizon and no time feature in
    /// the observation, the value baseline cannot express time-to-go, and
    /// the resulting advantage component is a pure function of the step
    /// index, identical across episodes. Removing the per-index mean is
    /// still a valid (action-independent) baseline and eliminates that
    /// structural ramp; a plain batch-mean subtraction leaves it in place
    /// and lets it drown the action signal.
    pub fn normalize(&mut self, dones: &[bool]) {
        let n = self.advantages.len();
        if n == 0 {
            return;
        }
        debug_assert_eq!(dones.len(), n);
        let overall_mean = self.advantages.iter().sum::<f64>() / n as f64;

        // Group by step index within the episode.
        let mut sums: Vec<(f64, usize)> = Vec::new();
        let mut t = 0usize;
        for (i, &a) in self.advantages.iter().enumerate() {
            if t == sums.len() {
                sums.push((0.0, 0));
            }
            sums[t].0 += a;
            sums[t].1 += 1;
            t = if dones[i] { 0 } else { t + 1 };
        }
        let mut t = 0usize;
        for (i, a) in self.advantages.iter_mut().enumerate() {
            let (sum, count) = sums[t];
            *a -= sum / count as f64;
            t = if dones[i] { 0 } else { t + 1 };
        }

        let var = self.advantages.iter().map(|a| a * a).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        for a in self.advantages.iter_mut() {
            *a /= std;
        }
        self.normalization = Some((overall_mean, std));
    }
}

/// Generalized advantage estimation over a flat step sequence with
/// episode boundaries marked in `dones`. The value after a terminal step
/// is 0: episodes end unconditionally at the horizon, there is no critic
/// bootstrap.
///
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)`;
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate, PpoError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {} / values {} / dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate { advantages, returns, normalization: None })
}

/// Adjoint of [`compute_gae`] with respect to the rewards: given
/// `d objective / d advantages`, returns `d objective / d rewards`.
/// Used by the reward-shaper updates to push gradients through GAE.
pub fn gae_reward_adjoint(
    advantage_grads: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = advantage_grads.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..n {
        let carried = if k > 0 && !dones[k - 1] { gamma * lambda * acc } else { 0.0 };
        acc = advantage_grads[k] + carried;
        out[k] = acc;
    }
    out
}

/// Per-step clipped surrogate loss and its gradient with respect to the
/// new log-probability. The gradient is zero where the clipped branch is
/// active and binding.
pub fn ppo_policy_objective(
    log_prob_new: f64,
    log_prob_old: f64,
    advantage: f64,
    clip_ratio: f64,
) -> (f64, f64) {
    let ratio = (log_prob_new - log_prob_old).exp();
    let clipped_ratio = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if unclipped <= clipped {
        // d(-ratio * A)/d log_prob_new = -ratio * A.
        (-unclipped, -unclipped)
    } else {
        (-clipped, 0.0)
    }
}

/// Per-step critic loss `0.5 * (value - target)^2` and its gradient with
/// respect to the value.
pub fn value_loss(value_new: f64, return_target: f64) -> (f64, f64) {
    let diff = value_new - return_target;
    (0.5 * diff * diff, diff)
}

/// Mean losses over every epoch of one update.
#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ActorEpochStats {
    pub policy_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One full-batch actor pass: mean policy loss, entropy, clip fraction,
/// and the mean gradient of `policy_loss - entropy_coef * entropy` over
/// the actor's flat parameters.
pub fn actor_epoch_grads(
    actor: &ParamSet,
    obs: &[[f64; OBS_DIM]],
    actions: &[usize],
    log_prob_old: &[f64],
    advantages: &[f64],
    clip_ratio: f64,
    entropy_coef: f64,
) -> Result<(ActorEpochStats, Vec<f64>), PpoError> {
    let n = obs.len();
    if n == 0 {
        return Err(PpoError::EmptyBatch);
    }
    if actions.len() != n || log_prob_old.len() != n || advantages.len() != n {
        return Err(PpoError::LengthMismatch("actor epoch inputs".into()));
    }
    let mut grads = vec![0.0; actor.param_count()];
    let mut stats = ActorEpochStats::default();
    let mut clipped_steps = 0usize;
    for t in 0..n {
        let (logits, cache) = nn::forward(actor, &obs[t])?;
        let log_probs = nn::log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let action = actions[t];
        if action >= N_ACTIONS {
            return Err(PpoError::LengthMismatch(format!("action id {action} out of range")));
        }
        let (loss_t, dloss_dlp) =
            ppo_policy_objective(log_probs[action], log_prob_old[t], advantages[t], clip_ratio);
        // The clip binds when the boundary term is the smaller surrogate.
        let ratio = (log_probs[action] - log_prob_old[t]).exp();
        if (advantages[t] > 0.0 && ratio > 1.0 + clip_ratio)
            || (advantages[t] < 0.0 && ratio < 1.0 - clip_ratio)
        {
            clipped_steps += 1;
        }
        let entropy_t = -log_probs.iter().zip(&probs).map(|(lp, p)| p * lp).sum::<f64>();
        stats.policy_loss += loss_t;
        stats.entropy += entropy_t;

        // d(loss - coef * H)/d logits, accumulated as a mean over steps.
        let mut dlogits = vec![0.0; N_ACTIONS];
        for k in 0..N_ACTIONS {
            let indicator = if k == action { 1.0 } else { 0.0 };
            let dpolicy = dloss_dlp * (indicator - probs[k]);
            let dentropy = entropy_coef * probs[k] * (log_probs[k] + entropy_t);
            dlogits[k] = (dpolicy + dentropy) / n as f64;
        }
        let (pg, _) = nn::backward(actor, &cache, &dlogits)?;
        for (g, p) in grads.iter_mut().zip(pg.iter()) {
            *g += p;
        }
    }
    stats.policy_loss /= n as f64;
    stats.entropy /= n as f64;
    stats.clip_fraction = clipped_steps as f64 / n as f64;
    Ok((stats, grads))
}

/// One full-batch critic pass: mean value loss and the mean gradient of
/// `value_coef * value_loss` over the critic's flat parameters. Inputs
/// may be local observations or concatenated global states.
pub fn critic_epoch_grads<I: AsRef<[f64]>>(
    critic: &ParamSet,
    inputs: &[I],
    targets: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<f64>), PpoError> {
    let n = inputs.len();
    if n == 0 {
        return Err(PpoError::EmptyBatch);
    }
    if targets.len() != n {
        return Err(PpoError::LengthMismatch("critic epoch inputs".into()));
    }
    let mut grads = vec![0.0; critic.param_count()];
    let mut total_loss = 0.0;
    for t in 0..n {
        let (out, cache) = nn::forward(critic, inputs[t].as_ref())?;
        let (loss_t, dvalue) = value_loss(out[0], targets[t]);
        total_loss += loss_t;
        let (pg, _) = nn::backward(critic, &cache, &[value_coef * dvalue / n as f64])?;
        for (g, p) in grads.iter_mut().zip(pg.iter()) {
            *g += p;
        }
    }
    Ok((total_loss / n as f64, grads))
}

/// The shared epoch-wise update: advantages from GAE (normalized once per
/// batch when enabled), then per epoch a fresh full-batch actor and
/// critic pass, per-network gradient clipping, and an Adam step each.
/// Deterministic given the batch and parameters; a non-finite loss aborts
/// with a diagnostic before touching parameters further.
#[allow(clippy::too_many_arguments)]
pub fn run_update(
    rows: &AgentRows,
    rewards: &[f64],
    actor: &mut ParamSet,
    actor_opt: &mut AdamState,
    critic: &mut ParamSet,
    critic_opt: &mut AdamState,
    cfg: &PpoConfig,
) -> Result<LossReport, PpoError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let mut est = compute_gae(rewards, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)?;
    if cfg.normalize_advantages {
        est.normalize(&rows.done);
    }

    let mut report = LossReport::default();
    for epoch in 0..cfg.update_epochs {
        let (stats, mut actor_grads) = actor_epoch_grads(
            actor,
            &rows.obs,
            &rows.actions,
            &rows.log_prob_old,
            &est.advantages,
            cfg.clip_ratio,
            cfg.entropy_coef,
        )?;
        if !stats.policy_loss.is_finite() || !stats.entropy.is_finite() {
            return Err(PpoError::NonFiniteLoss { what: "policy loss", epoch });
        }
        let (critic_loss, mut critic_grads) =
            critic_epoch_grads(critic, &rows.obs, &est.returns, cfg.value_coef)?;
        if !critic_loss.is_finite() {
            return Err(PpoError::NonFiniteLoss { what: "value loss", epoch });
        }
        nn::clip_global_norm(&mut actor_grads, cfg.max_grad_norm);
        nn::clip_global_norm(&mut critic_grads, cfg.max_grad_norm);
        nn::adam_step(actor, &actor_grads, actor_opt, cfg.learning_rate)?;
        nn::adam_step(critic, &critic_grads, critic_opt, cfg.learning_rate)?;

        report.policy_loss += stats.policy_loss;
        report.value_loss += critic_loss;
        report.entropy += stats.entropy;
        report.clip_fraction += stats.clip_fraction;
    }
    let e = cfg.update_epochs as f64;
    report.policy_loss /= e;
    report.value_loss /= e;
    report.entropy /= e;
    report.clip_fraction /= e;
    Ok(report)
}
