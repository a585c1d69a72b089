//! The per-algorithm update rules. All three share the PPO epoch
//! machinery; they differ in which reward components enter the
//! advantages, which critic produces values, and whether a reward-shaper
//! step follows.

use super::shaper::{update_shaper_meta, update_shaper_naive};
use super::{CriticBank, Learners, ShaperConfig, ShaperVariant, TrainError, GLOBAL_STATE_DIM};
use crate::nn::{self, ParamSet};
use crate::ppo::{
    self, actor_epoch_grads, compute_gae, critic_epoch_grads, AgentRows, LossReport, PpoConfig,
    TrajectoryBatch,
};

/// Episodes end by truncation at the step cap, matching the reference
/// environment's semantics: the world would keep evolving, so the value
/// of the state after the final step is bootstrapped from the critic and
/// folded into that step's reward before advantage estimation. This keeps
/// the value function stationary (no unobservable time-to-go component)
/// and lets TD residuals cancel the critic's level error.
fn bootstrap_truncated_rewards(
    mut rewards: Vec<f64>,
    rows: &AgentRows,
    critic: &ParamSet,
    gamma: f64,
) -> Result<Vec<f64>, TrainError> {
    for t in 0..rows.len() {
        if rows.done[t] {
            let tail_value = nn::evaluate(critic, &rows.next_obs[t])?[0];
            rewards[t] += gamma * tail_value;
        }
    }
    Ok(rewards)
}

/// Independent PPO: each agent runs the shared update loop on its own
/// trajectories with the extrinsic (environment + heuristic) reward.
pub fn update_ippo(
    learners: &mut Learners,
    batch: &TrajectoryBatch,
    cfg: &PpoConfig,
) -> Result<Vec<LossReport>, TrainError> {
    let critics = match &mut learners.critics {
        CriticBank::PerAgent(c) => c,
        bank => {
            return Err(TrainError::WrongCriticBank { expected: "per-agent", got: bank.kind() })
        }
    };
    let mut reports = Vec::with_capacity(batch.per_agent.len());
    for (rows, (actor, critic)) in batch
        .per_agent
        .iter()
        .zip(learners.actors.iter_mut().zip(critics.iter_mut()))
    {
        let rewards =
            bootstrap_truncated_rewards(rows.rewards_extrinsic(), rows, &critic.params, cfg.gamma)?;
        let report = ppo::run_update(
            rows,
            &rewards,
            &mut actor.params,
            &mut actor.opt,
            &mut critic.params,
            &mut critic.opt,
            cfg,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

/// Centralized training, decentralized execution: the shared critic is
/// trained once per epoch on the pooled (global state, return) pairs of
/// all agents; each actor is updated from its own advantages, which come
/// from the shared critic's rollout values. Actors only ever see local
/// observations.
pub fn update_mappo(
    learners: &mut Learners,
    batch: &TrajectoryBatch,
    cfg: &PpoConfig,
) -> Result<Vec<LossReport>, TrainError> {
    cfg.validate()?;
    let critic = match &mut learners.critics {
        CriticBank::Shared(c) => c,
        bank => return Err(TrainError::WrongCriticBank { expected: "shared", got: bank.kind() }),
    };
    let global = batch.global_state.as_ref().ok_or(TrainError::MissingGlobalState)?;
    if let Some(row) = global.iter().find(|r| r.len() != GLOBAL_STATE_DIM) {
        return Err(TrainError::GlobalStateWidth { expected: GLOBAL_STATE_DIM, got: row.len() });
    }

    // Truncation bootstrap from the shared critic on the concatenated
    // post-step observations of terminal rows.
    let mut tail_values = vec![0.0; global.len()];
    for t in 0..global.len() {
        if batch.per_agent.iter().any(|rows| rows.done.get(t) == Some(&true)) {
            let mut next_global = Vec::with_capacity(GLOBAL_STATE_DIM);
            for rows in &batch.per_agent {
                next_global.extend_from_slice(&rows.next_obs[t]);
            }
            tail_values[t] = nn::evaluate(&critic.params, &next_global)?[0];
        }
    }

    // Advantages and return targets from the rollout values, once per
    // batch; normalization is per agent.
    let mut estimates = Vec::with_capacity(batch.per_agent.len());
    for rows in &batch.per_agent {
        if rows.len() != global.len() {
            return Err(TrainError::MissingGlobalState);
        }
        let mut rewards = rows.rewards_extrinsic();
        for t in 0..rows.len() {
            if rows.done[t] {
                rewards[t] += cfg.gamma * tail_values[t];
            }
        }
        let mut est = compute_gae(&rewards, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)?;
        if cfg.normalize_advantages {
            est.normalize(&rows.done);
        }
        estimates.push(est);
    }

    // Pooled critic data in agent-major order: the same global state
    // appears once per agent with that agent's return target.
    let pooled_inputs: Vec<&Vec<f64>> = batch
        .per_agent
        .iter()
        .flat_map(|_| global.iter())
        .collect();
    let pooled_targets: Vec<f64> = estimates.iter().flat_map(|e| e.returns.clone()).collect();

    let mut reports = vec![LossReport::default(); batch.per_agent.len()];
    for epoch in 0..cfg.update_epochs {
        let (critic_loss, mut critic_grads) =
            critic_epoch_grads(&critic.params, &pooled_inputs, &pooled_targets, cfg.value_coef)?;
        if !critic_loss.is_finite() {
            return Err(TrainError::Ppo(ppo::PpoError::NonFiniteLoss {
                what: "value loss",
                epoch,
            }));
        }
        nn::clip_global_norm(&mut critic_grads, cfg.max_grad_norm);
        nn::adam_step(&mut critic.params, &critic_grads, &mut critic.opt, cfg.learning_rate)?;

        for (i, (rows, est)) in batch.per_agent.iter().zip(estimates.iter()).enumerate() {
            let (stats, mut actor_grads) = actor_epoch_grads(
                &learners.actors[i].params,
                &rows.obs,
                &rows.actions,
                &rows.log_prob_old,
                &est.advantages,
                cfg.clip_ratio,
                cfg.entropy_coef,
            )?;
            if !stats.policy_loss.is_finite() {
                return Err(TrainError::Ppo(ppo::PpoError::NonFiniteLoss {
                    what: "policy loss",
                    epoch,
                }));
            }
            nn::clip_global_norm(&mut actor_grads, cfg.max_grad_norm);
            let actor = &mut learners.actors[i];
            nn::adam_step(&mut actor.params, &actor_grads, &mut actor.opt, cfg.learning_rate)?;

            reports[i].policy_loss += stats.policy_loss;
            reports[i].entropy += stats.entropy;
            reports[i].clip_fraction += stats.clip_fraction;
            reports[i].value_loss += critic_loss;
        }
    }
    let e = cfg.update_epochs as f64;
    for r in reports.iter_mut() {
        r.policy_loss /= e;
        r.value_loss /= e;
        r.entropy /= e;
        r.clip_fraction /= e;
    }
    Ok(reports)
}

/// Independent learners plus learnable shaping: actor and critic update
/// exactly as IPPO but on the shaped total reward, then each agent's
/// shaper takes its own step (meta-gradient or regularized naive joint).
pub fn update_dmarl(
    learners: &mut Learners,
    batch: &TrajectoryBatch,
    cfg: &PpoConfig,
    shaper_cfg: &ShaperConfig,
) -> Result<Vec<LossReport>, TrainError> {
    if learners.shapers.is_none() {
        return Err(TrainError::MissingShaper);
    }
    // Snapshot the behavior actors: the meta-gradient's provisional step
    // starts from the parameters that generated the batch, where the
    // stored log-probs give exact unit ratios.
    let actors_before: Vec<_> =
        learners.actors.iter().map(|net| net.params.clone()).collect();

    let critics = match &mut learners.critics {
        CriticBank::PerAgent(c) => c,
        bank => {
            return Err(TrainError::WrongCriticBank { expected: "per-agent", got: bank.kind() })
        }
    };

    let mut reports = Vec::with_capacity(batch.per_agent.len());
    let mut extrinsic_bootstrapped = Vec::with_capacity(batch.per_agent.len());
    for (rows, (actor, critic)) in batch
        .per_agent
        .iter()
        .zip(learners.actors.iter_mut().zip(critics.iter_mut()))
    {
        let extrinsic =
            bootstrap_truncated_rewards(rows.rewards_extrinsic(), rows, &critic.params, cfg.gamma)?;
        let rewards: Vec<f64> =
            extrinsic.iter().zip(&rows.reward_shaped).map(|(e, s)| e + s).collect();
        let report = ppo::run_update(
            rows,
            &rewards,
            &mut actor.params,
            &mut actor.opt,
            &mut critic.params,
            &mut critic.opt,
            cfg,
        )?;
        reports.push(report);
        extrinsic_bootstrapped.push(extrinsic);
    }

    let shapers = learners.shapers.as_mut().expect("checked above");
    for (i, (rows, shaper)) in batch.per_agent.iter().zip(shapers.iter_mut()).enumerate() {
        match shaper_cfg.variant {
            ShaperVariant::MetaGradient => update_shaper_meta(
                shaper,
                &actors_before[i],
                rows,
                &extrinsic_bootstrapped[i],
                cfg,
                shaper_cfg,
            )?,
            ShaperVariant::NaiveJoint => update_shaper_naive(
                shaper,
                &learners.actors[i].params,
                rows,
                &extrinsic_bootstrapped[i],
                cfg,
                shaper_cfg,
            )?,
        }
    }
    Ok(reports)
}
