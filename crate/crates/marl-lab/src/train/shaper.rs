//! Reward-shaper evaluation and training.
//!
//! Two update rules are implemented. The default, `meta_gradient`, takes
//! a provisional plain-gradient actor step from the shaped advantages and
//! ascends the extrinsic-only surrogate evaluated under that provisional
//! actor, differentiating through the provisional parameter delta
//! (first-order, optimizer moments held constant). `naive_joint` is the
//! literal minimal reading: the gradient of the actor's policy loss
//! chained through the advantages' dependence on the shaped rewards,
//! plus an output-L2 term that blocks the degenerate reward-inflation
//! fixed point.
//!
//! Both rules push gradients through GAE analytically: the advantage is
//! linear in rewards, so the adjoint is the forward recurrence in
//! [`crate::ppo::gae_reward_adjoint`]. Advantages on the shaper path are
//! deliberately unnormalized; per-batch normalization is a variance
//! device of the actor step, not part of the shaping objective.

use super::{Net, ShaperConfig, TrainError, SHAPER_INPUT_DIM};
use crate::env::{AgentObservation, N_ACTIONS, OBS_DIM};
use crate::nn::{self, ForwardCache, ParamSet};
use crate::ppo::{compute_gae, gae_reward_adjoint, AgentRows, PpoConfig};

/// Shaper input layout: local observation, one-hot action, next local
/// observation.
fn shaper_input(obs: &[f64; OBS_DIM], action: usize, next_obs: &[f64; OBS_DIM]) -> Vec<f64> {
    let mut input = Vec::with_capacity(SHAPER_INPUT_DIM);
    input.extend_from_slice(obs);
    let mut one_hot = [0.0; N_ACTIONS];
    one_hot[action] = 1.0;
    input.extend_from_slice(&one_hot);
    input.extend_from_slice(next_obs);
    input
}

/// The learned per-step reward: `alpha` times the shaper's scalar output
/// on (obs, action, next_obs).
pub fn shaped_reward(
    shaper: &ParamSet,
    obs: &AgentObservation,
    action: usize,
    next_obs: &AgentObservation,
    alpha: f64,
) -> Result<f64, TrainError> {
    if action >= N_ACTIONS {
        return Err(TrainError::InvalidConfig(format!("action id {action} out of range")));
    }
    let input = shaper_input(obs.as_array(), action, next_obs.as_array());
    let out = nn::evaluate(shaper, &input)?;
    Ok(alpha * out[0])
}

/// Fresh shaper outputs and caches for every step of the batch.
fn shaper_forward_all(
    shaper: &ParamSet,
    rows: &AgentRows,
) -> Result<(Vec<f64>, Vec<ForwardCache>), TrainError> {
    let n = rows.len();
    let mut outputs = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for t in 0..n {
        let input = shaper_input(&rows.obs[t], rows.actions[t], &rows.next_obs[t]);
        let (out, cache) = nn::forward(shaper, &input)?;
        outputs.push(out[0]);
        caches.push(cache);
    }
    Ok((outputs, caches))
}

/// Accumulate per-step scalar output gradients into one flat shaper
/// gradient, clip, and take the shaper's Adam step.
fn apply_shaper_gradient(
    shaper: &mut Net,
    caches: &[ForwardCache],
    output_grads: &[f64],
    cfg: &PpoConfig,
    shaper_cfg: &ShaperConfig,
) -> Result<(), TrainError> {
    let mut grads = vec![0.0; shaper.params.param_count()];
    for (cache, &g) in caches.iter().zip(output_grads.iter()) {
        if g == 0.0 {
            continue;
        }
        let (pg, _) = nn::backward(&shaper.params, cache, &[g])?;
        for (acc, p) in grads.iter_mut().zip(pg.iter()) {
            *acc += p;
        }
    }
    nn::clip_global_norm(&mut grads, cfg.max_grad_norm);
    nn::adam_step(&mut shaper.params, &grads, &mut shaper.opt, shaper_cfg.lr)?;
    Ok(())
}

/// First-order meta-gradient step.
///
/// With theta0 the behavior actor, eta the actor learning rate, and
/// A_sh(phi) the (unnormalized) GAE advantages of the shaped reward:
///
/// 1. g_hat(phi) = grad_theta of the policy loss at theta0 under A_sh;
///    with unit ratios this is `-(1/T) sum_t A_sh[t] * u_t`,
///    `u_t = grad_theta log pi(a_t | s_t)`.
/// 2. theta' = theta0 - eta * g_hat (provisional step).
/// 3. J_ext(theta') = (1/T) sum_t ratio'_t * A_ext[t], the
///    importance-weighted extrinsic surrogate; v = grad_theta' J_ext.
/// 4. d J_ext / d phi = (eta/T) sum_t (u_t . v) * dA_sh[t]/dphi, which
///    flows through the GAE adjoint onto the shaper outputs.
///
/// The shaper ascends J_ext.
pub(super) fn update_shaper_meta(
    shaper: &mut Net,
    actor_before: &ParamSet,
    rows: &AgentRows,
    extrinsic: &[f64],
    cfg: &PpoConfig,
    shaper_cfg: &ShaperConfig,
) -> Result<(), TrainError> {
    let n = rows.len();
    if n == 0 {
        return Ok(());
    }
    let n_f = n as f64;
    let (outputs, caches) = shaper_forward_all(&shaper.params, rows)?;

    let shaped: Vec<f64> = extrinsic
        .iter()
        .zip(outputs.iter())
        .map(|(e, r)| e + shaper_cfg.alpha * r)
        .collect();
    let est_shaped = compute_gae(&shaped, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)?;
    let est_ext = compute_gae(extrinsic, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)?;

    // Per-step score gradients u_t at theta0 and the provisional-step
    // direction g_hat.
    let mut score_grads = Vec::with_capacity(n);
    let mut g_hat = vec![0.0; actor_before.param_count()];
    for t in 0..n {
        let (logits, cache) = nn::forward(actor_before, &rows.obs[t])?;
        let probs = nn::softmax(&logits);
        let mut dlogits = vec![0.0; N_ACTIONS];
        for k in 0..N_ACTIONS {
            let indicator = if k == rows.actions[t] { 1.0 } else { 0.0 };
            dlogits[k] = indicator - probs[k];
        }
        let (u_t, _) = nn::backward(actor_before, &cache, &dlogits)?;
        for (g, u) in g_hat.iter_mut().zip(u_t.iter()) {
            *g -= est_shaped.advantages[t] * u / n_f;
        }
        score_grads.push(u_t);
    }

    let eta = cfg.learning_rate;
    let mut provisional = actor_before.clone();
    for (p, g) in provisional.as_flat_mut().iter_mut().zip(g_hat.iter()) {
        *p -= eta * g;
    }

    // v = gradient of the extrinsic surrogate at the provisional actor.
    let mut v = vec![0.0; actor_before.param_count()];
    for t in 0..n {
        let (logits, cache) = nn::forward(&provisional, &rows.obs[t])?;
        let log_probs = nn::log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let ratio = (log_probs[rows.actions[t]] - rows.log_prob_old[t]).exp();
        let coeff = est_ext.advantages[t] * ratio / n_f;
        let mut dlogits = vec![0.0; N_ACTIONS];
        for k in 0..N_ACTIONS {
            let indicator = if k == rows.actions[t] { 1.0 } else { 0.0 };
            dlogits[k] = coeff * (indicator - probs[k]);
        }
        let (pg, _) = nn::backward(&provisional, &cache, &dlogits)?;
        for (acc, p) in v.iter_mut().zip(pg.iter()) {
            *acc += p;
        }
    }

    // dJ_ext/dA_sh[t] = (eta/T) (u_t . v); adjoint through GAE gives
    // dJ_ext/dr[k], and dr/dR = alpha. Ascent means minimizing -J_ext.
    let advantage_grads: Vec<f64> = score_grads
        .iter()
        .map(|u_t| eta / n_f * u_t.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let reward_grads = gae_reward_adjoint(&advantage_grads, &rows.done, cfg.gamma, cfg.gae_lambda);
    let output_grads: Vec<f64> =
        reward_grads.iter().map(|b| -shaper_cfg.alpha * b).collect();
    apply_shaper_gradient(shaper, &caches, &output_grads, cfg, shaper_cfg)
}

/// Regularized naive joint step: minimize the actor's clipped policy loss
/// as a function of the shaper outputs (advantages recomputed with the
/// current shaper, values and ratios from the current actor), plus
/// `output_l2_coef * mean(R^2)`.
pub(super) fn update_shaper_naive(
    shaper: &mut Net,
    actor: &ParamSet,
    rows: &AgentRows,
    extrinsic: &[f64],
    cfg: &PpoConfig,
    shaper_cfg: &ShaperConfig,
) -> Result<(), TrainError> {
    let n = rows.len();
    if n == 0 {
        return Ok(());
    }
    let n_f = n as f64;
    let (outputs, caches) = shaper_forward_all(&shaper.params, rows)?;
    let shaped: Vec<f64> = extrinsic
        .iter()
        .zip(outputs.iter())
        .map(|(e, r)| e + shaper_cfg.alpha * r)
        .collect();
    let est = compute_gae(&shaped, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)?;

    // dL/dA_t of the clipped surrogate at the current actor: the active
    // branch's ratio coefficient, negated.
    let mut advantage_grads = Vec::with_capacity(n);
    for t in 0..n {
        let logits = nn::evaluate(actor, &rows.obs[t])?;
        let ratio = (nn::log_prob_of(&logits, rows.actions[t]) - rows.log_prob_old[t]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let a = est.advantages[t];
        let active = if ratio * a <= clipped * a { ratio } else { clipped };
        advantage_grads.push(-active / n_f);
    }
    let reward_grads = gae_reward_adjoint(&advantage_grads, &rows.done, cfg.gamma, cfg.gae_lambda);
    let output_grads: Vec<f64> = reward_grads
        .iter()
        .zip(outputs.iter())
        .map(|(b, r)| shaper_cfg.alpha * b + shaper_cfg.output_l2_coef * 2.0 * r / n_f)
        .collect();
    apply_shaper_gradient(shaper, &caches, &output_grads, cfg, shaper_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params_mixed, InitScheme};
    use crate::train::{actor_spec, shaper_spec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fresh_shaper(seed: u64) -> Net {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Net::new(init_params_mixed(
            &shaper_spec(),
            InitScheme::OrthogonalSqrt2,
            InitScheme::OrthogonalSqrt2,
            &mut rng,
        ))
    }

    fn fresh_actor(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params_mixed(
            &actor_spec(),
            InitScheme::OrthogonalSqrt2,
            InitScheme::OrthogonalSmall,
            &mut rng,
        )
    }

    /// One-step bandit batch: fixed context, per-step rewards chosen by
    /// the sampled arm.
    fn bandit_rows(actor: &ParamSet, shaper: &ParamSet, alpha: f64, episodes: usize, seed: u64) -> AgentRows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = AgentRows::default();
        let obs = [0.3f64; OBS_DIM];
        for _ in 0..episodes {
            let logits = nn::evaluate(actor, &obs).unwrap();
            let (action, lp) = nn::sample_categorical(&logits, &mut rng).unwrap();
            // Arm 2 pays 1, everything else pays 0.
            let reward = if action == 2 { 1.0 } else { 0.0 };
            let shaped = shaped_reward(
                shaper,
                &AgentObservation(obs),
                action,
                &AgentObservation(obs),
                alpha,
            )
            .unwrap();
            rows.obs.push(obs);
            rows.next_obs.push(obs);
            rows.actions.push(action);
            rows.log_prob_old.push(lp);
            rows.value_old.push(0.0);
            rows.reward_env.push(reward);
            rows.reward_heuristic.push(0.0);
            rows.reward_shaped.push(shaped);
            rows.done.push(true);
        }
        rows
    }

    /// Extrinsic surrogate after a provisional plain-gradient actor step
    /// from the shaped advantages.
    fn extrinsic_surrogate_after_provisional(
        actor: &ParamSet,
        shaper: &ParamSet,
        rows: &AgentRows,
        cfg: &PpoConfig,
        alpha: f64,
    ) -> f64 {
        let n = rows.len() as f64;
        let extrinsic = rows.rewards_extrinsic();
        let shaped: Vec<f64> = extrinsic
            .iter()
            .zip(rows.obs.iter().zip(rows.actions.iter()).zip(rows.next_obs.iter()))
            .map(|(e, ((obs, &a), next))| {
                e + shaped_reward(
                    shaper,
                    &AgentObservation(*obs),
                    a,
                    &AgentObservation(*next),
                    alpha,
                )
                .unwrap()
            })
            .collect();
        let est_sh = compute_gae(&shaped, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda).unwrap();
        let est_ext =
            compute_gae(&extrinsic, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda).unwrap();

        let mut g_hat = vec![0.0; actor.param_count()];
        for t in 0..rows.len() {
            let (logits, cache) = nn::forward(actor, &rows.obs[t]).unwrap();
            let probs = nn::softmax(&logits);
            let mut dlogits = vec![0.0; N_ACTIONS];
            for k in 0..N_ACTIONS {
                let ind = if k == rows.actions[t] { 1.0 } else { 0.0 };
                dlogits[k] = ind - probs[k];
            }
            let (u, _) = nn::backward(actor, &cache, &dlogits).unwrap();
            for (g, ui) in g_hat.iter_mut().zip(u.iter()) {
                *g -= est_sh.advantages[t] * ui / n;
            }
        }
        let mut provisional = actor.clone();
        for (p, g) in provisional.as_flat_mut().iter_mut().zip(g_hat.iter()) {
            *p -= cfg.learning_rate * g;
        }
        (0..rows.len())
            .map(|t| {
                let logits = nn::evaluate(&provisional, &rows.obs[t]).unwrap();
                let ratio =
                    (nn::log_prob_of(&logits, rows.actions[t]) - rows.log_prob_old[t]).exp();
                ratio * est_ext.advantages[t] / n
            })
            .sum()
    }

    /// The meta-gradient step moves the shaper in a direction that
    /// improves the extrinsic surrogate under the provisional actor step.
    #[test]
    fn meta_gradient_sign_check_on_bandit() {
        let cfg = PpoConfig::default();
        let shaper_cfg = ShaperConfig { lr: 1e-3, ..ShaperConfig::default() };
        let actor = fresh_actor(101);
        let mut shaper = fresh_shaper(102);
        let rows = bandit_rows(&actor, &shaper.params, shaper_cfg.alpha, 64, 103);

        let before = extrinsic_surrogate_after_provisional(
            &actor,
            &shaper.params,
            &rows,
            &cfg,
            shaper_cfg.alpha,
        );
        // Several shaper steps on the same bandit batch to get a clear
        // movement out of the first Adam step's unit-scale normalization.
        for _ in 0..25 {
            update_shaper_meta(&mut shaper, &actor, &rows, &rows.rewards_extrinsic(), &cfg, &shaper_cfg).unwrap();
        }
        let after = extrinsic_surrogate_after_provisional(
            &actor,
            &shaper.params,
            &rows,
            &cfg,
            shaper_cfg.alpha,
        );
        assert!(
            after > before,
            "extrinsic surrogate did not improve: before={before} after={after}"
        );
    }

    /// Finite-difference check of the naive chain rule on a tiny batch:
    /// perturbing shaper parameters changes the actor policy loss in the
    /// direction the analytic shaper gradient predicts.
    #[test]
    fn naive_joint_gradient_matches_finite_difference_loss_change() {
        let cfg = PpoConfig::default();
        let shaper_cfg = ShaperConfig {
            variant: crate::train::ShaperVariant::NaiveJoint,
            output_l2_coef: 0.0,
            lr: 1e-4,
            ..ShaperConfig::default()
        };
        let actor = fresh_actor(201);
        let shaper = fresh_shaper(202);
        let rows = bandit_rows(&actor, &shaper.params, shaper_cfg.alpha, 16, 203);

        let policy_loss = |sh: &ParamSet| -> f64 {
            let extrinsic = rows.rewards_extrinsic();
            let shaped: Vec<f64> = extrinsic
                .iter()
                .zip(rows.obs.iter().zip(rows.actions.iter()).zip(rows.next_obs.iter()))
                .map(|(e, ((obs, &a), next))| {
                    e + shaped_reward(
                        sh,
                        &AgentObservation(*obs),
                        a,
                        &AgentObservation(*next),
                        shaper_cfg.alpha,
                    )
                    .unwrap()
                })
                .collect();
            let est =
                compute_gae(&shaped, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda)
                    .unwrap();
            (0..rows.len())
                .map(|t| {
                    let logits = nn::evaluate(&actor, &rows.obs[t]).unwrap();
                    crate::ppo::ppo_policy_objective(
                        nn::log_prob_of(&logits, rows.actions[t]),
                        rows.log_prob_old[t],
                        est.advantages[t],
                        cfg.clip_ratio,
                    )
                    .0
                })
                .sum::<f64>()
                / rows.len() as f64
        };

        // Analytic gradient, reconstructed exactly as update_shaper_naive
        // assembles it (without the optimizer step).
        let (outputs, caches) = shaper_forward_all(&shaper.params, &rows).unwrap();
        let extrinsic = rows.rewards_extrinsic();
        let shaped: Vec<f64> = extrinsic
            .iter()
            .zip(outputs.iter())
            .map(|(e, r)| e + shaper_cfg.alpha * r)
            .collect();
        let est =
            compute_gae(&shaped, &rows.value_old, &rows.done, cfg.gamma, cfg.gae_lambda).unwrap();
        let mut advantage_grads = Vec::new();
        for t in 0..rows.len() {
            let logits = nn::evaluate(&actor, &rows.obs[t]).unwrap();
            let ratio =
                (nn::log_prob_of(&logits, rows.actions[t]) - rows.log_prob_old[t]).exp();
            let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
            let a = est.advantages[t];
            let active = if ratio * a <= clipped * a { ratio } else { clipped };
            advantage_grads.push(-active / rows.len() as f64);
        }
        let reward_grads =
            gae_reward_adjoint(&advantage_grads, &rows.done, cfg.gamma, cfg.gae_lambda);
        let mut analytic = vec![0.0; shaper.params.param_count()];
        for (t, cache) in caches.iter().enumerate() {
            let (pg, _) =
                nn::backward(&shaper.params, cache, &[shaper_cfg.alpha * reward_grads[t]])
                    .unwrap();
            for (a, p) in analytic.iter_mut().zip(pg.iter()) {
                *a += p;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(204);
        let h = 1e-5;
        for _ in 0..20 {
            let i = rng.gen_range(0..shaper.params.param_count());
            let mut plus = shaper.params.clone();
            plus.as_flat_mut()[i] += h;
            let mut minus = shaper.params.clone();
            minus.as_flat_mut()[i] -= h;
            let fd = (policy_loss(&plus) - policy_loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-3,
                "param {i}: fd={fd} analytic={}",
                analytic[i]
            );
        }
    }

    #[test]
    fn shaper_updates_leave_other_nets_untouched_and_are_deterministic() {
        let cfg = PpoConfig::default();
        let shaper_cfg = ShaperConfig::default();
        let actor = fresh_actor(301);
        let run = || {
            let mut shaper = fresh_shaper(302);
            let rows = bandit_rows(&actor, &shaper.params, 1.0, 8, 303);
            update_shaper_meta(&mut shaper, &actor, &rows, &rows.rewards_extrinsic(), &cfg, &shaper_cfg).unwrap();
            shaper.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_alpha_meta_step_only_moves_via_zero_gradient() {
        // With alpha = 0 the advantage has no shaper dependence, so the
        // meta gradient is exactly zero and Adam leaves the shaper alone.
        let cfg = PpoConfig::default();
        let shaper_cfg = ShaperConfig { alpha: 0.0, ..ShaperConfig::default() };
        let actor = fresh_actor(401);
        let mut shaper = fresh_shaper(402);
        let before = shaper.params.clone();
        let rows = bandit_rows(&actor, &shaper.params, 0.0, 8, 403);
        update_shaper_meta(&mut shaper, &actor, &rows, &rows.rewards_extrinsic(), &cfg, &shaper_cfg).unwrap();
        assert_eq!(shaper.params, before);
    }

    #[test]
    fn one_hot_layout() {
        let obs = [1.0; OBS_DIM];
        let next = [2.0; OBS_DIM];
        let input = shaper_input(&obs, 3, &next);
        assert_eq!(input.len(), SHAPER_INPUT_DIM);
        assert_eq!(&input[..OBS_DIM], &obs);
        assert_eq!(&input[OBS_DIM..OBS_DIM + N_ACTIONS], &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&input[OBS_DIM + N_ACTIONS..], &next);
    }
}
