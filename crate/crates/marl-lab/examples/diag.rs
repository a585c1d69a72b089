//! Scratch diagnostics for training dynamics (not part of the artifact).

use marl_lab::env;
use marl_lab::nn;
use marl_lab::ppo::compute_gae;
use marl_lab::train::{
    apply_update, collect_episodes, Algorithm, Learners, RolloutCtx, TrainRunConfig,
};

fn main() {
    let algo = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "IPPO".into())
        .parse::<Algorithm>()
        .unwrap();
    let episodes: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let cadence: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = TrainRunConfig {
        episodes,
        episodes_per_update: cadence,
        ..TrainRunConfig::defaults_for(algo)
    };
    let seed = 42;
    let mut learners = Learners::new(&cfg, seed);
    let mut ctx = RolloutCtx::new(seed);
    let updates = cfg.episodes / cfg.episodes_per_update;
    for u in 0..updates {
        let rollout = collect_episodes(&cfg, &learners, cfg.episodes_per_update, &mut ctx).unwrap();
        let reports = apply_update(&mut learners, &rollout.batch, &cfg).unwrap();
        if u % (updates / 10).max(1) == 0 || u == updates - 1 {
            let coverage: f64 = rollout
                .metrics
                .iter()
                .map(|m| m.landmarks_covered_final as f64)
                .sum::<f64>()
                / rollout.metrics.len() as f64;
            let rows = &rollout.batch.per_agent[0];
            let mean_reward: f64 = rollout
                .metrics
                .iter()
                .map(|m| m.mean_agent_total_reward)
                .sum::<f64>()
                / rollout.metrics.len() as f64;
            let est = compute_gae(
                &rows.rewards_extrinsic(),
                &rows.value_old,
                &rows.done,
                cfg.ppo.gamma,
                cfg.ppo.gae_lambda,
            )
            .unwrap();
            let mean_v: f64 = rows.value_old.iter().sum::<f64>() / rows.value_old.len() as f64;
            let mean_ret: f64 = est.returns.iter().sum::<f64>() / est.returns.len() as f64;
            println!(
                "upd {u:4} ep_reward {mean_reward:8.2} cov {coverage:5.2} | V {mean_v:8.2} ret {mean_ret:8.2} | pol {:7.4} vf {:9.2} H {:6.4} clip {:5.3}",
                reports[0].policy_loss, reports[0].value_loss, reports[0].entropy, reports[0].clip_fraction
            );
        }
    }

    // Greedy-policy replay: what did the agents actually learn to do?
    println!("--- greedy replay ---");
    let mut action_counts = [[0usize; 5]; 3];
    for ep in 0..3u64 {
        let mut state = env::reset(&cfg.env, 9_000_000 + ep).unwrap();
        let mut dist_sum = 0.0;
        let mut covered_final = 0;
        for t in 0..cfg.env.max_steps {
            let mut actions = [env::Action::Noop; 3];
            for i in 0..3 {
                let obs = env::observe(&state, i).unwrap();
                let logits = nn::evaluate(&learners.actors[i].params, obs.as_ref()).unwrap();
                let best = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                actions[i] = env::Action::from_index(best).unwrap();
                action_counts[i][best] += 1;
            }
            let (next, out) = env::step(&cfg.env, &state, &actions).unwrap();
            if t == cfg.env.max_steps - 1 {
                dist_sum = -env::distance_reward(&next, cfg.env.distance_semantics);
                covered_final = out.landmarks_covered;
            }
            state = next;
        }
        println!(
            "  ep {ep}: final dist_sum {dist_sum:6.3} covered {covered_final} agents {:?} landmarks {:?}",
            state.agent_pos.map(|p| [(p[0] * 100.0).round() / 100.0, (p[1] * 100.0).round() / 100.0]),
            state.landmark_pos.map(|p| [(p[0] * 100.0).round() / 100.0, (p[1] * 100.0).round() / 100.0]),
        );
    }
    println!("  greedy action counts per agent [noop,-x,+x,-y,+y]: {action_counts:?}");
}
