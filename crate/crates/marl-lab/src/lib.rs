//! A self-contained multi-agent reinforcement-learning laboratory.
//!
//! The crate compares three approaches to cooperative navigation on a
//! Simple-Spread-style particle task (3 agents, 3 landmarks, 25-step
//! episodes):
//!
//! - **MAPPO** — centralized training with decentralized execution: one
//!   shared critic over the concatenated observations, independent actors.
//! - **IPPO** — fully independent PPO learners.
//! - **DMARL-RSA** — independent learners where each agent additionally
//!   trains a reward-shaping network producing a learned per-step bonus.
//!
//! Everything is built on a small hand-rolled f64 MLP engine ([`nn`]) with
//! exact reverse-mode gradients, so training runs are deterministic and
//! reproducible bit-for-bit from a seed. The [`harness`] module runs the
//! experiment protocol, persists per-episode CSV records, and produces
//! Welch-t / Cohen-d comparison summaries ([`stats`]). The [`theory`]
//! module holds executable demonstrations of the coordination barriers
//! (potential-based shaping invariance, Nash-vs-global misalignment,
//! counterfactual action-combination counts, non-stationarity drift).

pub mod env;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod stats;
pub mod theory;
pub mod train;
