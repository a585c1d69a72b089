//! Experiment spec files: plain `key = value` lines with `#` comments.
//! Every key is type-checked up front and unknown keys are errors, so a
//! bad override fails before any run starts.

use super::{ExperimentSpec, HarnessError};
use crate::train::{Algorithm, TrainRunConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn parse_err(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Parse(format!("line {line}: {msg}"))
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|item| item.trim())
        .filter(|item| !item.is_empty())
        .map(|item| item.parse::<T>().map_err(|e| format!("`{item}`: {e}")))
        .collect()
}

fn parse_one<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", value.trim()))
}

/// Parse the spec text. Keys:
///
/// - `algorithms`, `seeds`, `episodes`, `episodes_per_update`,
///   `final_window`, `smoke`, `record_timing`, `out`, `init`
/// - `env.*` physical parameters and `env.distance_semantics`
/// - `ppo.*` shared PPO settings (applied to every algorithm)
/// - `mappo.learning_rate` / `mappo.update_epochs` (and `ippo.`,
///   `dmarl.`) for per-algorithm overrides
/// - `shaper.alpha`, `shaper.lr`, `shaper.variant`, `shaper.output_l2_coef`
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, HarnessError> {
    let mut algorithms: Vec<Algorithm> = Algorithm::ALL.to_vec();
    let mut seeds: Vec<u64> = vec![42, 123, 999];
    let mut episodes: usize = 5000;
    let mut episodes_per_update: usize = 10;
    let mut final_window: usize = super::summary::DEFAULT_FINAL_WINDOW;
    let mut smoke_mode = false;
    let mut record_timing = false;
    let mut out_dir: PathBuf = PathBuf::from("runs");
    let mut configs: BTreeMap<Algorithm, TrainRunConfig> = Algorithm::ALL
        .iter()
        .map(|&a| (a, TrainRunConfig::defaults_for(a)))
        .collect();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let fail = |msg: String| parse_err(lineno, format!("{key}: {msg}"));

        match key {
            "algorithms" => algorithms = parse_list(value).map_err(fail)?,
            "seeds" => seeds = parse_list(value).map_err(fail)?,
            "episodes" => episodes = parse_one(value).map_err(fail)?,
            "episodes_per_update" => episodes_per_update = parse_one(value).map_err(fail)?,
            "final_window" => final_window = parse_one(value).map_err(fail)?,
            "smoke" => smoke_mode = parse_one(value).map_err(fail)?,
            "record_timing" => record_timing = parse_one(value).map_err(fail)?,
            "out" => out_dir = PathBuf::from(value),
            "init" => {
                let style = parse_one(value).map_err(fail)?;
                for cfg in configs.values_mut() {
                    cfg.init = style;
                }
            }
            _ if key.starts_with("env.") => {
                for cfg in configs.values_mut() {
                    apply_env_key(&mut cfg.env, &key[4..], value)
                        .map_err(|m| parse_err(lineno, format!("{key}: {m}")))?;
                }
            }
            _ if key.starts_with("ppo.") => {
                for cfg in configs.values_mut() {
                    apply_ppo_key(&mut cfg.ppo, &key[4..], value)
                        .map_err(|m| parse_err(lineno, format!("{key}: {m}")))?;
                }
            }
            _ if key.starts_with("shaper.") => {
                for cfg in configs.values_mut() {
                    apply_shaper_key(&mut cfg.shaper, &key[7..], value)
                        .map_err(|m| parse_err(lineno, format!("{key}: {m}")))?;
                }
            }
            _ if key.starts_with("mappo.") || key.starts_with("ippo.") || key.starts_with("dmarl.") => {
                let (prefix, field) = key.split_once('.').expect("checked prefix");
                let algo: Algorithm = prefix.parse().expect("known prefix");
                let cfg = configs.get_mut(&algo).expect("all algorithms present");
                match field {
                    "learning_rate" => {
                        cfg.ppo.learning_rate = parse_one(value).map_err(fail)?;
                        cfg.shaper.lr = cfg.ppo.learning_rate / 2.0;
                    }
                    "update_epochs" => cfg.ppo.update_epochs = parse_one(value).map_err(fail)?,
                    other => {
                        return Err(parse_err(lineno, format!("unknown key `{prefix}.{other}`")))
                    }
                }
            }
            other => return Err(parse_err(lineno, format!("unknown key `{other}`"))),
        }
    }

    if algorithms.is_empty() {
        return Err(HarnessError::Parse("algorithms must be non-empty".into()));
    }
    algorithms.sort();
    algorithms.dedup();
    if seeds.is_empty() {
        return Err(HarnessError::Parse("seeds must be non-empty".into()));
    }
    for cfg in configs.values_mut() {
        cfg.episodes = episodes;
        cfg.seeds = seeds.clone();
        cfg.episodes_per_update = episodes_per_update;
        cfg.validate().map_err(|e| HarnessError::Parse(e.to_string()))?;
    }

    Ok(ExperimentSpec {
        algorithms,
        seeds,
        episodes,
        final_window,
        smoke_mode,
        record_timing,
        out_dir,
        configs,
    })
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text).map_err(|e| match e {
        HarnessError::Parse(msg) => HarnessError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn apply_env_key(env: &mut crate::env::EnvConfig, field: &str, value: &str) -> Result<(), String> {
    match field {
        "max_steps" => env.max_steps = parse_one(value)?,
        "dt" => env.dt = parse_one(value)?,
        "damping" => env.damping = parse_one(value)?,
        "accel" => env.accel = parse_one(value)?,
        "agent_radius" => env.agent_radius = parse_one(value)?,
        "landmark_radius" => env.landmark_radius = parse_one(value)?,
        "coverage_threshold" => env.coverage_threshold = parse_one(value)?,
        "contact_force" => env.contact_force = parse_one(value)?,
        "contact_margin" => env.contact_margin = parse_one(value)?,
        "distance_semantics" => env.distance_semantics = parse_one(value)?,
        other => return Err(format!("unknown key `env.{other}`")),
    }
    Ok(())
}

fn apply_ppo_key(ppo: &mut crate::ppo::PpoConfig, field: &str, value: &str) -> Result<(), String> {
    match field {
        "gamma" => ppo.gamma = parse_one(value)?,
        "gae_lambda" => ppo.gae_lambda = parse_one(value)?,
        "clip_ratio" => ppo.clip_ratio = parse_one(value)?,
        "entropy_coef" => ppo.entropy_coef = parse_one(value)?,
        "value_coef" => ppo.value_coef = parse_one(value)?,
        "max_grad_norm" => ppo.max_grad_norm = parse_one(value)?,
        "normalize_advantages" => ppo.normalize_advantages = parse_one(value)?,
        other => return Err(format!("unknown key `ppo.{other}`")),
    }
    Ok(())
}

fn apply_shaper_key(
    shaper: &mut crate::train::ShaperConfig,
    field: &str,
    value: &str,
) -> Result<(), String> {
    match field {
        "alpha" => shaper.alpha = parse_one(value)?,
        "lr" => shaper.lr = parse_one(value)?,
        "variant" => shaper.variant = parse_one(value)?,
        "output_l2_coef" => shaper.output_l2_coef = parse_one(value)?,
        other => return Err(format!("unknown key `shaper.{other}`")),
    }
    Ok(())
}
