//! Offline actor-critic runs on the point-reach dataset, dataset generation
//! and checkpoint evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use mfql::checkpoint::load_agent;
use mfql::dataset::{load_dataset, save_dataset, OfflineDataset};
use mfql::env::{
    gen_offline_dataset_stats, rollout_eval, rollout_eval_actor, EvalReport, PointReachEnv,
    PolicyActor,
};
use mfql::meanflow::LossWeighting;
use mfql::qlearning::{train, AlphaScheduleParams, TrainConfig, TrainOutputs};
use mfql::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TRAIN_KEYS: &[&str] = &[
    "variant",
    "alpha0",
    "k",
    "gamma",
    "tau",
    "batch",
    "actor_lr",
    "critic_lr",
    "grad_clip",
    "time_sampler",
    "loss_p",
    "loss_c",
    "total_steps",
    "eval_interval",
    "log_interval",
    "alpha_interval",
    "alpha_window",
    "alpha_threshold_hi",
    "alpha_threshold_lo",
    "alpha_up",
    "alpha_down",
    "seed",
    "actor_hidden",
    "critic_hidden",
    "critic_layer_norm",
    "n_critics",
    "time_embed_dim",
];

pub const RL_EXTRA_KEYS: &[&str] = &["dataset", "eval_episodes", "out_dir"];

/// Builds a [`TrainConfig`] from the keys in [`TRAIN_KEYS`].
pub fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let a = d.alpha_schedule;
    let out = TrainConfig {
        variant: cfg.get("variant", d.variant)?,
        alpha0: cfg.get("alpha0", d.alpha0)?,
        k: cfg.get("k", d.k)?,
        gamma: cfg.get("gamma", d.gamma)?,
        tau: cfg.get("tau", d.tau)?,
        batch: cfg.get("batch", d.batch)?,
        actor_lr: cfg.get("actor_lr", d.actor_lr)?,
        critic_lr: cfg.get("critic_lr", d.critic_lr)?,
        grad_clip: cfg.get("grad_clip", d.grad_clip)?,
        time_sampler: cfg.get("time_sampler", d.time_sampler)?,
        weighting: LossWeighting {
            p: cfg.get("loss_p", d.weighting.p)?,
            c: cfg.get("loss_c", d.weighting.c)?,
        },
        total_steps: cfg.get("total_steps", d.total_steps)?,
        eval_interval: cfg.get("eval_interval", d.eval_interval)?,
        log_interval: cfg.get("log_interval", d.log_interval)?,
        alpha_schedule: AlphaScheduleParams {
            interval: cfg.get("alpha_interval", a.interval)?,
            window: cfg.get("alpha_window", a.window)?,
            threshold_hi: cfg.get("alpha_threshold_hi", a.threshold_hi)?,
            threshold_lo: cfg.get("alpha_threshold_lo", a.threshold_lo)?,
            up: cfg.get("alpha_up", a.up)?,
            down: cfg.get("alpha_down", a.down)?,
        },
        seed: cfg.get("seed", d.seed)?,
        actor_hidden: cfg.get_list("actor_hidden", &d.actor_hidden)?,
        critic_hidden: cfg.get_list("critic_hidden", &d.critic_hidden)?,
        critic_layer_norm: cfg.get_bool("critic_layer_norm", d.critic_layer_norm)?,
        n_critics: cfg.get("n_critics", d.n_critics)?,
        time_embed_dim: cfg.get("time_embed_dim", d.time_embed_dim)?,
    };
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RlConfig {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub eval_episodes: usize,
}

pub const DEFAULT_EVAL_EPISODES: usize = 50;

impl RlConfig {
    pub fn from_run_config(cfg: &RunConfig) -> CliResult<Self> {
        let out = RlConfig {
            train: train_config(cfg)?,
            dataset: cfg.require::<PathBuf>("dataset")?,
            eval_episodes: cfg.get("eval_episodes", DEFAULT_EVAL_EPISODES)?,
        };
        if out.eval_episodes == 0 {
            return Err(CliError::usage(
                "nothing to evaluate: eval_episodes must be at least 1",
            ));
        }
        Ok(out)
    }
}

/// Trains on `dataset` with best-of-K rollouts as the evaluation hook.
pub fn run_rl_on(
    train_cfg: &TrainConfig,
    dataset: &OfflineDataset,
    eval_episodes: usize,
    out_dir: &Path,
) -> Result<TrainOutputs> {
    let env = PointReachEnv::default();
    let k = train_cfg.k;
    train(train_cfg, dataset, out_dir, |state, rng| {
        rollout_eval(&state.policy, &state.critic, &env, eval_episodes, k, rng)
            .map(|r| r.success_rate)
    })
}

pub fn run_rl(cfg: &RlConfig, out_dir: &Path) -> Result<TrainOutputs> {
    let dataset = load_dataset(&cfg.dataset)?;
    run_rl_on(&cfg.train, &dataset, cfg.eval_episodes, out_dir)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Output file; defaults to `dataset.txt` inside the output directory.
    pub path: Option<PathBuf>,
}

pub const GEN_KEYS: &[&str] = &["episodes", "seed", "dataset", "out_dir"];
pub const DATASET_FILE: &str = "dataset.txt";

impl GenConfig {
    pub fn from_run_config(cfg: &RunConfig) -> CliResult<Self> {
        Ok(GenConfig {
            episodes: cfg.get("episodes", 1000)?,
            seed: cfg.get("seed", 0)?,
            path: cfg.get_str("dataset").map(PathBuf::from),
        })
    }
}

/// Generates and saves a behaviour dataset; returns its path, size and the
/// fraction of successful episodes.
pub fn run_gen_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<(PathBuf, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ds, success) =
        gen_offline_dataset_stats(&PointReachEnv::default(), cfg.episodes, &mut rng)?;
    let ds = OfflineDataset::new(
        ds.transitions().to_vec(),
        ds.state_dim(),
        ds.action_dim(),
        Some(cfg.seed),
    )?;
    let path = cfg
        .path
        .clone()
        .unwrap_or_else(|| out_dir.join(DATASET_FILE));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    save_dataset(&ds, &path)?;
    Ok((path, ds.len(), success))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub k: usize,
    pub seed: u64,
}

pub const EVAL_KEYS: &[&str] = &["checkpoint", "episodes", "k", "seed", "out_dir"];

impl EvalConfig {
    pub fn from_run_config(cfg: &RunConfig) -> CliResult<Self> {
        Ok(EvalConfig {
            checkpoint: cfg.require("checkpoint")?,
            episodes: cfg.get("episodes", DEFAULT_EVAL_EPISODES)?,
            k: cfg.get("k", 5)?,
            seed: cfg.get("seed", 0)?,
        })
    }
}

/// Loads a checkpoint and runs best-of-K rollouts. `k = 1` needs no critic.
pub fn run_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.episodes == 0 {
        return Err(Error::Config(
            "nothing to evaluate: episodes must be at least 1".into(),
        ));
    }
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let ckpt = load_agent(&cfg.checkpoint)?;
    let env = PointReachEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match (&ckpt.critic, cfg.k) {
        (Some(critic), k) => rollout_eval(&ckpt.policy, critic, &env, cfg.episodes, k, &mut rng),
        (None, 1) => {
            let actor = PolicyActor {
                policy: &ckpt.policy,
            };
            rollout_eval_actor(&actor, &env, cfg.episodes, &mut rng)
        }
        (None, _) => Err(Error::Config(format!(
            "{} has no critic; best-of-K needs one (use k=1)",
            cfg.checkpoint.display()
        ))),
    }
}
