//! Offline actor-critic training: Bellman regression with value-guided best-of-K
//! targets, an actor trained on `L_Q + α·L_MFI`, and the adaptive `α` schedule.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_agent, AgentCheckpoint};
use crate::dataset::{Batch, OfflineDataset};
use crate::error::{Error, Result};
use crate::meanflow::{
    action_from_output, gaussian_noise, inference_times, mfi_gradients, LossWeighting, TimeSampler,
    Variant,
};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::mlp::MlpParams;
use crate::nets::{
    policy_backward, policy_forward_cached, polyak_update, CriticEnsemble, PolicyNet, TargetCritic,
    DEFAULT_ACTOR_HIDDEN, DEFAULT_CRITIC_HIDDEN, DEFAULT_TAU, DEFAULT_TIME_EMBED_DIM,
};
use crate::optim::{add_scaled, AdamState};
use crate::tensor::Tensor;

const CRITIC_SEED_SALT: u64 = 0x00c0_ffee;
const RNG_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const EVAL_SEED_SALT: u64 = 0x0e7a_1000_0000_0001;

/// Multiplicative `α` adjustment rule and its cadence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaScheduleParams {
    /// Steps between comparisons.
    pub interval: u64,
    /// Number of recent `L_Q` values kept.
    pub window: usize,
    pub threshold_hi: f64,
    pub threshold_lo: f64,
    pub up: f64,
    pub down: f64,
}

impl Default for AlphaScheduleParams {
    fn default() -> Self {
        AlphaScheduleParams {
            interval: 2000,
            window: 20,
            threshold_hi: 5.0,
            threshold_lo: 0.2,
            up: 1.2,
            down: 0.8,
        }
    }
}

impl AlphaScheduleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.threshold_hi, self.threshold_lo, self.up, self.down]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
        if self.interval == 0 || self.window == 0 || !positive {
            return Err(Error::config(format!(
                "alpha schedule needs positive interval, window, thresholds and factors: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One application of the rule: grow `α` when `l_q` is far above the running
/// mean, shrink it when far below.
pub fn alpha_rule(alpha: f64, l_q: f64, mean: f64, p: &AlphaScheduleParams) -> f64 {
    if l_q > p.threshold_hi * mean {
        p.up * alpha
    } else if l_q < p.threshold_lo * mean {
        p.down * alpha
    } else {
        alpha
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaScheduler {
    alpha: f64,
    history: VecDeque<f64>,
    steps_since_update: u64,
    params: AlphaScheduleParams,
}

impl AlphaScheduler {
    pub fn new(alpha0: f64, params: AlphaScheduleParams) -> Result<Self> {
        params.validate()?;
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(Error::config(format!(
                "alpha0 must be positive, got {alpha0}"
            )));
        }
        Ok(AlphaScheduler {
            alpha: alpha0,
            history: VecDeque::with_capacity(params.window),
            steps_since_update: 0,
            params,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn history(&self) -> &VecDeque<f64> {
        &self.history
    }

    pub fn params(&self) -> &AlphaScheduleParams {
        &self.params
    }

    /// Records `l_q`; every `interval` calls compares it against the mean of the
    /// window and adjusts `α`. Non-finite values are ignored.
    pub fn update(&mut self, l_q: f64) -> f64 {
        if !l_q.is_finite() {
            return self.alpha;
        }
        if self.history.len() == self.params.window {
            self.history.pop_front();
        }
        self.history.push_back(l_q);
        self.steps_since_update += 1;
        if self.steps_since_update >= self.params.interval {
            self.steps_since_update = 0;
            let mean = self.history.iter().sum::<f64>() / self.history.len() as f64;
            let next = alpha_rule(self.alpha, l_q, mean, &self.params);
            if next.is_finite() && next > 0.0 {
                self.alpha = next;
            }
        }
        self.alpha
    }
}

/// Free-function form of [`AlphaScheduler::update`].
pub fn adaptive_alpha_update(sched: &mut AlphaScheduler, l_q: f64) -> f64 {
    sched.update(l_q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub alpha0: f64,
    /// Candidates per state for Bellman targets and evaluation.
    pub k: usize,
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
    pub time_sampler: TimeSampler,
    pub weighting: LossWeighting,
    pub total_steps: u64,
    /// Steps between evaluation hooks; 0 disables them.
    pub eval_interval: u64,
    /// Steps averaged into one metrics row.
    pub log_interval: u64,
    pub alpha_schedule: AlphaScheduleParams,
    pub seed: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_layer_norm: bool,
    pub n_critics: usize,
    pub time_embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::ResidualAt,
            alpha0: 10.0,
            k: 5,
            gamma: 0.99,
            tau: DEFAULT_TAU,
            batch: 256,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            grad_clip: 1.0,
            time_sampler: TimeSampler::Continuous,
            weighting: LossWeighting::default(),
            total_steps: 100_000,
            eval_interval: 10_000,
            log_interval: 1000,
            alpha_schedule: AlphaScheduleParams::default(),
            seed: 0,
            actor_hidden: DEFAULT_ACTOR_HIDDEN.to_vec(),
            critic_hidden: DEFAULT_CRITIC_HIDDEN.to_vec(),
            critic_layer_norm: true,
            n_critics: 2,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("grad_clip", self.grad_clip),
            ("alpha0", self.alpha0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.batch == 0 || self.log_interval == 0 || self.n_critics == 0 {
            return bad("batch, log_interval and n_critics must be positive".into());
        }
        self.time_sampler.validate()?;
        self.weighting.validate()?;
        self.alpha_schedule.validate()
    }
}

/// Running sums for one metrics row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    sums: [f64; 4],
    count: u64,
}

impl MetricsAccumulator {
    pub fn add(&mut self, m: &StepMetrics) {
        for (s, v) in self
            .sums
            .iter_mut()
            .zip([m.loss_mfi, m.loss_q, m.loss_critic, m.bound_loss])
        {
            *s += v;
        }
        self.count += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Averages since the last call; `alpha` is reported as given.
    pub fn take_row(&mut self, step: u64, alpha: f64) -> MetricsRow {
        let n = self.count.max(1) as f64;
        let mean = |k: usize| (self.count > 0).then(|| self.sums[k] / n);
        let row = MetricsRow {
            step,
            loss_mfi: mean(0),
            loss_q: mean(1),
            loss_critic: mean(2),
            alpha: Some(alpha),
            bound_loss: mean(3),
            eval_success: None,
            eval_w2: None,
        };
        *self = MetricsAccumulator::default();
        row
    }
}

/// Per-step training statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_mfi: f64,
    pub loss_q: f64,
    pub loss_critic: f64,
    /// `α` after this step's schedule update.
    pub alpha: f64,
    pub bound_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub policy: PolicyNet,
    pub critic: CriticEnsemble,
    pub target: TargetCritic,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub alpha: AlphaScheduler,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub accumulator: MetricsAccumulator,
}

impl TrainState {
    pub fn new(config: &TrainConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        let policy = PolicyNet::new(
            state_dim,
            action_dim,
            &config.actor_hidden,
            config.time_embed_dim,
            config.variant,
            config.seed,
        )?;
        let critic = CriticEnsemble::new(
            state_dim,
            action_dim,
            &config.critic_hidden,
            config.critic_layer_norm,
            config.n_critics,
            config.seed ^ CRITIC_SEED_SALT,
        )?;
        let target = TargetCritic::from_online(&critic, config.tau);
        Ok(TrainState {
            actor_opt: AdamState::new(&policy, config.actor_lr),
            critic_opt: AdamState::new(&critic, config.critic_lr),
            alpha: AlphaScheduler::new(config.alpha0, config.alpha_schedule)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ RNG_SEED_SALT),
            step: 0,
            accumulator: MetricsAccumulator::default(),
            config: config.clone(),
            policy,
            critic,
            target,
        })
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            step: self.step,
            policy: self.policy.clone(),
            critic: Some(self.critic.clone()),
            target: Some(self.target.clone()),
        }
    }
}

/// Candidates generated by best-of-K selection and their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct BestOfK {
    /// Selected action per state, `[B, A]`.
    pub actions: Tensor,
    /// Aggregate Q of the selected actions, `[B]`.
    pub q: Tensor,
    /// All candidates, row `c·B + i` is candidate `c` for state `i`.
    pub candidates: Tensor,
    /// Aggregate Q per candidate, `[K·B]`.
    pub candidate_q: Tensor,
}

/// Draws `k` one-step actions per state and keeps the one with the highest
/// aggregate Q. Ties go to the lowest candidate index.
pub fn best_of_k_detailed<R: Rng + ?Sized>(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    s: &Tensor,
    k: usize,
    rng: &mut R,
) -> Result<BestOfK> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    let batch = s.rows();
    let ad = policy.action_dim();
    let s_rep = s.repeat_rows(k);
    let e = gaussian_noise(k * batch, ad, rng);
    let candidates = crate::meanflow::one_step_action(policy, &s_rep, &e)?;
    let candidate_q = critic.q_values(&s_rep, &candidates)?;
    let mut best = Vec::with_capacity(batch);
    for i in 0..batch {
        let mut arg = 0;
        for c in 1..k {
            if candidate_q.data()[c * batch + i] > candidate_q.data()[arg * batch + i] {
                arg = c;
            }
        }
        best.push(arg * batch + i);
    }
    let actions = candidates.select_rows(&best)?;
    let q = Tensor::from_raw(
        vec![batch],
        best.iter().map(|&r| candidate_q.data()[r]).collect(),
    );
    Ok(BestOfK {
        actions,
        q,
        candidates,
        candidate_q,
    })
}

pub fn select_best_of_k<R: Rng + ?Sized>(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    s: &Tensor,
    k: usize,
    rng: &mut R,
) -> Result<Tensor> {
    Ok(best_of_k_detailed(policy, critic, s, k, rng)?.actions)
}

/// `y = r + γ·(1 − done)·Q̄(s', a')` with `a'` chosen by best-of-K under the
/// target critic.
pub fn bellman_targets<R: Rng + ?Sized>(
    policy: &PolicyNet,
    target: &CriticEnsemble,
    batch: &Batch,
    gamma: f64,
    k: usize,
    step: u64,
    rng: &mut R,
) -> Result<Tensor> {
    let next = best_of_k_detailed(policy, target, &batch.s_next, k, rng)?;
    let y: Vec<f64> = (0..batch.r.len())
        .map(|i| batch.r.data()[i] + gamma * (1.0 - batch.done.data()[i]) * next.q.data()[i])
        .collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite Bellman target at step {step} (row {i})"
        )));
    }
    Ok(Tensor::from_raw(vec![y.len()], y))
}

/// Mean over batch and members of `(Q_m(s, a) − y)²` and its critic gradient.
pub fn critic_loss_with_targets(
    critic: &CriticEnsemble,
    s: &Tensor,
    a: &Tensor,
    y: &Tensor,
) -> Result<(f64, CriticEnsemble)> {
    let (outs, caches) = critic.forward_members(s, a)?;
    let batch = s.rows();
    if y.len() != batch {
        return Err(Error::shape(format!(
            "{} targets for batch {batch}",
            y.len()
        )));
    }
    let denom = (batch * outs.len()) as f64;
    let mut loss = 0.0;
    let mut dl = Vec::with_capacity(outs.len());
    for q in &outs {
        let d: Vec<f64> = q
            .data()
            .iter()
            .zip(y.data())
            .map(|(qv, yv)| {
                loss += (qv - yv) * (qv - yv);
                2.0 * (qv - yv) / denom
            })
            .collect();
        dl.push(Tensor::from_raw(vec![batch], d));
    }
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::numeric("critic loss is not finite"));
    }
    Ok((loss, critic.backward_members(&caches, &dl)?))
}

#[derive(Clone, Debug)]
pub struct CriticPass {
    pub loss: f64,
    pub grads: CriticEnsemble,
    pub targets: Tensor,
}

#[allow(clippy::too_many_arguments)]
pub fn critic_loss<R: Rng + ?Sized>(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    target: &CriticEnsemble,
    batch: &Batch,
    gamma: f64,
    k: usize,
    step: u64,
    rng: &mut R,
) -> Result<CriticPass> {
    let targets = bellman_targets(policy, target, batch, gamma, k, step, rng)?;
    let (loss, grads) = critic_loss_with_targets(critic, &batch.s, &batch.a, &targets)?;
    Ok(CriticPass {
        loss,
        grads,
        targets,
    })
}

/// Mean over all entries of `max(|a| − 1, 0)`.
pub fn bound_loss(actions: &Tensor) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    actions
        .data()
        .iter()
        .map(|a| (a.abs() - 1.0).max(0.0))
        .sum::<f64>()
        / actions.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorParts {
    pub l_q: f64,
    pub l_mfi: f64,
    pub total: f64,
    /// [`bound_loss`] of the single-sample actions used for `L_Q`.
    pub bound_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ActorPass {
    pub parts: ActorParts,
    pub grads: MlpParams,
    pub actions: Tensor,
}

/// `L_Q + α·L_MFI` and its policy gradient. The critic is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<R: Rng + ?Sized>(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    s: &Tensor,
    a: &Tensor,
    alpha: f64,
    sampler: TimeSampler,
    weighting: LossWeighting,
    rng: &mut R,
) -> Result<ActorPass> {
    let mfi = mfi_gradients(policy, s, a, sampler, weighting, rng)?;

    let batch = s.rows();
    let e = gaussian_noise(batch, policy.action_dim(), rng);
    let (b, t) = inference_times(batch);
    let (g_out, cache) = policy_forward_cached(policy, s, &e, &b, &t)?;
    let actions = action_from_output(policy.variant(), &e, &g_out)?;
    let (q, dq_da) = critic.action_gradient(s, &actions)?;
    let l_q = -q.mean();
    let k = -policy.variant().action_sign() / batch as f64;
    let dl_dg = dq_da.scale(k);
    let mut grads = policy_backward(policy, &cache, &dl_dg)?;
    add_scaled(&mut grads, &mfi.grads, alpha)?;

    let total = l_q + alpha * mfi.loss;
    if !total.is_finite() {
        return Err(Error::numeric("actor loss is not finite"));
    }
    Ok(ActorPass {
        parts: ActorParts {
            l_q,
            l_mfi: mfi.loss,
            total,
            bound_loss: bound_loss(&actions),
        },
        grads,
        actions,
    })
}

/// Critic update, actor update, target averaging, then the `α` schedule.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<StepMetrics> {
    if batch.s.rows() != state.config.batch {
        return Err(Error::shape(format!(
            "batch of {} rows, config expects {}",
            batch.s.rows(),
            state.config.batch
        )));
    }
    let step = state.step + 1;
    let cfg = &state.config;
    let cp = critic_loss(
        &state.policy,
        &state.critic,
        &state.target.critic,
        batch,
        cfg.gamma,
        cfg.k,
        step,
        &mut state.rng,
    )?;
    state
        .critic_opt
        .step(&mut state.critic, &cp.grads, cfg.grad_clip)
        .map_err(|e| step_error(e, step))?;

    let ap = actor_loss(
        &state.policy,
        &state.critic,
        &batch.s,
        &batch.a,
        state.alpha.alpha(),
        cfg.time_sampler,
        cfg.weighting,
        &mut state.rng,
    )
    .map_err(|e| step_error(e, step))?;
    state
        .actor_opt
        .step(state.policy.mlp_mut(), &ap.grads, cfg.grad_clip)
        .map_err(|e| step_error(e, step))?;

    let tau = state.target.tau;
    polyak_update(&mut state.target, &state.critic, tau)?;
    let alpha = state.alpha.update(ap.parts.l_q);
    state.step = step;
    let m = StepMetrics {
        step,
        loss_mfi: ap.parts.l_mfi,
        loss_q: ap.parts.l_q,
        loss_critic: cp.loss,
        alpha,
        bound_loss: ap.parts.bound_loss,
    };
    state.accumulator.add(&m);
    Ok(m)
}

fn step_error(e: Error, step: u64) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Files and final state produced by [`train`].
#[derive(Debug)]
pub struct TrainOutputs {
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.mfql";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("step_{step:08}.mfql"))
}

/// Runs `config.total_steps` updates on uniformly resampled batches.
///
/// `eval` is called every `eval_interval` steps and after the last one with a
/// dedicated RNG stream; its result fills the `eval_success` column. A checkpoint
/// is written at step 0, at every evaluation and at the end.
pub fn train<F>(
    config: &TrainConfig,
    dataset: &OfflineDataset,
    out_dir: &Path,
    mut eval: F,
) -> Result<TrainOutputs>
where
    F: FnMut(&TrainState, &mut ChaCha8Rng) -> Result<f64>,
{
    let mut state = TrainState::new(config, dataset.state_dim(), dataset.action_dim())?;
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_SEED_SALT);
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();

    let save = |state: &TrainState, path: PathBuf, list: &mut Vec<PathBuf>| -> Result<()> {
        save_agent(&path, &state.checkpoint())?;
        list.push(path);
        Ok(())
    };
    save(&state, checkpoint_path(out_dir, 0), &mut checkpoints)?;

    for step in 1..=config.total_steps {
        let batch = dataset.sample_batch(config.batch, &mut state.rng)?;
        train_step(&mut state, &batch)?;
        let last = step == config.total_steps;
        let is_eval = config.eval_interval > 0 && (step % config.eval_interval == 0 || last);
        if is_eval || last || step % config.log_interval == 0 {
            let mut row = state.accumulator.take_row(step, state.alpha.alpha());
            if is_eval {
                let success = eval(&state, &mut eval_rng)?;
                row.eval_success = Some(success);
                save(&state, checkpoint_path(out_dir, step), &mut checkpoints)?;
            }
            writer.write_row(&row)?;
            rows.push(row);
        }
    }
    save(&state, out_dir.join(FINAL_CHECKPOINT), &mut checkpoints)?;
    Ok(TrainOutputs {
        state,
        rows,
        metrics_path,
        checkpoints,
    })
}
