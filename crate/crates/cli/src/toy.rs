//! Unconditional MFI training of the policy head on a 2-D toy density.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mfql::checkpoint::{save_agent, AgentCheckpoint};
use mfql::meanflow::{gaussian_noise, mfi_gradients, one_step_action, LossWeighting};
use mfql::metrics::{wasserstein2, MetricsRow, MetricsWriter, SampleSet};
use mfql::nets::PolicyNet;
use mfql::optim::AdamState;
use mfql::toy::{sample_toy, ToyDistribution};
use mfql::{Error, Result, Tensor, TimeSampler, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliResult;

/// The toy head sees a constant zero state of this width.
pub const TOY_STATE_DIM: usize = 1;
const EVAL_SEED_SALT: u64 = 0x7017_5a3b_1e5e_ed00;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub variant: Variant,
    pub dist: ToyDistribution,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub time_sampler: TimeSampler,
    pub weighting: LossWeighting,
    pub seed: u64,
    /// Points generated and drawn from the target for each W2 evaluation.
    pub eval_samples: usize,
    /// Steps at which samples are dumped and W2 is logged; the final step is
    /// always evaluated.
    pub dump_steps: Vec<u64>,
    pub log_interval: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            variant: Variant::ResidualAt,
            dist: ToyDistribution::Checkerboard4x4,
            steps: 30_000,
            batch: 256,
            lr: 1e-3,
            grad_clip: 1.0,
            hidden: vec![64, 64, 64],
            time_embed_dim: 16,
            time_sampler: TimeSampler::Continuous,
            weighting: LossWeighting::default(),
            seed: 0,
            eval_samples: 512,
            dump_steps: vec![0, 10_000, 20_000, 30_000],
            log_interval: 1000,
        }
    }
}

pub const TOY_KEYS: &[&str] = &[
    "variant",
    "dist",
    "steps",
    "batch",
    "lr",
    "grad_clip",
    "hidden",
    "time_embed_dim",
    "time_sampler",
    "loss_p",
    "loss_c",
    "seed",
    "eval_samples",
    "dump_steps",
    "log_interval",
    "out_dir",
];

impl ToyConfig {
    pub fn from_run_config(cfg: &RunConfig) -> CliResult<Self> {
        let d = ToyConfig::default();
        let out = ToyConfig {
            variant: cfg.get("variant", d.variant)?,
            dist: cfg.get("dist", d.dist)?,
            steps: cfg.get("steps", d.steps)?,
            batch: cfg.get("batch", d.batch)?,
            lr: cfg.get("lr", d.lr)?,
            grad_clip: cfg.get("grad_clip", d.grad_clip)?,
            hidden: cfg.get_list("hidden", &d.hidden)?,
            time_embed_dim: cfg.get("time_embed_dim", d.time_embed_dim)?,
            time_sampler: cfg.get("time_sampler", d.time_sampler)?,
            weighting: LossWeighting {
                p: cfg.get("loss_p", d.weighting.p)?,
                c: cfg.get("loss_c", d.weighting.c)?,
            },
            seed: cfg.get("seed", d.seed)?,
            eval_samples: cfg.get("eval_samples", d.eval_samples)?,
            dump_steps: cfg.get_list("dump_steps", &d.dump_steps)?,
            log_interval: cfg.get("log_interval", d.log_interval)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.eval_samples == 0 || self.log_interval == 0 {
            return Err(Error::Config(
                "batch, eval_samples and log_interval must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("lr and grad_clip must be positive".into()));
        }
        self.time_sampler.validate()?;
        self.weighting.validate()
    }
}

#[derive(Clone, Debug)]
pub struct ToyReport {
    pub final_w2: f64,
    /// `(step, W2)` for every evaluation, in step order.
    pub w2_curve: Vec<(u64, f64)>,
    pub rows: Vec<MetricsRow>,
    pub policy: PolicyNet,
    pub wall_seconds: f64,
}

pub const TOY_METRICS_FILE: &str = "metrics.csv";
pub const TOY_FINAL_CHECKPOINT: &str = "final.mfql";

pub fn samples_file(step: u64) -> String {
    format!("samples_step_{step:08}.csv")
}

/// Writes points as CSV with one `a0,a1,...` header line.
pub fn write_points(path: &Path, points: &Tensor) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut text = (0..points.cols())
        .map(|j| format!("a{j}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push('\n');
    for i in 0..points.rows() {
        let row: Vec<String> = points.row(i).iter().map(|x| x.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// Generates `n` one-step samples from the toy head.
pub fn generate(policy: &PolicyNet, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let e = gaussian_noise(n, policy.action_dim(), rng);
    one_step_action(policy, &Tensor::zeros(&[n, TOY_STATE_DIM]), &e)
}

/// Trains the head with the MFI loss alone. When `out_dir` is given, writes the
/// metrics CSV, a sample dump per evaluation and the final policy.
pub fn run_toy(cfg: &ToyConfig, out_dir: Option<&Path>) -> Result<ToyReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut policy = PolicyNet::new(
        TOY_STATE_DIM,
        2,
        &cfg.hidden,
        cfg.time_embed_dim,
        cfg.variant,
        cfg.seed,
    )?;
    let mut opt = AdamState::new(&policy, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_SALT);
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
            Some(MetricsWriter::create(&dir.join(TOY_METRICS_FILE))?)
        }
        None => None,
    };
    let zeros = Tensor::zeros(&[cfg.batch, TOY_STATE_DIM]);
    let mut rows = Vec::new();
    let mut w2_curve = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0u64);

    for step in 0..=cfg.steps {
        if step > 0 {
            let a = sample_toy(cfg.dist, cfg.batch, &mut rng)?;
            let pass = mfi_gradients(
                &policy,
                &zeros,
                &a,
                cfg.time_sampler,
                cfg.weighting,
                &mut rng,
            )
            .map_err(|e| at_step(step, e))?;
            opt.step(policy.mlp_mut(), &pass.grads, cfg.grad_clip)
                .map_err(|e| at_step(step, e))?;
            loss_sum += pass.loss;
            loss_count += 1;
        }
        let is_eval = step == cfg.steps || cfg.dump_steps.contains(&step);
        let is_log = step > 0 && step % cfg.log_interval == 0;
        if !(is_eval || is_log) {
            continue;
        }
        let mut row = MetricsRow::new(step);
        if loss_count > 0 {
            row.loss_mfi = Some(loss_sum / loss_count as f64);
            (loss_sum, loss_count) = (0.0, 0);
        }
        if is_eval {
            let gen = generate(&policy, cfg.eval_samples, &mut eval_rng)?;
            let truth = sample_toy(cfg.dist, cfg.eval_samples, &mut eval_rng)?;
            if let Some(dir) = out_dir {
                write_points(&dir.join(samples_file(step)), &gen)?;
            }
            let w2 = wasserstein2(&SampleSet::new(gen)?, &SampleSet::new(truth)?)
                .map_err(|e| at_step(step, e))?;
            row.eval_w2 = Some(w2);
            w2_curve.push((step, w2));
        }
        if let Some(w) = writer.as_mut() {
            w.write_row(&row)?;
        }
        rows.push(row);
    }
    if let Some(dir) = out_dir {
        let ckpt = AgentCheckpoint {
            step: cfg.steps,
            policy: policy.clone(),
            critic: None,
            target: None,
        };
        save_agent(&dir.join(TOY_FINAL_CHECKPOINT), &ckpt)?;
    }
    let final_w2 = w2_curve.last().map(|&(_, w)| w).unwrap_or(f64::NAN);
    Ok(ToyReport {
        final_w2,
        w2_curve,
        rows,
        policy,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
        other => other,
    }
}

/// One line of the variants report.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantRow {
    pub variant: Variant,
    pub w2: f64,
    pub wall_seconds: f64,
}

pub const REPORT_FILE: &str = "variants_report.csv";
pub const REPORT_HEADER: &str = "variant,w2,wall_seconds";

/// Trains every variant with the same budget and seed. Each run writes its
/// artifacts under `out_dir/<variant>/`.
pub fn run_variants(
    base: &ToyConfig,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&VariantRow),
) -> Result<Vec<VariantRow>> {
    let mut out = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let cfg = ToyConfig {
            variant: v,
            ..base.clone()
        };
        let dir = out_dir.map(|d| d.join(v.name()));
        let rep = run_toy(&cfg, dir.as_deref())?;
        let row = VariantRow {
            variant: v,
            w2: rep.final_w2,
            wall_seconds: rep.wall_seconds,
        };
        progress(&row);
        out.push(row);
    }
    if let Some(dir) = out_dir {
        let mut text = String::from(REPORT_HEADER);
        text.push('\n');
        for r in &out {
            text.push_str(&format!(
                "{},{},{:.3}\n",
                r.variant.name(),
                r.w2,
                r.wall_seconds
            ));
        }
        let path = dir.join(REPORT_FILE);
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(out)
}
