//! Command-line orchestration: configuration parsing and the experiment
//! commands behind the `mfql` binary.

pub mod config;
pub mod error;
pub mod rl;
pub mod toy;

use std::io::Write;
use std::path::PathBuf;

pub use config::{RunConfig, OUT_ENV};
pub use error::{CliError, CliResult};

macro_rules! say {
    ($log:expr, $($arg:tt)*) => {
        let _ = writeln!($log, $($arg)*);
    };
}

/// The subcommands of `mfql`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TrainToy,
    TrainRl,
    Eval,
    VariantsReport,
    GenDataset,
}

impl Command {
    pub fn allowed_keys(self) -> Vec<&'static str> {
        match self {
            Command::TrainToy | Command::VariantsReport => toy::TOY_KEYS.to_vec(),
            Command::TrainRl => [rl::TRAIN_KEYS, rl::RL_EXTRA_KEYS].concat(),
            Command::Eval => rl::EVAL_KEYS.to_vec(),
            Command::GenDataset => rl::GEN_KEYS.to_vec(),
        }
    }

    fn default_out(self) -> &'static str {
        match self {
            Command::TrainToy => "runs/train-toy",
            Command::TrainRl => "runs/train-rl",
            Command::Eval => "runs/eval",
            Command::VariantsReport => "runs/variants-report",
            Command::GenDataset => "runs/data",
        }
    }
}

/// Runs `cmd` with a fully assembled config. `out_env` is the value of
/// [`OUT_ENV`], if set. Results are written to `log`; write failures such as a
/// closed pipe are ignored.
pub fn execute(
    cmd: Command,
    cfg: &RunConfig,
    out_env: Option<&str>,
    log: &mut dyn Write,
) -> CliResult<()> {
    cfg.check_keys(&cmd.allowed_keys())?;
    let out: PathBuf = cfg.out_dir(out_env, cmd.default_out());
    match cmd {
        Command::TrainToy => {
            let tc = toy::ToyConfig::from_run_config(cfg)?;
            let rep = toy::run_toy(&tc, Some(&out))?;
            for (step, w2) in &rep.w2_curve {
                say!(log, "step {step}: w2 {w2:.4}");
            }
            say!(log, "final w2 {:.4} ({})", rep.final_w2, out.display());
        }
        Command::VariantsReport => {
            let tc = toy::ToyConfig::from_run_config(cfg)?;
            let rows = toy::run_variants(&tc, Some(&out), |r| {
                say!(
                    log,
                    "{:<12} w2 {:.4} ({:.1}s)",
                    r.variant.name(),
                    r.w2,
                    r.wall_seconds
                );
            })?;
            say!(
                log,
                "{} variants written to {}",
                rows.len(),
                out.join(toy::REPORT_FILE).display()
            );
        }
        Command::TrainRl => {
            let rc = rl::RlConfig::from_run_config(cfg)?;
            if !rc.dataset.is_file() {
                return Err(CliError::usage(format!(
                    "dataset {} does not exist",
                    rc.dataset.display()
                )));
            }
            let res = rl::run_rl(&rc, &out)?;
            for row in res.rows.iter().filter(|r| r.eval_success.is_some()) {
                say!(
                    log,
                    "step {}: success {:.3}",
                    row.step,
                    row.eval_success.unwrap_or(f64::NAN)
                );
            }
            say!(log, "metrics in {}", res.metrics_path.display());
        }
        Command::Eval => {
            let ec = rl::EvalConfig::from_run_config(cfg)?;
            let rep = rl::run_eval(&ec)?;
            say!(log, "success_rate {:.4}", rep.success_rate);
            say!(log, "mean_episode_len {:.2}", rep.mean_episode_len);
            say!(log, "bound_loss {:.6}", rep.bound_loss);
        }
        Command::GenDataset => {
            let gc = rl::GenConfig::from_run_config(cfg)?;
            let (path, n, success) = rl::run_gen_dataset(&gc, &out)?;
            say!(
                log,
                "{n} transitions, behaviour success {success:.3}, written to {}",
                path.display()
            );
        }
    }
    Ok(())
}
