//! MeanFlow identity targets for every residual reformulation, the adaptively
//! weighted regression loss, time sampling, and one-step inference.
//!
//! Every variant writes the network output as `g = φ(a_t, b, t) − u(a_t, b, t)`
//! for a fixed `φ`, and the network *is* `g`. Substituting `u = φ − g` into the
//! identity `u = v − (t−b)·du/dt` gives a regression target for `g` in terms of
//! the interpolation `a_t = (1−t)·a + t·e`, its velocity `v = e − a`, and the
//! total derivative `dg/dt = v·∂_{a_t}g + ∂_t g`. Inference evaluates `g` at
//! `(a_t, b, t) = (e, 0, 1)` and recovers `a = e − u(e, 0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::nets::{policy_backward, policy_forward, policy_jvp_cached, PolicyNet};
use crate::tensor::Tensor;

/// Choice of the fixed residual `φ` in `g = φ − u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `φ = 0`: the network predicts the average velocity itself.
    PlainU,
    /// `φ = a_t`: the network maps noise to actions directly.
    ResidualAt,
    /// `φ = e`: not a function of the network inputs.
    EMinusU,
    /// `φ = t·e`: not a function of the network inputs.
    EtMinusU,
    /// `φ = 2`.
    Const2,
    /// `φ = t`.
    TimeT,
    /// `φ = 2·a_t`.
    TwoAt,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::PlainU,
        Variant::ResidualAt,
        Variant::EMinusU,
        Variant::EtMinusU,
        Variant::Const2,
        Variant::TimeT,
        Variant::TwoAt,
    ];

    /// Config / CSV name.
    pub fn name(self) -> &'static str {
        match self {
            Variant::PlainU => "plain_u",
            Variant::ResidualAt => "residual_at",
            Variant::EMinusU => "e_minus_u",
            Variant::EtMinusU => "et_minus_u",
            Variant::Const2 => "const2",
            Variant::TimeT => "time_t",
            Variant::TwoAt => "two_at",
        }
    }

    /// Human-readable form of `g`.
    pub fn formula(self) -> &'static str {
        match self {
            Variant::PlainU => "u",
            Variant::ResidualAt => "a_t - u",
            Variant::EMinusU => "e - u",
            Variant::EtMinusU => "et - u",
            Variant::Const2 => "2 - u",
            Variant::TimeT => "t - u",
            Variant::TwoAt => "2a_t - u",
        }
    }

    /// Whether `φ` is a fixed analytic function of `(a_t, b, t)`.
    pub fn is_theory_compatible(self) -> bool {
        !matches!(self, Variant::EMinusU | Variant::EtMinusU)
    }

    pub fn id(self) -> u8 {
        Variant::ALL.iter().position(|&v| v == self).unwrap() as u8
    }

    pub fn from_id(id: u8) -> Result<Variant> {
        Variant::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::config(format!("unknown variant id {id}")))
    }

    /// Regression target for one coordinate.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    pub fn target(self, _a: f64, e: f64, a_t: f64, v: f64, b: f64, t: f64, dgdt: f64) -> f64 {
        let span = t - b;
        let jvp = span * dgdt;
        match self {
            Variant::PlainU => v - jvp,
            Variant::ResidualAt => a_t + (span - 1.0) * v - jvp,
            Variant::EMinusU => e - v - jvp,
            Variant::EtMinusU => (2.0 * t - b) * e - v - jvp,
            Variant::Const2 => 2.0 - v - jvp,
            Variant::TimeT => 2.0 * t - b - v - jvp,
            Variant::TwoAt => 2.0 * a_t + (2.0 * span - 1.0) * v - jvp,
        }
    }

    /// Action recovered from the network output at `(e, 0, 1)`.
    #[inline]
    pub fn action(self, e: f64, g_out: f64) -> f64 {
        match self {
            Variant::PlainU => e - g_out,
            Variant::ResidualAt | Variant::EMinusU | Variant::EtMinusU => g_out,
            Variant::Const2 => e - (2.0 - g_out),
            Variant::TimeT => e - (1.0 - g_out),
            Variant::TwoAt => g_out - e,
        }
    }

    /// `∂ action / ∂ g_out`, which is ±1 for every variant.
    pub fn action_sign(self) -> f64 {
        match self {
            Variant::PlainU => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == norm || v.formula().replace(' ', "") == norm.replace(' ', ""))
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

/// How `(b, t)` pairs are drawn during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeSampler {
    /// Two independent uniforms, ordered so that `b ≤ t`.
    Continuous,
    /// `b = 0`, `t ~ U(0, 1)`.
    ContinuousBZero,
    /// `b = 0`, `t` uniform over `{1/N, …, 1}`.
    Discrete(u32),
}

impl TimeSampler {
    pub fn validate(&self) -> Result<()> {
        match self {
            TimeSampler::Discrete(0) => Err(Error::config("discrete time sampler needs N ≥ 1")),
            _ => Ok(()),
        }
    }
}

impl FromStr for TimeSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parsed = match s {
            "continuous" => TimeSampler::Continuous,
            "continuous_b0" => TimeSampler::ContinuousBZero,
            _ => match s.strip_prefix("discrete") {
                Some(n) => TimeSampler::Discrete(
                    n.trim_start_matches([':', '(', '_'])
                        .trim_end_matches(')')
                        .parse()
                        .map_err(|_| Error::config(format!("bad time sampler {s:?}")))?,
                ),
                None => return Err(Error::config(format!("unknown time sampler {s:?}"))),
            },
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

impl fmt::Display for TimeSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSampler::Continuous => f.write_str("continuous"),
            TimeSampler::ContinuousBZero => f.write_str("continuous_b0"),
            TimeSampler::Discrete(n) => write!(f, "discrete:{n}"),
        }
    }
}

/// Draws one `(b, t)` pair with `0 ≤ b ≤ t ≤ 1`.
pub fn sample_times<R: Rng + ?Sized>(sampler: TimeSampler, rng: &mut R) -> (f64, f64) {
    match sampler {
        TimeSampler::Continuous => {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            if x <= y {
                (x, y)
            } else {
                (y, x)
            }
        }
        TimeSampler::ContinuousBZero => (0.0, rng.random()),
        TimeSampler::Discrete(n) => {
            let k = rng.random_range(1..=n);
            (0.0, k as f64 / n as f64)
        }
    }
}

/// Per-row `(b, t)` for a batch.
pub fn sample_times_batch<R: Rng + ?Sized>(
    sampler: TimeSampler,
    batch: usize,
    rng: &mut R,
) -> (Tensor, Tensor) {
    let (b, t): (Vec<f64>, Vec<f64>) = (0..batch).map(|_| sample_times(sampler, rng)).unzip();
    (
        Tensor::from_raw(vec![batch], b),
        Tensor::from_raw(vec![batch], t),
    )
}

/// `a_t = (1−t)·a + t·e` and `v = e − a`, with one `t` per row.
pub fn interpolate(a: &Tensor, e: &Tensor, t: &Tensor) -> Result<(Tensor, Tensor)> {
    a.same_shape(e, "interpolate")?;
    if t.len() != a.rows() {
        return Err(Error::shape(format!(
            "interpolate: {} times for {} rows",
            t.len(),
            a.rows()
        )));
    }
    let cols = a.cols();
    let mut a_t = Vec::with_capacity(a.len());
    let mut v = Vec::with_capacity(a.len());
    for i in 0..a.rows() {
        let ti = t.data()[i];
        for j in 0..cols {
            let (ai, ei) = (a.data()[i * cols + j], e.data()[i * cols + j]);
            a_t.push((1.0 - ti) * ai + ti * ei);
            v.push(ei - ai);
        }
    }
    Ok((
        Tensor::from_raw(a.shape().to_vec(), a_t),
        Tensor::from_raw(a.shape().to_vec(), v),
    ))
}

/// Regression target for `g` under `variant`. Callers treat it as a constant.
#[allow(clippy::too_many_arguments)]
pub fn mfi_target(
    variant: Variant,
    a: &Tensor,
    e: &Tensor,
    a_t: &Tensor,
    v: &Tensor,
    b: &Tensor,
    t: &Tensor,
    dgdt: &Tensor,
) -> Result<Tensor> {
    for (name, x) in [("e", e), ("a_t", a_t), ("v", v), ("dgdt", dgdt)] {
        a.same_shape(x, &format!("mfi_target {name}"))?;
    }
    if b.len() != a.rows() || t.len() != a.rows() {
        return Err(Error::shape("mfi_target: one (b, t) per row required"));
    }
    let cols = a.cols();
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.rows() {
        let (bi, ti) = (b.data()[i], t.data()[i]);
        for k in i * cols..(i + 1) * cols {
            out.push(variant.target(
                a.data()[k],
                e.data()[k],
                a_t.data()[k],
                v.data()[k],
                bi,
                ti,
                dgdt.data()[k],
            ));
        }
    }
    let out = Tensor::from_raw(a.shape().to_vec(), out);
    out.ensure_finite("mfi_target")?;
    Ok(out)
}

/// Powered-ℓ2 weighting `w = (‖Δ‖² + c)^(−p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeighting {
    pub p: f64,
    pub c: f64,
}

impl Default for LossWeighting {
    fn default() -> Self {
        LossWeighting { p: 0.2, c: 1e-4 }
    }
}

impl LossWeighting {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) || self.c.is_nan() || self.c <= 0.0 {
            return Err(Error::config(format!(
                "loss weighting needs p in [0, 1) and c > 0, got p={} c={}",
                self.p, self.c
            )));
        }
        Ok(())
    }
}

/// Batch mean of `sg(w)·‖Δ‖²` and its gradient with respect to `g_pred`.
pub fn mfi_loss_with_grad(
    g_pred: &Tensor,
    g_tgt: &Tensor,
    weighting: LossWeighting,
) -> Result<(f64, Tensor)> {
    g_pred.same_shape(g_tgt, "mfi_loss")?;
    let (rows, cols) = (g_pred.rows(), g_pred.cols());
    let mut grad = vec![0.0; g_pred.len()];
    let mut total = 0.0;
    for i in 0..rows {
        let p = &g_pred.data()[i * cols..(i + 1) * cols];
        let q = &g_tgt.data()[i * cols..(i + 1) * cols];
        let sq: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
        let w = (sq + weighting.c).powf(-weighting.p);
        total += w * sq;
        let k = 2.0 * w / rows as f64;
        for j in 0..cols {
            grad[i * cols + j] = k * (p[j] - q[j]);
        }
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("mfi_loss is not finite"));
    }
    Ok((loss, Tensor::from_raw(g_pred.shape().to_vec(), grad)))
}

pub fn mfi_loss(g_pred: &Tensor, g_tgt: &Tensor, weighting: LossWeighting) -> Result<f64> {
    Ok(mfi_loss_with_grad(g_pred, g_tgt, weighting)?.0)
}

/// Applies the variant's inference rule to a network output evaluated at `(e, 0, 1)`.
pub fn action_from_output(variant: Variant, e: &Tensor, g_out: &Tensor) -> Result<Tensor> {
    e.zip_with(g_out, "action_from_output", |e, g| variant.action(e, g))
}

pub(crate) fn inference_times(batch: usize) -> (Tensor, Tensor) {
    (Tensor::zeros(&[batch]), Tensor::filled(&[batch], 1.0))
}

/// One network evaluation at `(e, b=0, t=1)` turned into an action. No clipping.
pub fn one_step_action(g: &PolicyNet, s: &Tensor, e: &Tensor) -> Result<Tensor> {
    let (b, t) = inference_times(e.rows());
    let out = policy_forward(g, s, e, &b, &t)?;
    action_from_output(g.variant(), e, &out)
}

/// Velocity prediction followed by the integration step: `a = e − u(s, e, 0, 1)`.
pub fn naive_two_step_action(u_net: &PolicyNet, s: &Tensor, e: &Tensor) -> Result<Tensor> {
    let (b, t) = inference_times(e.rows());
    let v_ave = policy_forward(u_net, s, e, &b, &t)?;
    e.sub(&v_ave)
}

/// Mean of `‖v(s, a_t, t) − (e − a)‖²` for a velocity field `velocity(s, a_t, t)`.
pub fn flow_matching_loss<F>(
    velocity: F,
    s: &Tensor,
    a: &Tensor,
    e: &Tensor,
    t: &Tensor,
) -> Result<f64>
where
    F: Fn(&Tensor, &Tensor, &Tensor) -> Result<Tensor>,
{
    if let Some(x) = t.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("t = {x} outside [0, 1]")));
    }
    let (a_t, v) = interpolate(a, e, t)?;
    let pred = velocity(s, &a_t, t)?;
    pred.same_shape(&v, "flow_matching_loss")?;
    Ok(pred.sub(&v)?.sum_sq() / a.rows() as f64)
}

/// Velocity field view of a policy network: the instantaneous velocity is the
/// average velocity over a vanishing interval, so `b = t`.
pub fn policy_velocity<'a>(
    net: &'a PolicyNet,
) -> impl Fn(&Tensor, &Tensor, &Tensor) -> Result<Tensor> + 'a {
    move |s, a_t, t| policy_forward(net, s, a_t, t, t)
}

/// Standard normal noise of shape `[rows, cols]`.
pub fn gaussian_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_raw(vec![rows, cols], data)
}

/// Value and parameter gradient of the MFI loss on one batch of `(s, a)`.
#[derive(Clone, Debug)]
pub struct MfiPass {
    pub loss: f64,
    pub grads: MlpParams,
}

/// Samples noise and `(b, t)`, builds the stop-gradient target from one JVP
/// pass, and backpropagates the weighted regression loss through `g_pred` only.
pub fn mfi_gradients<R: Rng + ?Sized>(
    policy: &PolicyNet,
    s: &Tensor,
    a: &Tensor,
    sampler: TimeSampler,
    weighting: LossWeighting,
    rng: &mut R,
) -> Result<MfiPass> {
    let batch = a.rows();
    let e = gaussian_noise(batch, a.cols(), rng);
    let (b, t) = sample_times_batch(sampler, batch, rng);
    let (a_t, v) = interpolate(a, &e, &t)?;
    let (g_pred, dgdt, cache) = policy_jvp_cached(policy, s, &a_t, &b, &t, &v)?;
    let g_tgt = mfi_target(policy.variant(), a, &e, &a_t, &v, &b, &t, &dgdt)?;
    let (loss, dl_dg) = mfi_loss_with_grad(&g_pred, &g_tgt, weighting)?;
    let grads = policy_backward(policy, &cache, &dl_dg)?;
    Ok(MfiPass { loss, grads })
}

pub const INV_SOFTSIGN_EPS: f64 = 1e-8;

pub fn softsign(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

/// Approximate inverse `a / (1 − |a| + eps)`, defined for `|a| < 1`.
pub fn inv_softsign(a: f64, eps: f64) -> Result<f64> {
    if a.is_nan() || a.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "inv_softsign needs |a| < 1, got {a}"
        )));
    }
    Ok(a / (1.0 - a.abs() + eps))
}
