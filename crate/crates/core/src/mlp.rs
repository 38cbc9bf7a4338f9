//! Multi-layer perceptron with SiLU activations, optional layer normalization,
//! exact reverse-mode gradients and forward-mode Jacobian-vector products.
//!
//! Weights are stored `[fan_in, fan_out]` so a batch `x: [B, in]` maps to
//! `x·W + b`. Hidden layers apply `Linear → SiLU → LayerNorm` (the norm only when
//! enabled); the final layer is affine.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::{DualTensor, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const FINAL_SMALL_GAIN: f64 = 0.01;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalInit {
    /// Final weights and bias exactly zero.
    Zero,
    /// Kaiming-normal scaled by 0.01.
    KaimingSmall,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub use_layer_norm: bool,
    pub final_init: FinalInit,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, use_layer_norm: bool, final_init: FinalInit) -> Self {
        MlpSpec {
            layer_sizes,
            activation: Activation::Silu,
            use_layer_norm,
            final_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config(format!(
                "an MLP needs at least two layer sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub shift: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
    pub norm: Option<LayerNormParams>,
}

/// Parameters of an MLP. Also used as the container for its gradients.
#[derive(Clone, Debug)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
    generation: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

/// Kaiming-initialized hidden layers, final layer per `spec.final_init`.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.layer_sizes.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let (fan_in, fan_out) = (spec.layer_sizes[i], spec.layer_sizes[i + 1]);
        let last = i + 1 == n;
        let std = (2.0 / fan_in as f64).sqrt();
        let gain = match (last, spec.final_init) {
            (false, _) => 1.0,
            (true, FinalInit::Zero) => 0.0,
            (true, FinalInit::KaimingSmall) => FINAL_SMALL_GAIN,
        };
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                gain * std * z
            })
            .collect();
        let norm = (!last && spec.use_layer_norm).then(|| LayerNormParams {
            gain: Tensor::filled(&[fan_out], 1.0),
            shift: Tensor::zeros(&[fan_out]),
        });
        layers.push(Layer {
            weight: Tensor::matrix(fan_in, fan_out, w)?,
            bias: Tensor::zeros(&[fan_out]),
            norm,
        });
    }
    Ok(MlpParams {
        spec: spec.clone(),
        layers,
        generation: next_generation(),
    })
}

impl MlpParams {
    /// Builds parameters from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let n = spec.layer_sizes.len() - 1;
        if layers.len() != n {
            return Err(Error::shape(format!(
                "spec has {n} layers, got {}",
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let (fi, fo) = (spec.layer_sizes[i], spec.layer_sizes[i + 1]);
            if l.weight.shape() != [fi, fo] || l.bias.shape() != [fo] {
                return Err(Error::shape(format!(
                    "layer {i}: expected weight [{fi}, {fo}] and bias [{fo}], got {:?} and {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            let wants_norm = spec.use_layer_norm && i + 1 < n;
            match (&l.norm, wants_norm) {
                (Some(nm), true) if nm.gain.shape() == [fo] && nm.shift.shape() == [fo] => {}
                (None, false) => {}
                _ => return Err(Error::shape(format!("layer {i}: normalization mismatch"))),
            }
        }
        Ok(MlpParams {
            spec,
            layers,
            generation: next_generation(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation = next_generation();
        &mut self.layers
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> MlpParams {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Tensor::zeros(l.weight.shape()),
                bias: Tensor::zeros(l.bias.shape()),
                norm: l.norm.as_ref().map(|n| LayerNormParams {
                    gain: Tensor::zeros(n.gain.shape()),
                    shift: Tensor::zeros(n.shift.shape()),
                }),
            })
            .collect();
        MlpParams {
            spec: self.spec.clone(),
            layers,
            generation: next_generation(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Tensors in a fixed order with stable names, used by checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &l.weight));
            out.push((format!("layer{i}.bias"), &l.bias));
            if let Some(n) = &l.norm {
                out.push((format!("layer{i}.norm_gain"), &n.gain));
                out.push((format!("layer{i}.norm_shift"), &n.shift));
            }
        }
        out
    }
}

impl ParamSet for MlpParams {
    fn param_tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.generation = next_generation();
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.shift);
            }
        }
        out
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

struct LayerCache {
    input: Tensor,
    pre: Tensor,
    norm: Option<NormCache>,
}

/// Intermediate values of a forward pass, consumed by [`mlp_backward`].
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.layers[0].input.rows()
    }
}

fn check_input(params: &MlpParams, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.cols() != params.spec.input_dim() {
        return Err(Error::shape(format!(
            "MLP expects [batch, {}] input, got {:?}",
            params.spec.input_dim(),
            x.shape()
        )));
    }
    Ok(())
}

fn affine(x: &Tensor, layer: &Layer) -> Result<Tensor> {
    let mut z = x.matmul(&layer.weight)?;
    let b = layer.bias.data();
    let cols = b.len();
    for row in z.data_mut().chunks_exact_mut(cols) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(z)
}

/// Row-wise layer normalization of `h` in place; returns per-row `1/sqrt(var+eps)`.
fn normalize_rows(h: &mut Tensor) -> Vec<f64> {
    let cols = h.cols();
    let mut inv = Vec::with_capacity(h.rows());
    for row in h.data_mut().chunks_exact_mut(cols) {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        inv.push(r);
    }
    inv
}

fn scale_shift(n: &Tensor, norm: &LayerNormParams) -> Tensor {
    let g = norm.gain.data();
    let s = norm.shift.data();
    let cols = g.len();
    let mut out = n.clone();
    for row in out.data_mut().chunks_exact_mut(cols) {
        for j in 0..cols {
            row[j] = row[j] * g[j] + s[j];
        }
    }
    out
}

fn hidden_forward(layer: &Layer, input: Tensor) -> Result<(Tensor, LayerCache)> {
    let pre = affine(&input, layer)?;
    let mut h = pre.map(silu);
    let (out, norm) = match &layer.norm {
        Some(np) => {
            let inv_std = normalize_rows(&mut h);
            let out = scale_shift(&h, np);
            (
                out,
                Some(NormCache {
                    normalized: h,
                    inv_std,
                }),
            )
        }
        None => (h, None),
    };
    Ok((out, LayerCache { input, pre, norm }))
}

/// Forward pass returning the output and the cache needed for backpropagation.
pub fn mlp_forward(params: &MlpParams, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    check_input(params, x)?;
    let n = params.layers.len();
    let mut caches = Vec::with_capacity(n);
    let mut cur = x.clone();
    for layer in &params.layers[..n - 1] {
        let (out, cache) = hidden_forward(layer, cur)?;
        caches.push(cache);
        cur = out;
    }
    let last = &params.layers[n - 1];
    let y = affine(&cur, last)?;
    caches.push(LayerCache {
        input: cur,
        pre: y.clone(),
        norm: None,
    });
    y.ensure_finite("mlp_forward")?;
    Ok((
        y,
        ForwardCache {
            generation: params.generation,
            layers: caches,
        },
    ))
}

/// Forward pass without retaining intermediates.
pub fn mlp_predict(params: &MlpParams, x: &Tensor) -> Result<Tensor> {
    check_input(params, x)?;
    let n = params.layers.len();
    let mut cur: Option<Tensor> = None;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = affine(cur.as_ref().unwrap_or(x), layer)?;
        if i + 1 < n {
            for v in z.data_mut() {
                *v = silu(*v);
            }
            if let Some(np) = &layer.norm {
                normalize_rows(&mut z);
                z = scale_shift(&z, np);
            }
        }
        cur = Some(z);
    }
    let cur = cur.unwrap();
    cur.ensure_finite("mlp_predict")?;
    Ok(cur)
}

fn col_sums(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = vec![0.0; cols];
    for row in t.data().chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_raw(vec![cols], out)
}

fn backward_impl(
    params: &MlpParams,
    cache: &ForwardCache,
    dl_dy: &Tensor,
    want_params: bool,
) -> Result<(Option<MlpParams>, Tensor)> {
    if cache.generation != params.generation {
        return Err(Error::shape(
            "stale forward cache: parameters changed since the forward pass",
        ));
    }
    if cache.layers.len() != params.layers.len() {
        return Err(Error::shape("forward cache does not match network depth"));
    }
    let out_cache = cache.layers.last().unwrap();
    if dl_dy.shape() != out_cache.pre.shape() {
        return Err(Error::shape(format!(
            "dL/dy has shape {:?}, network output is {:?}",
            dl_dy.shape(),
            out_cache.pre.shape()
        )));
    }
    let mut grads = want_params.then(|| params.zeros_like());
    let mut d_out = dl_dy.clone();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let lc = &cache.layers[i];
        let last = i + 1 == params.layers.len();
        let dz = if last {
            d_out
        } else {
            let mut dh = match (&layer.norm, &lc.norm) {
                (Some(np), Some(nc)) => {
                    let cols = d_out.cols();
                    let g = np.gain.data();
                    if let Some(gr) = grads.as_mut() {
                        let gl = gr.layers[i].norm.as_mut().unwrap();
                        let (dg, ds) = (gl.gain.data_mut(), gl.shift.data_mut());
                        for (drow, nrow) in d_out
                            .data()
                            .chunks_exact(cols)
                            .zip(nc.normalized.data().chunks_exact(cols))
                        {
                            for j in 0..cols {
                                dg[j] += drow[j] * nrow[j];
                                ds[j] += drow[j];
                            }
                        }
                    }
                    let mut dh = Tensor::zeros(d_out.shape());
                    for r in 0..d_out.rows() {
                        let drow = d_out.row(r);
                        let nrow = nc.normalized.row(r);
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for j in 0..cols {
                            let dn = drow[j] * g[j];
                            mean_dn += dn;
                            mean_dn_n += dn * nrow[j];
                        }
                        mean_dn /= cols as f64;
                        mean_dn_n /= cols as f64;
                        let inv = nc.inv_std[r];
                        let out = dh.row_mut(r);
                        for j in 0..cols {
                            out[j] = inv * (drow[j] * g[j] - mean_dn - nrow[j] * mean_dn_n);
                        }
                    }
                    dh
                }
                (None, None) => d_out,
                _ => return Err(Error::shape("forward cache normalization mismatch")),
            };
            for (d, &z) in dh.data_mut().iter_mut().zip(lc.pre.data()) {
                *d *= silu_grad(z);
            }
            dh
        };
        if let Some(gr) = grads.as_mut() {
            let gl = &mut gr.layers[i];
            gl.weight = lc.input.t_matmul(&dz)?;
            gl.bias = col_sums(&dz);
        }
        d_out = dz.matmul_t(&layer.weight)?;
    }
    if let Some(g) = &grads {
        for t in g.param_tensors() {
            t.ensure_finite("mlp_backward")?;
        }
    }
    d_out.ensure_finite("mlp_backward input gradient")?;
    Ok((grads, d_out))
}

/// Reverse-mode gradients of `sum(y ⊙ dL_dy)` w.r.t. parameters and input.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dl_dy: &Tensor,
) -> Result<(MlpParams, Tensor)> {
    let (g, dx) = backward_impl(params, cache, dl_dy, true)?;
    Ok((g.unwrap(), dx))
}

/// Like [`mlp_backward`] but only the input gradient.
pub fn mlp_backward_input(
    params: &MlpParams,
    cache: &ForwardCache,
    dl_dy: &Tensor,
) -> Result<Tensor> {
    Ok(backward_impl(params, cache, dl_dy, false)?.1)
}

/// Output and directional derivative of the network along `x.tangent`.
pub fn mlp_jvp(params: &MlpParams, x: &DualTensor) -> Result<(Tensor, Tensor)> {
    let (y, dy, _) = mlp_jvp_with_cache(params, x)?;
    Ok((y, dy))
}

/// JVP that also returns the primal forward cache, so the same pass can be
/// backpropagated.
pub fn mlp_jvp_with_cache(
    params: &MlpParams,
    x: &DualTensor,
) -> Result<(Tensor, Tensor, ForwardCache)> {
    check_input(params, &x.primal)?;
    x.primal.same_shape(&x.tangent, "mlp_jvp")?;
    let n = params.layers.len();
    let mut caches = Vec::with_capacity(n);
    let mut cur = x.primal.clone();
    let mut dcur = x.tangent.clone();
    for layer in &params.layers[..n - 1] {
        let dz = dcur.matmul(&layer.weight)?;
        let pre = affine(&cur, layer)?;
        let mut h = pre.map(silu);
        let mut dh = dz;
        for (d, &z) in dh.data_mut().iter_mut().zip(pre.data()) {
            *d *= silu_grad(z);
        }
        let norm = match &layer.norm {
            Some(np) => {
                let cols = h.cols();
                let mut inv_std = Vec::with_capacity(h.rows());
                for r in 0..h.rows() {
                    let hr = h.row_mut(r);
                    let mean = hr.iter().sum::<f64>() / cols as f64;
                    let var = hr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let dr = dh.row_mut(r);
                    let dmean = dr.iter().sum::<f64>() / cols as f64;
                    let dvar = 2.0
                        * hr.iter()
                            .zip(dr.iter())
                            .map(|(v, d)| (v - mean) * (d - dmean))
                            .sum::<f64>()
                        / cols as f64;
                    let dinv = -0.5 * inv * inv * inv * dvar;
                    for j in 0..cols {
                        let c = hr[j] - mean;
                        dr[j] = (dr[j] - dmean) * inv + c * dinv;
                        hr[j] = c * inv;
                    }
                    inv_std.push(inv);
                }
                let out = scale_shift(&h, np);
                let g = np.gain.data();
                for row in dh.data_mut().chunks_exact_mut(cols) {
                    for j in 0..cols {
                        row[j] *= g[j];
                    }
                }
                caches.push(LayerCache {
                    input: cur,
                    pre,
                    norm: Some(NormCache {
                        normalized: h,
                        inv_std,
                    }),
                });
                cur = out;
                dcur = dh;
                continue;
            }
            None => None,
        };
        caches.push(LayerCache {
            input: cur,
            pre,
            norm,
        });
        cur = h;
        dcur = dh;
    }
    let last = &params.layers[n - 1];
    let y = affine(&cur, last)?;
    let dy = dcur.matmul(&last.weight)?;
    caches.push(LayerCache {
        input: cur,
        pre: y.clone(),
        norm: None,
    });
    y.ensure_finite("mlp_jvp")?;
    dy.ensure_finite("mlp_jvp tangent")?;
    Ok((
        y,
        dy,
        ForwardCache {
            generation: params.generation,
            layers: caches,
        },
    ))
}
