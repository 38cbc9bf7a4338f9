#![allow(dead_code)]

use mfql::mlp::{init_mlp, mlp_backward, mlp_forward, mlp_predict, FinalInit, MlpParams, MlpSpec};
use mfql::nets::{policy_forward, policy_jvp, PolicyNet};
use mfql::{Tensor, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Overwrites every parameter with `N(0, scale²)` noise (LayerNorm gains
/// around one) so no layer is degenerate.
pub fn randomize(mlp: &mut MlpParams, rng: &mut ChaCha8Rng, scale: f64) {
    for layer in mlp.layers_mut() {
        let fan_in = layer.weight.rows() as f64;
        for w in layer.weight.data_mut() {
            *w = scale * normal(rng) / fan_in.sqrt();
        }
        for b in layer.bias.data_mut() {
            *b = 0.3 * normal(rng);
        }
        if let Some(norm) = layer.norm.as_mut() {
            for g in norm.gain.data_mut() {
                *g = 1.0 + 0.2 * normal(rng);
            }
            for s in norm.shift.data_mut() {
                *s = 0.2 * normal(rng);
            }
        }
    }
}

pub fn random_mlp(rng: &mut ChaCha8Rng, layer_norm: bool) -> MlpParams {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=5)];
    // A LayerNorm over two features collapses its input to about ±1, leaving
    // gradients too small to check against finite differences.
    let min_width = if layer_norm { 3 } else { 2 };
    for _ in 0..depth {
        sizes.push(rng.random_range(min_width..=7));
    }
    sizes.push(rng.random_range(1..=3));
    let spec = MlpSpec::new(sizes, layer_norm, FinalInit::KaimingSmall);
    let mut mlp = init_mlp(&spec, rng.random()).unwrap();
    randomize(&mut mlp, rng, 1.5);
    mlp
}

/// A policy with small random widths and fully random parameters.
pub fn random_policy(rng: &mut ChaCha8Rng, variant: Variant) -> PolicyNet {
    let sd = rng.random_range(1..=3);
    let ad = rng.random_range(1..=3);
    let ted = 2 * rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2))
        .map(|_| rng.random_range(3..=8))
        .collect();
    let mut p = PolicyNet::new(sd, ad, &hidden, ted, variant, rng.random()).unwrap();
    randomize(p.mlp_mut(), rng, 1.5);
    p
}

/// Relative error with an absolute floor for near-zero references.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-6)
}

/// Adds `delta` to entry `k` of the named parameter tensor.
pub fn param_entry(m: &mut mfql::mlp::MlpParams, name: &str, k: usize, delta: f64) {
    let (layer, field) = name.trim_start_matches("layer").split_once('.').unwrap();
    let l = &mut m.layers_mut()[layer.parse::<usize>().unwrap()];
    let t = match field {
        "weight" => &mut l.weight,
        "bias" => &mut l.bias,
        "norm_gain" => &mut l.norm.as_mut().unwrap().gain,
        "norm_shift" => &mut l.norm.as_mut().unwrap().shift,
        other => panic!("unexpected parameter {other}"),
    };
    t.data_mut()[k] += delta;
}

/// Relative error between `policy_jvp`'s `dgdt` and central differences of
/// `policy_forward` along `(v, 1)` in `(a_t, t)`, on a random batch.
pub fn policy_jvp_fd_error(g: &PolicyNet, rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let n = rng.random_range(1..=4);
    let s = random_tensor(rng, n, g.state_dim(), 1.0);
    let a_t = random_tensor(rng, n, g.action_dim(), 1.0);
    let v = random_tensor(rng, n, g.action_dim(), 1.0);
    let (bs, ts): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.05..0.95);
            (rng.random_range(0.0..t), t)
        })
        .unzip();
    let b = Tensor::vector(bs).unwrap();
    let t = Tensor::vector(ts).unwrap();
    let (_, dgdt) = policy_jvp(g, &s, &a_t, &b, &t, &v).unwrap();
    let shift = |k: f64| {
        let a = a_t.add(&v.scale(k)).unwrap();
        let tt = t.map(|x| x + k);
        policy_forward(g, &s, &a, &b, &tt).unwrap()
    };
    let fd = shift(h).sub(&shift(-h)).unwrap().scale(0.5 / h);
    rel_err(dgdt.data(), fd.data())
}

/// Relative errors of `mlp_backward`'s input and parameter gradients against
/// central differences, for the loss `Σ w ⊙ mlp(x)` on a random batch.
pub fn mlp_backward_fd_errors(mlp: &mut MlpParams, rng: &mut ChaCha8Rng, h: f64) -> (f64, f64) {
    let n = rng.random_range(1..=4);
    let x = random_tensor(rng, n, mlp.spec().input_dim(), 1.0);
    let w = random_tensor(rng, n, mlp.spec().output_dim(), 1.0);
    let (_, cache) = mlp_forward(mlp, &x).unwrap();
    let (grads, dx) = mlp_backward(mlp, &cache, &w).unwrap();
    let loss = |m: &MlpParams, x: &Tensor| -> f64 {
        let y = mlp_predict(m, x).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };

    let mut fd_dx = Vec::new();
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        fd_dx.push((loss(mlp, &xp) - loss(mlp, &xm)) / (2.0 * h));
    }
    let input_err = rel_err(dx.data(), &fd_dx);

    let analytic: Vec<f64> = grads
        .named_tensors()
        .into_iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect();
    let params: Vec<(String, usize)> = mlp
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.len()))
        .collect();
    let mut fd = Vec::new();
    for (name, len) in &params {
        for k in 0..*len {
            param_entry(mlp, name, k, h);
            let lp = loss(mlp, &x);
            param_entry(mlp, name, k, -2.0 * h);
            let lm = loss(mlp, &x);
            param_entry(mlp, name, k, h);
            fd.push((lp - lm) / (2.0 * h));
        }
    }
    (input_err, rel_err(&analytic, &fd))
}
