//! Adam with global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A fixed, ordered collection of parameter tensors.
pub trait ParamSet {
    fn param_tensors(&self) -> Vec<&Tensor>;
    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Euclidean norm over every entry of every tensor.
pub fn global_norm<P: ParamSet + ?Sized>(grads: &P) -> f64 {
    grads
        .param_tensors()
        .iter()
        .map(|t| t.sum_sq())
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that brings `norm` down to `max_norm`; 1 when already within it.
pub fn clip_factor(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .param_tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Clips `grads` to `max_grad_norm` and applies one bias-corrected Adam update.
    ///
    /// Returns the gradient norm before clipping. Non-finite gradients reject the
    /// step without touching parameters or moments.
    pub fn step<P: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &P,
        max_grad_norm: f64,
    ) -> Result<f64> {
        let gs = grads.param_tensors();
        if gs.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.m.len(),
                gs.len()
            )));
        }
        for (g, m) in gs.iter().zip(&self.m) {
            g.same_shape(m, "adam gradient")?;
            g.ensure_finite("adam gradient")?;
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::numeric("gradient norm overflowed"));
        }
        let scale = clip_factor(norm, max_grad_norm);

        let mut ps = params.param_tensors_mut();
        if ps.len() != gs.len() {
            return Err(Error::shape("parameter and gradient sets differ"));
        }
        for (p, g) in ps.iter().zip(&gs) {
            p.same_shape(g, "adam parameter")?;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in ps
            .iter_mut()
            .zip(&gs)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// `dst ← dst + k·src` over matching parameter sets.
pub fn add_scaled<P: ParamSet + ?Sized>(dst: &mut P, src: &P, k: f64) -> Result<()> {
    let s = src.param_tensors();
    let mut d = dst.param_tensors_mut();
    if s.len() != d.len() {
        return Err(Error::shape("parameter sets differ in structure"));
    }
    for (dt, st) in d.iter_mut().zip(&s) {
        dt.axpy(k, st)?;
    }
    Ok(())
}
