//! Sinusoidal time embeddings.
//!
//! For `dim = 2k`, pair `i` uses frequency `ω_i = 10000^(-2i/dim)` and emits
//! `[sin(t·ω_i), cos(t·ω_i)]`, interleaved.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BASE: f64 = 10000.0;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "embedding dimension must be even and at least 2, got {dim}"
        )));
    }
    Ok(())
}

pub fn frequency(i: usize, dim: usize) -> f64 {
    BASE.powf(-2.0 * i as f64 / dim as f64)
}

/// Embeds a scalar time into `dim` features.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Tensor> {
    check_dim(dim)?;
    let mut out = vec![0.0; dim];
    embed_into(t, &mut out, None);
    Tensor::vector(out)
}

/// Writes the embedding of `t` into `out` and, when given, its derivative
/// with respect to `t` into `dout`.
pub(crate) fn embed_into(t: f64, out: &mut [f64], dout: Option<&mut [f64]>) {
    let dim = out.len();
    match dout {
        Some(d) => {
            for i in 0..dim / 2 {
                let w = frequency(i, dim);
                let (s, c) = (t * w).sin_cos();
                out[2 * i] = s;
                out[2 * i + 1] = c;
                d[2 * i] = w * c;
                d[2 * i + 1] = -w * s;
            }
        }
        None => {
            for i in 0..dim / 2 {
                let (s, c) = (t * frequency(i, dim)).sin_cos();
                out[2 * i] = s;
                out[2 * i + 1] = c;
            }
        }
    }
}

pub(crate) fn validate_dim(dim: usize) -> Result<()> {
    check_dim(dim)
}
