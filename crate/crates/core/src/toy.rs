//! Two-dimensional toy densities on `[−1, 1]²`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EIGHT_GAUSSIANS_RADIUS: f64 = 0.8;
pub const EIGHT_GAUSSIANS_SIGMA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyDistribution {
    /// Uniform over the 8 cells of a 4×4 grid whose `(col + row)` is even.
    Checkerboard4x4,
    /// Equal mixture of 8 Gaussians on a ring, tails cut at 3σ.
    EightGaussians,
}

impl FromStr for ToyDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "checkerboard" | "checkerboard4x4" => Ok(ToyDistribution::Checkerboard4x4),
            "eight_gaussians" | "8gaussians" => Ok(ToyDistribution::EightGaussians),
            other => Err(Error::config(format!("unknown toy distribution {other:?}"))),
        }
    }
}

impl fmt::Display for ToyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyDistribution::Checkerboard4x4 => "checkerboard",
            ToyDistribution::EightGaussians => "eight_gaussians",
        })
    }
}

/// Grid cell `(col, row)` of a point, each in `0..4`.
pub fn checkerboard_cell(x: f64, y: f64) -> (usize, usize) {
    let idx = |v: f64| ((2.0 * (v + 1.0)).floor() as isize).clamp(0, 3) as usize;
    (idx(x), idx(y))
}

pub fn is_on_cell(col: usize, row: usize) -> bool {
    (col + row).is_multiple_of(2)
}

/// The eight "on" cells in a fixed order.
pub fn on_cells() -> Vec<(usize, usize)> {
    (0..4)
        .flat_map(|r| (0..4).map(move |c| (c, r)))
        .filter(|&(c, r)| is_on_cell(c, r))
        .collect()
}

pub fn eight_gaussian_centers() -> [[f64; 2]; 8] {
    std::array::from_fn(|k| {
        let ang = k as f64 * std::f64::consts::FRAC_PI_4;
        [
            EIGHT_GAUSSIANS_RADIUS * ang.cos(),
            EIGHT_GAUSSIANS_RADIUS * ang.sin(),
        ]
    })
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// `n` samples as a `[n, 2]` tensor.
pub fn sample_toy<R: Rng + ?Sized>(dist: ToyDistribution, n: usize, rng: &mut R) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let mut data = Vec::with_capacity(2 * n);
    match dist {
        ToyDistribution::Checkerboard4x4 => {
            let cells = on_cells();
            for _ in 0..n {
                let (c, r) = cells[rng.random_range(0..cells.len())];
                let u: f64 = rng.random();
                let w: f64 = rng.random();
                data.push(-1.0 + 0.5 * (c as f64 + u));
                data.push(-1.0 + 0.5 * (r as f64 + w));
            }
        }
        ToyDistribution::EightGaussians => {
            let centers = eight_gaussian_centers();
            for _ in 0..n {
                let [cx, cy] = centers[rng.random_range(0..8)];
                data.push(cx + EIGHT_GAUSSIANS_SIGMA * truncated_normal(rng));
                data.push(cy + EIGHT_GAUSSIANS_SIGMA * truncated_normal(rng));
            }
        }
    }
    Tensor::matrix(n, 2, data)
}
