//! Offline transition datasets and their text file format.
//!
//! ```text
//! # mfql-dataset v1 state_dim=<D> action_dim=<A>
//! s_1,…,s_D,a_1,…,a_A,r,s'_1,…,s'_D,done
//! ```
//! Values are written with 17 significant digits so every `f64` round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    state_dim: usize,
    action_dim: usize,
    source_seed: Option<u64>,
}

/// A sampled minibatch in tensor form.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Tensor,
    pub a: Tensor,
    /// `[B]`
    pub r: Tensor,
    pub s_next: Tensor,
    /// `[B]`, 1.0 for terminal transitions.
    pub done: Tensor,
}

impl OfflineDataset {
    pub fn new(
        transitions: Vec<Transition>,
        state_dim: usize,
        action_dim: usize,
        source_seed: Option<u64>,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::Data("dataset has no transitions".into()));
        }
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Data("dataset dimensions must be positive".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.s.len() != state_dim || t.s_next.len() != state_dim || t.a.len() != action_dim {
                return Err(Error::Data(format!(
                    "transition {i} does not match state_dim={state_dim} action_dim={action_dim}"
                )));
            }
            let finite =
                t.s.iter()
                    .chain(&t.a)
                    .chain(&t.s_next)
                    .all(|x| x.is_finite());
            if !finite || !t.r.is_finite() {
                return Err(Error::Data(format!(
                    "transition {i} holds a non-finite value"
                )));
            }
        }
        Ok(OfflineDataset {
            transitions,
            state_dim,
            action_dim,
            source_seed,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn source_seed(&self) -> Option<u64> {
        self.source_seed
    }

    /// Batch of the given rows.
    pub fn gather(&self, idx: &[usize]) -> Result<Batch> {
        let n = idx.len();
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut s = Vec::with_capacity(n * sd);
        let mut a = Vec::with_capacity(n * ad);
        let mut r = Vec::with_capacity(n);
        let mut s_next = Vec::with_capacity(n * sd);
        let mut done = Vec::with_capacity(n);
        for &i in idx {
            let t = self
                .transitions
                .get(i)
                .ok_or_else(|| Error::Data(format!("row {i} out of {}", self.len())))?;
            s.extend_from_slice(&t.s);
            a.extend_from_slice(&t.a);
            r.push(t.r);
            s_next.extend_from_slice(&t.s_next);
            done.push(if t.done { 1.0 } else { 0.0 });
        }
        Ok(Batch {
            s: Tensor::matrix(n, sd, s)?,
            a: Tensor::matrix(n, ad, a)?,
            r: Tensor::vector(r)?,
            s_next: Tensor::matrix(n, sd, s_next)?,
            done: Tensor::vector(done)?,
        })
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&idx)
    }
}

fn header(ds: &OfflineDataset) -> String {
    let mut h = format!(
        "# mfql-dataset v1 state_dim={} action_dim={}",
        ds.state_dim, ds.action_dim
    );
    if let Some(seed) = ds.source_seed {
        h.push_str(&format!(" source_seed={seed}"));
    }
    h
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header(ds));
    out.push('\n');
    for t in &ds.transitions {
        let fields: Vec<String> =
            t.s.iter()
                .chain(&t.a)
                .chain(std::iter::once(&t.r))
                .chain(&t.s_next)
                .map(|&x| fmt_f64(x))
                .chain(std::iter::once(if t.done { "1" } else { "0" }.to_string()))
                .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

struct Header {
    state_dim: usize,
    action_dim: usize,
    source_seed: Option<u64>,
}

fn parse_header(line: &str) -> std::result::Result<Header, String> {
    let rest = line
        .strip_prefix("# mfql-dataset v1")
        .ok_or_else(|| format!("expected dataset header, found {line:?}"))?;
    let (mut sd, mut ad, mut seed) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {tok:?}"))?;
        let v: u64 = v.parse().map_err(|_| format!("bad value in {tok:?}"))?;
        match k {
            "state_dim" => sd = Some(v as usize),
            "action_dim" => ad = Some(v as usize),
            "source_seed" => seed = Some(v),
            _ => return Err(format!("unknown header field {k:?}")),
        }
    }
    match (sd, ad) {
        (Some(s), Some(a)) if s > 0 && a > 0 => Ok(Header {
            state_dim: s,
            action_dim: a,
            source_seed: seed,
        }),
        _ => Err("header needs positive state_dim and action_dim".into()),
    }
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<OfflineDataset> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) if !l.trim().is_empty() => {
            parse_header(l.trim()).map_err(|msg| Error::Parse { line: 1, msg })?
        }
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let (sd, ad) = (header.state_dim, header.action_dim);
    let width = 2 * sd + ad + 2;
    let mut transitions = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "expected {width} fields for state_dim={sd} action_dim={ad}, got {}",
                    fields.len()
                ),
            });
        }
        let nums = fields[..width - 1]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("bad number {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let done = match fields[width - 1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("done flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        transitions.push(Transition {
            s: nums[..sd].to_vec(),
            a: nums[sd..sd + ad].to_vec(),
            r: nums[sd + ad],
            s_next: nums[sd + ad + 1..].to_vec(),
            done,
        });
    }
    if transitions.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "dataset has no rows".into(),
        });
    }
    OfflineDataset::new(transitions, sd, ad, header.source_seed)
}
