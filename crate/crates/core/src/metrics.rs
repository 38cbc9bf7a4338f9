//! 2-Wasserstein distance between sample sets, the metrics CSV format, and
//! curve summaries over it.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EXACT_MAX: usize = 512;
pub const DEFAULT_PROJECTIONS: usize = 128;
const SLICED_SEED: u64 = 0x5eed_0f2d;

/// A finite, non-empty point cloud `[n, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Tensor,
}

impl SampleSet {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rank() != 2 || points.rows() == 0 || points.cols() == 0 {
            return Err(Error::shape(format!(
                "sample set needs a non-empty [n, d] tensor, got {:?}",
                points.shape()
            )));
        }
        points.ensure_finite("sample set")?;
        Ok(SampleSet { points })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct W2Options {
    /// Largest set size solved exactly; bigger sets use the sliced estimate.
    pub exact_max: usize,
    pub projections: usize,
    pub seed: u64,
}

impl Default for W2Options {
    fn default() -> Self {
        W2Options {
            exact_max: DEFAULT_EXACT_MAX,
            projections: DEFAULT_PROJECTIONS,
            seed: SLICED_SEED,
        }
    }
}

fn check_pair(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.len() != y.len() || x.dim() != y.dim() {
        return Err(Error::shape(format!(
            "W2 needs equal-size sets of equal dimension, got {:?} and {:?}",
            x.points.shape(),
            y.points.shape()
        )));
    }
    Ok(())
}

/// W2 with the default exact/sliced switch.
pub fn wasserstein2(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    wasserstein2_with(x, y, W2Options::default())
}

pub fn wasserstein2_with(x: &SampleSet, y: &SampleSet, opts: W2Options) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() <= opts.exact_max {
        wasserstein2_exact(x, y)
    } else {
        sliced_wasserstein2(x, y, opts.projections, opts.seed)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Square root of the mean matched squared distance under the optimal
/// one-to-one assignment.
pub fn wasserstein2_exact(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(x.points.row(i), y.points.row(j)))
        .collect();
    let assignment = solve_assignment(n, &cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Minimum-cost perfect matching on a dense `n×n` cost matrix by successive
/// shortest augmenting paths with potentials. Returns the column of each row.
pub fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

/// Sliced estimate: mean over random unit directions of the 1-D quantile-matched
/// squared distance, multiplied by the dimension so that it is on the scale of
/// the full W2², then a square root.
pub fn sliced_wasserstein2(
    x: &SampleSet,
    y: &SampleSet,
    projections: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(x, y)?;
    if projections == 0 {
        return Err(Error::config("sliced W2 needs at least one projection"));
    }
    let (n, d) = (x.len(), x.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir
            .iter()
            .map(|z| z * z)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|z| *z /= norm);
        for i in 0..n {
            px[i] = x.points.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum();
            py[i] = y.points.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum();
        }
        px.sort_by(f64::total_cmp);
        py.sort_by(f64::total_cmp);
        total += px
            .iter()
            .zip(&py)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
    }
    Ok((d as f64 * total / projections as f64).sqrt())
}

pub const METRICS_HEADER: &str =
    "step,loss_mfi,loss_q,loss_critic,alpha,bound_loss,eval_success,eval_w2";

pub const METRICS_COLUMNS: [&str; 7] = [
    "loss_mfi",
    "loss_q",
    "loss_critic",
    "alpha",
    "bound_loss",
    "eval_success",
    "eval_w2",
];

/// One line of the metrics CSV. `None` fields are written empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_mfi: Option<f64>,
    pub loss_q: Option<f64>,
    pub loss_critic: Option<f64>,
    pub alpha: Option<f64>,
    pub bound_loss: Option<f64>,
    pub eval_success: Option<f64>,
    pub eval_w2: Option<f64>,
}

impl MetricsRow {
    pub fn new(step: u64) -> Self {
        MetricsRow {
            step,
            ..Default::default()
        }
    }

    fn fields(&self) -> [Option<f64>; 7] {
        [
            self.loss_mfi,
            self.loss_q,
            self.loss_critic,
            self.alpha,
            self.bound_loss,
            self.eval_success,
            self.eval_w2,
        ]
    }

    /// Value of a named column.
    pub fn get(&self, column: &str) -> Result<Option<f64>> {
        if column == "step" {
            return Ok(Some(self.step as f64));
        }
        METRICS_COLUMNS
            .iter()
            .position(|&c| c == column)
            .map(|k| self.fields()[k])
            .ok_or_else(|| Error::Data(format!("unknown metrics column {column:?}")))
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = self.step.to_string();
        for f in self.fields() {
            line.push(',');
            if let Some(x) = f {
                line.push_str(&x.to_string());
            }
        }
        line
    }

    pub fn parse_csv_line(line: &str, lineno: usize) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 8 fields, got {}", parts.len()),
            });
        }
        let step = parts[0].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad step {:?}", parts[0]),
        })?;
        let mut vals = [None; 7];
        for (k, p) in parts[1..].iter().enumerate() {
            let p = p.trim();
            if !p.is_empty() {
                vals[k] = Some(p.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number {p:?}"),
                })?);
            }
        }
        let [loss_mfi, loss_q, loss_critic, alpha, bound_loss, eval_success, eval_w2] = vals;
        Ok(MetricsRow {
            step,
            loss_mfi,
            loss_q,
            loss_critic,
            alpha,
            bound_loss,
            eval_success,
            eval_w2,
        })
    }
}

/// Streams metrics rows to disk, flushing after every row.
pub struct MetricsWriter {
    out: BufWriter<fs::File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.write_line(METRICS_HEADER)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.write_line(&row.to_csv_line())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing metrics header".into(),
            })
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRow::parse_csv_line(l, i + 2))
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Mean and median of the last `window` populated values of `column`.
pub fn curve_summary(rows: &[MetricsRow], column: &str, window: usize) -> Result<(f64, f64)> {
    let mut values = Vec::new();
    for r in rows {
        if let Some(v) = r.get(column)? {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Data(format!("column {column:?} has no values")));
    }
    let w = window.clamp(1, values.len());
    let mut tail = values[values.len() - w..].to_vec();
    let mean = tail.iter().sum::<f64>() / w as f64;
    Ok((mean, median(&mut tail)))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
