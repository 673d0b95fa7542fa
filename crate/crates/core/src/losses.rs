//! Training objectives: mean relative distortion over node pairs, and the
//! softmax ranking proxy with its distance-to-score conversions.
//!
//! Both objectives return the loss and its gradient over the flat parameter
//! vector of [`Params`]. Pair terms are accumulated in fixed chunks whose
//! boundaries depend only on the problem size, and chunk results are summed
//! in order, so results do not depend on the number of worker threads.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::spaces::{Model, Params, Scalars};

pub const DEFAULT_D0: f64 = 1e-2;
/// Distortion training uses every pair up to this many nodes.
pub const FULL_PAIRS_MAX_NODES: usize = 2000;
/// Pairs drawn per iteration above [`FULL_PAIRS_MAX_NODES`].
pub const SAMPLED_PAIRS: usize = 1_000_000;

const ROW_CHUNKS: usize = 64;
const PAIR_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Distortion,
    Proxy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Distortion => "distortion",
            LossKind::Proxy => "proxy",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distortion" => Ok(LossKind::Distortion),
            "proxy" => Ok(LossKind::Proxy),
            _ => Err(Error::Config(format!("unknown loss '{s}'"))),
        }
    }
}

/// Distance-to-score conversion for the proxy loss.
///
/// `t2` and `t3` floor the distance at `d0`, so scores decrease with
/// distance and stay finite at `d = 0`. The `-literal` variants cap it
/// instead (`min(d, d0)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conversion {
    #[serde(rename = "t1")]
    T1,
    #[serde(rename = "t2")]
    T2,
    #[serde(rename = "t2-literal")]
    T2Literal,
    #[serde(rename = "t3")]
    T3,
    #[serde(rename = "t3-literal")]
    T3Literal,
}

impl Conversion {
    pub const ALL: [Conversion; 5] = [
        Conversion::T1,
        Conversion::T2,
        Conversion::T2Literal,
        Conversion::T3,
        Conversion::T3Literal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Conversion::T1 => "t1",
            Conversion::T2 => "t2",
            Conversion::T2Literal => "t2-literal",
            Conversion::T3 => "t3",
            Conversion::T3Literal => "t3-literal",
        }
    }

    /// Whether the conversion is defined for negative scores.
    pub fn accepts_negative(self) -> bool {
        self == Conversion::T1
    }

    /// `log t(d)` and its derivative with respect to `d`.
    pub fn log_score(self, d: f64, d0: f64) -> Result<(f64, f64)> {
        if !self.accepts_negative() && d < 0.0 {
            return Err(Error::Domain(format!(
                "{} is undefined for negative distance {d}",
                self.name()
            )));
        }
        let out = match self {
            Conversion::T1 => (-d, -1.0),
            Conversion::T2 => {
                if d > d0 {
                    (1.0 / d, -1.0 / (d * d))
                } else {
                    (1.0 / d0, 0.0)
                }
            }
            Conversion::T2Literal => {
                if d < d0 {
                    (1.0 / d, -1.0 / (d * d))
                } else {
                    (1.0 / d0, 0.0)
                }
            }
            Conversion::T3 => {
                if d > d0 {
                    (-d.ln(), -1.0 / d)
                } else {
                    (-d0.ln(), 0.0)
                }
            }
            Conversion::T3Literal => {
                if d < d0 {
                    (-d.ln(), -1.0 / d)
                } else {
                    (-d0.ln(), 0.0)
                }
            }
        };
        if !out.0.is_finite() {
            return Err(Error::Domain(format!(
                "{} score is unbounded at distance {d}",
                self.name()
            )));
        }
        Ok(out)
    }
}

impl fmt::Display for Conversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Conversion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Conversion::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown conversion '{s}'")))
    }
}

/// `t(d)` itself.
pub fn convert(conversion: Conversion, d: f64, d0: f64) -> Result<f64> {
    Ok(conversion.log_score(d, d0)?.0.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairBatch {
    Full,
    /// A fresh uniform sample of `count` unordered pairs every iteration.
    Sampled { count: usize, seed: u64 },
}

impl PairBatch {
    /// Full batch for small graphs, sampled above [`FULL_PAIRS_MAX_NODES`].
    pub fn for_nodes(n: usize, seed: u64) -> Self {
        if n <= FULL_PAIRS_MAX_NODES {
            PairBatch::Full
        } else {
            PairBatch::Sampled {
                count: SAMPLED_PAIRS,
                seed,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub conversion: Conversion,
    pub d0: f64,
    pub exclude_self: bool,
    pub pair_batch: PairBatch,
}

impl LossSpec {
    pub fn distortion(pair_batch: PairBatch) -> Self {
        Self {
            kind: LossKind::Distortion,
            conversion: Conversion::T1,
            d0: DEFAULT_D0,
            exclude_self: false,
            pair_batch,
        }
    }

    pub fn proxy(conversion: Conversion) -> Self {
        Self {
            kind: LossKind::Proxy,
            conversion,
            d0: DEFAULT_D0,
            exclude_self: false,
            pair_batch: PairBatch::Full,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Config(format!("d0 must be positive, got {}", self.d0)));
        }
        if let PairBatch::Sampled { count: 0, .. } = self.pair_batch {
            return Err(Error::Config("sampled pair count must be at least 1".into()));
        }
        if self.kind == LossKind::Proxy && !model.is_metric() && !self.conversion.accepts_negative()
        {
            return Err(Error::Domain(format!(
                "conversion {} needs non-negative distances; {} scores can be negative",
                self.conversion,
                model.signature()
            )));
        }
        Ok(())
    }
}

/// Uniformly sampled unordered pairs `(i, j)`, `i < j`, for one iteration.
pub fn sample_pairs(n: usize, count: usize, seed: u64, iteration: usize) -> Vec<(usize, usize)> {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    (0..count)
        .map(|_| loop {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

/// Row ranges covering `0..n` with roughly equal numbers of upper-triangle
/// pairs. Depends on `n` only.
fn row_chunks(n: usize) -> Vec<Range<usize>> {
    let total = n * n.saturating_sub(1) / 2;
    let target = total / ROW_CHUNKS + 1;
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut acc = 0;
    for i in 0..n {
        acc += n - 1 - i;
        if acc >= target {
            chunks.push(start..i + 1);
            start = i + 1;
            acc = 0;
        }
    }
    if start < n {
        chunks.push(start..n);
    }
    chunks
}

/// Runs `f` on every chunk with its own zeroed gradient buffer and sums the
/// partial losses and gradients in chunk order.
fn reduce<T, F>(chunks: &[T], len: usize, f: F) -> (f64, Vec<f64>)
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> f64 + Sync,
{
    let parts: Vec<(f64, Vec<f64>)> = chunks
        .par_iter()
        .map(|c| {
            let mut buf = vec![0.0; len];
            let loss = f(c, &mut buf);
            (loss, buf)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; len];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Shared context for accumulating pair gradients into a flat buffer.
struct PairCtx<'a> {
    model: &'a Model,
    scalars: Scalars,
    params: &'a Params,
    dim: usize,
    emb_len: usize,
}

impl<'a> PairCtx<'a> {
    fn new(model: &'a Model, params: &'a Params) -> Self {
        let layout = params.layout();
        Self {
            model,
            scalars: model.resolve(params.scalars()),
            params,
            dim: layout.dim,
            emb_len: layout.embedding_len(),
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.model
            .distance(&self.scalars, self.params.row(i), self.params.row(j))
    }

    /// Accumulates the gradient of `d(i, j)` for `i < j`, scaled by
    /// `upstream(d)`, and returns `d`.
    fn accumulate(
        &self,
        i: usize,
        j: usize,
        upstream: impl FnOnce(f64) -> f64,
        buf: &mut [f64],
    ) -> f64 {
        debug_assert!(i < j);
        let d = self.dim;
        let (emb, graw) = buf.split_at_mut(self.emb_len);
        let (lo, hi) = emb.split_at_mut(j * d);
        self.model.accumulate_with(
            &self.scalars,
            self.params.row(i),
            self.params.row(j),
            upstream,
            &mut lo[i * d..(i + 1) * d],
            &mut hi[..d],
            graw,
        )
    }

    /// Gradient of the self score `d(i, i)` scaled by `upstream`.
    fn accumulate_self(&self, i: usize, upstream: f64, buf: &mut [f64]) {
        let d = self.dim;
        let mut gx = vec![0.0; d];
        let mut gy = vec![0.0; d];
        let (emb, graw) = buf.split_at_mut(self.emb_len);
        let x = self.params.row(i);
        self.model
            .accumulate(&self.scalars, x, x, upstream, &mut gx, &mut gy, graw);
        for (k, g) in emb[i * d..(i + 1) * d].iter_mut().enumerate() {
            *g += gx[k] + gy[k];
        }
    }
}

fn check_targets(params: &Params, targets: &DistanceMatrix) -> Result<()> {
    let n = params.layout().nodes;
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: n,
        });
    }
    if n < 2 {
        return Err(Error::InvalidGraph("at least two nodes are required".into()));
    }
    Ok(())
}

/// Relative error term `|du - dg| / dg` and its derivative in `du`, with
/// the subgradient at zero taken as zero.
#[inline]
fn relative_error(du: f64, dg: f64) -> (f64, f64) {
    let diff = du - dg;
    let slope = if diff > 0.0 {
        1.0 / dg
    } else if diff < 0.0 {
        -1.0 / dg
    } else {
        0.0
    };
    (diff.abs() / dg, slope)
}

/// Mean relative distortion over every unordered pair, with its gradient.
pub fn distortion_loss_full(
    model: &Model,
    params: &Params,
    targets: &DistanceMatrix,
) -> Result<(f64, Vec<f64>)> {
    check_targets(params, targets)?;
    let n = targets.len();
    let scale = 1.0 / (n * (n - 1) / 2) as f64;
    let ctx = PairCtx::new(model, params);
    let (loss, grad) = reduce(&row_chunks(n), params.layout().len(), |rows, buf| {
        let mut loss = 0.0;
        for i in rows.clone() {
            let tr = targets.row(i);
            for (j, &dg) in tr.iter().enumerate().skip(i + 1) {
                ctx.accumulate(
                    i,
                    j,
                    |du| {
                        let (err, slope) = relative_error(du, dg);
                        loss += err;
                        slope * scale
                    },
                    buf,
                );
            }
        }
        loss
    });
    Ok((loss * scale, grad))
}

/// Mean relative distortion over the given pairs (`i != j`).
pub fn distortion_loss(
    model: &Model,
    params: &Params,
    targets: &DistanceMatrix,
    pairs: &[(usize, usize)],
) -> Result<(f64, Vec<f64>)> {
    check_targets(params, targets)?;
    if pairs.is_empty() {
        return Err(Error::Config("empty pair set".into()));
    }
    let n = targets.len();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= n || j >= n) {
        return Err(Error::Config(format!("invalid pair ({i}, {j})")));
    }
    let scale = 1.0 / pairs.len() as f64;
    let ctx = PairCtx::new(model, params);
    let chunks: Vec<&[(usize, usize)]> = pairs.chunks(PAIR_CHUNK).collect();
    let (loss, grad) = reduce(&chunks, params.layout().len(), |chunk, buf| {
        let mut loss = 0.0;
        for &(a, b) in chunk.iter() {
            let (i, j) = (a.min(b), a.max(b));
            let dg = targets.get(i, j);
            ctx.accumulate(
                i,
                j,
                |du| {
                    let (err, slope) = relative_error(du, dg);
                    loss += err;
                    slope * scale
                },
                buf,
            );
        }
        loss
    });
    Ok((loss * scale, grad))
}

/// Full `n x n` table of model distances (scores for dot models).
pub fn distance_table(model: &Model, params: &Params) -> Vec<f64> {
    let n = params.layout().nodes;
    let ctx = PairCtx::new(model, params);
    let chunks = row_chunks(n);
    let upper: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|rows| {
            let mut out = Vec::new();
            for i in rows.clone() {
                for j in i + 1..n {
                    out.push(ctx.distance(i, j));
                }
            }
            out
        })
        .collect();
    let mut table = vec![0.0; n * n];
    let mut values = upper.iter().flatten();
    for i in 0..n {
        for j in i + 1..n {
            let d = *values.next().unwrap();
            table[i * n + j] = d;
            table[j * n + i] = d;
        }
        if !model.is_metric() {
            table[i * n + i] = ctx.distance(i, i);
        }
    }
    table
}

/// Proxy loss evaluated on a precomputed distance table, together with
/// `dL/dd` for every entry of the table.
///
/// Each source `v` contributes `sum_{u in rel[v]} (LSE_w log t(d_vw) - log t(d_vu))`,
/// the log-sum-exp running over every node (or every node but `v` when
/// `exclude_self` is set).
pub fn proxy_from_table(
    table: &[f64],
    relevance: &[Vec<usize>],
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    let n = relevance.len();
    if table.len() != n * n {
        return Err(Error::LengthMismatch {
            left: table.len(),
            right: n * n,
        });
    }
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|v| proxy_row(&table[v * n..(v + 1) * n], v, &relevance[v], spec))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(n * n);
    for (l, u) in rows {
        loss += l;
        upstream.extend(u);
    }
    Ok((loss, upstream))
}

fn proxy_row(row: &[f64], v: usize, relevant: &[usize], spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    let n = row.len();
    let mut scores = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for (w, &d) in row.iter().enumerate() {
        if spec.exclude_self && w == v {
            scores.push(f64::NEG_INFINITY);
            slopes.push(0.0);
            continue;
        }
        let (s, ds) = spec.conversion.log_score(d, spec.d0)?;
        scores.push(s);
        slopes.push(ds);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let lse = max + sum.ln();
    let k = relevant.len() as f64;
    let mut loss = k * lse;
    let mut upstream: Vec<f64> = scores
        .iter()
        .zip(&slopes)
        .map(|(s, ds)| k * (s - lse).exp() * ds)
        .collect();
    for &u in relevant {
        loss -= scores[u];
        upstream[u] -= slopes[u];
    }
    Ok((loss, upstream))
}

/// Proxy ranking loss summed over every source and each of its relevant
/// nodes, with its gradient.
pub fn proxy_loss(
    model: &Model,
    params: &Params,
    relevance: &[Vec<usize>],
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    spec.validate(model)?;
    let n = params.layout().nodes;
    if relevance.len() != n {
        return Err(Error::LengthMismatch {
            left: relevance.len(),
            right: n,
        });
    }
    let table = distance_table(model, params);
    let (loss, up) = proxy_from_table(&table, relevance, spec)?;
    let ctx = PairCtx::new(model, params);
    let metric = model.is_metric();
    let (_, grad) = reduce(&row_chunks(n), params.layout().len(), |rows, buf| {
        for i in rows.clone() {
            if !metric {
                ctx.accumulate_self(i, up[i * n + i], buf);
            }
            for j in i + 1..n {
                let g = up[i * n + j] + up[j * n + i];
                if g != 0.0 {
                    ctx.accumulate(i, j, |_| g, buf);
                }
            }
        }
        0.0
    });
    Ok((loss, grad))
}

/// A loss bound to its training data.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Distortion {
        targets: &'a DistanceMatrix,
        batch: PairBatch,
    },
    Proxy {
        relevance: &'a [Vec<usize>],
        spec: LossSpec,
    },
}

impl Objective<'_> {
    pub fn kind(&self) -> LossKind {
        match self {
            Objective::Distortion { .. } => LossKind::Distortion,
            Objective::Proxy { .. } => LossKind::Proxy,
        }
    }

    /// Loss and gradient at `params` for the given iteration (which selects
    /// the pair sample when pairs are sampled).
    pub fn evaluate(
        &self,
        model: &Model,
        params: &Params,
        iteration: usize,
    ) -> Result<(f64, Vec<f64>)> {
        match *self {
            Objective::Distortion { targets, batch } => match batch {
                PairBatch::Full => distortion_loss_full(model, params, targets),
                PairBatch::Sampled { count, seed } => {
                    let pairs = sample_pairs(targets.len(), count, seed, iteration);
                    distortion_loss(model, params, targets, &pairs)
                }
            },
            Objective::Proxy { relevance, spec } => proxy_loss(model, params, relevance, &spec),
        }
    }
}
