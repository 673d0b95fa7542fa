//! Evaluation: mean relative distortion over all pairs and mean average
//! precision of the embedded neighbourhood ranking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, Graph};
use crate::losses::{distance_table, LossKind};
use crate::spaces::{Model, Params};

/// Evaluation results for one trained embedding, with the run settings that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub distortion: f64,
    pub map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node_ap: Option<Vec<f64>>,
    pub signature: String,
    pub loss: LossKind,
    pub lr: f64,
    pub seed: u64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Exact mean of `|d_U - d_G| / d_G` over every unordered pair.
pub fn distortion_metric(model: &Model, params: &Params, targets: &DistanceMatrix) -> Result<f64> {
    let n = targets.len();
    if n < 2 || params.layout().nodes != n {
        return Err(Error::LengthMismatch {
            left: params.layout().nodes,
            right: n,
        });
    }
    let table = distance_table(model, params);
    Ok(distortion_from_table(&table, targets))
}

/// Distortion of a precomputed `n x n` distance table.
pub fn distortion_from_table(table: &[f64], targets: &DistanceMatrix) -> f64 {
    let n = targets.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..n {
                let dg = targets.get(i, j);
                acc += (table[i * n + j] - dg).abs() / dg;
            }
            acc
        })
        .collect();
    rows.iter().sum::<f64>() / (n * (n - 1) / 2) as f64
}

/// Average precision of one source given its distance row.
///
/// For each relevant `u`, the retrieved set is every `w != v` with
/// `row[w] <= row[u]`; the precision terms are summed in the order of
/// `relevant`.
pub fn average_precision(row: &[f64], v: usize, relevant: &[usize]) -> f64 {
    let mut others: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(w, _)| w != v)
        .map(|(_, &d)| d)
        .collect();
    others.sort_by(f64::total_cmp);
    let mut rel: Vec<f64> = relevant.iter().map(|&u| row[u]).collect();
    rel.sort_by(f64::total_cmp);
    let count_le = |sorted: &[f64], x: f64| sorted.partition_point(|d| d.total_cmp(&x).is_le());
    let mut sum = 0.0;
    for &u in relevant {
        let du = row[u];
        let retrieved = count_le(&others, du);
        let hits = count_le(&rel, du);
        sum += hits as f64 / retrieved as f64;
    }
    sum / relevant.len() as f64
}

/// Per-node average precision from a distance table.
pub fn per_node_ap(table: &[f64], relevance: &[Vec<usize>]) -> Vec<f64> {
    let n = relevance.len();
    (0..n)
        .into_par_iter()
        .map(|v| average_precision(&table[v * n..(v + 1) * n], v, &relevance[v]))
        .collect()
}

/// Mean of per-node average precisions, in node order.
pub fn mean_ap(per_node: &[f64]) -> f64 {
    per_node.iter().sum::<f64>() / per_node.len() as f64
}

/// Mean average precision of the embedding against the closest-neighbour
/// sets of `graph`.
pub fn map_metric(model: &Model, params: &Params, graph: &Graph) -> Result<f64> {
    Ok(mean_ap(&map_per_node(model, params, graph)?))
}

pub fn map_per_node(model: &Model, params: &Params, graph: &Graph) -> Result<Vec<f64>> {
    if params.layout().nodes != graph.node_count() {
        return Err(Error::LengthMismatch {
            left: params.layout().nodes,
            right: graph.node_count(),
        });
    }
    let relevance = graph.relevance_sets()?;
    let table = distance_table(model, params);
    Ok(per_node_ap(&table, &relevance))
}

/// Every other node sorted by ascending model distance from `v`, ties in
/// index order.
pub fn rank_table(model: &Model, params: &Params, v: usize) -> Result<Vec<(usize, f64)>> {
    let n = params.layout().nodes;
    if v >= n {
        return Err(Error::Config(format!("node {v} out of range (n = {n})")));
    }
    let scalars = model.resolve(params.scalars());
    let x = params.row(v);
    let mut out: Vec<(usize, f64)> = (0..n)
        .filter(|&w| w != v)
        .map(|w| (w, model.distance(&scalars, x, params.row(w))))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}
