//! Experiment runs behind the command-line subcommands: dataset loading,
//! single embeddings, signature sweeps, the bipartite comparison and
//! evaluation of saved embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Manifest, RunConfig, TargetKind};
use crate::dump;
use crate::error::{Error, Result};
use crate::graph::{
    generate_bipartite, load_edge_list, shortest_paths, shortest_paths_cached, DistanceMatrix,
    Graph,
};
use crate::losses::{distance_table, LossKind, Objective, PairBatch};
use crate::metrics::{distortion_from_table, mean_ap, per_node_ap, MetricsReport};
use crate::optimizer::{train_rate, RunResult, Selection};
use crate::report::{self, Comparison, ComparisonEntry, Report, ReportRow};
use crate::spaces::{parse_signature_with, Model, Params};

/// A graph with everything training and evaluation need from it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub targets: DistanceMatrix,
    /// Closest neighbours of every node.
    pub relevance: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        targets: TargetKind,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let name = name.into();
        graph.ensure_connected()?;
        let targets = match (targets, cache_dir) {
            (TargetKind::Raw, _) => DistanceMatrix::from_raw_weights(&graph)?,
            (TargetKind::ShortestPath, None) => shortest_paths(&graph)?,
            (TargetKind::ShortestPath, Some(dir)) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                shortest_paths_cached(&graph, &dir.join(format!("{}.dgmx", file_safe(&name))))?
            }
        };
        let relevance = graph.relevance_sets()?;
        Ok(Self {
            name,
            graph,
            targets,
            relevance,
        })
    }

    /// Loads `cfg.dataset`, either an edge-list path or a name from the
    /// manifest.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let name = cfg
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given".into()))?;
        let (path, weighted, label) = resolve_dataset(name, cfg)?;
        log::info!("loading {} from {}", label, path.display());
        let graph = load_edge_list(&path, weighted)?;
        log::info!(
            "{}: {} nodes, {} edges",
            label,
            graph.node_count(),
            graph.edge_count()
        );
        Self::new(label, graph, cfg.targets, cfg.cache_dir.as_deref())
    }

    pub fn nodes(&self) -> usize {
        self.graph.node_count()
    }
}

fn resolve_dataset(name: &str, cfg: &RunConfig) -> Result<(PathBuf, bool, String)> {
    let path = Path::new(name);
    if path.is_file() {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.to_string());
        return Ok((path.to_path_buf(), cfg.weighted.unwrap_or(false), label));
    }
    let manifest = Manifest::discover(cfg.manifest.as_deref())?;
    match manifest.lookup(name) {
        Some(entry) => Ok((
            entry.path.clone(),
            cfg.weighted.unwrap_or(entry.weighted),
            name.to_ascii_lowercase(),
        )),
        None => Err(Error::UnknownDataset {
            name: name.to_string(),
            manifest: manifest.describe(),
        }),
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn build_model(signature: &str, cfg: &RunConfig) -> Result<Model> {
    Ok(Model::new(parse_signature_with(
        signature,
        cfg.dim,
        cfg.sphere_convention,
    )?))
}

/// Distortion and mAP of one embedding.
pub fn score(ds: &Dataset, model: &Model, params: &Params) -> (f64, f64) {
    let table = distance_table(model, params);
    let distortion = distortion_from_table(&table, &ds.targets);
    let map = mean_ap(&per_node_ap(&table, &ds.relevance));
    (distortion, map)
}

/// Every rate of one signature with one seed.
pub struct SignatureRuns {
    pub model: Model,
    /// One row per rate, in rate order.
    pub rows: Vec<ReportRow>,
    /// The selected run, when any rate finished.
    pub best: Option<RunResult>,
    pub first_error: Option<Error>,
}

/// Trains `signature` at every rate of `cfg` with `cfg.seed`. Rates that fail
/// numerically become failed rows; the rate with the best metric for the
/// configured loss is marked.
pub fn run_signature(ds: &Dataset, cfg: &RunConfig, signature: &str) -> Result<SignatureRuns> {
    let model = build_model(signature, cfg)?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let spec = cfg.loss_spec(ds.nodes());
    let (objective, selection) = match cfg.loss {
        LossKind::Distortion => {
            let batch = match spec.pair_batch {
                PairBatch::Full => PairBatch::Full,
                PairBatch::Sampled { count, .. } => PairBatch::Sampled {
                    count,
                    seed: cfg.seed,
                },
            };
            (
                Objective::Distortion {
                    targets: &ds.targets,
                    batch,
                },
                Selection::Distortion(&ds.targets),
            )
        }
        LossKind::Proxy => (
            Objective::Proxy {
                relevance: &ds.relevance,
                spec,
            },
            Selection::Map(&ds.relevance),
        ),
    };

    let template = ReportRow {
        dataset: ds.name.clone(),
        signature: signature.to_string(),
        sphere_convention: cfg.sphere_convention,
        loss: cfg.loss,
        conversion: (cfg.loss == LossKind::Proxy).then(|| cfg.conversion()),
        lr: 0.0,
        seed: cfg.seed,
        iterations: cfg.iterations,
        distortion: None,
        map: None,
        seconds: 0.0,
        best: false,
        error: None,
    };
    let mut rows = Vec::new();
    let mut best: Option<(usize, RunResult)> = None;
    let mut first_error = None;
    let validated = match objective {
        Objective::Proxy { spec, .. } => spec.validate(&model),
        Objective::Distortion { .. } => Ok(()),
    };
    for lr in train_cfg.rates() {
        let mut row = ReportRow {
            lr,
            ..template.clone()
        };
        let outcome = match &validated {
            Ok(()) => train_rate(&model, objective, ds.nodes(), &train_cfg, lr, selection),
            Err(e) => Err(Error::Domain(e.to_string())),
        };
        match outcome {
            Ok(run) => {
                let (distortion, map) = score(ds, &model, &run.params);
                row.distortion = Some(distortion);
                row.map = Some(map);
                row.seconds = run.seconds;
                log::info!(
                    "{} {} lr={} seed={}: distortion {:.6}, mAP {:.6} ({:.1}s)",
                    ds.name,
                    signature,
                    lr,
                    cfg.seed,
                    distortion,
                    map,
                    run.seconds
                );
                if best
                    .as_ref()
                    .is_none_or(|(_, b)| selection.better(run.metric, b.metric))
                {
                    best = Some((rows.len(), run));
                }
            }
            Err(e) => {
                log::warn!("{} {} lr={}: {}", ds.name, signature, lr, e);
                row.error = Some(e.to_string());
                first_error.get_or_insert(e);
            }
        }
        rows.push(row);
    }
    if let Some((i, _)) = &best {
        rows[*i].best = true;
    }
    if let Err(e) = validated {
        first_error = Some(e);
    }
    Ok(SignatureRuns {
        model,
        rows,
        best: best.map(|(_, run)| run),
        first_error,
    })
}

/// Result of `embed`: the best run over all restarts and rates.
pub struct EmbedOutput {
    pub report: Report,
    pub metrics: MetricsReport,
    pub model: Model,
    pub run: RunResult,
}

impl EmbedOutput {
    /// Writes the embedding dump, loss trace, metrics and report files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.report.write_all(dir)?;
        dump::write_dump(&dir.join("embedding.ovle"), &self.model, &self.run.params)?;
        let trace = report::trace_to_csv(&self.run.trace, self.run.metric)?;
        let path = dir.join("trace.csv");
        fs::write(&path, trace).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&serde_json::to_value(&self.metrics)?)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn seeds(cfg: &RunConfig) -> impl Iterator<Item = u64> {
    let first = cfg.seed;
    (0..cfg.restarts as u64).map(move |k| first.wrapping_add(k))
}

pub fn embed(ds: &Dataset, cfg: &RunConfig) -> Result<EmbedOutput> {
    cfg.validate()?;
    let sigs = cfg.signatures();
    if sigs.len() != 1 {
        return Err(Error::Config(format!(
            "embed takes one signature, got {}",
            sigs.len()
        )));
    }
    let mut rows = Vec::new();
    let mut best: Option<(Model, RunResult, u64)> = None;
    let mut first_error = None;
    for seed in seeds(cfg) {
        let run_cfg = RunConfig {
            seed,
            ..cfg.clone()
        };
        let runs = run_signature(ds, &run_cfg, &sigs[0])?;
        rows.extend(runs.rows);
        if let Some(e) = runs.first_error {
            first_error.get_or_insert(e);
        }
        if let Some(run) = runs.best {
            let selection = selection_for(ds, cfg.loss);
            if best
                .as_ref()
                .is_none_or(|(_, b, _)| selection.better(run.metric, b.metric))
            {
                best = Some((runs.model, run, seed));
            }
        }
    }
    let Some((model, run, seed)) = best else {
        return Err(first_error.expect("a failed run records its error"));
    };
    let (distortion, map) = score(ds, &model, &run.params);
    let metrics = MetricsReport {
        distortion,
        map,
        per_node_ap: None,
        signature: sigs[0].clone(),
        loss: cfg.loss,
        lr: run.lr,
        seed,
        iterations: cfg.iterations,
        seconds: run.seconds,
    };
    Ok(EmbedOutput {
        report: Report::new("embed", cfg.clone(), rows),
        metrics,
        model,
        run,
    })
}

fn selection_for(ds: &Dataset, loss: LossKind) -> Selection<'_> {
    match loss {
        LossKind::Distortion => Selection::Distortion(&ds.targets),
        LossKind::Proxy => Selection::Map(&ds.relevance),
    }
}

/// One row per (signature, seed, rate), signatures in input order. Fails
/// only when every run failed.
pub fn sweep(ds: &Dataset, cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let sigs = cfg.signatures();
    for s in &sigs {
        build_model(s, cfg)?;
    }
    let (rows, first_error) = sweep_rows(ds, cfg, &sigs)?;
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(first_error.expect("a failed run records its error"));
    }
    Ok(Report::new("sweep", cfg.clone(), rows))
}

fn sweep_rows(
    ds: &Dataset,
    cfg: &RunConfig,
    sigs: &[String],
) -> Result<(Vec<ReportRow>, Option<Error>)> {
    let mut rows = Vec::new();
    let mut first_error = None;
    for sig in sigs {
        for seed in seeds(cfg) {
            let run_cfg = RunConfig {
                seed,
                ..cfg.clone()
            };
            let runs = run_signature(ds, &run_cfg, sig)?;
            rows.extend(runs.rows);
            if let Some(e) = runs.first_error {
                first_error.get_or_insert(e);
            }
        }
    }
    Ok((rows, first_error))
}

/// The graph of the bipartite benchmark for `cfg`.
pub fn bipartite_graph(cfg: &RunConfig) -> Result<Graph> {
    generate_bipartite(
        cfg.bipartite_small,
        cfg.bipartite_large,
        cfg.bipartite_p,
        cfg.seed,
    )
}

/// Trains every signature under both losses on the bipartite graph and
/// compares the best metric space with the best dot-product model.
/// Distortion runs use `iterations`, proxy runs `proxy_iterations`.
pub fn bipartite(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let graph = bipartite_graph(cfg)?;
    log::info!(
        "bipartite graph: {} nodes, {} edges",
        graph.node_count(),
        graph.edge_count()
    );
    let ds = Dataset::new("bipartite", graph, TargetKind::ShortestPath, None)?;
    let sigs = cfg.signatures();
    for s in &sigs {
        build_model(s, cfg)?;
    }
    let mut rows = Vec::new();
    let mut first_error = None;
    for loss in [LossKind::Distortion, LossKind::Proxy] {
        let loss_cfg = RunConfig {
            loss,
            iterations: match loss {
                LossKind::Distortion => cfg.iterations,
                LossKind::Proxy => cfg.proxy_iterations,
            },
            conversion: match loss {
                LossKind::Distortion => None,
                LossKind::Proxy => Some(cfg.conversion()),
            },
            ..cfg.clone()
        };
        let (r, e) = sweep_rows(&ds, &loss_cfg, &sigs)?;
        rows.extend(r);
        if let Some(e) = e {
            first_error.get_or_insert(e);
        }
    }
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(first_error.expect("a failed run records its error"));
    }
    let mut report = Report::new("bipartite", cfg.clone(), rows);
    report.comparison = compare(&report, cfg)?;
    Ok(report)
}

/// Best metric space against the best dot-product model, per loss, on seed
/// means of the best-rate rows.
pub fn compare(report: &Report, cfg: &RunConfig) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for loss in [LossKind::Distortion, LossKind::Proxy] {
        let mut best_metric: Option<ComparisonEntry> = None;
        let mut best_dot: Option<ComparisonEntry> = None;
        for s in report.summary.iter().filter(|s| s.loss == loss) {
            let value = match loss {
                LossKind::Distortion => s.distortion,
                LossKind::Proxy => s.map,
            };
            let Some(value) = value.map(|v| v.mean) else {
                continue;
            };
            let slot = if build_model(&s.signature, cfg)?.is_metric() {
                &mut best_metric
            } else {
                &mut best_dot
            };
            let better = match slot {
                None => true,
                Some(b) => match loss {
                    LossKind::Distortion => value < b.value,
                    LossKind::Proxy => value > b.value,
                },
            };
            if better {
                *slot = Some(ComparisonEntry {
                    signature: s.signature.clone(),
                    value,
                });
            }
        }
        if best_metric.is_some() || best_dot.is_some() {
            out.push(Comparison {
                loss,
                best_metric,
                best_dot,
            });
        }
    }
    Ok(out)
}

/// Re-trains the configuration recorded in `row` and returns the fresh row.
pub fn rerun(ds: &Dataset, cfg: &RunConfig, row: &ReportRow) -> Result<ReportRow> {
    let run_cfg = RunConfig {
        signature: row.signature.clone(),
        sphere_convention: row.sphere_convention,
        loss: row.loss,
        conversion: row.conversion,
        lr: Some(row.lr),
        lr_sweep: None,
        seed: row.seed,
        iterations: row.iterations,
        restarts: 1,
        ..cfg.clone()
    };
    let mut runs = run_signature(ds, &run_cfg, &row.signature)?;
    let mut fresh = runs.rows.remove(0);
    fresh.best = row.best;
    Ok(fresh)
}

/// True when two rows carry bit-identical metrics.
pub fn same_numbers(a: &ReportRow, b: &ReportRow) -> bool {
    let bits = |v: Option<f64>| v.map(f64::to_bits);
    bits(a.distortion) == bits(b.distortion) && bits(a.map) == bits(b.map) && a.error == b.error
}

/// Metrics of a saved embedding against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dataset: String,
    pub signature: String,
    pub nodes: usize,
    pub distortion: f64,
    pub map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node_ap: Option<Vec<f64>>,
}

pub fn evaluate(ds: &Dataset, model: &Model, params: &Params, per_node: bool) -> Result<Evaluation> {
    let n = params.layout().nodes;
    if n != ds.nodes() {
        return Err(Error::Format(format!(
            "embedding has {n} nodes but {} has {}",
            ds.name,
            ds.nodes()
        )));
    }
    let table = distance_table(model, params);
    let ap = per_node_ap(&table, &ds.relevance);
    Ok(Evaluation {
        dataset: ds.name.clone(),
        signature: model.signature().to_string(),
        nodes: n,
        distortion: distortion_from_table(&table, &ds.targets),
        map: mean_ap(&ap),
        per_node_ap: per_node.then_some(ap),
    })
}
