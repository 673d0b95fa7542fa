use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ovl_core::config::{ConfigLayer, RunConfig, TargetKind};
use ovl_core::experiment::{self, Dataset};
use ovl_core::graph::format_edge_list;
use ovl_core::losses::{Conversion, LossKind};
use ovl_core::spaces::SphereConvention;
use ovl_core::{dump, Error, ExitKind, Result};

/// Train and evaluate graph embeddings in product, overlaying and
/// dot-product spaces.
#[derive(Debug, Parser)]
#[command(name = "ovl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one signature and write the embedding, loss trace and metrics.
    Embed(RunArgs),
    /// Train a comma-separated list of signatures and write a combined report.
    Sweep(RunArgs),
    /// Compare metric spaces with dot products on a random bipartite graph.
    Bipartite(RunArgs),
    /// Compute distortion and mAP of a saved embedding.
    Eval(EvalArgs),
    /// Write the random bipartite graph as an edge list.
    GenBipartite(RunArgs),
}

/// Flags mirror the configuration file keys.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,

    /// Edge-list path or dataset name from the manifest.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    weighted: Option<bool>,
    /// shortest-path or raw.
    #[arg(long)]
    targets: Option<TargetKind>,
    /// Signature, or a comma-separated list for sweeps.
    #[arg(long, visible_alias = "sig")]
    signature: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// manifold or stored.
    #[arg(long)]
    sphere_convention: Option<SphereConvention>,
    /// distortion or proxy.
    #[arg(long)]
    loss: Option<LossKind>,
    /// t1, t2 or t3 (proxy loss only).
    #[arg(long, visible_alias = "conv")]
    conversion: Option<Conversion>,
    #[arg(long)]
    d0: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    exclude_self: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    lr_sweep: Option<Vec<f64>>,
    #[arg(long, visible_alias = "iters")]
    iterations: Option<usize>,
    /// Iterations of proxy-loss runs in the bipartite comparison.
    #[arg(long)]
    proxy_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Seeds per configuration, starting at --seed.
    #[arg(long)]
    restarts: Option<usize>,
    /// Output directory (a file for gen-bipartite).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Dataset manifest; defaults to $OVL_DATASETS.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for cached shortest-path matrices.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    bipartite_small: Option<usize>,
    #[arg(long)]
    bipartite_large: Option<usize>,
    #[arg(long)]
    bipartite_p: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Embedding dump written by `embed`.
    #[arg(long)]
    embedding: PathBuf,
    /// Include the average precision of every node.
    #[arg(long)]
    per_node: bool,
    #[command(flatten)]
    run: RunArgs,
}

impl RunArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            dataset: self.dataset.clone(),
            weighted: self.weighted,
            targets: self.targets,
            signature: self.signature.clone(),
            dim: self.dim,
            sphere_convention: self.sphere_convention,
            loss: self.loss,
            conversion: self.conversion,
            d0: self.d0,
            exclude_self: self.exclude_self,
            lr: self.lr,
            lr_sweep: self.lr_sweep.clone(),
            iterations: self.iterations,
            proxy_iterations: self.proxy_iterations,
            seed: self.seed,
            init_scale: self.init_scale,
            restarts: self.restarts,
            output: self.output.clone(),
            threads: self.threads,
            manifest: self.manifest.clone(),
            cache_dir: self.cache_dir.clone(),
            bipartite_small: self.bipartite_small,
            bipartite_large: self.bipartite_large,
            bipartite_p: self.bipartite_p,
        }
    }

    fn merged(&self) -> Result<ConfigLayer> {
        let file = match &self.config {
            Some(path) => ConfigLayer::load(path)?,
            None => ConfigLayer::default(),
        };
        Ok(file.overlay(self.layer()))
    }

    fn resolve(&self) -> Result<RunConfig> {
        self.merged()?.resolve()
    }
}

fn print_config(cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("ovl-out"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::to_value(value)?)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Embed(args) => {
            let cfg = args.resolve()?;
            if args.dry_run {
                return print_config(&cfg);
            }
            experiment::with_threads(cfg.threads, || {
                let ds = Dataset::load(&cfg)?;
                let out = experiment::embed(&ds, &cfg)?;
                let dir = output_dir(&cfg);
                out.write(&dir)?;
                println!("{}", to_json(&out.metrics)?);
                log::info!("wrote {}", dir.display());
                Ok(())
            })?
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            if args.dry_run {
                return print_config(&cfg);
            }
            experiment::with_threads(cfg.threads, || {
                let ds = Dataset::load(&cfg)?;
                let report = experiment::sweep(&ds, &cfg)?;
                report.write_all(&output_dir(&cfg))?;
                print!("{}", report.to_markdown());
                Ok(())
            })?
        }
        Command::Bipartite(args) => {
            let cfg = args.merged()?.with_bipartite_defaults().resolve()?;
            if args.dry_run {
                return print_config(&cfg);
            }
            experiment::with_threads(cfg.threads, || {
                let report = experiment::bipartite(&cfg)?;
                report.write_all(&output_dir(&cfg))?;
                print!("{}", report.to_markdown());
                Ok(())
            })?
        }
        Command::Eval(args) => {
            let cfg = args.run.resolve()?;
            if args.run.dry_run {
                return print_config(&cfg);
            }
            experiment::with_threads(cfg.threads, || {
                let (model, params) = dump::read_dump(&args.embedding)?;
                let ds = Dataset::load(&cfg)?;
                let ev = experiment::evaluate(&ds, &model, &params, args.per_node)?;
                let json = to_json(&ev)?;
                match &cfg.output {
                    Some(path) => write_file(path, &json)?,
                    None => println!("{json}"),
                }
                Ok(())
            })?
        }
        Command::GenBipartite(args) => {
            let cfg = args.resolve()?;
            if args.dry_run {
                return print_config(&cfg);
            }
            let graph = experiment::bipartite_graph(&cfg)?;
            let text = format_edge_list(&graph);
            match &cfg.output {
                Some(path) => write_file(path, &text)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
                        path: PathBuf::from("<stdout>"),
                        source: e,
                    })?;
                }
            }
            log::info!(
                "bipartite graph: {} nodes, {} edges",
                graph.node_count(),
                graph.edge_count()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.exit_kind();
            let label = match kind {
                ExitKind::Config => "config",
                ExitKind::Data => "data",
                ExitKind::Numeric => "numeric",
            };
            eprintln!("ovl: {label} error: {e}");
            ExitCode::from(kind as u8)
        }
    }
}
