//! Run configuration: a flat TOML file whose keys match the command-line
//! flags, layered so that flags override the file, plus the dataset
//! manifest that maps builtin dataset names to local files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Conversion, LossKind, LossSpec, PairBatch, DEFAULT_D0};
use crate::optimizer::TrainConfig;
use crate::spaces::SphereConvention;

/// Names the dataset registry recognises.
pub const BUILTIN_DATASETS: [&str; 5] = ["usca312", "csphd", "power", "facebook", "wla6"];

/// Environment variable naming the dataset manifest.
pub const MANIFEST_ENV: &str = "OVL_DATASETS";

/// Signatures compared on the bipartite benchmark.
pub const BIPARTITE_SIGNATURES: [&str; 13] = [
    "E10",
    "H10",
    "S9",
    "H5^2",
    "S4^2",
    "H5xS4",
    "H2^5",
    "S1^5",
    "H2^2xE2xS1^2",
    "OL1:t=0",
    "OL1:t=1",
    "OL2:t=1",
    "DOT",
];

pub const BIPARTITE_RATES: [f64; 4] = [0.1, 0.05, 0.01, 0.001];

/// Target distances for distortion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// All-pairs shortest paths.
    #[default]
    ShortestPath,
    /// Edge weights of a complete weighted graph, used as-is.
    Raw,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::ShortestPath => "shortest-path",
            TargetKind::Raw => "raw",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shortest-path" => Ok(TargetKind::ShortestPath),
            "raw" => Ok(TargetKind::Raw),
            _ => Err(Error::Config(format!(
                "unknown target kind '{s}' (expected shortest-path or raw)"
            ))),
        }
    }
}

/// Every configurable key, all optional. Layers are merged with
/// [`ConfigLayer::overlay`]: defaults lose to the config file, which loses
/// to command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigLayer {
    pub dataset: Option<String>,
    pub weighted: Option<bool>,
    pub targets: Option<TargetKind>,
    /// One signature, or a comma-separated list for sweeps.
    pub signature: Option<String>,
    pub dim: Option<usize>,
    pub sphere_convention: Option<SphereConvention>,
    pub loss: Option<LossKind>,
    pub conversion: Option<Conversion>,
    pub d0: Option<f64>,
    pub exclude_self: Option<bool>,
    pub lr: Option<f64>,
    pub lr_sweep: Option<Vec<f64>>,
    pub iterations: Option<usize>,
    pub proxy_iterations: Option<usize>,
    pub seed: Option<u64>,
    pub init_scale: Option<f64>,
    pub restarts: Option<usize>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub bipartite_small: Option<usize>,
    pub bipartite_large: Option<usize>,
    pub bipartite_p: Option<f64>,
}

macro_rules! overlay_fields {
    ($base:expr, $top:expr, $($field:ident),*) => {
        ConfigLayer { $($field: $top.$field.or($base.$field)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    /// Keys set in `top` win over keys set in `self`.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        overlay_fields!(
            self,
            top,
            dataset,
            weighted,
            targets,
            signature,
            dim,
            sphere_convention,
            loss,
            conversion,
            d0,
            exclude_self,
            lr,
            lr_sweep,
            iterations,
            proxy_iterations,
            seed,
            init_scale,
            restarts,
            output,
            threads,
            manifest,
            cache_dir,
            bipartite_small,
            bipartite_large,
            bipartite_p
        )
    }

    /// Fills in the bipartite benchmark's signature list and rate sweep
    /// where the layer leaves them open. A conversion without a loss implies
    /// the proxy loss.
    pub fn with_bipartite_defaults(mut self) -> ConfigLayer {
        if self.signature.is_none() {
            self.signature = Some(BIPARTITE_SIGNATURES.join(","));
        }
        if self.lr.is_none() && self.lr_sweep.is_none() {
            self.lr_sweep = Some(BIPARTITE_RATES.to_vec());
        }
        if self.conversion.is_some() && self.loss.is_none() {
            self.loss = Some(LossKind::Proxy);
        }
        self
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let cfg = RunConfig {
            dataset: self.dataset,
            weighted: self.weighted,
            targets: self.targets.unwrap_or(d.targets),
            signature: self.signature.unwrap_or(d.signature),
            dim: self.dim.unwrap_or(d.dim),
            sphere_convention: self.sphere_convention.unwrap_or(d.sphere_convention),
            loss: self.loss.unwrap_or(d.loss),
            conversion: self.conversion,
            d0: self.d0.unwrap_or(d.d0),
            exclude_self: self.exclude_self.unwrap_or(d.exclude_self),
            lr: self.lr,
            lr_sweep: self.lr_sweep,
            iterations: self.iterations.unwrap_or(d.iterations),
            proxy_iterations: self.proxy_iterations.unwrap_or(d.proxy_iterations),
            seed: self.seed.unwrap_or(d.seed),
            init_scale: self.init_scale.unwrap_or(d.init_scale),
            restarts: self.restarts.unwrap_or(d.restarts),
            output: self.output,
            threads: self.threads,
            manifest: self.manifest,
            cache_dir: self.cache_dir,
            bipartite_small: self.bipartite_small.unwrap_or(d.bipartite_small),
            bipartite_large: self.bipartite_large.unwrap_or(d.bipartite_large),
            bipartite_p: self.bipartite_p.unwrap_or(d.bipartite_p),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub weighted: Option<bool>,
    pub targets: TargetKind,
    pub signature: String,
    pub dim: usize,
    pub sphere_convention: SphereConvention,
    pub loss: LossKind,
    pub conversion: Option<Conversion>,
    pub d0: f64,
    pub exclude_self: bool,
    pub lr: Option<f64>,
    pub lr_sweep: Option<Vec<f64>>,
    pub iterations: usize,
    pub proxy_iterations: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub restarts: usize,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub bipartite_small: usize,
    pub bipartite_large: usize,
    pub bipartite_p: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            weighted: None,
            targets: TargetKind::ShortestPath,
            signature: "E10".into(),
            dim: 10,
            sphere_convention: SphereConvention::Manifold,
            loss: LossKind::Distortion,
            conversion: None,
            d0: DEFAULT_D0,
            exclude_self: false,
            lr: None,
            lr_sweep: None,
            iterations: 2000,
            proxy_iterations: 1000,
            seed: 0,
            init_scale: 0.1,
            restarts: 1,
            output: None,
            threads: None,
            manifest: None,
            cache_dir: None,
            bipartite_small: 20,
            bipartite_large: 700,
            bipartite_p: 0.05,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.loss == LossKind::Distortion && self.conversion.is_some() {
            return fail("conversion applies to the proxy loss only".into());
        }
        if self.lr.is_some() && self.lr_sweep.is_some() {
            return fail("set either lr or lr-sweep, not both".into());
        }
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if self.restarts == 0 {
            return fail("restarts must be at least 1".into());
        }
        if self.iterations == 0 || self.proxy_iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return fail(format!("d0 must be positive, got {}", self.d0));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if self.signatures().is_empty() {
            return fail("no signature given".into());
        }
        if !(self.bipartite_p > 0.0 && self.bipartite_p < 1.0) {
            return fail(format!("bipartite-p must be in (0, 1), got {}", self.bipartite_p));
        }
        if self.bipartite_small == 0 || self.bipartite_large == 0 {
            return fail("bipartite part sizes must be positive".into());
        }
        self.train_config().validate()
    }

    pub fn signatures(&self) -> Vec<String> {
        self.signature
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn conversion(&self) -> Conversion {
        self.conversion.unwrap_or(Conversion::T1)
    }

    /// Learning rates to try: explicit settings first, otherwise the
    /// protocol defaults for known datasets.
    pub fn rates(&self) -> Vec<f64> {
        if let Some(sweep) = &self.lr_sweep {
            return sweep.clone();
        }
        if let Some(lr) = self.lr {
            return vec![lr];
        }
        protocol_rates(self.dataset.as_deref().unwrap_or(""), self.loss)
    }

    pub fn train_config(&self) -> TrainConfig {
        let rates = self.rates();
        TrainConfig {
            iterations: self.iterations,
            learning_rate: rates.first().copied().unwrap_or(0.1),
            lr_sweep: (rates.len() > 1).then_some(rates),
            seed: self.seed,
            init_scale: self.init_scale,
            ..TrainConfig::default()
        }
    }

    pub fn loss_spec(&self, nodes: usize) -> LossSpec {
        match self.loss {
            LossKind::Distortion => LossSpec {
                d0: self.d0,
                ..LossSpec::distortion(PairBatch::for_nodes(nodes, self.seed))
            },
            LossKind::Proxy => LossSpec {
                d0: self.d0,
                exclude_self: self.exclude_self,
                ..LossSpec::proxy(self.conversion())
            },
        }
    }
}

/// Default learning rates of the published protocol; dataset paths match by
/// file stem.
pub fn protocol_rates(dataset: &str, loss: LossKind) -> Vec<f64> {
    let name = Path::new(dataset)
        .file_stem()
        .map(|s| s.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match (name.as_str(), loss) {
        ("usca312", LossKind::Distortion) => vec![0.1, 0.01],
        ("usca312" | "csphd", LossKind::Proxy) => vec![0.01, 0.05],
        _ => vec![0.1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub weighted: bool,
}

/// Maps dataset names to local edge-list files. Relative paths are taken
/// relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, ManifestEntry>,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in m.datasets.values_mut() {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
        }
        m.source = Some(path.to_path_buf());
        Ok(m)
    }

    /// The manifest named by the configuration, else by [`MANIFEST_ENV`];
    /// empty when neither is set.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(MANIFEST_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn lookup(&self, name: &str) -> Option<&ManifestEntry> {
        self.datasets.get(&name.to_ascii_lowercase())
    }

    pub fn describe(&self) -> String {
        match &self.source {
            Some(p) => p.display().to_string(),
            None => format!("none; set {MANIFEST_ENV} or --manifest"),
        }
    }
}
