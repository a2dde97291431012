//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::bench::{BuildConfig, StandaloneConfig};
use crate::cell::{MacroConfig, SearchSpaceSpec};
use crate::data::{DatasetConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::search::EvolutionConfig;
use crate::supernet::{EvalScheme, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperNetSection {
    pub train: TrainConfig,
    /// Independently seeded super-nets per (space, variant).
    pub seeds: usize,
    pub variants: Vec<String>,
    pub schemes: Vec<String>,
    /// Architectures scored per super-net for correlations and scatter plots.
    pub correlation_sample: usize,
    /// Batch size of statistics recalibration.
    pub calibration_batch: usize,
}

impl Default for SuperNetSection {
    fn default() -> Self {
        SuperNetSection {
            train: TrainConfig::default(),
            seeds: 5,
            variants: ["baseline", "single-kernel", "pro-rata", "avg-3"].map(String::from).to_vec(),
            schemes: ["no_ft", "bns_ft"].map(String::from).to_vec(),
            correlation_sample: 1000,
            calibration_batch: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub rs_seeds: usize,
    pub re_seeds: usize,
    pub ws_seeds: usize,
    /// Standalone queries per random-search run, capped at the space size.
    pub rs_evaluations: usize,
    pub evolution: EvolutionConfig,
    /// Architectures proxy-scored per guided run, capped at the space size.
    pub ws_sample: usize,
    pub ws_variant: String,
    pub ws_scheme: String,
    pub topk: Vec<usize>,
    pub alpha: f64,
    /// Points of the shared log-spaced regret grid.
    pub grid_points: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            rs_seeds: 500,
            re_seeds: 500,
            ws_seeds: 30,
            rs_evaluations: 10_000,
            evolution: EvolutionConfig::default(),
            ws_sample: 1000,
            ws_variant: "baseline".into(),
            ws_scheme: "bns_ft".into(),
            topk: vec![1, 10, 20],
            alpha: 0.05,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Space names such as `full@v4e9` or `a2@v4e9`; all share one node and edge bound.
    pub spaces: Vec<String>,
    pub dataset: DatasetConfig,
    pub net: MacroConfig,
    pub standalone: StandaloneConfig,
    pub repeats: usize,
    pub supernet: SuperNetSection,
    pub search: SearchSection,
    /// Not part of the fingerprint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Not part of the fingerprint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            spaces: vec!["full".into()],
            dataset: DatasetConfig::default(),
            net: MacroConfig::default(),
            standalone: StandaloneConfig::default(),
            repeats: 3,
            supernet: SuperNetSection::default(),
            search: SearchSection::default(),
            output_dir: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.space_specs()?;
        if specs.is_empty() {
            return Err(Error::Config("no search spaces configured".into()));
        }
        let base = &specs[0];
        if specs.iter().any(|s| s.max_nodes != base.max_nodes || s.max_edges != base.max_edges) {
            return Err(Error::Config("all spaces must share node and edge bounds".into()));
        }
        if self.net.num_classes != NUM_CLASSES || self.net.input_channels != 1 {
            return Err(Error::Config(format!("the image task has 1 input channel and {NUM_CLASSES} classes")));
        }
        if self.repeats == 0 || self.supernet.seeds == 0 || self.supernet.correlation_sample == 0 {
            return Err(Error::Config("repeats, super-net seeds and correlation sample must be positive".into()));
        }
        self.supernet.train.validate()?;
        self.variants()?;
        self.schemes()?;
        Variant::parse(&self.search.ws_variant)?;
        EvalScheme::parse(&self.search.ws_scheme)?;
        if !self.supernet.variants.contains(&self.search.ws_variant) {
            return Err(Error::Config(format!("ws_variant {} is not among the trained variants", self.search.ws_variant)));
        }
        if !self.supernet.schemes.contains(&self.search.ws_scheme) {
            return Err(Error::Config(format!("ws_scheme {} is not among the evaluated schemes", self.search.ws_scheme)));
        }
        let s = &self.search;
        if s.rs_seeds < 2 || s.re_seeds < 2 || s.ws_seeds < 2 {
            return Err(Error::Config("each strategy needs at least two seeds".into()));
        }
        if s.topk.is_empty() || s.topk.contains(&0) {
            return Err(Error::Config("top-k values must be positive".into()));
        }
        if s.rs_evaluations == 0 || s.ws_sample == 0 || s.grid_points < 2 {
            return Err(Error::Config("evaluation counts must be positive and the grid needs two points".into()));
        }
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        s.evolution.validate()
    }

    pub fn space_specs(&self) -> Result<Vec<SearchSpaceSpec>> {
        self.spaces.iter().map(|s| SearchSpaceSpec::parse_name(s)).collect()
    }

    /// The unfiltered space every configured space is a subset of; the
    /// benchmark table covers it.
    pub fn base_spec(&self) -> Result<SearchSpaceSpec> {
        let first = self.space_specs()?.into_iter().next().ok_or_else(|| Error::Config("no search spaces configured".into()))?;
        Ok(SearchSpaceSpec::full().with_bounds(first.max_nodes, first.max_edges))
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.supernet.variants.iter().map(|v| Variant::parse(v)).collect()
    }

    pub fn schemes(&self) -> Result<Vec<EvalScheme>> {
        self.supernet.schemes.iter().map(|s| EvalScheme::parse(s)).collect()
    }

    pub fn build_config(&self) -> Result<BuildConfig> {
        Ok(BuildConfig {
            space: self.base_spec()?.name(),
            dataset: self.dataset,
            net: self.net,
            standalone: self.standalone,
            repeats: self.repeats,
            seed: self.seed,
        })
    }

    /// Hash of every setting that affects results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.threads = None;
        let json = serde_json::to_string(&c).expect("plain data serializes");
        format!("{:032x}", xxh3_128(json.as_bytes()))
    }

    pub fn thread_count(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}
