use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::AllocatorKind;
use crate::attackers::AttackerConfig;
use crate::cf::TrainConfig;
use crate::dataset::{DelimitedFormat, PopularityMode, SyntheticConfig, DEFAULT_LIKE_THRESHOLD};
use crate::defense::{DetectorKind, FapParams};
use crate::error::{Error, Result};
use crate::pathcount::{ProxyParams, DEFAULT_SAMPLE_CAP, SUPPORTED_ORDERS};
use crate::seed::sha256_hex;

/// Where the interactions come from. Synthetic data is already implicit and
/// is used as generated; file data goes through implicit mapping and k-core
/// filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Files {
        ratings: PathBuf,
        categories: PathBuf,
        #[serde(default)]
        format: DelimitedFormat,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    pub k_core: usize,
    pub like_threshold: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            k_core: 10,
            like_threshold: DEFAULT_LIKE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSelection {
    pub mode: PopularityMode,
    pub n_items: usize,
    pub n_users: usize,
    /// Users need fewer than this many likes in the item's category.
    pub cat_threshold: usize,
    pub seed: u64,
}

impl Default for TargetSelection {
    fn default() -> Self {
        TargetSelection {
            mode: PopularityMode::Popular,
            n_items: 1,
            n_users: 50,
            cat_threshold: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Simulated,
    Proxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Largest per-user budget H.
    pub max_budget: usize,
    /// Simulation repeats per budget level.
    pub runs: usize,
    pub top_k: usize,
    pub surrogate: TrainConfig,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Simulated,
            max_budget: 6,
            runs: 10,
            top_k: 10,
            surrogate: TrainConfig::default(),
            alpha: 1.0,
            beta: 0.3,
        }
    }
}

impl EstimatorConfig {
    pub fn proxy_params(&self) -> ProxyParams {
        ProxyParams {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub detectors: Vec<DetectorKind>,
    /// Users to flag; `None` flags as many as there are fakes.
    pub n_flag: Option<usize>,
    pub n_components: usize,
    pub fap: FapParams,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            detectors: vec![DetectorKind::Pca, DetectorKind::Fap],
            n_flag: None,
            n_components: 3,
            fap: FapParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub orders: Vec<usize>,
    pub n_groups: usize,
    pub sample_cap: usize,
    pub model: TrainConfig,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            orders: vec![3],
            n_groups: 50,
            sample_cap: DEFAULT_SAMPLE_CAP,
            model: TrainConfig::default(),
        }
    }
}

/// One file that fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub preprocess: Preprocess,
    pub targets: TargetSelection,
    pub accessible_ratio: f64,
    pub attacker: AttackerConfig,
    pub estimator: EstimatorConfig,
    pub allocators: Vec<AllocatorKind>,
    /// Global fake-user budget N.
    pub total_budget: usize,
    pub victims: Vec<TrainConfig>,
    pub ks: Vec<usize>,
    pub defense: Option<DefenseConfig>,
    pub correlation: Option<CorrelationConfig>,
    /// Repeat seeds; reported metrics are means over them.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Uplift cache; defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            preprocess: Preprocess::default(),
            targets: TargetSelection::default(),
            accessible_ratio: 0.5,
            attacker: AttackerConfig::default(),
            estimator: EstimatorConfig::default(),
            allocators: vec![AllocatorKind::Dp, AllocatorKind::Uniform, AllocatorKind::Random],
            total_budget: 100,
            victims: vec![TrainConfig::default()],
            ks: vec![10, 20],
            defense: None,
            correlation: Some(CorrelationConfig::default()),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("ubalab-out"),
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one repeat seed is required");
        }
        if self.allocators.is_empty() {
            return bad("at least one allocator is required");
        }
        if self.victims.is_empty() {
            return bad("at least one victim model is required");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("K list must be non-empty and positive");
        }
        if self.targets.n_items == 0 || self.targets.n_users == 0 {
            return bad("target selection needs at least one item and one user");
        }
        if !(self.accessible_ratio > 0.0 && self.accessible_ratio <= 1.0) {
            return bad("accessible_ratio must lie in (0, 1]");
        }
        if let DatasetSource::Files { .. } = self.dataset {
            if self.preprocess.k_core == 0 {
                return bad("k_core must be at least 1");
            }
        }
        let est = &self.estimator;
        match est.kind {
            EstimatorKind::Simulated => {
                if est.runs == 0 || est.top_k == 0 {
                    return bad("simulated estimator needs runs >= 1 and top_k >= 1");
                }
                est.surrogate.validate()?;
            }
            EstimatorKind::Proxy => est.proxy_params().validate()?,
        }
        for v in &self.victims {
            v.validate()?;
        }
        if let Some(d) = &self.defense {
            if d.detectors.is_empty() || d.n_components == 0 {
                return bad("defense needs detectors and n_components >= 1");
            }
        }
        if let Some(c) = &self.correlation {
            if c.orders.is_empty() || c.orders.iter().any(|o| !SUPPORTED_ORDERS.contains(o)) {
                return bad("correlation orders must be a non-empty subset of 1, 3, 5, 7");
            }
            c.model.validate()?;
        }
        Ok(())
    }

    /// The config with run-location fields cleared; two runs of the same
    /// experiment into different directories normalize equal.
    pub fn normalized(&self) -> ExperimentConfig {
        ExperimentConfig {
            out_dir: PathBuf::new(),
            cache_dir: None,
            ..self.clone()
        }
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.normalized()).expect("config serializes");
        sha256_hex(text.as_bytes())
    }
}
