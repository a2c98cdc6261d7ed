use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::AnnConfig;
use crate::baselines::MergeRule;
use crate::error::{Error, Result};
use crate::window::WindowConfig;

/// Thirty days in seconds; one unit step of the streaming ablation.
pub const MONTH_SECONDS: f64 = 2_592_000.0;

/// 2024-01-01T00:00:00Z.
pub const DEFAULT_START: f64 = 1_704_067_200.0;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Retrieval method selected for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spatcode,
    Filtered,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Spatcode, Method::Filtered, Method::Hybrid];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Spatcode => "spatcode",
            Method::Filtered => "filtered",
            Method::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatcode" => Ok(Method::Spatcode),
            "filtered" => Ok(Method::Filtered),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(config_err(format!(
                "unknown method {other:?}, expected spatcode | filtered | hybrid"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentDistribution {
    #[default]
    RandomUnit,
    GaussianClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    /// One entry per content modality; time and geo blocks are always added.
    pub content_dims: Vec<usize>,
}

impl Default for SchemaSection {
    fn default() -> Self {
        Self {
            content_dims: vec![32, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub tau: f64,
    pub buckets: usize,
    pub t0: f64,
    pub lenient: bool,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            tau: MONTH_SECONDS,
            buckets: 6,
            t0: DEFAULT_START,
            lenient: false,
        }
    }
}

impl WindowSection {
    pub fn to_window(&self) -> Result<WindowConfig> {
        Ok(WindowConfig::new(self.tau, self.buckets, self.t0)?.lenient(self.lenient))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnSection {
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub ef_sweep: Vec<usize>,
    pub compaction_threshold: Option<f64>,
}

impl Default for AnnSection {
    fn default() -> Self {
        Self {
            max_neighbors: 16,
            ef_construction: 200,
            ef_search: 100,
            ef_sweep: vec![10, 20, 30, 40, 50, 60, 70, 80],
            compaction_threshold: Some(0.5),
        }
    }
}

impl AnnSection {
    pub fn to_ann(&self, seed: u64) -> AnnConfig {
        AnnConfig {
            max_neighbors: self.max_neighbors,
            ef_construction: self.ef_construction,
            default_ef_search: self.ef_search,
            seed,
            compaction_threshold: self.compaction_threshold,
            ..AnnConfig::new(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub count: usize,
    /// First timestamp, seconds since the epoch.
    pub start: f64,
    /// Timestamps are drawn from `[start, start + span)`.
    pub span: f64,
    pub lat_min_deg: f64,
    pub lat_max_deg: f64,
    pub lon_min_deg: f64,
    pub lon_max_deg: f64,
    pub content: ContentDistribution,
    pub clusters: usize,
    /// Per-coordinate standard deviation around a cluster centre, before
    /// normalization, scaled by `1 / sqrt(dim)`.
    pub cluster_spread: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            count: 50_000,
            start: DEFAULT_START,
            span: 13.0 * MONTH_SECONDS,
            lat_min_deg: 29.18,
            lat_max_deg: 30.57,
            lon_min_deg: 118.33,
            lon_max_deg: 120.62,
            content: ContentDistribution::RandomUnit,
            clusters: 32,
            cluster_spread: 0.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub count: usize,
    /// Each modality weight is drawn uniformly from this list.
    pub weight_levels: Vec<f64>,
    pub k: Vec<usize>,
    /// Standard deviation of the query content perturbation (scaled by `1 / sqrt(dim)`).
    pub content_noise: f64,
    /// Standard deviation of the query time offset from its anchor record, seconds.
    pub time_noise: f64,
    /// Standard deviation of the query location offset, degrees.
    pub location_noise_deg: f64,
    pub normalize: bool,
    /// Width of the hard time filter as a fraction of the data span.
    pub filter_time_fraction: f64,
}

impl Default for QuerySection {
    fn default() -> Self {
        Self {
            count: 100,
            weight_levels: vec![0.25, 0.5, 1.0],
            k: vec![1, 10, 50, 100],
            content_noise: 0.5,
            time_noise: 3.0 * 86_400.0,
            location_noise_deg: 0.05,
            normalize: false,
            filter_time_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSection {
    pub count: usize,
    pub queries: usize,
    pub k: usize,
    /// Swept scales as multiples of `pi / span`.
    pub factors: Vec<f64>,
}

impl Default for AlphaSection {
    fn default() -> Self {
        Self {
            count: 2_000,
            queries: 100,
            k: 10,
            factors: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamingSection {
    pub sizes: Vec<usize>,
    pub months: usize,
    pub queries: usize,
    pub k: usize,
    /// Lower than the serving default to keep repeated rebuilds affordable.
    pub ef_construction: usize,
}

impl Default for StreamingSection {
    fn default() -> Self {
        Self {
            sizes: vec![10_000, 30_000, 60_000],
            months: 13,
            queries: 100,
            k: 100,
            ef_construction: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSection {
    /// Defaults to the largest evaluated `k`.
    pub per_modality_k: Option<usize>,
    pub merge_rule: MergeRule,
    pub rrf_constant: f64,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self {
            per_modality_k: None,
            merge_rule: MergeRule::WeightedSum,
            rrf_constant: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Record wall-clock latency columns. Off gives byte-identical files for
    /// identical seeds.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            timing: true,
        }
    }
}

/// Everything one benchmark run needs; mirrors the TOML file section by section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Restricts comparison runs to one method; all three when absent.
    pub method: Option<Method>,
    pub schema: SchemaSection,
    pub window: WindowSection,
    pub ann: AnnSection,
    pub data: DataSection,
    pub queries: QuerySection,
    pub alpha: AlphaSection,
    pub streaming: StreamingSection,
    pub hybrid: HybridSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn methods(&self) -> Vec<Method> {
        match self.method {
            Some(m) => vec![m],
            None => Method::ALL.to_vec(),
        }
    }

    pub fn max_k(&self) -> usize {
        self.queries.k.iter().copied().max().unwrap_or(10)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if self.schema.content_dims.is_empty() || self.schema.content_dims.contains(&0) {
            return Err(config_err("schema.content_dims must list positive dims"));
        }
        self.window
            .to_window()
            .map_err(|e| config_err(e.to_string()))?;
        if !(d.span.is_finite() && d.span > 0.0) || !d.start.is_finite() {
            return Err(config_err("data.span must be > 0 and data.start finite"));
        }
        validate_box(d.lat_min_deg, d.lat_max_deg, d.lon_min_deg, d.lon_max_deg)?;
        if d.content == ContentDistribution::GaussianClusters && d.clusters == 0 {
            return Err(config_err("data.clusters must be >= 1"));
        }
        if d.cluster_spread.is_nan() || d.cluster_spread < 0.0 {
            return Err(config_err("data.cluster_spread must be >= 0"));
        }
        let q = &self.queries;
        if q.count == 0 || q.k.is_empty() || q.k.contains(&0) {
            return Err(config_err(
                "queries.count and every queries.k must be positive",
            ));
        }
        if q.weight_levels.is_empty() || q.weight_levels.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(config_err("queries.weight_levels must be positive"));
        }
        if !(q.filter_time_fraction > 0.0 && q.filter_time_fraction <= 1.0) {
            return Err(config_err(
                "queries.filter_time_fraction must lie in (0, 1]",
            ));
        }
        if !(q.content_noise >= 0.0 && q.time_noise >= 0.0 && q.location_noise_deg >= 0.0) {
            return Err(config_err("query noise levels must be >= 0"));
        }
        if self.ann.ef_sweep.contains(&0) || self.ann.ef_search == 0 {
            return Err(config_err("ef values must be positive"));
        }
        self.ann
            .to_ann(0)
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        let a = &self.alpha;
        if a.count == 0 || a.queries == 0 || a.k == 0 || a.k > a.count {
            return Err(config_err("alpha: counts must be positive and k <= count"));
        }
        if a.factors.iter().any(|f| f.is_nan() || *f <= 0.0) {
            return Err(config_err("alpha.factors must be positive"));
        }
        let s = &self.streaming;
        if s.sizes.contains(&0) || s.months == 0 || s.queries == 0 || s.k == 0 {
            return Err(config_err("streaming counts must be positive"));
        }
        if s.ef_construction < self.ann.max_neighbors {
            return Err(config_err(
                "streaming.ef_construction must be >= ann.max_neighbors",
            ));
        }
        if let Some(0) = self.hybrid.per_modality_k {
            return Err(config_err("hybrid.per_modality_k must be positive"));
        }
        if self.hybrid.rrf_constant.is_nan() || self.hybrid.rrf_constant <= 0.0 {
            return Err(config_err("hybrid.rrf_constant must be > 0"));
        }
        Ok(())
    }
}

pub(crate) fn validate_box(lat_lo: f64, lat_hi: f64, lon_lo: f64, lon_hi: f64) -> Result<()> {
    let ok = (-90.0..=90.0).contains(&lat_lo)
        && (-90.0..=90.0).contains(&lat_hi)
        && (-180.0..180.0).contains(&lon_lo)
        && (-180.0..180.0).contains(&lon_hi)
        && lat_lo < lat_hi
        && lon_lo < lon_hi;
    if ok {
        Ok(())
    } else {
        Err(config_err(format!(
            "invalid geo box lat [{lat_lo}, {lat_hi}] lon [{lon_lo}, {lon_hi}]"
        )))
    }
}
