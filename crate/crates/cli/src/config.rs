//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use perk_core::calibrate::{FitConfig, DEFAULT_ECE_BINS};
use perk_core::scorer::BprConfig;
use perk_core::select::{EvalConfig, SelectOptions};
use perk_core::utility::{Measure, Mode, DEFAULT_EXACT_CAP};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw `user\titem` interaction log read by `prepare`.
    pub data: Option<PathBuf>,
    pub workdir: PathBuf,
    #[serde(rename = "K")]
    pub max_size: usize,
    #[serde(rename = "M")]
    pub bound_m: usize,
    pub measures: Vec<Measure>,
    pub mode: Mode,
    pub exact_cap: usize,
    pub seed: u64,
    pub kcore: usize,
    pub split: [f64; 3],
    /// Drop validation positives from the lists that are recommended and
    /// evaluated.
    pub exclude_val: bool,
    pub scorer: ScorerConfig,
    pub calibration: CalibrationConfig,
    pub baselines: BaselineConfig,
    pub allocate: AllocateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            workdir: PathBuf::from("work"),
            max_size: 50,
            bound_m: 2000,
            measures: Measure::ALL.to_vec(),
            mode: Mode::Approx,
            exact_cap: DEFAULT_EXACT_CAP,
            seed: 0,
            kcore: 20,
            split: [0.6, 0.2, 0.2],
            exclude_val: true,
            scorer: ScorerConfig::default(),
            calibration: CalibrationConfig::default(),
            baselines: BaselineConfig::default(),
            allocate: AllocateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Pass-through `user\titem\tscore` file; when set, no model is trained.
    pub import: Option<PathBuf>,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub negatives_per_positive: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        let bpr = BprConfig::default();
        Self {
            import: None,
            dim: bpr.dim,
            epochs: bpr.epochs,
            learning_rate: bpr.learning_rate,
            weight_decay: bpr.weight_decay,
            negatives_per_positive: bpr.negatives_per_positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScope {
    User,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Which fitted maps `recommend` and `evaluate` apply.
    pub scope: CalibrationScope,
    pub max_iters: usize,
    pub tolerance: f64,
    pub divergence_bound: f64,
    pub subsample_negatives: Option<usize>,
    pub ece_bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            scope: CalibrationScope::User,
            max_iters: fit.max_iters,
            tolerance: fit.tolerance,
            divergence_bound: fit.divergence_bound,
            subsample_negatives: None,
            ece_bins: DEFAULT_ECE_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub fixed: Vec<usize>,
    pub rand: bool,
    pub val_k: bool,
    pub oracle: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            fixed: vec![1, 5, 10, 20, 50],
            rand: true,
            val_k: true,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocateConfig {
    /// Workdirs of the domains, each holding a `recommend` curve dump.
    pub domains: Vec<PathBuf>,
    /// Display names; defaults to the directory names.
    pub names: Vec<String>,
    pub budget: usize,
    pub measure: Measure,
    pub allow_zero: bool,
}

impl Default for AllocateConfig {
    fn default() -> Self {
        Self {
            domains: Vec::new(),
            names: Vec::new(),
            budget: 10,
            measure: Measure::Ndcg,
            allow_zero: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.max_size == 0 {
            bail!("K must be at least 1");
        }
        if self.bound_m == 0 {
            bail!("M must be at least 1");
        }
        if self.measures.is_empty() {
            bail!("at least one measure is required");
        }
        if self.split.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.split.iter().sum::<f64>() <= 0.0 {
            bail!("split ratios must be non-negative with a positive sum");
        }
        if self.baselines.fixed.contains(&0) {
            bail!("fixed baseline sizes must be at least 1");
        }
        if self.calibration.ece_bins == 0 {
            bail!("ece_bins must be at least 1");
        }
        if !self.allocate.names.is_empty() && self.allocate.names.len() != self.allocate.domains.len() {
            bail!("allocate.names must match allocate.domains in length");
        }
        Ok(())
    }

    pub fn bpr(&self) -> BprConfig {
        let s = &self.scorer;
        BprConfig {
            dim: s.dim,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            weight_decay: s.weight_decay,
            negatives_per_positive: s.negatives_per_positive,
            seed: self.seed,
        }
    }

    pub fn fit(&self) -> FitConfig {
        let c = &self.calibration;
        FitConfig {
            max_iters: c.max_iters,
            tolerance: c.tolerance,
            divergence_bound: c.divergence_bound,
        }
    }

    pub fn select_options(&self) -> SelectOptions {
        SelectOptions {
            max_size: self.max_size,
            bound_m: self.bound_m,
            mode: self.mode,
            exact_cap: self.exact_cap,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            measures: self.measures.clone(),
            fixed_sizes: self.baselines.fixed.clone(),
            rand: self.baselines.rand,
            val_k: self.baselines.val_k,
            oracle: self.baselines.oracle,
            options: self.select_options(),
            exclude_val: self.exclude_val,
            seed: self.seed,
        }
    }

    /// The configuration as embedded in output headers: everything that can
    /// change results, without filesystem paths.
    pub fn echo(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        obj.remove("data");
        obj.remove("workdir");
        if let Some(scorer) = obj.get_mut("scorer").and_then(|s| s.as_object_mut()) {
            let imported = scorer.remove("import").is_some_and(|v| !v.is_null());
            scorer.insert("imported".into(), imported.into());
        }
        if let Some(alloc) = obj.get_mut("allocate").and_then(|s| s.as_object_mut()) {
            alloc.remove("domains");
        }
        value
    }
}
