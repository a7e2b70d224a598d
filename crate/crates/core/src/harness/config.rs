use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    gen_gaussian_mixture, load_csv, load_idx, plant_mislabeled, ClassSpec, LabeledDataset, MixtureSpec,
};
use crate::distill::{Algorithm, DistillConfig, DistillPipelineConfig, InitMode};
use crate::error::{Error, Result};
use crate::model::{Architecture, TrainConfig};
use crate::seed;
use crate::utility::SubsetDraw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Distill,
    Indicator,
    GammaSearch,
    Stratified,
    PruneCompare,
    ComparePolicies,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Distill => "distill",
            ExperimentKind::Indicator => "indicator",
            ExperimentKind::GammaSearch => "gamma_search",
            ExperimentKind::Stratified => "stratified",
            ExperimentKind::PruneCompare => "prune_compare",
            ExperimentKind::ComparePolicies => "compare_policies",
        }
    }
}

/// Where the training and held-out data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Isotropic Gaussian classes centred at `separation * e_c`.
    Mixture {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "one")]
        std: f64,
        /// Fraction of every training class relabelled to another class.
        #[serde(default)]
        mislabel_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<Vec<usize>>,
        #[serde(default)]
        per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_column: String,
    },
    Json {
        train: PathBuf,
        test: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

impl DatasetSpec {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Mixture { .. } => {}
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                fix(test_images);
                fix(test_labels);
            }
            DatasetSpec::Csv { train, test, .. } | DatasetSpec::Json { train, test } => {
                fix(train);
                fix(test);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let DatasetSpec::Mixture {
            classes,
            per_class,
            test_per_class,
            dim,
            separation,
            std,
            mislabel_fraction,
            ..
        } = self
        {
            if *classes < 2 {
                return Err(Error::validation("dataset.classes", "need at least 2 classes"));
            }
            if *dim < *classes {
                return Err(Error::validation("dataset.dim", "must be at least the number of classes"));
            }
            if *per_class == 0 {
                return Err(Error::validation("dataset.per_class", "must be at least 1"));
            }
            if *test_per_class == 0 {
                return Err(Error::validation("dataset.test_per_class", "must be at least 1"));
            }
            if !separation.is_finite() {
                return Err(Error::validation("dataset.separation", "must be finite"));
            }
            if !(*std > 0.0 && std.is_finite()) {
                return Err(Error::validation("dataset.std", "must be positive"));
            }
            if !(0.0..1.0).contains(mislabel_fraction) {
                return Err(Error::validation("dataset.mislabel_fraction", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Training and held-out sets.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Mixture {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
                std,
                mislabel_fraction,
                seed,
            } => {
                let spec = |count: usize| MixtureSpec {
                    classes: (0..*classes)
                        .map(|c| {
                            let mut mean = vec![0.0; *dim];
                            mean[c] = *separation;
                            ClassSpec::new(mean, *std, count)
                        })
                        .collect(),
                };
                let mut train = gen_gaussian_mixture(&spec(*per_class), seed::derive(*seed, &[0]))?;
                let test = gen_gaussian_mixture(&spec(*test_per_class), seed::derive(*seed, &[1]))?;
                if *mislabel_fraction > 0.0 {
                    train = plant_mislabeled(&train, *mislabel_fraction, seed::derive(*seed, &[2]))?.0;
                }
                Ok((train, test))
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
                per_class,
                test_per_class,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                if let Some(classes) = classes {
                    train = train.restrict_classes(classes, *per_class)?;
                    test = test.restrict_classes(classes, *test_per_class)?;
                }
                Ok((train, test))
            }
            DatasetSpec::Csv {
                train,
                test,
                label_column,
            } => Ok((load_csv(train, label_column)?, load_csv(test, label_column)?)),
            DatasetSpec::Json { train, test } => Ok((LabeledDataset::load_json(train)?, LabeledDataset::load_json(test)?)),
        }
    }
}

/// Distillation settings; unset fields take the algorithm's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    pub algorithm: Algorithm,
    pub iterations: usize,
    #[serde(default = "default_ipc")]
    pub ipc: usize,
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_batch_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_loops: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_loops: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_start_fraction: Option<f64>,
    /// Network sampled during distillation; defaults to the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Architecture>,
}

fn default_ipc() -> usize {
    1
}

fn default_init() -> InitMode {
    InitMode::Real
}

impl DistillSpec {
    pub fn to_config(&self, model: Architecture) -> DistillConfig {
        let network = self.network.unwrap_or(model);
        let base = match self.algorithm {
            Algorithm::Dc => DistillConfig::dc(self.iterations, network),
            Algorithm::DcPruned => DistillConfig::dc_pruned(self.iterations, network),
            Algorithm::Dm => DistillConfig::dm(self.iterations, network),
        };
        DistillConfig {
            image_lr: self.image_lr.unwrap_or(base.image_lr),
            net_lr: self.net_lr.unwrap_or(base.net_lr),
            momentum: self.momentum.unwrap_or(base.momentum),
            real_batch_per_class: self.real_batch_per_class.unwrap_or(base.real_batch_per_class),
            inner_loops: self.inner_loops.unwrap_or(base.inner_loops),
            outer_loops: self.outer_loops.unwrap_or(base.outer_loops),
            prune_rate: self.prune_rate.unwrap_or(base.prune_rate),
            prune_start_fraction: self.prune_start_fraction.unwrap_or(base.prune_start_fraction),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorName {
    Loss,
    Density,
    ClusterDistance,
    InitDistance,
    MonteCarlo,
}

/// Space in which the geometric indicators measure distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    #[default]
    Input,
    /// Hidden layer of a probe classifier trained with `probe`.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub name: IndicatorName,
    /// Classifier training used by the loss indicator and probe features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<TrainConfig>,
    /// Architecture of that classifier; defaults to the experiment's model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_model: Option<Architecture>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_epochs: Option<usize>,
    #[serde(default = "default_sigma")]
    pub smooth_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_clusters: Option<usize>,
    #[serde(default)]
    pub features: FeatureSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(default)]
    pub draw: SubsetDraw,
}

fn default_trials() -> usize {
    1
}

fn default_sigma() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKindSpec {
    Random,
    /// Highest scores of the `[indicator]` section.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKindSpec,
    #[serde(default)]
    pub seed: u64,
}

/// The pruned arm of a prune comparison; everything else is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneVariant {
    pub prune_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_start_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    /// Classifier trained on the synthetic set (and default distillation network).
    pub model: Architecture,
    pub distill: DistillSpec,
    pub eval: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator: Option<IndicatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<PruneVariant>,
}

fn default_repeats() -> usize {
    1
}

/// Prefixes the field of a nested validation error.
fn within(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Validation { field, message } => Error::validation(format!("{section}.{field}"), message),
        other => Error::validation(section, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            Error::validation(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn distill_config(&self) -> DistillConfig {
        self.distill.to_config(self.model)
    }

    pub fn pipeline_config(&self) -> DistillPipelineConfig {
        DistillPipelineConfig {
            distill: self.distill_config(),
            ipc: self.distill.ipc,
            init: self.distill.init,
            eval_arch: self.model,
            eval: self.eval.clone(),
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::validation("n_repeats", "must be at least 1"));
        }
        self.dataset.validate()?;
        self.model.validate().map_err(within("model"))?;
        self.eval.validate().map_err(within("eval"))?;
        if self.distill.ipc == 0 {
            return Err(Error::validation("distill.ipc", "must be at least 1"));
        }
        self.distill_config().validate().map_err(within("distill"))?;
        if let Some(ind) = &self.indicator {
            ind.validate()?;
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::validation("grid", "must not be empty"));
            }
            if grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
                return Err(Error::validation("grid", "ratios must lie in (0, 1)"));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation("grid", "must be strictly ascending"));
            }
        }

        let needs_indicator = |what: &str| -> Result<()> {
            if self.indicator.is_none() {
                return Err(Error::validation("indicator", format!("required for {what}")));
            }
            Ok(())
        };
        let greedy = |p: &PolicySpec| p.kind == PolicyKindSpec::Greedy;
        match self.kind {
            ExperimentKind::Distill => {}
            ExperimentKind::Indicator => needs_indicator("indicator experiments")?,
            ExperimentKind::GammaSearch => {
                let policy = self
                    .policy
                    .as_ref()
                    .ok_or_else(|| Error::validation("policy", "required for gamma_search"))?;
                if greedy(policy) {
                    needs_indicator("greedy selection")?;
                }
            }
            ExperimentKind::Stratified => {
                needs_indicator("stratified experiments")?;
                match self.n_layers {
                    Some(n) if n >= 1 => {}
                    Some(_) => return Err(Error::validation("n_layers", "must be at least 1")),
                    None => return Err(Error::validation("n_layers", "required for stratified experiments")),
                }
            }
            ExperimentKind::PruneCompare => {
                if self.distill.algorithm != Algorithm::Dc {
                    return Err(Error::validation("distill.algorithm", "the baseline arm must be dc"));
                }
                let v = self
                    .variant
                    .as_ref()
                    .ok_or_else(|| Error::validation("variant", "prune_compare needs a [variant] block"))?;
                if !(0.0..1.0).contains(&v.prune_rate) {
                    return Err(Error::validation("variant.prune_rate", "must lie in [0, 1)"));
                }
                if let Some(f) = v.prune_start_fraction {
                    if !(0.0..=1.0).contains(&f) {
                        return Err(Error::validation("variant.prune_start_fraction", "must lie in [0, 1]"));
                    }
                }
            }
            ExperimentKind::ComparePolicies => {
                if self.policies.len() < 2 {
                    return Err(Error::validation("policies", "compare_policies needs at least two policies"));
                }
                if self.policies.iter().any(greedy) {
                    needs_indicator("greedy selection")?;
                }
            }
        }
        Ok(())
    }
}

impl IndicatorSpec {
    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::validation("indicator.n_trials", "must be at least 1"));
        }
        if !(self.smooth_sigma >= 0.0 && self.smooth_sigma.is_finite()) {
            return Err(Error::validation("indicator.smooth_sigma", "must be non-negative"));
        }
        if let Some(p) = &self.probe {
            p.validate().map_err(within("indicator.probe"))?;
        }
        let needs_probe = self.name == IndicatorName::Loss || self.features == FeatureSpace::Probe;
        if needs_probe && self.probe.is_none() {
            return Err(Error::validation("indicator.probe", "required by this indicator"));
        }
        match self.name {
            IndicatorName::Loss => {
                let epochs = self.probe.as_ref().map_or(0, |p| p.epochs);
                if let Some(u) = self.use_epochs {
                    if u == 0 || u > epochs {
                        return Err(Error::validation("indicator.use_epochs", format!("must lie in 1..={epochs}")));
                    }
                }
            }
            IndicatorName::Density => {
                if self.k.is_none_or(|k| k == 0) {
                    return Err(Error::validation("indicator.k", "required and at least 1"));
                }
            }
            IndicatorName::ClusterDistance => {
                if self.k_clusters.is_none_or(|k| k == 0) {
                    return Err(Error::validation("indicator.k_clusters", "required and at least 1"));
                }
            }
            IndicatorName::InitDistance => {}
            IndicatorName::MonteCarlo => {
                if self.subset_size.is_none_or(|m| m == 0) {
                    return Err(Error::validation("indicator.subset_size", "required and at least 1"));
                }
            }
        }
        Ok(())
    }
}
