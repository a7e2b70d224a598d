//! Dataset distillation at desk scale.
//!
//! Three algorithms share one synthetic-set representation: gradient matching
//! (`dc`), the same with loss-based pruning of each real batch (`dc_pruned`),
//! and distribution matching of random-network embeddings (`dm`).

mod dm;
mod gradient_matching;
mod matching;
mod pipeline;

use std::time::Instant;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, train, Architecture, TrainConfig};
use crate::seed;
use crate::stats;

pub use dm::distill_dm;
pub use gradient_matching::{distill_dc, distill_dc_pruned, prune_survivors};
pub use matching::{match_loss_and_grad, match_loss_gradients};
pub use pipeline::{DistillPipeline, DistillPipelineConfig, Pipeline, PipelineOutcome};

pub const SYNTHETIC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dc,
    Dm,
    DcPruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Noise,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub image_lr: f64,
    pub net_lr: f64,
    pub momentum: f64,
    pub real_batch_per_class: usize,
    pub inner_loops: usize,
    pub outer_loops: usize,
    pub prune_rate: f64,
    pub prune_start_fraction: f64,
    pub seed: u64,
    /// Network sampled fresh at every iteration.
    pub network: Architecture,
}

impl DistillConfig {
    /// Gradient matching with SGD momentum 0.5, image/network learning rates
    /// 0.1/0.01, 256 real samples per class and (1, 1) loops.
    pub fn dc(iterations: usize, network: Architecture) -> Self {
        Self {
            algorithm: Algorithm::Dc,
            iterations,
            image_lr: 0.1,
            net_lr: 0.01,
            momentum: 0.5,
            real_batch_per_class: 256,
            inner_loops: 1,
            outer_loops: 1,
            prune_rate: 0.3,
            prune_start_fraction: 0.4,
            seed: 0,
            network,
        }
    }

    pub fn dc_pruned(iterations: usize, network: Architecture) -> Self {
        Self {
            algorithm: Algorithm::DcPruned,
            ..Self::dc(iterations, network)
        }
    }

    /// Distribution matching with image learning rate 1.0.
    pub fn dm(iterations: usize, network: Architecture) -> Self {
        Self {
            algorithm: Algorithm::Dm,
            image_lr: 1.0,
            ..Self::dc(iterations, network)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.image_lr > 0.0 && self.image_lr.is_finite()) {
            return Err(Error::validation("image_lr", "must be positive"));
        }
        if !(self.net_lr > 0.0 && self.net_lr.is_finite()) {
            return Err(Error::validation("net_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", "must lie in [0, 1)"));
        }
        if self.real_batch_per_class == 0 {
            return Err(Error::validation("real_batch_per_class", "must be at least 1"));
        }
        if self.outer_loops == 0 {
            return Err(Error::validation("outer_loops", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(Error::validation("prune_rate", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.prune_start_fraction) {
            return Err(Error::validation("prune_start_fraction", "must lie in [0, 1]"));
        }
        self.network
            .validate()
            .map_err(|e| Error::validation("network", e.to_string()))
    }

    /// Seed of the network sampled at `iteration`.
    pub(crate) fn net_seed(&self, iteration: usize) -> u64 {
        self.seed.wrapping_mul(10007).wrapping_add(iteration as u64)
    }

    /// First iteration at which real batches are pruned.
    pub fn prune_start_iteration(&self) -> usize {
        (self.prune_start_fraction * self.iterations as f64).ceil() as usize
    }
}

/// Halves the requested per-class batch until it is below twice the largest class.
pub fn effective_real_batch(requested: usize, largest_class: usize) -> usize {
    let mut b = requested;
    while b > 1 && b >= 2 * largest_class {
        b /= 2;
    }
    b
}

/// `ipc` learnable vectors per class, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    ipc: usize,
    dim: usize,
    num_classes: usize,
    vectors: Vec<f64>,
}

impl SyntheticSet {
    pub fn new(num_classes: usize, ipc: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if ipc == 0 || dim == 0 || num_classes == 0 {
            return Err(Error::Argument(
                "synthetic sets need at least one class, vector and dimension".into(),
            ));
        }
        if vectors.len() != num_classes * ipc * dim {
            return Err(Error::Shape(format!(
                "{} values cannot fill {num_classes} classes x {ipc} vectors x {dim} dims",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("synthetic vectors must be finite".into()));
        }
        Ok(Self {
            ipc,
            dim,
            num_classes,
            vectors,
        })
    }

    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    pub fn class_block(&self, class: usize) -> &[f64] {
        let w = self.ipc * self.dim;
        &self.vectors[class * w..(class + 1) * w]
    }

    pub(crate) fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        let w = self.ipc * self.dim;
        class * w..(class + 1) * w
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.num_classes)
            .flat_map(|c| std::iter::repeat_n(c, self.ipc))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }

    /// The synthetic vectors as a labeled dataset with IDs `0..C*ipc`.
    pub fn to_dataset(&self) -> LabeledDataset {
        let n = self.num_classes * self.ipc;
        LabeledDataset::new(
            self.num_classes,
            self.dim,
            (0..n).collect(),
            self.labels(),
            self.vectors.clone(),
        )
        .expect("synthetic set is a valid dataset")
    }

    pub fn to_json(&self) -> Result<String> {
        let classes = (0..self.num_classes)
            .map(|c| SyntheticClass {
                label: c,
                vectors: self.class_block(c).chunks(self.dim).map(<[f64]>::to_vec).collect(),
            })
            .collect();
        Ok(serde_json::to_string(&SyntheticFile {
            version: SYNTHETIC_FORMAT_VERSION,
            ipc: self.ipc,
            dim: self.dim,
            classes,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SyntheticFile = serde_json::from_str(text)?;
        if file.version != SYNTHETIC_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported synthetic container version {}",
                file.version
            )));
        }
        let mut classes = file.classes;
        classes.sort_by_key(|c| c.label);
        if classes.iter().enumerate().any(|(i, c)| c.label != i) {
            return Err(Error::Format("class labels must be 0..C without gaps".into()));
        }
        let mut vectors = Vec::new();
        for c in &classes {
            if c.vectors.len() != file.ipc || c.vectors.iter().any(|v| v.len() != file.dim) {
                return Err(Error::Shape(format!("class {} has the wrong shape", c.label)));
            }
            vectors.extend(c.vectors.iter().flatten());
        }
        Self::new(classes.len(), file.ipc, file.dim, vectors)
    }
}

#[derive(Serialize, Deserialize)]
struct SyntheticFile {
    version: u32,
    ipc: usize,
    dim: usize,
    classes: Vec<SyntheticClass>,
}

#[derive(Serialize, Deserialize)]
struct SyntheticClass {
    label: usize,
    vectors: Vec<Vec<f64>>,
}

/// Noise: i.i.d. `0.1 * N(0, 1)`. Real: `ipc` distinct samples per class.
pub fn init_synthetic(
    dataset: &LabeledDataset,
    ipc: usize,
    mode: InitMode,
    seed: u64,
) -> Result<SyntheticSet> {
    if ipc == 0 {
        return Err(Error::Argument("ipc must be at least 1".into()));
    }
    let c = dataset.num_classes();
    let d = dataset.dim();
    let mut rng = seed::rng(seed);
    let mut vectors = Vec::with_capacity(c * ipc * d);
    match mode {
        InitMode::Noise => {
            for _ in 0..c * ipc * d {
                let z: f64 = StandardNormal.sample(&mut rng);
                vectors.push(0.1 * z);
            }
        }
        InitMode::Real => {
            for (class, positions) in dataset.class_positions().iter().enumerate() {
                if positions.len() < ipc {
                    return Err(Error::Argument(format!(
                        "class {class} has {} samples, real initialisation needs {ipc}",
                        positions.len()
                    )));
                }
                for k in index::sample(&mut rng, positions.len(), ipc) {
                    vectors.extend_from_slice(dataset.row(positions[k]));
                }
            }
        }
    }
    SyntheticSet::new(c, ipc, d, vectors)
}

/// Output of a distillation run.
#[derive(Debug, Clone)]
pub struct DistillRun {
    pub synthetic: SyntheticSet,
    /// Objective per iteration.
    pub objective_trace: Vec<f64>,
    /// Wall-clock seconds spent in the optimisation loop.
    pub seconds: f64,
}

impl DistillRun {
    /// `(iteration, objective)` rows with a header.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (i, v) in self.objective_trace.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// Runs whichever algorithm `cfg` names.
pub fn distill(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig) -> Result<DistillRun> {
    match cfg.algorithm {
        Algorithm::Dc => distill_dc(real, syn, cfg),
        Algorithm::DcPruned => distill_dc_pruned(real, syn, cfg),
        Algorithm::Dm => distill_dm(real, syn, cfg),
    }
}

pub(crate) fn check_inputs(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig) -> Result<()> {
    cfg.validate()?;
    if real.dim() != syn.dim() {
        return Err(Error::Shape(format!(
            "real data is {}-d, synthetic data is {}-d",
            real.dim(),
            syn.dim()
        )));
    }
    if real.num_classes() != syn.num_classes() {
        return Err(Error::Shape(format!(
            "real data has {} classes, synthetic data has {}",
            real.num_classes(),
            syn.num_classes()
        )));
    }
    if cfg.iterations > 0 {
        if let Some(c) = real.class_sizes().iter().position(|&n| n == 0) {
            return Err(Error::Argument(format!("class {c} has no real samples")));
        }
    }
    Ok(())
}

pub(crate) struct Timer(Instant);

impl Timer {
    pub(crate) fn start() -> Self {
        Timer(Instant::now())
    }

    pub(crate) fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Mean and sample standard deviation of repeated accuracy measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_trial: Vec<f64>,
    pub n_trials: usize,
}

impl EvalReport {
    pub fn from_trials(per_trial: Vec<f64>) -> Result<Self> {
        if per_trial.is_empty() {
            return Err(Error::Argument("a report needs at least one trial".into()));
        }
        Ok(Self {
            mean_accuracy: stats::mean(&per_trial),
            std_accuracy: stats::sample_std(&per_trial),
            n_trials: per_trial.len(),
            per_trial,
        })
    }
}

/// Trains `n_trials` fresh classifiers on the synthetic set (seeds
/// `eval_cfg.seed + t`) and reports their test accuracy.
pub fn evaluate_synthetic(
    syn: &SyntheticSet,
    arch: Architecture,
    eval_cfg: &TrainConfig,
    test: &LabeledDataset,
    n_trials: usize,
) -> Result<EvalReport> {
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    if test.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    eval_cfg.validate()?;
    let train_set = syn.to_dataset();
    let per_trial = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let cfg = eval_cfg.with_seed(eval_cfg.seed.wrapping_add(t as u64));
            let outcome = train(&train_set, arch, &cfg)?;
            evaluate(&outcome.params, test)
        })
        .collect::<Result<Vec<f64>>>()?;
    EvalReport::from_trials(per_trial)
}
