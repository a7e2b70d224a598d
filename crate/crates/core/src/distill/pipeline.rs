use serde::{Deserialize, Serialize};

use super::{distill, init_synthetic, DistillConfig, InitMode};
use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::model::{evaluate, train, Architecture, TrainConfig};
use crate::seed;

/// Something that turns a (sub)dataset into one accuracy measurement.
pub trait Pipeline: Sync {
    fn run(&self, data: &LabeledDataset, seed: u64) -> Result<f64>;
}

impl<F> Pipeline for F
where
    F: Fn(&LabeledDataset, u64) -> Result<f64> + Sync,
{
    fn run(&self, data: &LabeledDataset, seed: u64) -> Result<f64> {
        self(data, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOutcome {
    pub accuracy: f64,
    /// Seconds spent inside the distillation loop.
    pub distill_seconds: f64,
}

/// Distillation settings plus the classifier used to score the synthetic set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillPipelineConfig {
    pub distill: DistillConfig,
    pub ipc: usize,
    pub init: InitMode,
    pub eval_arch: Architecture,
    pub eval: TrainConfig,
}

/// Initialise, distill, train one fresh classifier on the synthetic set and
/// report its accuracy on `test`.
#[derive(Debug, Clone)]
pub struct DistillPipeline<'a> {
    pub config: DistillPipelineConfig,
    pub test: &'a LabeledDataset,
}

impl<'a> DistillPipeline<'a> {
    pub fn new(config: DistillPipelineConfig, test: &'a LabeledDataset) -> Self {
        Self { config, test }
    }

    pub fn run_timed(&self, data: &LabeledDataset, seed: u64) -> Result<PipelineOutcome> {
        let c = &self.config;
        let syn = init_synthetic(data, c.ipc, c.init, seed::derive(seed, &[0]))?;
        let run = distill(data, &syn, &c.distill.with_seed(seed::derive(seed, &[1])))?;
        let eval_cfg = c.eval.with_seed(seed::derive(seed, &[2]));
        let model = train(&run.synthetic.to_dataset(), c.eval_arch, &eval_cfg)?;
        Ok(PipelineOutcome {
            accuracy: evaluate(&model.params, self.test)?,
            distill_seconds: run.seconds,
        })
    }
}

impl Pipeline for DistillPipeline<'_> {
    fn run(&self, data: &LabeledDataset, seed: u64) -> Result<f64> {
        Ok(self.run_timed(data, seed)?.accuracy)
    }
}
