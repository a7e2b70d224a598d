use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::params::{init_params, Architecture, ModelParams};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_momentum() -> f64 {
    0.5
}

fn default_shuffle() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Heavy-ball SGD: `v = momentum * v + g; x -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(x.len(), grad.len());
        for ((xi, vi), gi) in x.iter_mut().zip(&mut self.velocity).zip(grad) {
            *vi = self.momentum * *vi + gi;
            *xi -= self.lr * *vi;
        }
    }
}

/// Per-sample loss observed during training, `epochs x n` in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: usize,
    pub n: usize,
    pub seed: u64,
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn at(&self, epoch: usize, pos: usize) -> f64 {
        self.losses[epoch * self.n + pos]
    }

    pub fn epoch(&self, epoch: usize) -> &[f64] {
        &self.losses[epoch * self.n..(epoch + 1) * self.n]
    }

    pub fn epoch_means(&self) -> Vec<f64> {
        (0..self.epochs)
            .map(|e| self.epoch(e).iter().sum::<f64>() / self.n as f64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: LossTrace,
    pub final_train_accuracy: f64,
}

/// Mini-batch SGD from a fresh initialisation seeded by `config.seed`. Each
/// sample's loss is recorded when its batch is processed.
pub fn train(dataset: &LabeledDataset, arch: Architecture, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let params = init_params(arch, dataset.dim(), dataset.num_classes(), config.seed)?;
    train_from(params, dataset, config)
}

pub fn train_from(
    mut params: ModelParams,
    dataset: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if params.dim() != dataset.dim() || params.classes() < dataset.num_classes() {
        return Err(Error::Shape(format!(
            "model expects {}-d inputs over {} classes, dataset has {}-d over {}",
            params.dim(),
            params.classes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    let d = dataset.dim();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng_at(config.seed, &[1]);
    let mut opt = Sgd::new(params.len(), config.learning_rate, config.momentum);
    let mut losses = vec![0.0; config.epochs * n];
    let mut xs = Vec::with_capacity(batch * d);
    let mut ys = Vec::with_capacity(batch);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            xs.clear();
            ys.clear();
            for &p in chunk {
                xs.extend_from_slice(dataset.row(p));
                ys.push(dataset.label(p));
            }
            let fwd = params.forward(&xs, &ys)?;
            for (&p, &l) in chunk.iter().zip(&fwd.losses) {
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        stage: "epoch",
                        index: epoch,
                        detail: format!("non-finite loss for sample id {}", dataset.id(p)),
                    });
                }
                losses[epoch * n + p] = l;
            }
            let grad = params.backward(&xs, &ys, &fwd, None);
            opt.step(params.weights_mut(), &grad);
        }
        if params.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                stage: "epoch",
                index: epoch,
                detail: "non-finite parameters".into(),
            });
        }
    }

    let final_train_accuracy = evaluate(&params, dataset)?;
    Ok(TrainOutcome {
        params,
        trace: LossTrace {
            epochs: config.epochs,
            n,
            seed: config.seed,
            losses,
        },
        final_train_accuracy,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict(params: &ModelParams, xs: &[f64]) -> Result<Vec<usize>> {
    let logits = params.logits(xs)?;
    Ok(logits.chunks(params.classes()).map(argmax).collect())
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(params: &ModelParams, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    if params.dim() != dataset.dim() {
        return Err(Error::Shape(format!(
            "model expects {}-d inputs, dataset is {}-d",
            params.dim(),
            dataset.dim()
        )));
    }
    let preds = predict(params, dataset.features())?;
    let hits = preds
        .iter()
        .zip(dataset.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Per-sample embeddings keyed by sample ID order of the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub ids: Vec<usize>,
    pub dim: usize,
    pub rows: Vec<f64>,
}

impl FeatureMap {
    pub fn row(&self, pos: usize) -> &[f64] {
        &self.rows[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks that rows line up with the dataset's samples.
    pub fn check_aligned(&self, dataset: &LabeledDataset) -> Result<()> {
        if self.ids != dataset.ids() {
            return Err(Error::Consistency(
                "feature rows are not aligned with the dataset's sample IDs".into(),
            ));
        }
        Ok(())
    }

    /// Raw inputs as features.
    pub fn from_dataset(dataset: &LabeledDataset) -> Self {
        FeatureMap {
            ids: dataset.ids().to_vec(),
            dim: dataset.dim(),
            rows: dataset.features().to_vec(),
        }
    }
}

pub fn features(params: &ModelParams, dataset: &LabeledDataset) -> Result<FeatureMap> {
    if params.dim() != dataset.dim() {
        return Err(Error::Shape(format!(
            "model expects {}-d inputs, dataset is {}-d",
            params.dim(),
            dataset.dim()
        )));
    }
    Ok(FeatureMap {
        ids: dataset.ids().to_vec(),
        dim: params.architecture().feature_dim(dataset.dim()),
        rows: params.embed(dataset.features())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_gaussian_mixture, ClassSpec, MixtureSpec};

    fn separable() -> LabeledDataset {
        let spec = MixtureSpec {
            classes: vec![
                ClassSpec::new(vec![3.0, 0.0], 0.3, 50),
                ClassSpec::new(vec![-3.0, 0.0], 0.3, 50),
            ],
        };
        gen_gaussian_mixture(&spec, 1).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.1,
            momentum: 0.5,
            seed: 4,
            shuffle: true,
        }
    }

    #[test]
    fn separable_mixture_is_learned() {
        let out = train(&separable(), Architecture::mlp(16), &cfg()).unwrap();
        assert!(out.final_train_accuracy >= 0.99, "{}", out.final_train_accuracy);
        assert_eq!((out.trace.epochs, out.trace.n), (30, 100));
        assert_eq!(out.trace.losses.len(), 3000);
        assert!(out.trace.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable();
        let a = train(&ds, Architecture::mlp(8), &cfg()).unwrap();
        let b = train(&ds, Architecture::mlp(8), &cfg()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = separable();
        let huge: Vec<f64> = ds.features().iter().map(|x| x * 1e300).collect();
        let ds = LabeledDataset::new(2, 2, ds.ids().to_vec(), ds.labels().to_vec(), huge).unwrap();
        let mut c = cfg();
        c.learning_rate = 1.0;
        match train(&ds, Architecture::Linear, &c) {
            Err(Error::Divergence { stage, .. }) => assert_eq!(stage, "epoch"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_fields() {
        let mut c = cfg();
        c.learning_rate = -0.1;
        match c.validate().unwrap_err() {
            Error::Validation { field, .. } => assert_eq!(field, "learning_rate"),
            other => panic!("{other}"),
        }
        c = cfg();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c = cfg();
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let ds = LabeledDataset::new(
            2,
            1,
            vec![0, 1, 2, 3],
            vec![1, 0, 1, 1],
            vec![1.0, -1.0, 2.0, 0.5],
        )
        .unwrap();
        let p = ModelParams::zeros(Architecture::Linear, 1, 2).unwrap();
        assert_eq!(evaluate(&p, &ds).unwrap(), 0.25);
    }

    #[test]
    fn memorizer_scores_one() {
        // w = [+1, -1] on a 1-d input: positive inputs -> class 0
        let p = ModelParams::from_flat(Architecture::Linear, 1, 2, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let ds = LabeledDataset::new(2, 1, vec![0, 1, 2], vec![0, 1, 0], vec![2.0, -3.0, 0.1]).unwrap();
        assert_eq!(evaluate(&p, &ds).unwrap(), 1.0);
    }

    #[test]
    fn hand_enumerated_argmax() {
        // W = [[1,0],[0,1],[1,1]], b = [0, 0.5, -1]
        let p = ModelParams::from_flat(
            Architecture::Linear,
            2,
            3,
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.5, -1.0],
        )
        .unwrap();
        // x=(2,0): logits 2, 0.5, 1 -> 0; x=(0,2): 0, 2.5, 1 -> 1;
        // x=(2,2): 2, 2.5, 3 -> 2; x=(0.5,0): 0.5, 0.5, -0.5 -> tie 0/1 -> 0
        let xs = [2.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.5, 0.0];
        assert_eq!(predict(&p, &xs).unwrap(), vec![0, 1, 2, 0]);
        let ds = LabeledDataset::new(3, 2, vec![0, 1, 2, 3], vec![0, 1, 2, 1], xs.to_vec()).unwrap();
        assert_eq!(evaluate(&p, &ds).unwrap(), 0.75);
    }

    #[test]
    fn evaluate_empty_is_error() {
        let p = ModelParams::zeros(Architecture::Linear, 1, 2).unwrap();
        assert!(matches!(
            evaluate(&p, &LabeledDataset::empty(2, 1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn feature_maps() {
        let ds = separable();
        let mlp = init_params(Architecture::mlp(8), 2, 2, 0).unwrap();
        let fm = features(&mlp, &ds).unwrap();
        assert_eq!(fm.dim, 8);
        assert_eq!(fm.rows.len(), 800);
        let lin = init_params(Architecture::Linear, 2, 2, 0).unwrap();
        let fl = features(&lin, &ds).unwrap();
        assert_eq!(fl.rows, ds.features());

        let dup = LabeledDataset::new(1, 2, vec![0, 1], vec![0, 0], vec![0.3, 0.4, 0.3, 0.4]).unwrap();
        let m1 = init_params(Architecture::mlp(8), 2, 1, 0).unwrap();
        let f = features(&m1, &dup).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }
}
