//! Per-sample utility scores. Every indicator reports "larger = more useful".

mod kmeans;
mod monte_carlo;
mod smoothing;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{train, Architecture, FeatureMap, TrainConfig};

pub use kmeans::{kmeans, KMeans, KMeansParams};
pub(crate) use kmeans::sq_dist;
pub use monte_carlo::{mc_expected, monte_carlo_extend, monte_carlo_indicator, MonteCarloState, SubsetDraw};
pub use smoothing::gaussian_filter1d;

pub const SCORES_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScores {
    pub indicator: String,
    pub scores: BTreeMap<usize, f64>,
    /// IDs that the indicator could not score (Monte-Carlo samples never drawn).
    #[serde(default)]
    pub uncovered: Vec<usize>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ScoresFile {
    version: u32,
    indicator: String,
    metadata: serde_json::Value,
    uncovered: Vec<usize>,
    scores: Vec<ScoreRow>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    id: usize,
    score: f64,
}

impl UtilityScores {
    pub fn from_values(indicator: &str, values: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            indicator: indicator.to_string(),
            scores: values.into_iter().collect(),
            uncovered: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.scores.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores in dataset order; errors if any sample is missing.
    pub fn aligned(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        dataset
            .ids()
            .iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Argument(format!("no {} score for sample id {id}", self.indicator)))
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "score"])?;
        for (id, s) in &self.scores {
            w.write_record([id.to_string(), s.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScoresFile {
            version: SCORES_FORMAT_VERSION,
            indicator: self.indicator.clone(),
            metadata: self.metadata.clone(),
            uncovered: self.uncovered.clone(),
            scores: self.scores.iter().map(|(&id, &score)| ScoreRow { id, score }).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScoresFile = serde_json::from_str(text)?;
        if file.version > SCORES_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported scores version {}", file.version)));
        }
        let mut scores = BTreeMap::new();
        for row in file.scores {
            if !row.score.is_finite() {
                return Err(Error::Format(format!("non-finite score for id {}", row.id)));
            }
            if scores.insert(row.id, row.score).is_some() {
                return Err(Error::Format(format!("duplicate score for id {}", row.id)));
            }
        }
        Ok(Self {
            indicator: file.indicator,
            scores,
            uncovered: file.uncovered,
            metadata: file.metadata,
        })
    }
}

/// Negated training loss. `n_trials` probe classifiers are trained (seeds
/// `probe_cfg.seed + t`), their per-sample loss traces averaged and cut to
/// the first `use_epochs` epochs, then each sample's curve is smoothed and
/// the last value is negated.
pub fn loss_indicator(
    dataset: &LabeledDataset,
    arch: Architecture,
    probe_cfg: &TrainConfig,
    n_trials: usize,
    use_epochs: usize,
    smooth_sigma: f64,
) -> Result<UtilityScores> {
    probe_cfg.validate()?;
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    if use_epochs == 0 || use_epochs > probe_cfg.epochs {
        return Err(Error::Argument(format!(
            "use_epochs must be in 1..={}, got {use_epochs}",
            probe_cfg.epochs
        )));
    }
    if !(smooth_sigma >= 0.0 && smooth_sigma.is_finite()) {
        return Err(Error::Argument(format!("smooth_sigma must be >= 0, got {smooth_sigma}")));
    }
    let n = dataset.len();
    let traces = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let cfg = probe_cfg.with_seed(probe_cfg.seed.wrapping_add(t as u64));
            Ok(train(dataset, arch, &cfg)?.trace)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut avg = vec![0.0; use_epochs * n];
    for trace in &traces {
        for (a, l) in avg.iter_mut().zip(&trace.losses[..use_epochs * n]) {
            *a += l;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n_trials as f64);

    let mut scores = BTreeMap::new();
    for pos in 0..n {
        let curve: Vec<f64> = (0..use_epochs).map(|e| avg[e * n + pos]).collect();
        let smoothed = gaussian_filter1d(&curve, smooth_sigma);
        scores.insert(dataset.id(pos), -smoothed[use_epochs - 1]);
    }
    Ok(UtilityScores {
        indicator: "loss".into(),
        scores,
        uncovered: Vec::new(),
        metadata: json!({
            "architecture": arch,
            "probe": probe_cfg,
            "n_trials": n_trials,
            "use_epochs": use_epochs,
            "smooth_sigma": smooth_sigma,
        }),
    })
}

fn nonempty_classes(dataset: &LabeledDataset) -> Vec<Vec<usize>> {
    dataset.class_positions().into_iter().filter(|c| !c.is_empty()).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    kmeans::sq_dist(a, b).sqrt()
}

/// Negated mean distance to the `k` nearest same-class neighbours.
pub fn density_indicator(features: &FeatureMap, dataset: &LabeledDataset, k: usize) -> Result<UtilityScores> {
    features.check_aligned(dataset)?;
    let classes = nonempty_classes(dataset);
    let smallest = classes.iter().map(Vec::len).min().unwrap_or(0);
    if k == 0 || k >= smallest {
        return Err(Error::Argument(format!(
            "k must be in 1..{smallest} (smallest class size), got {k}"
        )));
    }
    let mut scores = BTreeMap::new();
    for members in &classes {
        let per: Vec<(usize, f64)> = members
            .par_iter()
            .map(|&p| {
                let mut d: Vec<f64> = members
                    .iter()
                    .filter(|&&q| q != p)
                    .map(|&q| distance(features.row(p), features.row(q)))
                    .collect();
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
                let nearest = &mut d[..k];
                nearest.sort_by(f64::total_cmp);
                (dataset.id(p), -nearest.iter().sum::<f64>() / k as f64)
            })
            .collect();
        scores.extend(per);
    }
    Ok(UtilityScores {
        indicator: "density".into(),
        scores,
        uncovered: Vec::new(),
        metadata: json!({ "k": k }),
    })
}

/// Negated distance to the nearest k-means centre of the sample's class.
pub fn cluster_distance_indicator(
    features: &FeatureMap,
    dataset: &LabeledDataset,
    k_clusters: usize,
    seed: u64,
) -> Result<UtilityScores> {
    features.check_aligned(dataset)?;
    let classes = nonempty_classes(dataset);
    let smallest = classes.iter().map(Vec::len).min().unwrap_or(0);
    if k_clusters == 0 || k_clusters > smallest {
        return Err(Error::Argument(format!(
            "k_clusters must be in 1..={smallest} (smallest class size), got {k_clusters}"
        )));
    }
    let params = KMeansParams::default();
    let mut scores = BTreeMap::new();
    for members in &classes {
        let class = dataset.label(members[0]);
        let points: Vec<f64> = members.iter().flat_map(|&p| features.row(p).iter().copied()).collect();
        let km = kmeans(
            &points,
            features.dim,
            k_clusters,
            crate::seed::derive(seed, &[class as u64]),
            &params,
        );
        for &p in members {
            scores.insert(dataset.id(p), -km.nearest_distance(features.row(p)));
        }
    }
    Ok(UtilityScores {
        indicator: "cluster_distance".into(),
        scores,
        uncovered: Vec::new(),
        metadata: json!({ "k_clusters": k_clusters, "seed": seed }),
    })
}

/// Negated distance to the closest initial synthetic vector of the sample's
/// class. `init_features[c]` holds the flattened vectors of class `c`.
pub fn init_distance_indicator(
    features: &FeatureMap,
    dataset: &LabeledDataset,
    init_features: &[Vec<f64>],
) -> Result<UtilityScores> {
    features.check_aligned(dataset)?;
    let dim = features.dim;
    let mut scores = BTreeMap::new();
    for members in nonempty_classes(dataset) {
        let class = dataset.label(members[0]);
        let init = init_features.get(class).filter(|v| !v.is_empty()).ok_or_else(|| {
            Error::Argument(format!("class {class} has no initial vectors"))
        })?;
        if init.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "initial vectors of class {class} do not split into {dim}-d rows"
            )));
        }
        for p in members {
            let best = init
                .chunks(dim)
                .map(|v| distance(features.row(p), v))
                .fold(f64::INFINITY, f64::min);
            scores.insert(dataset.id(p), -best);
        }
    }
    Ok(UtilityScores {
        indicator: "init_distance".into(),
        scores,
        uncovered: Vec::new(),
        metadata: json!({ "init_per_class": init_features.iter().map(|v| v.len() / dim).collect::<Vec<_>>() }),
    })
}
