use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

/// An isotropic Gaussian blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub mean: Vec<f64>,
    pub std: f64,
    pub count: usize,
}

/// One class of a mixture: a main blob plus optional extra blobs sharing its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub mean: Vec<f64>,
    pub std: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<Blob>,
}

impl ClassSpec {
    pub fn new(mean: Vec<f64>, std: f64, count: usize) -> Self {
        Self {
            mean,
            std,
            count,
            extra: Vec::new(),
        }
    }

    fn blobs(&self) -> impl Iterator<Item = (&[f64], f64, usize)> {
        std::iter::once((self.mean.as_slice(), self.std, self.count))
            .chain(self.extra.iter().map(|b| (b.mean.as_slice(), b.std, b.count)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub classes: Vec<ClassSpec>,
}

impl MixtureSpec {
    pub fn dim(&self) -> Option<usize> {
        self.classes.first().map(|c| c.mean.len())
    }

    pub fn validate(&self) -> Result<usize> {
        let dim = self
            .dim()
            .ok_or_else(|| Error::Spec("mixture has no classes".into()))?;
        if dim == 0 {
            return Err(Error::Spec("class means must have at least one coordinate".into()));
        }
        for (c, class) in self.classes.iter().enumerate() {
            for (mean, std, count) in class.blobs() {
                if mean.len() != dim {
                    return Err(Error::Spec(format!(
                        "class {c}: mean has dimension {}, expected {dim}",
                        mean.len()
                    )));
                }
                if count == 0 {
                    return Err(Error::Spec(format!("class {c}: blob count must be at least 1")));
                }
                if !(std > 0.0 && std.is_finite()) {
                    return Err(Error::Spec(format!("class {c}: stddev must be positive")));
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Spec(format!("class {c}: mean must be finite")));
                }
            }
        }
        Ok(dim)
    }
}

/// Draws each class i.i.d. from its isotropic Gaussians. IDs follow generation
/// order (class by class, main blob first).
pub fn gen_gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<LabeledDataset> {
    let dim = spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        for (mean, std, count) in class.blobs() {
            for _ in 0..count {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push(m + std * z);
                }
                labels.push(c);
            }
        }
    }
    let ids = (0..labels.len()).collect();
    LabeledDataset::new(spec.classes.len(), dim, ids, labels, features)
}

/// Relabels `round(fraction * class_size)` samples of every class to a uniformly
/// drawn different class. Returns the new dataset and the IDs of the relabeled samples.
pub fn plant_mislabeled(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Argument(format!(
            "mislabel fraction {fraction} outside [0, 1)"
        )));
    }
    let classes = dataset.num_classes();
    if classes < 2 && fraction > 0.0 {
        return Err(Error::Argument("mislabeling needs at least two classes".into()));
    }
    let mut rng = seed::rng(seed);
    let mut labels = dataset.labels().to_vec();
    let mut planted = Vec::new();
    for (c, positions) in dataset.class_positions().into_iter().enumerate() {
        let n = (fraction * positions.len() as f64).round() as usize;
        for k in index::sample(&mut rng, positions.len(), n) {
            let pos = positions[k];
            let shift = rng.random_range(1..classes);
            labels[pos] = (c + shift) % classes;
            planted.push(dataset.id(pos));
        }
    }
    planted.sort_unstable();
    Ok((dataset.with_labels(labels)?, planted))
}
