//! Labeled datasets with stable sample IDs.
//!
//! Features are stored row-major in one flat buffer. Subsetting never renumbers
//! samples, so scores computed on a parent dataset stay joinable with any of its
//! subsets.

mod generate;
mod idx;
mod stratify;
mod tabular;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{gen_gaussian_mixture, plant_mislabeled, Blob, ClassSpec, MixtureSpec};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use stratify::{stratify_by_score, StratificationResult};
pub use tabular::{load_csv, write_csv};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    num_classes: usize,
    dim: usize,
    ids: Vec<usize>,
    labels: Vec<usize>,
    features: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(
        num_classes: usize,
        dim: usize,
        ids: Vec<usize>,
        labels: Vec<usize>,
        features: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::Shape("dataset needs at least one class".into()));
        }
        if ids.len() != labels.len() || features.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} ids, {} labels and {} feature values do not describe {}-dimensional samples",
                ids.len(),
                labels.len(),
                features.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let mut seen = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::Consistency(format!("duplicate sample id {id}")));
            }
        }
        Ok(Self {
            num_classes,
            dim,
            ids,
            labels,
            features,
        })
    }

    pub fn empty(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            ids: Vec::new(),
            labels: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row-major `len() x dim()` feature buffer.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.features[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn id(&self, pos: usize) -> usize {
        self.ids[pos]
    }

    pub fn label(&self, pos: usize) -> usize {
        self.labels[pos]
    }

    /// Positions of the samples of each class, in dataset order.
    pub fn class_positions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (pos, &label) in self.labels.iter().enumerate() {
            out[label].push(pos);
        }
        out
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_classes];
        for &label in &self.labels {
            out[label] += 1;
        }
        out
    }

    pub fn id_positions(&self) -> HashMap<usize, usize> {
        self.ids.iter().enumerate().map(|(pos, &id)| (id, pos)).collect()
    }

    pub fn full_mask(&self) -> SubsetMask {
        SubsetMask {
            kept: self.ids.iter().copied().collect(),
            parent_size: self.len(),
        }
    }

    /// Samples at the given positions, in the given order.
    pub fn select_positions(&self, positions: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(positions.len() * self.dim);
        for &p in positions {
            features.extend_from_slice(self.row(p));
        }
        LabeledDataset {
            num_classes: self.num_classes,
            dim: self.dim,
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            features,
        }
    }

    /// Keeps exactly the masked samples, preserving dataset order and IDs.
    pub fn subset(&self, mask: &SubsetMask) -> Result<LabeledDataset> {
        let index = self.id_positions();
        let mut positions = Vec::with_capacity(mask.len());
        for id in &mask.kept {
            match index.get(id) {
                Some(&p) => positions.push(p),
                None => {
                    return Err(Error::Consistency(format!(
                        "mask references unknown sample id {id}"
                    )))
                }
            }
        }
        positions.sort_unstable();
        Ok(self.select_positions(&positions))
    }

    /// Keeps up to `per_class` samples (in file order) from each listed class and
    /// relabels them to the position of their class in `classes`.
    pub fn restrict_classes(&self, classes: &[usize], per_class: Option<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Argument("class list is empty".into()));
        }
        let mut remap = vec![None; self.num_classes];
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.num_classes {
                return Err(Error::Argument(format!(
                    "class {old} outside [0, {})",
                    self.num_classes
                )));
            }
            if remap[old].is_some() {
                return Err(Error::Argument(format!("class {old} listed twice")));
            }
            remap[old] = Some(new);
        }
        let mut taken = vec![0usize; classes.len()];
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        for (pos, &label) in self.labels.iter().enumerate() {
            if let Some(new) = remap[label] {
                if per_class.is_none_or(|cap| taken[new] < cap) {
                    taken[new] += 1;
                    positions.push(pos);
                    labels.push(new);
                }
            }
        }
        let mut out = self.select_positions(&positions);
        out.labels = labels;
        out.num_classes = classes.len();
        Ok(out)
    }

    /// Same samples with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        LabeledDataset::new(
            self.num_classes,
            self.dim,
            self.ids.clone(),
            labels,
            self.features.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    num_classes: usize,
    dim: usize,
    samples: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: usize,
    label: usize,
    features: Vec<f64>,
}

impl From<&LabeledDataset> for DatasetFile {
    fn from(ds: &LabeledDataset) -> Self {
        DatasetFile {
            version: DATASET_FORMAT_VERSION,
            num_classes: ds.num_classes,
            dim: ds.dim,
            samples: (0..ds.len())
                .map(|p| SampleRecord {
                    id: ds.id(p),
                    label: ds.label(p),
                    features: ds.row(p).to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<DatasetFile> for LabeledDataset {
    type Error = Error;

    fn try_from(file: DatasetFile) -> Result<Self> {
        if file.version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset container version {}",
                file.version
            )));
        }
        let mut ids = Vec::with_capacity(file.samples.len());
        let mut labels = Vec::with_capacity(file.samples.len());
        let mut features = Vec::with_capacity(file.samples.len() * file.dim);
        for s in file.samples {
            if s.features.len() != file.dim {
                return Err(Error::Shape(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    file.dim
                )));
            }
            ids.push(s.id);
            labels.push(s.label);
            features.extend(s.features);
        }
        LabeledDataset::new(file.num_classes, file.dim, ids, labels, features)
    }
}

/// A set of kept sample IDs drawn from a parent dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetMask {
    kept: BTreeSet<usize>,
    parent_size: usize,
}

impl SubsetMask {
    pub fn new(kept: impl IntoIterator<Item = usize>, parent_size: usize) -> Result<Self> {
        let kept: BTreeSet<usize> = kept.into_iter().collect();
        if kept.len() > parent_size {
            return Err(Error::Consistency(format!(
                "mask keeps {} samples of a {}-sample parent",
                kept.len(),
                parent_size
            )));
        }
        Ok(Self { kept, parent_size })
    }

    pub fn empty(parent_size: usize) -> Self {
        Self {
            kept: BTreeSet::new(),
            parent_size,
        }
    }

    pub fn kept(&self) -> &BTreeSet<usize> {
        &self.kept
    }

    pub fn parent_size(&self) -> usize {
        self.parent_size
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.kept.contains(&id)
    }

    pub fn fraction(&self) -> f64 {
        if self.parent_size == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.parent_size as f64
        }
    }
}
