use serde::{Deserialize, Serialize};

use super::{LabeledDataset, SubsetMask};
use crate::error::{Error, Result};
use crate::utility::UtilityScores;

/// Layers `S_1 .. S_L` in ascending utility order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationResult {
    pub layers: Vec<SubsetMask>,
}

/// Sorts every class by ascending score (ties by ascending ID) and cuts it into
/// `n_layers` contiguous runs; earlier runs take the remainder samples. Layer
/// `j` is the union over classes of their `j`-th run.
pub fn stratify_by_score(
    dataset: &LabeledDataset,
    scores: &UtilityScores,
    n_layers: usize,
) -> Result<StratificationResult> {
    if n_layers == 0 {
        return Err(Error::Argument("n_layers must be at least 1".into()));
    }
    let classes: Vec<Vec<usize>> = dataset
        .class_positions()
        .into_iter()
        .filter(|c| !c.is_empty())
        .collect();
    let smallest = classes.iter().map(Vec::len).min().unwrap_or(0);
    if n_layers > smallest {
        return Err(Error::Argument(format!(
            "{n_layers} layers exceed the smallest class size {smallest}"
        )));
    }

    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); n_layers];
    for positions in classes {
        let mut keyed = Vec::with_capacity(positions.len());
        for p in positions {
            let id = dataset.id(p);
            let s = scores
                .get(id)
                .ok_or_else(|| Error::Argument(format!("no score for sample id {id}")))?;
            keyed.push((s, id));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let base = keyed.len() / n_layers;
        let extra = keyed.len() % n_layers;
        let mut start = 0;
        for (j, layer) in layers.iter_mut().enumerate() {
            let size = base + usize::from(j < extra);
            layer.extend(keyed[start..start + size].iter().map(|&(_, id)| id));
            start += size;
        }
    }

    let parent = dataset.len();
    Ok(StratificationResult {
        layers: layers
            .into_iter()
            .map(|ids| SubsetMask::new(ids, parent))
            .collect::<Result<_>>()?,
    })
}
