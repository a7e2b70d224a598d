use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, SubsetMask};
use crate::error::{Error, Result};
use crate::model::FeatureMap;
use crate::utility::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Mean intraclass variance over interclass variance.
    pub value: f64,
    /// `(class, variance)` for every class present in the mask.
    pub intraclass: Vec<(usize, f64)>,
    pub interclass: f64,
}

/// Intraclass variance is the mean squared distance of a class's masked
/// members to their mean; interclass variance is the mean squared distance
/// of the class means to their own mean.
pub fn diversity_metric(features: &FeatureMap, dataset: &LabeledDataset, mask: &SubsetMask) -> Result<DiversityReport> {
    features.check_aligned(dataset)?;
    let d = features.dim;
    let mut means = Vec::new();
    let mut intraclass = Vec::new();
    for (class, members) in dataset.class_positions().iter().enumerate() {
        let rows: Vec<&[f64]> = members
            .iter()
            .filter(|&&p| mask.contains(dataset.id(p)))
            .map(|&p| features.row(p))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for r in &rows {
            mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let var = rows.iter().map(|r| sq_dist(r, &mean)).sum::<f64>() / rows.len() as f64;
        intraclass.push((class, var));
        means.push(mean);
    }
    if means.len() < 2 {
        return Err(Error::Undefined(format!(
            "diversity needs at least two classes in the subset, found {}",
            means.len()
        )));
    }
    let mut centre = vec![0.0; d];
    for m in &means {
        centre.iter_mut().zip(m).for_each(|(c, x)| *c += x);
    }
    centre.iter_mut().for_each(|c| *c /= means.len() as f64);
    let interclass = means.iter().map(|m| sq_dist(m, &centre)).sum::<f64>() / means.len() as f64;
    if interclass <= 0.0 {
        return Err(Error::Undefined("class means coincide; interclass variance is zero".into()));
    }
    let mean_intra = intraclass.iter().map(|&(_, v)| v).sum::<f64>() / intraclass.len() as f64;
    Ok(DiversityReport {
        value: mean_intra / interclass,
        intraclass,
        interclass,
    })
}
