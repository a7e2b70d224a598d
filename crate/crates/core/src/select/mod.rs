//! Subset selection, critical-ratio search, stratified evaluation and the
//! diversity metric.

mod diversity;
mod search;

use rand::seq::index;

use crate::dataset::{LabeledDataset, SubsetMask};
use crate::error::{Error, Result};
use crate::seed;
use crate::utility::UtilityScores;

pub use diversity::{diversity_metric, DiversityReport};
pub use search::{
    critical_ratio_search, critical_ratio_search_with_baseline, default_grid, feasible_grid, full_data_baseline,
    gamma_from_flags, repeat_runs, stratified_eval, CriticalRatioResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Random,
    GreedyByScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    pub scores: Option<UtilityScores>,
    pub seed: u64,
}

impl SelectionPolicy {
    pub fn random(seed: u64) -> Self {
        Self {
            kind: PolicyKind::Random,
            scores: None,
            seed,
        }
    }

    pub fn greedy(scores: UtilityScores) -> Self {
        Self {
            kind: PolicyKind::GreedyByScore,
            scores: Some(scores),
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        match (&self.kind, &self.scores) {
            (PolicyKind::Random, _) => "random".into(),
            (PolicyKind::GreedyByScore, Some(s)) => format!("greedy_{}", s.indicator),
            (PolicyKind::GreedyByScore, None) => "greedy".into(),
        }
    }

    /// Applies the policy. `draw` distinguishes repeated random draws and is
    /// ignored by greedy selection.
    pub fn select(&self, dataset: &LabeledDataset, ratio: f64, draw: &[u64]) -> Result<SubsetMask> {
        match self.kind {
            PolicyKind::Random => random_select(dataset, ratio, seed::derive(self.seed, draw)),
            PolicyKind::GreedyByScore => {
                let scores = self
                    .scores
                    .as_ref()
                    .ok_or_else(|| Error::Argument("greedy selection needs utility scores".into()))?;
                greedy_select(dataset, scores, ratio)
            }
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("ratio must be in (0, 1], got {ratio}")))
    }
}

/// Samples kept from a class of `size`: `ratio * size` rounded half up, at
/// least one, at most `size`.
pub fn keep_count(ratio: f64, size: usize) -> usize {
    if size == 0 {
        return 0;
    }
    ((ratio * size as f64 + 0.5).floor() as usize).clamp(1, size)
}

/// Uniform per-class sampling without replacement.
pub fn random_select(dataset: &LabeledDataset, ratio: f64, seed: u64) -> Result<SubsetMask> {
    check_ratio(ratio)?;
    let mut kept = Vec::new();
    for (class, members) in dataset.class_positions().iter().enumerate() {
        let k = keep_count(ratio, members.len());
        let mut rng = seed::rng_at(seed, &[class as u64]);
        kept.extend(index::sample(&mut rng, members.len(), k).into_iter().map(|i| dataset.id(members[i])));
    }
    SubsetMask::new(kept, dataset.len())
}

/// Per class, the highest-scoring samples; ties go to the smaller ID.
pub fn greedy_select(dataset: &LabeledDataset, scores: &UtilityScores, ratio: f64) -> Result<SubsetMask> {
    check_ratio(ratio)?;
    let mut kept = Vec::new();
    for members in dataset.class_positions() {
        let mut keyed = members
            .iter()
            .map(|&p| {
                let id = dataset.id(p);
                scores
                    .get(id)
                    .map(|s| (s, id))
                    .ok_or_else(|| Error::Argument(format!("no {} score for sample id {id}", scores.indicator)))
            })
            .collect::<Result<Vec<_>>>()?;
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = keep_count(ratio, members.len());
        kept.extend(keyed[..k].iter().map(|&(_, id)| id));
    }
    SubsetMask::new(kept, dataset.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(sizes: &[usize]) -> LabeledDataset {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let n = labels.len();
        LabeledDataset::new(sizes.len(), 1, (0..n).collect(), labels, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    fn per_class(ds: &LabeledDataset, mask: &SubsetMask) -> Vec<usize> {
        ds.class_positions()
            .iter()
            .map(|m| m.iter().filter(|&&p| mask.contains(ds.id(p))).count())
            .collect()
    }

    #[test]
    fn rounding_examples() {
        let ds = classes(&[10, 11]);
        assert_eq!(per_class(&ds, &random_select(&ds, 0.5, 0).unwrap()), vec![5, 6]);
        let tiny = classes(&[3]);
        assert_eq!(random_select(&tiny, 0.01, 0).unwrap().len(), 1);
        assert_eq!(random_select(&ds, 1.0, 4).unwrap(), ds.full_mask());
    }

    #[test]
    fn ratio_bounds() {
        let ds = classes(&[4]);
        for r in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(random_select(&ds, r, 0), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn greedy_example() {
        let ds = classes(&[4]);
        let s = UtilityScores::from_values("x", [(0, 5.0), (1, 1.0), (2, 9.0), (3, 9.0)]);
        let mask = greedy_select(&ds, &s, 0.5).unwrap();
        assert_eq!(mask.kept().iter().copied().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(greedy_select(&ds, &s, 1.0).unwrap(), ds.full_mask());
        let missing = UtilityScores::from_values("x", [(0, 5.0)]);
        assert!(matches!(greedy_select(&ds, &missing, 0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn greedy_tie_break_prefers_small_ids() {
        let ds = classes(&[5]);
        let s = UtilityScores::from_values("flat", (0..5).map(|i| (i, 1.0)));
        let mask = greedy_select(&ds, &s, 0.4).unwrap();
        assert_eq!(mask.kept().iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn random_select_is_seeded() {
        let ds = classes(&[20, 20]);
        assert_eq!(random_select(&ds, 0.3, 1).unwrap(), random_select(&ds, 0.3, 1).unwrap());
        assert_ne!(random_select(&ds, 0.3, 1).unwrap(), random_select(&ds, 0.3, 2).unwrap());
    }

    #[test]
    fn policy_dispatch() {
        let ds = classes(&[6]);
        let s = UtilityScores::from_values("loss", (0..6).map(|i| (i, i as f64)));
        let greedy = SelectionPolicy::greedy(s);
        assert_eq!(greedy.label(), "greedy_loss");
        assert_eq!(greedy.select(&ds, 0.5, &[1]).unwrap(), greedy.select(&ds, 0.5, &[2]).unwrap());
        let random = SelectionPolicy::random(3);
        assert_eq!(random.select(&ds, 0.5, &[1]).unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn keep_counts_follow_rounding_rule(
            sizes in proptest::collection::vec(1usize..40, 1..5),
            ratio in 0.001f64..=1.0,
            seed in any::<u64>(),
        ) {
            let ds = classes(&sizes);
            let mask = random_select(&ds, ratio, seed).unwrap();
            let got = per_class(&ds, &mask);
            for (&n, &k) in sizes.iter().zip(&got) {
                let want = ((ratio * n as f64 + 0.5).floor() as usize).max(1).min(n);
                prop_assert_eq!(k, want);
            }
        }

        #[test]
        fn greedy_depends_only_on_order(
            raw in proptest::collection::vec(-10.0f64..10.0, 12),
            ratio in 0.05f64..=1.0,
        ) {
            let ds = classes(&[5, 7]);
            let a = UtilityScores::from_values("a", raw.iter().copied().enumerate());
            // strictly increasing transform
            let b = UtilityScores::from_values("b", raw.iter().map(|x| x.powi(3) * 2.0 + x.exp()).enumerate());
            prop_assert_eq!(greedy_select(&ds, &a, ratio).unwrap(), greedy_select(&ds, &b, ratio).unwrap());
        }
    }
}
