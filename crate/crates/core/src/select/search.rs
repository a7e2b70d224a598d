use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SelectionPolicy;
use crate::dataset::{stratify_by_score, LabeledDataset};
use crate::distill::{EvalReport, Pipeline};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::format_g6;
use crate::utility::UtilityScores;

/// Ratio index reserved for full-data runs in seed derivation.
const FULL_DATA: u64 = u64::MAX;

/// Nineteen ratios from 0.02% to 90%.
pub fn default_grid() -> Vec<f64> {
    vec![
        0.0002, 0.0004, 0.001, 0.003, 0.005, 0.01, 0.03, 0.05, 0.08, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
        0.8, 0.9,
    ]
}

/// Splits `grid` into ratios that keep at least one sample per class before
/// the floor-of-one rule kicks in, and those that would not.
pub fn feasible_grid(dataset: &LabeledDataset, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let smallest = dataset.class_sizes().into_iter().filter(|&n| n > 0).min().unwrap_or(0);
    grid.iter().partition(|&&r| r * smallest as f64 >= 0.5)
}

/// Smallest ratio flagged comparable, else 1.0.
pub fn gamma_from_flags(grid: &[f64], comparable: &[bool]) -> f64 {
    grid.iter().zip(comparable).find(|(_, &c)| c).map_or(1.0, |(&r, _)| r)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("ratio grid is empty".into()));
    }
    if grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::Argument("grid ratios must lie in (0, 1)".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("grid must be strictly ascending".into()));
    }
    Ok(())
}

/// `n_repeats` pipeline runs on one dataset with seeds `derive(seed, [r])`.
pub fn repeat_runs<P: Pipeline + ?Sized>(
    data: &LabeledDataset,
    pipeline: &P,
    n_repeats: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_repeats == 0 {
        return Err(Error::Argument("n_repeats must be at least 1".into()));
    }
    let per_trial = (0..n_repeats as u64)
        .into_par_iter()
        .map(|r| pipeline.run(data, seed::derive(seed, &[r])))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_trials(per_trial)
}

/// Full-data reference runs. Failed runs are dropped; all failing is an error.
pub fn full_data_baseline<P: Pipeline + ?Sized>(
    dataset: &LabeledDataset,
    pipeline: &P,
    n_repeats: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    if n_repeats == 0 {
        return Err(Error::Argument("n_repeats must be at least 1".into()));
    }
    let ok: Vec<f64> = (0..n_repeats as u64)
        .into_par_iter()
        .map(|r| pipeline.run(dataset, seed::derive(base_seed, &[FULL_DATA, r])).ok())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if ok.is_empty() {
        return Err(Error::Undefined("every full-data run failed".into()));
    }
    EvalReport::from_trials(ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRatioResult {
    pub policy: String,
    pub gamma: f64,
    pub grid: Vec<f64>,
    /// `None` when every run at that ratio failed.
    pub reports: Vec<Option<EvalReport>>,
    pub comparable: Vec<bool>,
    pub failures: Vec<usize>,
    pub full_data: EvalReport,
    /// Requested ratios too small to keep a sample of the smallest class.
    #[serde(default)]
    pub skipped: Vec<f64>,
}

impl CriticalRatioResult {
    pub fn threshold(&self) -> f64 {
        self.full_data.mean_accuracy - self.full_data.std_accuracy
    }

    /// `ratio,mean,std,comparable` rows with six significant digits.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("ratio,mean,std,comparable\n");
        for ((r, rep), c) in self.grid.iter().zip(&self.reports).zip(&self.comparable) {
            let (m, s) = rep
                .as_ref()
                .map_or(("nan".to_string(), "nan".to_string()), |rep| {
                    (format_g6(rep.mean_accuracy), format_g6(rep.std_accuracy))
                });
            out.push_str(&format!("{},{m},{s},{c}\n", format_g6(*r)));
        }
        out
    }
}

/// Critical sample ratio of `policy`: full-data reference runs, then
/// `n_repeats` selection + pipeline runs per grid ratio. A ratio is comparable
/// when its mean accuracy is at least the full-data mean minus one standard
/// deviation.
pub fn critical_ratio_search<P: Pipeline + ?Sized>(
    dataset: &LabeledDataset,
    policy: &SelectionPolicy,
    pipeline: &P,
    grid: &[f64],
    n_repeats: usize,
    base_seed: u64,
) -> Result<CriticalRatioResult> {
    check_grid(grid)?;
    let full = full_data_baseline(dataset, pipeline, n_repeats, base_seed)?;
    critical_ratio_search_with_baseline(dataset, policy, pipeline, grid, n_repeats, base_seed, &full)
}

/// As [`critical_ratio_search`] but reusing precomputed full-data runs, so
/// several policies can share one reference.
pub fn critical_ratio_search_with_baseline<P: Pipeline + ?Sized>(
    dataset: &LabeledDataset,
    policy: &SelectionPolicy,
    pipeline: &P,
    grid: &[f64],
    n_repeats: usize,
    base_seed: u64,
    full: &EvalReport,
) -> Result<CriticalRatioResult> {
    check_grid(grid)?;
    if n_repeats == 0 {
        return Err(Error::Argument("n_repeats must be at least 1".into()));
    }
    let (grid, skipped) = feasible_grid(dataset, grid);
    if grid.is_empty() {
        return Err(Error::Argument("no grid ratio keeps a sample of every class".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|i| (0..n_repeats as u64).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(i, r)| -> Result<Option<f64>> {
            let path = [i as u64, r];
            let mask = policy.select(dataset, grid[i], &path)?;
            let subset = dataset.subset(&mask)?;
            Ok(pipeline.run(&subset, seed::derive(base_seed, &path)).ok())
        })
        .collect::<Result<_>>()?;

    let threshold = full.mean_accuracy - full.std_accuracy;
    let mut reports = Vec::with_capacity(grid.len());
    let mut comparable = Vec::with_capacity(grid.len());
    let mut failures = Vec::with_capacity(grid.len());
    for chunk in outcomes.chunks(n_repeats) {
        let ok: Vec<f64> = chunk.iter().flatten().copied().collect();
        failures.push(n_repeats - ok.len());
        if ok.is_empty() {
            reports.push(None);
            comparable.push(false);
        } else {
            let rep = EvalReport::from_trials(ok)?;
            comparable.push(rep.mean_accuracy >= threshold);
            reports.push(Some(rep));
        }
    }
    Ok(CriticalRatioResult {
        policy: policy.label(),
        gamma: gamma_from_flags(&grid, &comparable),
        grid,
        reports,
        comparable,
        failures,
        full_data: full.clone(),
        skipped,
    })
}

/// Runs the pipeline on every layer `S_1 .. S_L` of the score stratification,
/// lowest utility first. Layer `j` uses seeds `derive(derive(base, [j]), [r])`.
pub fn stratified_eval<P: Pipeline + ?Sized>(
    dataset: &LabeledDataset,
    scores: &UtilityScores,
    n_layers: usize,
    pipeline: &P,
    n_repeats: usize,
    base_seed: u64,
) -> Result<Vec<EvalReport>> {
    let layers = stratify_by_score(dataset, scores, n_layers)?;
    layers
        .layers
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            let data = dataset.subset(mask)?;
            repeat_runs(&data, pipeline, n_repeats, seed::derive(base_seed, &[j as u64]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::SelectionPolicy;

    fn data(per_class: usize) -> LabeledDataset {
        let n = 2 * per_class;
        LabeledDataset::new(2, 1, (0..n).collect(), (0..n).map(|i| i % 2).collect(), vec![0.0; n]).unwrap()
    }

    fn constant(_: &LabeledDataset, _: u64) -> Result<f64> {
        Ok(0.7)
    }

    fn fraction_of_100(d: &LabeledDataset, _: u64) -> Result<f64> {
        Ok(d.len() as f64 / 200.0)
    }

    #[test]
    fn constant_pipeline_takes_first_ratio() {
        let ds = data(100);
        let grid = [0.1, 0.3, 0.5];
        let res = critical_ratio_search(&ds, &SelectionPolicy::random(0), &constant, &grid, 3, 1).unwrap();
        assert_eq!(res.gamma, 0.1);
        assert!(res.comparable.iter().all(|&c| c));
    }

    #[test]
    fn monotone_pipeline_never_comparable() {
        let ds = data(100);
        let res = critical_ratio_search(&ds, &SelectionPolicy::random(0), &fraction_of_100, &[0.2, 0.9], 2, 1)
            .unwrap();
        assert_eq!(res.full_data.std_accuracy, 0.0);
        assert_eq!(res.gamma, 1.0);
        assert_eq!(res.gamma, gamma_from_flags(&res.grid, &res.comparable));
    }

    #[test]
    fn grid_validation_and_skips() {
        let ds = data(10);
        let p = SelectionPolicy::random(0);
        assert!(critical_ratio_search(&ds, &p, &constant, &[0.5, 0.3], 1, 0).is_err());
        assert!(critical_ratio_search(&ds, &p, &constant, &[0.5, 1.0], 1, 0).is_err());
        assert!(critical_ratio_search(&ds, &p, &constant, &[], 1, 0).is_err());
        let res = critical_ratio_search(&ds, &p, &constant, &default_grid(), 1, 0).unwrap();
        // 10 per class: ratios below 0.05 round to nothing
        assert_eq!(res.skipped.len(), 7);
        assert_eq!(res.grid[0], 0.05);
        assert_eq!(res.curve_csv().lines().count(), res.grid.len() + 1);
    }

    #[test]
    fn failing_ratio_is_incomparable() {
        let ds = data(50);
        let flaky = |d: &LabeledDataset, _: u64| {
            if d.len() < 50 {
                Err(Error::Undefined("too small".into()))
            } else {
                Ok(0.5)
            }
        };
        let res = critical_ratio_search(&ds, &SelectionPolicy::random(0), &flaky, &[0.1, 0.6], 2, 0).unwrap();
        assert_eq!(res.reports[0], None);
        assert_eq!(res.failures, vec![2, 0]);
        assert_eq!(res.comparable, vec![false, true]);
        assert_eq!(res.gamma, 0.6);
    }

    #[test]
    fn single_layer_is_full_data() {
        let ds = data(20);
        let scores = UtilityScores::from_values("s", (0..40).map(|i| (i, (i * 7 % 11) as f64)));
        let seeded = |d: &LabeledDataset, s: u64| Ok(d.len() as f64 + (s % 1000) as f64);
        let reps = stratified_eval(&ds, &scores, 1, &seeded, 3, 9).unwrap();
        assert_eq!(reps.len(), 1);
        assert_eq!(reps[0], repeat_runs(&ds, &seeded, 3, seed::derive(9, &[0])).unwrap());
    }

    #[test]
    fn constant_scores_give_id_slices() {
        let ds = data(10);
        let scores = UtilityScores::from_values("flat", (0..20).map(|i| (i, 0.0)));
        let min_id = |d: &LabeledDataset, _: u64| Ok(*d.ids().iter().min().unwrap() as f64);
        let reps = stratified_eval(&ds, &scores, 5, &min_id, 1, 0).unwrap();
        let firsts: Vec<f64> = reps.iter().map(|r| r.mean_accuracy).collect();
        assert_eq!(firsts, vec![0.0, 4.0, 8.0, 12.0, 16.0]);
    }
}
