use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::UtilityScores;
use crate::dataset::LabeledDataset;
use crate::distill::Pipeline;
use crate::error::{Error, Result};
use crate::seed;

pub const MC_STATE_FORMAT_VERSION: u32 = 1;

/// How the `M` samples of a trial are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetDraw {
    /// Per-class quotas proportional to class size; fractional remainders are
    /// assigned by systematic sampling so each sample is kept with
    /// probability exactly `M / N`.
    #[default]
    ClassBalanced,
    /// Every `M`-subset equally likely.
    Uniform,
}

/// Running sums for the Monte-Carlo indicator, indexed by dataset position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloState {
    pub version: u32,
    pub ids: Vec<usize>,
    pub visits: Vec<u64>,
    pub accum: Vec<f64>,
    /// Successful trials.
    pub trials: u64,
    pub failures: u64,
    /// Trials attempted so far; the next trial uses this index for its seed.
    pub attempted: u64,
    pub subset_size: usize,
    pub draw: SubsetDraw,
    pub seed: u64,
}

impl MonteCarloState {
    pub fn new(dataset: &LabeledDataset, subset_size: usize, draw: SubsetDraw, seed: u64) -> Result<Self> {
        let n = dataset.len();
        if subset_size == 0 || subset_size >= n {
            return Err(Error::Argument(format!(
                "subset size must be in 1..{n}, got {subset_size}"
            )));
        }
        Ok(Self {
            version: MC_STATE_FORMAT_VERSION,
            ids: dataset.ids().to_vec(),
            visits: vec![0; n],
            accum: vec![0.0; n],
            trials: 0,
            failures: 0,
            attempted: 0,
            subset_size,
            draw,
            seed,
        })
    }

    /// Adds another state's counts. Both must cover the same samples with the
    /// same subset size.
    pub fn merge(&mut self, other: &MonteCarloState) -> Result<()> {
        if self.ids != other.ids || self.subset_size != other.subset_size || self.draw != other.draw {
            return Err(Error::Consistency(
                "cannot merge Monte-Carlo states over different samples or subset sizes".into(),
            ));
        }
        for (a, b) in self.visits.iter_mut().zip(&other.visits) {
            *a += b;
        }
        for (a, b) in self.accum.iter_mut().zip(&other.accum) {
            *a += b;
        }
        self.trials += other.trials;
        self.failures += other.failures;
        self.attempted += other.attempted;
        Ok(())
    }

    pub fn scores(&self) -> UtilityScores {
        let mut scores = BTreeMap::new();
        let mut uncovered = Vec::new();
        for ((&id, &t), &acc) in self.ids.iter().zip(&self.visits).zip(&self.accum) {
            if t == 0 {
                uncovered.push(id);
            } else {
                scores.insert(id, acc / t as f64);
            }
        }
        UtilityScores {
            indicator: "monte_carlo".into(),
            scores,
            uncovered,
            metadata: json!({
                "subset_size": self.subset_size,
                "trials": self.trials,
                "failures": self.failures,
                "attempted": self.attempted,
                "draw": self.draw,
                "seed": self.seed,
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)?;
        if state.version > MC_STATE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported state version {}", state.version)));
        }
        let n = state.ids.len();
        if state.visits.len() != n || state.accum.len() != n {
            return Err(Error::Format("state arrays differ in length".into()));
        }
        if state.visits.iter().any(|&t| t > state.trials) {
            return Err(Error::Format("visit count exceeds completed trials".into()));
        }
        Ok(state)
    }
}

fn draw_positions(dataset: &LabeledDataset, m: usize, draw: SubsetDraw, rng: &mut seed::Rng) -> Vec<usize> {
    let n = dataset.len();
    let mut picked = match draw {
        SubsetDraw::Uniform => index::sample(rng, n, m).into_vec(),
        SubsetDraw::ClassBalanced => {
            let classes = dataset.class_positions();
            // integer systematic sampling: class c owns the interval of
            // length (m * n_c) mod n; points sit at u, u + n, u + 2n, ...
            let offset = rng.random_range(0..n);
            let mut cursor = 0usize;
            let mut picked = Vec::with_capacity(m);
            for members in &classes {
                let exact = m * members.len();
                let lo = cursor;
                cursor += exact % n;
                let hits = |end: usize| if end > offset { (end - offset).div_ceil(n) } else { 0 };
                let quota = exact / n + (hits(cursor) - hits(lo));
                picked.extend(index::sample(rng, members.len(), quota).into_iter().map(|k| members[k]));
            }
            picked
        }
    };
    picked.sort_unstable();
    picked
}

/// Runs `n_more` further trials on top of `state`.
pub fn monte_carlo_extend<P: Pipeline + ?Sized>(
    state: &mut MonteCarloState,
    dataset: &LabeledDataset,
    pipeline: &P,
    n_more: usize,
) -> Result<()> {
    if state.ids != dataset.ids() {
        return Err(Error::Consistency("state does not belong to this dataset".into()));
    }
    let start = state.attempted;
    let outcomes: Vec<(Vec<usize>, Option<f64>)> = (0..n_more as u64)
        .into_par_iter()
        .map(|j| {
            let trial = start + j;
            let mut rng = seed::rng_at(state.seed, &[trial, 0]);
            let positions = draw_positions(dataset, state.subset_size, state.draw, &mut rng);
            let subset = dataset.select_positions(&positions);
            let acc = pipeline
                .run(&subset, seed::derive(state.seed, &[trial, 1]))
                .ok()
                .filter(|a| a.is_finite());
            (positions, acc)
        })
        .collect();
    for (positions, acc) in outcomes {
        state.attempted += 1;
        match acc {
            Some(a) => {
                state.trials += 1;
                for p in positions {
                    state.visits[p] += 1;
                    state.accum[p] += a;
                }
            }
            None => state.failures += 1,
        }
    }
    Ok(())
}

/// Average pipeline accuracy over the random `m`-subsets containing each
/// sample. Failed trials are skipped and counted.
pub fn monte_carlo_indicator<P: Pipeline + ?Sized>(
    dataset: &LabeledDataset,
    m: usize,
    n_trials: usize,
    pipeline: &P,
    seed: u64,
    draw: SubsetDraw,
) -> Result<(UtilityScores, MonteCarloState)> {
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    let mut state = MonteCarloState::new(dataset, m, draw, seed)?;
    monte_carlo_extend(&mut state, dataset, pipeline, n_trials)?;
    Ok((state.scores(), state))
}

/// Expected Monte-Carlo score of sample `i` when the subset accuracy is the
/// sum of per-sample utilities `u` and subsets of size `m` are uniform.
pub fn mc_expected(u: &[f64], m: usize, i: usize) -> Result<f64> {
    let n = u.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!("subset size must be in 1..={n}, got {m}")));
    }
    if i >= n {
        return Err(Error::Argument(format!("index {i} out of range for {n} samples")));
    }
    if n == 1 {
        return Ok(u[0]);
    }
    let (nf, mf) = (n as f64, m as f64);
    let mean = u.iter().sum::<f64>() / nf;
    Ok((nf - mf) / (nf - 1.0) * u[i] + (mf - 1.0) * nf / (nf - 1.0) * mean)
}
