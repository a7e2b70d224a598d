use rand::seq::index;

use super::{check_inputs, effective_real_batch, match_loss_and_grad, Algorithm, DistillConfig, DistillRun, SyntheticSet, Timer};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{init_params, Sgd};
use crate::seed;

/// Gradient matching: every iteration samples a fresh network; each outer loop
/// aligns per-class synthetic gradients with real-batch gradients, then the
/// network takes `inner_loops` steps on the synthetic set.
pub fn distill_dc(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig) -> Result<DistillRun> {
    if cfg.algorithm != Algorithm::Dc {
        return Err(Error::Argument(format!(
            "distill_dc called with algorithm {:?}",
            cfg.algorithm
        )));
    }
    run(real, syn, cfg, false)
}

/// Gradient matching where, from `prune_start_fraction * iterations` onward,
/// the `ceil(batch * prune_rate)` largest-loss samples of every real batch are
/// left out of the real gradient.
pub fn distill_dc_pruned(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig) -> Result<DistillRun> {
    if cfg.algorithm != Algorithm::DcPruned {
        return Err(Error::Argument(format!(
            "distill_dc_pruned called with algorithm {:?}",
            cfg.algorithm
        )));
    }
    if !(0.0..1.0).contains(&cfg.prune_rate) {
        return Err(Error::Argument(format!(
            "prune_rate {} outside [0, 1)",
            cfg.prune_rate
        )));
    }
    run(real, syn, cfg, true)
}

/// Positions of the samples kept after dropping the `ceil(n * rate)` largest
/// losses, in ascending position order. At least one sample always survives.
pub fn prune_survivors(losses: &[f64], rate: f64) -> Vec<usize> {
    let n = losses.len();
    let drop = ((n as f64 * rate).ceil() as usize).min(n.saturating_sub(1));
    if drop == 0 {
        return (0..n).collect();
    }
    // (loss, position) is a total order: everything strictly below the
    // (n - drop)-th key survives.
    let key = |i: usize| (losses[i], i);
    let below = |a: (f64, usize), b: (f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).is_lt();
    let mut order: Vec<usize> = (0..n).collect();
    let pivot = key(*order.select_nth_unstable_by(n - drop, |&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b))).1);
    (0..n).filter(|&i| below(key(i), pivot)).collect()
}

fn run(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig, prune: bool) -> Result<DistillRun> {
    check_inputs(real, syn, cfg)?;
    let timer = Timer::start();
    let mut out = syn.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(DistillRun {
            synthetic: out,
            objective_trace: trace,
            seconds: timer.seconds(),
        });
    }

    let d = real.dim();
    let classes = real.num_classes();
    let ipc = out.ipc();
    let positions = real.class_positions();
    let largest = positions.iter().map(Vec::len).max().unwrap_or(0);
    let batch = effective_real_batch(cfg.real_batch_per_class, largest);
    let prune_from = cfg.prune_start_iteration();
    let syn_labels = out.labels();
    let class_labels: Vec<Vec<usize>> = (0..classes).map(|c| vec![c; ipc]).collect();

    let mut image_opt = Sgd::new(out.vectors().len(), cfg.image_lr, cfg.momentum);
    let mut rng = seed::rng_at(cfg.seed, &[0xDC]);
    let mut xs = Vec::with_capacity(batch * d);
    let mut ys = Vec::with_capacity(batch);

    for it in 0..cfg.iterations {
        let mut net = init_params(cfg.network, d, classes, cfg.net_seed(it))?;
        let groups = net.groups();
        let mut net_opt = Sgd::new(net.len(), cfg.net_lr, cfg.momentum);
        let pruning = prune && it >= prune_from;
        let mut objective = 0.0;

        for outer in 0..cfg.outer_loops {
            let mut image_grad = vec![0.0; out.vectors().len()];
            for (c, pos) in positions.iter().enumerate() {
                let take = batch.min(pos.len());
                xs.clear();
                ys.clear();
                for k in index::sample(&mut rng, pos.len(), take) {
                    xs.extend_from_slice(real.row(pos[k]));
                    ys.push(c);
                }
                let fwd = net.forward(&xs, &ys)?;
                let real_grad = if pruning {
                    let keep = prune_survivors(&fwd.losses, cfg.prune_rate);
                    net.backward(&xs, &ys, &fwd, Some(&keep))
                } else {
                    net.backward(&xs, &ys, &fwd, None)
                };

                let block = out.class_block(c);
                let syn_grad = net.loss_and_grad(block, &class_labels[c])?.grad;
                let (dist, upstream) = match_loss_and_grad(&real_grad, &syn_grad, &groups)?;
                objective += dist;
                let gx = net.param_grad_input_vjp(block, &class_labels[c], &upstream)?;
                for (g, v) in image_grad[out.class_range(c)].iter_mut().zip(gx) {
                    *g += v;
                }
            }
            image_opt.step(out.vectors_mut(), &image_grad);
            if !out.is_finite() {
                return Err(Error::Divergence {
                    stage: "iteration",
                    index: it,
                    detail: "synthetic vectors became non-finite".into(),
                });
            }
            if outer + 1 == cfg.outer_loops {
                break;
            }
            for _ in 0..cfg.inner_loops {
                let g = net.loss_and_grad(out.vectors(), &syn_labels)?.grad;
                net_opt.step(net.weights_mut(), &g);
            }
        }
        trace.push(objective / cfg.outer_loops as f64);
    }

    Ok(DistillRun {
        synthetic: out,
        objective_trace: trace,
        seconds: timer.seconds(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_gaussian_mixture, ClassSpec, MixtureSpec};
    use crate::distill::{evaluate_synthetic, init_synthetic, InitMode};
    use crate::model::{Architecture, TrainConfig};

    fn mixture(seed: u64, per_class: usize) -> LabeledDataset {
        gen_gaussian_mixture(
            &MixtureSpec {
                classes: vec![
                    ClassSpec::new(vec![2.0, 0.0], 0.7, per_class),
                    ClassSpec::new(vec![-2.0, 0.0], 0.7, per_class),
                ],
            },
            seed,
        )
        .unwrap()
    }

    fn eval_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 0.1,
            momentum: 0.5,
            seed: 100,
            shuffle: true,
        }
    }

    #[test]
    fn survivors_are_smallest_losses() {
        let losses = [0.9, 0.1, 0.5, 2.0, 0.3, 0.05, 1.5, 0.7, 0.2, 0.4];
        let keep = prune_survivors(&losses, 0.3);
        assert_eq!(keep.len(), 7);
        // dropped: 2.0 (3), 1.5 (6), 0.9 (0)
        assert_eq!(keep, vec![1, 2, 4, 5, 7, 8, 9]);
        assert_eq!(prune_survivors(&losses, 0.0), (0..10).collect::<Vec<_>>());
        assert_eq!(prune_survivors(&[1.0], 0.5), vec![0]);
    }

    proptest::proptest! {
        #[test]
        fn survivors_match_full_sort(
            // few distinct values so ties are common
            raw in proptest::collection::vec(0u8..6, 1..60),
            rate in 0.0f64..0.99,
        ) {
            let losses: Vec<f64> = raw.iter().map(|&v| f64::from(v) * 0.5).collect();
            let n = losses.len();
            let drop = ((n as f64 * rate).ceil() as usize).min(n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
            let mut want = order[..n - drop].to_vec();
            want.sort_unstable();
            proptest::prop_assert_eq!(prune_survivors(&losses, rate), want);
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let ds = mixture(1, 20);
        let syn = init_synthetic(&ds, 2, InitMode::Noise, 3).unwrap();
        let cfg = DistillConfig::dc(0, Architecture::mlp(8));
        let out = distill_dc(&ds, &syn, &cfg).unwrap();
        assert_eq!(out.synthetic, syn);
        assert!(out.objective_trace.is_empty());
    }

    #[test]
    fn deterministic() {
        let ds = mixture(1, 50);
        let syn = init_synthetic(&ds, 1, InitMode::Noise, 3).unwrap();
        let cfg = DistillConfig::dc(20, Architecture::mlp(8)).with_seed(4);
        let a = distill_dc(&ds, &syn, &cfg).unwrap();
        let b = distill_dc(&ds, &syn, &cfg).unwrap();
        assert_eq!(a.synthetic, b.synthetic);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn zero_prune_rate_matches_plain_dc_bitwise() {
        let ds = mixture(2, 60);
        let syn = init_synthetic(&ds, 2, InitMode::Noise, 1).unwrap();
        let mut base = DistillConfig::dc(30, Architecture::mlp(6)).with_seed(9);
        base.outer_loops = 3;
        base.inner_loops = 2;
        let mut pruned = base.clone();
        pruned.algorithm = Algorithm::DcPruned;
        pruned.prune_rate = 0.0;
        pruned.prune_start_fraction = 0.0;
        let a = distill_dc(&ds, &syn, &base).unwrap();
        let b = distill_dc_pruned(&ds, &syn, &pruned).unwrap();
        assert_eq!(a.synthetic.vectors(), b.synthetic.vectors());
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn pruning_changes_trajectory_only_after_start() {
        let ds = mixture(2, 60);
        let syn = init_synthetic(&ds, 1, InitMode::Noise, 1).unwrap();
        let base = DistillConfig::dc(10, Architecture::mlp(6)).with_seed(9);
        let mut pruned = base.clone();
        pruned.algorithm = Algorithm::DcPruned;
        pruned.prune_rate = 0.3;
        pruned.prune_start_fraction = 0.4;
        let a = distill_dc(&ds, &syn, &base).unwrap();
        let b = distill_dc_pruned(&ds, &syn, &pruned).unwrap();
        assert_eq!(a.objective_trace[..4], b.objective_trace[..4]);
        assert_ne!(a.objective_trace[4..], b.objective_trace[4..]);
    }

    #[test]
    fn wrong_algorithm_or_rate_rejected() {
        let ds = mixture(1, 10);
        let syn = init_synthetic(&ds, 1, InitMode::Noise, 0).unwrap();
        let cfg = DistillConfig::dc(1, Architecture::Linear);
        assert!(distill_dc_pruned(&ds, &syn, &cfg).is_err());
        let mut p = DistillConfig::dc_pruned(1, Architecture::Linear);
        p.prune_rate = 1.0;
        assert!(distill_dc_pruned(&ds, &syn, &p).is_err());
        p.prune_rate = -0.1;
        assert!(distill_dc_pruned(&ds, &syn, &p).is_err());
    }

    #[test]
    fn distilled_set_beats_untrained_synthetic() {
        let train_set = mixture(5, 200);
        let test = mixture(6, 200);
        let arch = Architecture::mlp(16);
        let syn = init_synthetic(&train_set, 1, InitMode::Noise, 7).unwrap();
        let cfg = DistillConfig::dc(200, arch).with_seed(7);
        let out = distill_dc(&train_set, &syn, &cfg).unwrap();
        let before = evaluate_synthetic(&syn, arch, &eval_cfg(), &test, 5).unwrap();
        let after = evaluate_synthetic(&out.synthetic, arch, &eval_cfg(), &test, 5).unwrap();
        assert!(
            after.mean_accuracy >= before.mean_accuracy + 0.20,
            "before {} after {}",
            before.mean_accuracy,
            after.mean_accuracy
        );
    }
}
