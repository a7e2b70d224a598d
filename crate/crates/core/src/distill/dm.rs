use rand::seq::index;

use super::{check_inputs, effective_real_batch, Algorithm, DistillConfig, DistillRun, SyntheticSet, Timer};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{init_params, Sgd};
use crate::seed;

fn column_mean(rows: &[f64], width: usize) -> Vec<f64> {
    let n = rows.len() / width;
    let mut m = vec![0.0; width];
    for r in rows.chunks(width) {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

/// Distribution matching: per iteration a fresh random network embeds a real
/// batch and the synthetic vectors of every class; the synthetic vectors move
/// to shrink the squared distance between the two embedding means.
pub fn distill_dm(real: &LabeledDataset, syn: &SyntheticSet, cfg: &DistillConfig) -> Result<DistillRun> {
    if cfg.algorithm != Algorithm::Dm {
        return Err(Error::Argument(format!(
            "distill_dm called with algorithm {:?}",
            cfg.algorithm
        )));
    }
    check_inputs(real, syn, cfg)?;
    let timer = Timer::start();
    let mut out = syn.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);

    let d = real.dim();
    let classes = real.num_classes();
    let ipc = out.ipc();
    let positions = real.class_positions();
    let largest = positions.iter().map(Vec::len).max().unwrap_or(0);
    let batch = effective_real_batch(cfg.real_batch_per_class, largest);
    let feat = cfg.network.feature_dim(d);

    let mut image_opt = Sgd::new(out.vectors().len(), cfg.image_lr, cfg.momentum);
    let mut rng = seed::rng_at(cfg.seed, &[0xD3]);
    let mut xs = Vec::with_capacity(batch * d);

    for it in 0..cfg.iterations {
        let net = init_params(cfg.network, d, classes, cfg.net_seed(it))?;
        let mut image_grad = vec![0.0; out.vectors().len()];
        let mut objective = 0.0;
        for (c, pos) in positions.iter().enumerate() {
            let take = batch.min(pos.len());
            xs.clear();
            for k in index::sample(&mut rng, pos.len(), take) {
                xs.extend_from_slice(real.row(pos[k]));
            }
            let real_mean = column_mean(&net.embed(&xs)?, feat);
            let block = out.class_block(c);
            let syn_emb = net.embed(block)?;
            let syn_mean = column_mean(&syn_emb, feat);
            let diff: Vec<f64> = syn_mean.iter().zip(&real_mean).map(|(s, r)| s - r).collect();
            objective += diff.iter().map(|v| v * v).sum::<f64>();
            let per_row: Vec<f64> = diff.iter().map(|v| 2.0 * v / ipc as f64).collect();
            let upstream: Vec<f64> = std::iter::repeat_n(per_row.iter().copied(), ipc).flatten().collect();
            let gx = net.embed_input_vjp(block, &syn_emb, &upstream)?;
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
        trace.push(objective);
    }

    Ok(DistillRun {
        synthetic: out,
        objective_trace: trace,
        seconds: timer.seconds(),
    })
}
