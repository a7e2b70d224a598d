//! Forward and backward passes over a batch of row-major inputs.
//!
//! Besides the usual parameter gradient this provides two input-side
//! vector-Jacobian products needed by distillation: through the embedding (for
//! distribution matching) and through the parameter gradient itself (for
//! gradient matching, i.e. the derivative of `<G, dL/dθ>` with respect to the
//! inputs).

use super::params::{Activation, Architecture, ModelParams};
use crate::error::{Error, Result};

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub n: usize,
    /// `n x h` post-activation hidden units; empty for the linear model.
    pub hidden: Vec<f64>,
    /// `n x C` softmax probabilities.
    pub probs: Vec<f64>,
    /// Per-sample cross-entropy.
    pub losses: Vec<f64>,
}

/// Result of [`ModelParams::loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub grad: Vec<f64>,
}

struct Views<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    hidden: usize,
    act: Activation,
}

#[inline]
fn act_fwd(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
    }
}

/// Derivative of the activation expressed through its output.
#[inline]
fn act_slope(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - a * a,
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x + b` for a row-major `W` with `out.len()` rows.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += W^T v` for a row-major `W` with `v.len()` rows.
#[inline]
fn add_transposed(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += vr * wij;
        }
    }
}

/// `G += u v^T` on a row-major `G`.
#[inline]
fn add_outer(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (gij, &vj) in g[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *gij += ur * vj;
        }
    }
}

/// In-place softmax; returns the log of the normaliser relative to the max logit.
#[inline]
fn softmax_in_place(z: &mut [f64]) -> (f64, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
    (m, s.ln())
}

impl ModelParams {
    fn views(&self) -> Views<'_> {
        let d = self.dim;
        let c = self.classes;
        match self.arch {
            Architecture::Linear => Views {
                w1: &[],
                b1: &[],
                w2: &self.weights[..c * d],
                b2: &self.weights[c * d..],
                hidden: 0,
                act: Activation::Tanh,
            },
            Architecture::Mlp { hidden: h, activation } => {
                let (w1, rest) = self.weights.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                Views {
                    w1,
                    b1,
                    w2,
                    b2,
                    hidden: h,
                    act: activation,
                }
            }
        }
    }

    fn check_batch(&self, xs: &[f64], labels: Option<&[usize]>) -> Result<usize> {
        if !xs.len().is_multiple_of(self.dim) {
            return Err(Error::Shape(format!(
                "input buffer of {} values is not a multiple of dimension {}",
                xs.len(),
                self.dim
            )));
        }
        let n = xs.len() / self.dim;
        if let Some(labels) = labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{n} inputs but {} labels", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
                return Err(Error::Shape(format!(
                    "label {bad} outside the model's {} classes",
                    self.classes
                )));
            }
        }
        Ok(n)
    }

    /// Logits for one input; `hidden` receives the hidden activations (MLP only).
    fn logits_into(&self, v: &Views<'_>, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        if v.hidden == 0 {
            affine(v.w2, v.b2, x, logits);
        } else {
            affine(v.w1, v.b1, x, hidden);
            for a in hidden.iter_mut() {
                *a = act_fwd(v.act, *a);
            }
            affine(v.w2, v.b2, hidden, logits);
        }
    }

    /// Raw logits, `n x C`.
    pub fn logits(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(xs, None)?;
        let v = self.views();
        let c = self.classes;
        let mut out = vec![0.0; n * c];
        let mut hidden = vec![0.0; v.hidden];
        for i in 0..n {
            let x = &xs[i * self.dim..(i + 1) * self.dim];
            self.logits_into(&v, x, &mut hidden, &mut out[i * c..(i + 1) * c]);
        }
        Ok(out)
    }

    pub fn forward(&self, xs: &[f64], labels: &[usize]) -> Result<Forward> {
        let n = self.check_batch(xs, Some(labels))?;
        let v = self.views();
        let c = self.classes;
        let h = v.hidden;
        let mut hidden = vec![0.0; n * h];
        let mut probs = vec![0.0; n * c];
        let mut losses = vec![0.0; n];
        for i in 0..n {
            let x = &xs[i * self.dim..(i + 1) * self.dim];
            let p = &mut probs[i * c..(i + 1) * c];
            self.logits_into(&v, x, &mut hidden[i * h..(i + 1) * h], p);
            let z_y = p[labels[i]];
            let (m, log_s) = softmax_in_place(p);
            losses[i] = log_s + m - z_y;
        }
        Ok(Forward {
            n,
            hidden,
            probs,
            losses,
        })
    }

    /// Gradient of the mean loss over `rows` (all rows when `None`), reusing
    /// the activations of `fwd`.
    pub fn backward(
        &self,
        xs: &[f64],
        labels: &[usize],
        fwd: &Forward,
        rows: Option<&[usize]>,
    ) -> Vec<f64> {
        let v = self.views();
        let d = self.dim;
        let c = self.classes;
        let h = v.hidden;
        let mut grad = vec![0.0; self.weights.len()];
        let count = rows.map_or(fwd.n, <[usize]>::len);
        if count == 0 {
            return grad;
        }
        let scale = 1.0 / count as f64;
        let mut delta2 = vec![0.0; c];
        let mut delta1 = vec![0.0; h];

        let mut visit = |i: usize, grad: &mut [f64]| {
            let x = &xs[i * d..(i + 1) * d];
            for (k, dk) in delta2.iter_mut().enumerate() {
                *dk = fwd.probs[i * c + k] * scale;
            }
            delta2[labels[i]] -= scale;
            if h == 0 {
                let (gw, gb) = grad.split_at_mut(c * d);
                add_outer(gw, &delta2, x);
                for (g, dk) in gb.iter_mut().zip(&delta2) {
                    *g += dk;
                }
            } else {
                let a = &fwd.hidden[i * h..(i + 1) * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                add_outer(gw2, &delta2, a);
                for (g, dk) in gb2.iter_mut().zip(&delta2) {
                    *g += dk;
                }
                delta1.iter_mut().for_each(|x| *x = 0.0);
                add_transposed(v.w2, &delta2, &mut delta1);
                for (dj, &aj) in delta1.iter_mut().zip(a) {
                    *dj *= act_slope(v.act, aj);
                }
                add_outer(gw1, &delta1, x);
                for (g, dj) in gb1.iter_mut().zip(&delta1) {
                    *g += dj;
                }
            }
        };
        match rows {
            Some(rows) => rows.iter().for_each(|&i| visit(i, &mut grad)),
            None => (0..fwd.n).for_each(|i| visit(i, &mut grad)),
        }
        grad
    }

    /// Per-sample cross-entropy, its mean, and the gradient of the mean.
    pub fn loss_and_grad(&self, xs: &[f64], labels: &[usize]) -> Result<LossGrad> {
        let fwd = self.forward(xs, labels)?;
        if fwd.n == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let grad = self.backward(xs, labels, &fwd, None);
        let mean = fwd.losses.iter().sum::<f64>() / fwd.n as f64;
        Ok(LossGrad {
            per_sample: fwd.losses,
            mean,
            grad,
        })
    }

    /// Embeddings, `n x f`: hidden activations for the MLP, the inputs themselves
    /// for the linear model.
    pub fn embed(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(xs, None)?;
        let v = self.views();
        if v.hidden == 0 {
            return Ok(xs.to_vec());
        }
        let h = v.hidden;
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            let a = &mut out[i * h..(i + 1) * h];
            affine(v.w1, v.b1, &xs[i * self.dim..(i + 1) * self.dim], a);
            for aj in a.iter_mut() {
                *aj = act_fwd(v.act, *aj);
            }
        }
        Ok(out)
    }

    /// Gradient with respect to the inputs of `<upstream, embed(xs)>`.
    pub fn embed_input_vjp(&self, xs: &[f64], embedded: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(xs, None)?;
        let v = self.views();
        if v.hidden == 0 {
            if upstream.len() != xs.len() {
                return Err(Error::Shape("upstream does not match embedding".into()));
            }
            return Ok(upstream.to_vec());
        }
        let h = v.hidden;
        let d = self.dim;
        if upstream.len() != n * h || embedded.len() != n * h {
            return Err(Error::Shape("upstream does not match embedding".into()));
        }
        let mut out = vec![0.0; n * d];
        let mut gz = vec![0.0; h];
        for i in 0..n {
            for j in 0..h {
                gz[j] = upstream[i * h + j] * act_slope(v.act, embedded[i * h + j]);
            }
            add_transposed(v.w1, &gz, &mut out[i * d..(i + 1) * d]);
        }
        Ok(out)
    }

    /// Gradient with respect to the inputs of `<upstream, ∇θ mean_loss(xs)>`,
    /// where `upstream` has the flat parameter layout. This is the second-order
    /// term that lets gradient matching move synthetic samples.
    pub fn param_grad_input_vjp(&self, xs: &[f64], labels: &[usize], upstream: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(xs, Some(labels))?;
        if upstream.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "upstream has {} entries, parameters have {}",
                upstream.len(),
                self.weights.len()
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let v = self.views();
        let d = self.dim;
        let c = self.classes;
        let h = v.hidden;
        let inv_n = 1.0 / n as f64;
        let mut out = vec![0.0; n * d];

        if h == 0 {
            let (gw, gb) = upstream.split_at(c * d);
            let mut p = vec![0.0; c];
            let mut delta = vec![0.0; c];
            let mut g_delta = vec![0.0; c];
            for i in 0..n {
                let x = &xs[i * d..(i + 1) * d];
                let gx = &mut out[i * d..(i + 1) * d];
                affine(v.w2, v.b2, x, &mut p);
                softmax_in_place(&mut p);
                for k in 0..c {
                    delta[k] = p[k] * inv_n;
                }
                delta[labels[i]] -= inv_n;
                // direct dependence through delta x^T
                add_transposed(gw, &delta, gx);
                affine(gw, gb, x, &mut g_delta);
                let g_z = softmax_vjp(&p, &g_delta, inv_n);
                add_transposed(v.w2, &g_z, gx);
            }
            return Ok(out);
        }

        let (gw1, rest) = upstream.split_at(h * d);
        let (gb1, rest) = rest.split_at(h);
        let (gw2, gb2) = rest.split_at(c * h);
        let mut a = vec![0.0; h];
        let mut slope = vec![0.0; h];
        let mut p = vec![0.0; c];
        let mut delta2 = vec![0.0; c];
        let mut r = vec![0.0; h];
        let mut g_delta1 = vec![0.0; h];
        let mut g_delta2 = vec![0.0; c];
        let mut g_r = vec![0.0; h];
        let mut g_a = vec![0.0; h];
        for i in 0..n {
            let x = &xs[i * d..(i + 1) * d];
            let gx = &mut out[i * d..(i + 1) * d];

            affine(v.w1, v.b1, x, &mut a);
            for j in 0..h {
                a[j] = act_fwd(v.act, a[j]);
                slope[j] = act_slope(v.act, a[j]);
            }
            affine(v.w2, v.b2, &a, &mut p);
            softmax_in_place(&mut p);
            for k in 0..c {
                delta2[k] = p[k] * inv_n;
            }
            delta2[labels[i]] -= inv_n;
            r.iter_mut().for_each(|x| *x = 0.0);
            add_transposed(v.w2, &delta2, &mut r);
            // delta1 = r * slope; gW1 += delta1 x^T; gb1 += delta1

            // direct x term of <G_W1, delta1 x^T>
            let delta1: Vec<f64> = r.iter().zip(&slope).map(|(ri, si)| ri * si).collect();
            add_transposed(gw1, &delta1, gx);

            affine(gw1, gb1, x, &mut g_delta1);
            for j in 0..h {
                g_r[j] = g_delta1[j] * slope[j];
            }
            // delta2 feeds gW2 = delta2 a^T, gb2 = delta2 and r = W2^T delta2
            affine(gw2, gb2, &a, &mut g_delta2);
            for (k, gd) in g_delta2.iter_mut().enumerate() {
                *gd += dot(&v.w2[k * h..(k + 1) * h], &g_r);
            }
            // a feeds gW2 directly, the slope, and the logits
            g_a.iter_mut().for_each(|x| *x = 0.0);
            add_transposed(gw2, &delta2, &mut g_a);
            if v.act == Activation::Tanh {
                for j in 0..h {
                    // d slope / d a = -2a
                    g_a[j] += g_delta1[j] * r[j] * (-2.0 * a[j]);
                }
            }
            let g_z2 = softmax_vjp(&p, &g_delta2, inv_n);
            add_transposed(v.w2, &g_z2, &mut g_a);
            for j in 0..h {
                g_a[j] *= slope[j];
            }
            add_transposed(v.w1, &g_a, gx);
        }
        Ok(out)
    }
}

/// Backpropagates `g` through `delta = scale * (softmax(z) - onehot)`.
#[inline]
fn softmax_vjp(p: &[f64], g: &[f64], scale: f64) -> Vec<f64> {
    let pg = dot(p, g);
    p.iter().zip(g).map(|(pk, gk)| scale * pk * (gk - pg)).collect()
}
