use std::ops::Range;

use crate::error::{Error, Result};

fn check(real: &[f64], syn: &[f64], groups: &[Range<usize>]) -> Result<()> {
    if real.len() != syn.len() {
        return Err(Error::Shape(format!(
            "real gradient has {} entries, synthetic {}",
            real.len(),
            syn.len()
        )));
    }
    let mut expect = 0;
    for g in groups {
        if g.start != expect || g.end < g.start {
            return Err(Error::Shape("parameter groups must tile the gradient".into()));
        }
        expect = g.end;
    }
    if expect != real.len() {
        return Err(Error::Shape("parameter groups must tile the gradient".into()));
    }
    Ok(())
}

/// `sum over groups of (1 - cos(real_g, syn_g))`. A group where exactly one
/// side is zero contributes 1; a group where both are zero contributes 0.
pub fn match_loss_gradients(real: &[f64], syn: &[f64], groups: &[Range<usize>]) -> Result<f64> {
    Ok(match_loss_and_grad(real, syn, groups)?.0)
}

/// The matching distance and its gradient with respect to `syn`.
pub fn match_loss_and_grad(
    real: &[f64],
    syn: &[f64],
    groups: &[Range<usize>],
) -> Result<(f64, Vec<f64>)> {
    check(real, syn, groups)?;
    let mut grad = vec![0.0; syn.len()];
    let mut total = 0.0;
    for g in groups {
        let r = &real[g.clone()];
        let s = &syn[g.clone()];
        let rr: f64 = r.iter().map(|x| x * x).sum();
        let ss: f64 = s.iter().map(|x| x * x).sum();
        if rr == 0.0 && ss == 0.0 {
            continue;
        }
        if rr == 0.0 || ss == 0.0 {
            // undefined direction: maximal mismatch, no usable gradient
            total += 1.0;
            continue;
        }
        let rs: f64 = r.iter().zip(s).map(|(a, b)| a * b).sum();
        let nr = rr.sqrt();
        let ns = ss.sqrt();
        let cos = rs / (nr * ns);
        total += 1.0 - cos;
        // d(1 - cos)/ds = -(r / (|r||s|) - cos * s / |s|^2)
        for ((gi, &ri), &si) in grad[g.clone()].iter_mut().zip(r).zip(s) {
            *gi = -(ri / (nr * ns) - cos * si / ss);
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups() -> Vec<Range<usize>> {
        vec![0..3, 3..5]
    }

    #[test]
    fn identical_is_zero() {
        let g = [1.0, -2.0, 0.5, 3.0, 1.0];
        assert!(match_loss_gradients(&g, &g, &groups()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn antiparallel_is_two_per_group() {
        let g = [1.0, -2.0, 0.5, 3.0, 1.0];
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let d = match_loss_gradients(&g, &neg, &groups()).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_group_conventions() {
        let real = [1.0, 2.0, 3.0, 0.0, 0.0];
        let syn = [1.0, 2.0, 3.0, 0.0, 0.0];
        assert!(match_loss_gradients(&real, &syn, &groups()).unwrap().abs() < 1e-15);
        let syn2 = [1.0, 2.0, 3.0, 1.0, 0.0];
        assert!((match_loss_gradients(&real, &syn2, &groups()).unwrap() - 1.0).abs() < 1e-15);
        let syn3 = [0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((match_loss_gradients(&real, &syn3, &groups()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layout_mismatch() {
        assert!(matches!(
            match_loss_gradients(&[1.0; 5], &[1.0; 4], &groups()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            match_loss_gradients(&[1.0; 5], &[1.0; 5], &[0..2, 3..5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let real = [0.3, -1.2, 0.8, 2.0, -0.5];
        let mut syn = vec![0.1, 0.4, -0.7, 1.5, 0.9];
        let (_, g) = match_loss_and_grad(&real, &syn, &groups()).unwrap();
        let h = 1e-6;
        for k in 0..syn.len() {
            let orig = syn[k];
            syn[k] = orig + h;
            let up = match_loss_gradients(&real, &syn, &groups()).unwrap();
            syn[k] = orig - h;
            let down = match_loss_gradients(&real, &syn, &groups()).unwrap();
            syn[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "coord {k}: {fd} vs {}", g[k]);
        }
    }

    proptest! {
        #[test]
        fn scale_invariant_per_group(
            real in proptest::collection::vec(-5.0f64..5.0, 5),
            syn in proptest::collection::vec(-5.0f64..5.0, 5),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            let base = match_loss_gradients(&real, &syn, &groups()).unwrap();
            let mut scaled = syn.clone();
            scaled[..3].iter_mut().for_each(|x| *x *= a);
            scaled[3..].iter_mut().for_each(|x| *x *= b);
            let mut real_scaled = real.clone();
            real_scaled[3..].iter_mut().for_each(|x| *x *= a * b);
            let other = match_loss_gradients(&real_scaled, &scaled, &groups()).unwrap();
            prop_assert!((base - other).abs() < 1e-9);
            prop_assert!(match_loss_gradients(&real, &real, &groups()).unwrap().abs() < 1e-12);
        }
    }
}
