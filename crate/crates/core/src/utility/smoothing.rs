/// Maps an out-of-range index onto `[0, n)` by half-sample reflection
/// (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// One-dimensional Gaussian filter with reflected boundaries and a kernel
/// truncated at four standard deviations. `sigma == 0` returns the input.
pub fn gaussian_filter1d(xs: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || xs.is_empty() {
        return xs.to_vec();
    }
    let radius = (4.0 * sigma + 0.5) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    (0..xs.len() as isize)
        .map(|i| {
            weights
                .iter()
                .zip(-radius..=radius)
                .map(|(w, k)| w * xs[reflect(i + k, xs.len())])
                .sum::<f64>()
                / total
        })
        .collect()
}
