//! Numeric oracles that do not share code with the library.

/// Normalize prior(t) · likelihood(t) on a uniform grid and return its mean
/// and variance. The grid spans ten of the wider standard deviations past
/// both means, with 200 points per narrower standard deviation.
pub fn grid_posterior(mu_l: f64, var_l: f64, mu_p: f64, var_p: f64) -> (f64, f64) {
    let wide = var_l.max(var_p).sqrt();
    let narrow = var_l.min(var_p).sqrt();
    let lo = mu_l.min(mu_p) - 10.0 * wide;
    let hi = mu_l.max(mu_p) + 10.0 * wide;
    let step = narrow / 200.0;
    let n = ((hi - lo) / step).ceil() as usize + 1;
    let log_f = |t: f64| -(t - mu_l).powi(2) / (2.0 * var_l) - (t - mu_p).powi(2) / (2.0 * var_p);
    let peak = (0..n).map(|i| log_f(lo + i as f64 * step)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1) = (0.0, 0.0);
    let weights: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = lo + i as f64 * step;
            (t, (log_f(t) - peak).exp())
        })
        .collect();
    for &(t, w) in &weights {
        z += w;
        m1 += w * t;
    }
    let mean = m1 / z;
    let var = weights.iter().map(|&(t, w)| w * (t - mean).powi(2)).sum::<f64>() / z;
    (mean, var)
}

/// Composite Simpson rule on [a, b] with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Sample mean and its standard error.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
