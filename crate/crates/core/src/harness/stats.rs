//! Summary statistics used by the Monte-Carlo experiments.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Number of batches for batch-means confidence bands.
pub const BATCHES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Sample mean with the standard error of the mean.
pub fn mean_se(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate { mean: 0.0, se: 0.0, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate { mean, se: 0.0, n };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Estimate { mean, se: (var / n as f64).sqrt(), n }
}

/// Splits `0..n` into `batches` contiguous ranges of near-equal length.
pub fn batch_ranges(n: usize, batches: usize) -> Vec<std::ops::Range<usize>> {
    let b = batches.min(n).max(1);
    (0..b).map(|i| (i * n / b)..((i + 1) * n / b)).collect()
}

/// Standard error of a statistic from its values on independent batches.
pub fn batch_se(values: &[f64]) -> f64 {
    mean_se(values).se
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// Upper quantile `q` of Student's t with `df` degrees of freedom.
pub fn student_t_quantile(df: f64, q: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("valid t distribution").inverse_cdf(q)
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |acc, (i, &x)| {
        let f = cdf(x);
        acc.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Asymptotic 5% critical value of the KS statistic.
pub fn ks_critical_5pct(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// Geometric ratio from a least-squares fit of `ln y` against the index.
/// `None` unless every value is positive and there are at least two.
pub fn fit_geometric_ratio(ys: &[f64]) -> Option<f64> {
    if ys.len() < 2 || ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
        return None;
    }
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let ybar = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, ly) in logs.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (ly - ybar);
        sxx += dx * dx;
    }
    Some((sxy / sxx).exp())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
