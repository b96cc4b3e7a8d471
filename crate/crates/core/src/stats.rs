//! Small summary statistics shared by the sampler, leverage checks and reports.

use statrs::statistics::{Data, OrderStatistics, Statistics};

/// Pearson correlation; NaN if either input is constant or the lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    a.covariance(b) / (a.std_dev() * b.std_dev())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    Data::new(values.to_vec()).median()
}

/// `(lower quartile, upper quartile)`.
pub fn quartiles(values: &[f64]) -> (f64, f64) {
    let mut data = Data::new(values.to_vec());
    (data.lower_quartile(), data.upper_quartile())
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        0.0
    } else {
        values.std_dev()
    }
}

/// Monte-Carlo standard error of `statistic` over a chain, by batch means.
///
/// The chain is cut into `n_batches` contiguous batches, the statistic is
/// evaluated on each, and the spread of the batch values is scaled to the
/// full-chain length. Trailing draws that do not fill a batch are dropped.
pub fn batch_means_se(values: &[f64], n_batches: usize, statistic: impl Fn(&[f64]) -> f64) -> f64 {
    let size = values.len() / n_batches.max(1);
    if n_batches < 2 || size == 0 {
        return f64::NAN;
    }
    let batch: Vec<f64> = values.chunks_exact(size).take(n_batches).map(&statistic).collect();
    sd(&batch) / (n_batches as f64).sqrt()
}
