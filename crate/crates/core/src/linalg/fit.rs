use super::LinalgError;
use serde::{Deserialize, Serialize};

/// Sample Pearson correlation. A constant input yields `r = 0` with
/// `constant_input` set instead of NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    pub constant_input: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson, LinalgError> {
    if x.len() != y.len() {
        return Err(LinalgError::Shape(format!("pearson on lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(LinalgError::TooFewSamples { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        log::warn!("pearson: constant input, reporting r = 0");
        return Ok(Pearson { r: 0.0, constant_input: true });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Pearson { r, constant_input: false })
}

/// Result of a least-squares fit `y = A·x` without intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope_a: f64,
    /// `1 - SS_res / SS_tot` with a mean-centered `SS_tot`; negative for fits
    /// worse than the constant mean.
    pub r_squared: f64,
    /// Plug-in mutual information in nats.
    pub mutual_information: f64,
}

pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<FitResult, LinalgError> {
    if x.len() != y.len() {
        return Err(LinalgError::Shape(format!("fit on lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(LinalgError::TooFewSamples { need: 2, got: x.len() });
    }
    if let Some(k) = x.iter().chain(y).position(|v| !v.is_finite()) {
        let k = k % x.len();
        return Err(LinalgError::NonFinite { row: k, col: 0 });
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(LinalgError::ZeroRegressor);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope_a = sxy / sxx;

    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope_a * a).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        // constant nonzero response that the line through the origin cannot hit
        0.0
    };
    Ok(FitResult { slope_a, r_squared, mutual_information: mutual_information(x, y)? })
}

/// Number of equal-frequency bins for `n` samples: `floor(sqrt(n / 5))`
/// clamped to `[4, 64]`.
pub fn mi_bin_count(n: usize) -> usize {
    (((n as f64) / 5.0).sqrt().floor() as usize).clamp(4, 64)
}

/// Equal-frequency bin labels. Tied values share the bin of their first rank,
/// so the labels depend only on the ordering of the data.
fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    let mut first_rank = 0;
    for (rank, &idx) in order.iter().enumerate() {
        if rank > 0 && values[idx] != values[order[rank - 1]] {
            first_rank = rank;
        }
        labels[idx] = first_rank * bins / n;
    }
    labels
}

/// Plug-in mutual information (nats) between equal-frequency binnings of `x`
/// and `y`.
pub fn mutual_information(x: &[f64], y: &[f64]) -> Result<f64, LinalgError> {
    if x.len() != y.len() {
        return Err(LinalgError::Shape(format!("mutual information on lengths {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(LinalgError::TooFewSamples { need: 1, got: 0 });
    }
    let n = x.len();
    let bins = mi_bin_count(n);
    let bx = equal_frequency_bins(x, bins);
    let by = equal_frequency_bins(y, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; bins];
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a * bins + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let pab = c as f64 / nf;
            mi += pab * (pab * nf * nf / (px[a] as f64 * py[b] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}
