//! Small statistics toolkit: weighted means, effective sample sizes,
//! least-squares fits, and two-sample tests used across the experiment
//! modules.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error (unbiased variance over n).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples for a standard error");
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Self-normalized weights from log weights, stable under large offsets.
pub fn normalized_weights(log_weights: &[f64]) -> Vec<f64> {
    assert!(!log_weights.is_empty());
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut ws: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = ws.iter().sum();
    for w in &mut ws {
        *w /= total;
    }
    ws
}

/// Effective sample size (sum w)^2 / sum w^2 of the normalized weights.
pub fn ess_from_log_weights(log_weights: &[f64]) -> f64 {
    let ws = normalized_weights(log_weights);
    1.0 / ws.iter().map(|w| w * w).sum::<f64>()
}

/// log of the average of exp(log_terms), computed in log space.
pub fn log_mean_exp(log_terms: &[f64]) -> f64 {
    assert!(!log_terms.is_empty());
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    max + (s / log_terms.len() as f64).ln()
}

/// Self-normalized importance estimate of E[x] with a linearized standard
/// error (Hajek estimator).
pub fn weighted_mean_se(xs: &[f64], log_weights: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), log_weights.len());
    let ws = normalized_weights(log_weights);
    let m: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x).sum();
    let se2: f64 = xs.iter().zip(&ws).map(|(x, w)| (w * (x - m)).powi(2)).sum();
    (m, se2.sqrt())
}

/// Bootstrap standard error of the self-normalized weighted mean. The
/// linearized (Hajek) error collapses when one weight dominates; the
/// resampled error stays honest there.
pub fn weighted_mean_bootstrap_se(
    xs: &[f64],
    log_weights: &[f64],
    reps: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    assert_eq!(xs.len(), log_weights.len());
    assert!(reps >= 2);
    let n = xs.len();
    let point = {
        let ws = normalized_weights(log_weights);
        xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(reps);
    let mut rx = vec![0.0; n];
    let mut rw = vec![0.0; n];
    for _ in 0..reps {
        for j in 0..n {
            let i = rng.gen_range(0..n);
            rx[j] = xs[i];
            rw[j] = log_weights[i];
        }
        let ws = normalized_weights(&rw);
        means.push(rx.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>());
    }
    let (_, se_of_mean) = mean_se(&means);
    (point, se_of_mean * (reps as f64).sqrt())
}

/// Two-sided z statistic for the difference of two independent estimates.
pub fn z_score(a: (f64, f64), b: (f64, f64)) -> f64 {
    let denom = (a.1 * a.1 + b.1 * b.1).sqrt();
    if denom == 0.0 {
        if a.0 == b.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.0 - b.0) / denom
    }
}

/// Ordinary least squares fit y = slope x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "fit needs at least two points");
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    assert!(sxx > 0.0, "degenerate abscissae");
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Weighted empirical CDF evaluated by sorting; weights need not be
/// normalized.
fn sorted_cdf_points(xs: &[f64], ws: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let total: f64 = ws.iter().sum();
    let mut points = Vec::with_capacity(xs.len());
    let mut cum = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for &i in &idx {
        acc += ws[i] / total;
        points.push(xs[i]);
        cum.push(acc);
    }
    (points, cum)
}

/// Kolmogorov-Smirnov statistic between two weighted samples: the sup
/// distance between their weighted empirical CDFs.
pub fn weighted_ks_statistic(xs: &[f64], wxs: &[f64], ys: &[f64], wys: &[f64]) -> f64 {
    let (px, cx) = sorted_cdf_points(xs, wxs);
    let (py, cy) = sorted_cdf_points(ys, wys);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fx, mut fy) = (0.0f64, 0.0f64);
    while i < px.len() || j < py.len() {
        let t = match (px.get(i), py.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < px.len() && px[i] <= t {
            fx = cx[i];
            i += 1;
        }
        while j < py.len() && py[j] <= t {
            fy = cy[j];
            j += 1;
        }
        d = d.max((fx - fy).abs());
    }
    d
}

/// Asymptotic Kolmogorov distribution tail: P(sqrt(n_eff) D > lambda).
pub fn kolmogorov_p_value(d: f64, n_eff: f64) -> f64 {
    let lambda = d * n_eff.sqrt();
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0f64;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1.0f64).powi(j + 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Two-sample weighted KS test; effective sizes follow the importance
/// weights, combined as a harmonic pair like the classical n m/(n+m).
pub fn weighted_ks_test(xs: &[f64], lwx: &[f64], ys: &[f64], lwy: &[f64]) -> (f64, f64) {
    let wx = normalized_weights(lwx);
    let wy = normalized_weights(lwy);
    let d = weighted_ks_statistic(xs, &wx, ys, &wy);
    let nx = ess_from_log_weights(lwx);
    let ny = ess_from_log_weights(lwy);
    let n_eff = nx * ny / (nx + ny);
    (d, kolmogorov_p_value(d, n_eff))
}

/// Empirical quantile (nearest-rank) of an unweighted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[pos - 1]
}
