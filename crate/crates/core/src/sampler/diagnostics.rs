//! Convergence diagnostics: rank-normalized split-R̂, bulk/tail effective
//! sample size and Monte Carlo standard error.
//!
//! Inputs are per-chain traces of one scalar quantity. Degenerate inputs
//! (constant or non-finite) yield `NaN`; [`Degenerate::check`] tells the two
//! cases apart from a genuine failure.

use statrs::distribution::{ContinuousCDF, Normal};

/// Why a diagnostic could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    ZeroVariance,
    NonFinite,
    TooFewDraws,
}

impl Degenerate {
    pub fn check(chains: &[Vec<f64>]) -> Option<Self> {
        let n = chains.iter().map(Vec::len).min().unwrap_or(0);
        if chains.is_empty() || n < 4 {
            return Some(Self::TooFewDraws);
        }
        if chains.iter().flatten().any(|v| !v.is_finite()) {
            return Some(Self::NonFinite);
        }
        let first = chains[0][0];
        if chains.iter().flatten().all(|&v| v == first) {
            return Some(Self::ZeroVariance);
        }
        None
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits every chain into halves, dropping the middle draw of odd-length
/// chains.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len();
        let half = n / 2;
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    out
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_pool(chains: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = chains.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Replaces pooled values by normal scores of their average ranks,
/// `Φ⁻¹((r − 3/8)/(S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| ch.iter().enumerate().map(move |(d, &v)| (v, c, d)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = idx.len();
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s as f64 + 0.25));
        for &(_, c, d) in &idx[i..=j] {
            out[c][d] = z;
        }
        i = j + 1;
    }
    out
}

/// Classic potential scale reduction on the given (already split) chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = if chains.len() > 1 { sample_var(&means) } else { 0.0 };
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Split-R̂ on the raw draws, without rank normalization.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if Degenerate::check(chains).is_some() {
        return f64::NAN;
    }
    basic_rhat(&split_chains(chains))
}

/// Rank-normalized split-R̂: the larger of the bulk and folded versions.
pub fn compute_rhat(chains: &[Vec<f64>]) -> f64 {
    if Degenerate::check(chains).is_some() {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let pooled = sorted_pool(chains);
    let med = quantile(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Autocovariance at lag `t`, normalized by the chain length.
fn autocov(x: &[f64], m: f64, t: usize) -> f64 {
    let n = x.len();
    x[..n - t]
        .iter()
        .zip(&x[t..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size of equal-length chains using Geyer's initial
/// monotone sequence on the combined autocorrelation estimate.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_mean =
        |t: usize| -> f64 { chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m as f64 };
    let mean_var = acov_mean(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 5 < n && (rho_even + rho_odd) > 0.0 {
        rho_even = 1.0 - (mean_var - acov_mean(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov_mean(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }

    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }

    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + rho[max_t + 1];
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Bulk and tail effective sample sizes.
pub fn compute_ess(chains: &[Vec<f64>]) -> (f64, f64) {
    if Degenerate::check(chains).is_some() {
        return (f64::NAN, f64::NAN);
    }
    let split = split_chains(chains);
    let bulk = ess(&rank_normalize(&split));
    let pooled = sorted_pool(chains);
    let tail_at = |p: f64| {
        let q = quantile(&pooled, p);
        let ind: Vec<Vec<f64>> = split
            .iter()
            .map(|c| c.iter().map(|&v| if v <= q { 1.0 } else { 0.0 }).collect())
            .collect();
        if Degenerate::check(&ind).is_some() {
            f64::NAN
        } else {
            ess(&ind)
        }
    };
    let tail = tail_at(0.05).min(tail_at(0.95));
    (bulk, tail)
}

/// Monte Carlo standard error of the posterior mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    if Degenerate::check(chains).is_some() {
        return f64::NAN;
    }
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let sd = sample_var(&pooled).sqrt();
    sd / ess(&split_chains(chains)).sqrt()
}
