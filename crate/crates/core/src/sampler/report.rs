//! Posterior summary table and sampler health statistics.

use std::path::Path;

use serde::Serialize;

use super::diagnostics::{compute_ess, compute_rhat, mcse_mean, quantile, Degenerate};
use super::{PosteriorDraws, SamplerConfig};
use crate::{Error, Result};

/// ESS per chain below which a fit is reported as under-sampled.
pub const MIN_ESS_PER_CHAIN: f64 = 100.0;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q50: f64,
    pub q97_5: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    pub mcse_mean: f64,
    /// Set when the trace is constant, so R̂ and ESS are undefined.
    pub zero_variance: bool,
}

/// Strongest posterior correlations between stage-1 thresholds and rater
/// criteria, the two blocks that trade off against each other.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BlockCorrelation {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub pair: Option<(String, String)>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitReport {
    pub config: SamplerConfig,
    pub likelihood: String,
    pub n_parameters: usize,
    pub n_divergent: usize,
    pub divergence_rate: f64,
    pub mean_accept_stat: f64,
    pub max_treedepth_hits: usize,
    pub step_sizes: Vec<f64>,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub min_ess_tail: f64,
    /// Set when the smallest bulk or tail ESS falls below
    /// [`MIN_ESS_PER_CHAIN`] per chain.
    pub low_ess: bool,
    pub b_c_correlation: BlockCorrelation,
    pub parameters: Vec<ParamSummary>,
}

fn pooled_sorted(chains: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = chains.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn summarize_param(name: &str, chains: &[Vec<f64>]) -> ParamSummary {
    let sorted = pooled_sorted(chains);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (ess_bulk, ess_tail) = compute_ess(chains);
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        q2_5: quantile(&sorted, 0.025),
        q50: quantile(&sorted, 0.5),
        q97_5: quantile(&sorted, 0.975),
        rhat: compute_rhat(chains),
        ess_bulk,
        ess_tail,
        mcse_mean: mcse_mean(chains),
        zero_variance: Degenerate::check(chains) == Some(Degenerate::ZeroVariance),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn b_c_correlation(draws: &PosteriorDraws) -> BlockCorrelation {
    let pooled = |k: usize| -> Vec<f64> { draws.chains_of(k).into_iter().flatten().collect() };
    let names = draws.names();
    let bs: Vec<usize> = (0..names.len()).filter(|&k| names[k].starts_with("b[")).collect();
    let cs: Vec<usize> = (0..names.len()).filter(|&k| names[k].starts_with("c[")).collect();
    let b_traces: Vec<Vec<f64>> = bs.iter().map(|&k| pooled(k)).collect();
    let c_traces: Vec<Vec<f64>> = cs.iter().map(|&k| pooled(k)).collect();
    let mut out = BlockCorrelation {
        max_abs: f64::NAN,
        mean_abs: f64::NAN,
        pair: None,
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for (bi, bt) in bs.iter().zip(&b_traces) {
        for (ci, ct) in cs.iter().zip(&c_traces) {
            let r = pearson(bt, ct).abs();
            if !r.is_finite() {
                continue;
            }
            sum += r;
            count += 1;
            if out.pair.is_none() || r > out.max_abs {
                out.max_abs = r;
                out.pair = Some((names[*bi].clone(), names[*ci].clone()));
            }
        }
    }
    if count > 0 {
        out.mean_abs = sum / count as f64;
    }
    out
}

fn nan_max(it: impl Iterator<Item = f64>) -> f64 {
    it.filter(|v| v.is_finite()).fold(f64::NAN, f64::max)
}

fn nan_min(it: impl Iterator<Item = f64>) -> f64 {
    it.filter(|v| v.is_finite()).fold(f64::NAN, f64::min)
}

impl FitReport {
    pub fn new(draws: &PosteriorDraws, config: &SamplerConfig, likelihood: &str) -> Self {
        let parameters: Vec<ParamSummary> = draws
            .names()
            .iter()
            .enumerate()
            .map(|(k, name)| summarize_param(name, &draws.chains_of(k)))
            .collect();
        let stats = draws.all_stats();
        let n = stats.len().max(1) as f64;
        let n_divergent = draws.n_divergent();
        let mut step_sizes: Vec<f64> = Vec::new();
        for c in 0..draws.n_chains() {
            step_sizes.push(draws.stats(c, 0).step_size);
        }
        let min_ess_bulk = nan_min(parameters.iter().map(|p| p.ess_bulk));
        let min_ess_tail = nan_min(parameters.iter().map(|p| p.ess_tail));
        let ess_floor = MIN_ESS_PER_CHAIN * draws.n_chains() as f64;
        Self {
            config: config.clone(),
            likelihood: likelihood.to_string(),
            n_parameters: parameters.len(),
            n_divergent,
            divergence_rate: n_divergent as f64 / n,
            mean_accept_stat: stats.iter().map(|s| s.accept_stat).sum::<f64>() / n,
            max_treedepth_hits: stats.iter().filter(|s| s.depth >= config.max_tree_depth).count(),
            step_sizes,
            max_rhat: nan_max(parameters.iter().map(|p| p.rhat)),
            min_ess_bulk,
            min_ess_tail,
            low_ess: min_ess_bulk < ess_floor || min_ess_tail < ess_floor,
            b_c_correlation: b_c_correlation(draws),
            parameters,
        }
    }

    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }
}
