//! Ordered-logit building blocks for the two model stages.

use crate::design::{Blueprint, N_BOUNDARIES, N_CATEGORIES};
use crate::error::{Error, Result};
use crate::model::params::NaturalParams;

pub type Pmf = [f64; N_CATEGORIES];
pub type Cuts = [f64; N_BOUNDARIES];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow in either tail.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `σ(hi) − σ(lo)` for `hi ≥ lo`, written as `σ(hi)·σ(−lo)·(1 − e^(lo−hi))`
/// so neither tail cancels.
#[inline]
pub fn sigmoid_diff(hi: f64, lo: f64) -> f64 {
    sigmoid(hi) * sigmoid(-lo) * -(lo - hi).exp_m1()
}

/// Category probabilities of an ordered logit with cutpoints `cuts` and
/// location `loc`: `Pr(X ≤ k) = σ(cuts[k] − loc)`.
#[inline]
pub fn ordered_logit_pmf(cuts: &Cuts, loc: f64) -> Pmf {
    let mut p = [0.0; N_CATEGORIES];
    p[0] = sigmoid(cuts[0] - loc);
    for k in 1..N_BOUNDARIES {
        p[k] = sigmoid_diff(cuts[k] - loc, cuts[k - 1] - loc);
    }
    p[N_BOUNDARIES] = sigmoid(loc - cuts[N_BOUNDARIES - 1]);
    p
}

pub(crate) fn check_increasing(cuts: &[f64], what: &str) -> Result<()> {
    if cuts.iter().any(|v| !v.is_finite()) || cuts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Params(format!("{what} must be finite and strictly increasing")));
    }
    Ok(())
}

/// Normalized latent level `(η − 1) / 4` for a 0-based category index.
#[inline]
pub fn normalized_level(category: usize) -> f64 {
    category as f64 / N_BOUNDARIES as f64
}

/// Stage-1 linear predictor `θᵀa + γᵀa`.
#[inline]
pub fn linear_predictor(theta_i: &[f64], loading: &[f64], gamma_q: &[f64]) -> f64 {
    theta_i
        .iter()
        .zip(gamma_q)
        .zip(loading)
        .map(|((t, g), a)| (t + g) * a)
        .sum()
}

/// Distribution of the latent performance state given competency, case
/// shift and item thresholds.
pub fn stage1_pmf(theta_i: &[f64], loading: &[f64], gamma_q: &[f64], b_t: &Cuts) -> Result<Pmf> {
    check_increasing(b_t, "stage-1 thresholds")?;
    Ok(ordered_logit_pmf(b_t, linear_predictor(theta_i, loading, gamma_q)))
}

/// Distribution of the observed rating given latent category `eta` in `1..=5`.
pub fn stage2_pmf(eta: usize, d_eff: f64, c_eff: &Cuts) -> Result<Pmf> {
    if !(1..=N_CATEGORIES).contains(&eta) {
        return Err(Error::Params(format!("latent category {eta} outside 1..5")));
    }
    if !(d_eff > 0.0 && d_eff.is_finite()) {
        return Err(Error::Params("detection must be positive".into()));
    }
    check_increasing(c_eff, "criteria")?;
    Ok(ordered_logit_pmf(c_eff, d_eff * normalized_level(eta - 1)))
}

/// Rater `j`'s detection and criteria for items in theta-group `g`.
pub fn effective_rater_params(j: usize, g: usize, p: &NaturalParams) -> (f64, Cuts) {
    let d_eff = p.d()[j] * p.delta_d(j)[g].exp();
    let shift = p.delta_c(j)[g];
    let mut c_eff = p.c(j);
    c_eff.iter_mut().for_each(|v| *v += shift);
    (d_eff, c_eff)
}

/// Mixture of stage-2 distributions weighted by a stage-1 distribution.
#[inline]
pub fn mix(stage1: &Pmf, d_eff: f64, c_eff: &Cuts) -> Pmf {
    let mut out = [0.0; N_CATEGORIES];
    for (m, w) in stage1.iter().enumerate() {
        let s2 = ordered_logit_pmf(c_eff, d_eff * normalized_level(m));
        for (o, v) in out.iter_mut().zip(s2) {
            *o += w * v;
        }
    }
    out
}

/// Marginal distribution of rater `j`'s rating of learner `i` on item `l`
/// with the latent state summed out.
pub fn marginal_rating_pmf(i: usize, j: usize, l: usize, p: &NaturalParams, bp: &Blueprint) -> Pmf {
    let item = bp.item(l);
    let s1 = ordered_logit_pmf(
        &p.b(item.threshold_group),
        linear_predictor(p.theta(i), &item.loading, p.gamma(item.case)),
    );
    let (d_eff, c_eff) = effective_rater_params(j, item.theta_group, p);
    mix(&s1, d_eff, &c_eff)
}
