//! Item characteristic curves on the item-aligned competency coordinate.

use serde::Serialize;

use crate::design::{Blueprint, N_CATEGORIES};
use crate::model::pmf::{mix, ordered_logit_pmf};
use crate::model::{effective_rater_params, NaturalParams, Pmf};

/// Probability above which a single extreme category marks an item as
/// ceiling- or floor-dominated at `u = 0`.
pub const FLAG_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IccCurve {
    pub item: String,
    pub u: Vec<f64>,
    /// Latent-level probabilities at each grid point.
    pub latent: Vec<Pmf>,
    /// Observed-score probabilities averaged over raters.
    pub observed: Vec<Pmf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemFlag {
    Informative,
    NearCeiling,
    NearFloor,
}

impl std::fmt::Display for ItemFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Informative => "informative",
            Self::NearCeiling => "near-ceiling",
            Self::NearFloor => "near-floor",
        })
    }
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn u_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && hi > lo);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| lo + step * k as f64).collect()
}

/// Category curves of item `l` with `u = θᵀa_l`; the item's case shift enters
/// through `s = u + γ_qᵀa_l`.
pub fn icc_curve(l: usize, x: &NaturalParams, bp: &Blueprint, u: &[f64]) -> IccCurve {
    let item = bp.item(l);
    let offset: f64 = x.gamma(item.case).iter().zip(&item.loading).map(|(g, a)| g * a).sum();
    let cuts = x.b(item.threshold_group);
    let raters: Vec<_> = (0..x.dims().n_raters)
        .map(|j| effective_rater_params(j, item.theta_group, x))
        .collect();
    let mut latent = Vec::with_capacity(u.len());
    let mut observed = Vec::with_capacity(u.len());
    for &v in u {
        let s1 = ordered_logit_pmf(&cuts, v + offset);
        let mut obs = [0.0; N_CATEGORIES];
        for (d_eff, c_eff) in &raters {
            for (o, p) in obs.iter_mut().zip(mix(&s1, *d_eff, c_eff)) {
                *o += p / raters.len() as f64;
            }
        }
        latent.push(s1);
        observed.push(obs);
    }
    IccCurve {
        item: item.id.clone(),
        u: u.to_vec(),
        latent,
        observed,
    }
}

/// Classifies a latent-level pmf evaluated at `u = 0`.
pub fn classify(at_zero: &Pmf) -> ItemFlag {
    if at_zero[N_CATEGORIES - 1] > FLAG_THRESHOLD {
        ItemFlag::NearCeiling
    } else if at_zero[0] > FLAG_THRESHOLD {
        ItemFlag::NearFloor
    } else {
        ItemFlag::Informative
    }
}

/// Flags item `l` from its latent curve at `u = 0`.
pub fn item_flag(l: usize, x: &NaturalParams, bp: &Blueprint) -> ItemFlag {
    classify(&icc_curve(l, x, bp, &[0.0]).latent[0])
}
