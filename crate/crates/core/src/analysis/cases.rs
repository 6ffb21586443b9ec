//! Case-conditional competency estimates.
//!
//! For each (case, learner) the competency vector is re-estimated by
//! maximizing its posterior under a standard-normal prior with every other
//! parameter held fixed, using only the applicable ratings of that case's
//! items.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Blueprint, RatingsDataset, N_BOUNDARIES, N_CATEGORIES};
use crate::model::pmf::{ordered_logit_pmf, sigmoid};
use crate::model::{effective_rater_params, stage2_pmf, Cuts, LikelihoodMode, NaturalParams};

const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub mode: LikelihoodMode,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            mode: LikelihoodMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// `[case][learner]` MAP estimates; `None` where the optimizer did not
/// converge.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseConditionalThetas {
    pub n_cases: usize,
    pub n_learners: usize,
    pub n_dims: usize,
    pub values: Vec<Vec<Option<Vec<f64>>>>,
}

impl CaseConditionalThetas {
    pub fn get(&self, case: usize, learner: usize) -> Option<&[f64]> {
        self.values[case][learner].as_deref()
    }

    pub fn n_unconverged(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }
}

/// Stage-1 term for one latent unit: the item's loading and thresholds, the
/// fixed case shift projected onto the loading, and stage-2 weights per
/// mixture (one mixture per rating, or one for the whole unit).
struct UnitTerm<'a> {
    loading: &'a [f64],
    offset: f64,
    cuts: Cuts,
    mixtures: Vec<[f64; N_CATEGORIES]>,
}

/// `f(x) = σ(x)(1 − σ(x))` and its derivative at each cut, padded with the
/// zero tails.
fn densities(cuts: &Cuts, s: f64) -> ([f64; N_BOUNDARIES + 2], [f64; N_BOUNDARIES + 2]) {
    let mut f = [0.0; N_BOUNDARIES + 2];
    let mut df = [0.0; N_BOUNDARIES + 2];
    for k in 0..N_BOUNDARIES {
        let p = sigmoid(cuts[k] - s);
        f[k + 1] = p * (1.0 - p);
        df[k + 1] = f[k + 1] * (1.0 - 2.0 * p);
    }
    (f, df)
}

impl UnitTerm<'_> {
    /// Log-likelihood and its first two derivatives in `s`.
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let pi = ordered_logit_pmf(&self.cuts, s);
        let (f, df) = densities(&self.cuts, s);
        let mut out = (0.0, 0.0, 0.0);
        for w in &self.mixtures {
            let (mut m, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for e in 0..N_CATEGORIES {
                m += pi[e] * w[e];
                m1 += -(f[e + 1] - f[e]) * w[e];
                m2 += (df[e + 1] - df[e]) * w[e];
            }
            let m = m.max(PROB_FLOOR);
            let r1 = m1 / m;
            out.0 += m.ln();
            out.1 += r1;
            out.2 += m2 / m - r1 * r1;
        }
        out
    }
}

fn unit_terms<'a>(
    ds: &RatingsDataset,
    bp: &'a Blueprint,
    x: &NaturalParams,
    learner: usize,
    include_item: &dyn Fn(usize) -> bool,
    mode: LikelihoodMode,
) -> Vec<UnitTerm<'a>> {
    let mut terms = Vec::new();
    for unit in ds.learner_units(learner) {
        if !include_item(unit.item) {
            continue;
        }
        let item = bp.item(unit.item);
        let gamma = x.gamma(item.case);
        let offset: f64 = gamma.iter().zip(&item.loading).map(|(g, a)| g * a).sum();
        let weights = ds.unit_records(unit).iter().map(|&r| {
            let rec = &ds.records()[r];
            let (d_eff, c_eff) = effective_rater_params(rec.rater, item.theta_group, x);
            let y = rec.rating.expect("unit records are applicable") as usize - 1;
            let mut w = [0.0; N_CATEGORIES];
            for (e, slot) in w.iter_mut().enumerate() {
                *slot = stage2_pmf(e + 1, d_eff, &c_eff).expect("valid rater parameters")[y];
            }
            w
        });
        let mixtures: Vec<[f64; N_CATEGORIES]> = match mode {
            LikelihoodMode::PerRating => weights.collect(),
            LikelihoodMode::SharedLatent => {
                let mut prod = [1.0; N_CATEGORIES];
                for w in weights {
                    for e in 0..N_CATEGORIES {
                        prod[e] *= w[e];
                    }
                }
                let top = prod.iter().cloned().fold(0.0, f64::max);
                if top > 0.0 {
                    prod.iter_mut().for_each(|v| *v /= top);
                }
                vec![prod]
            }
        };
        if mixtures.is_empty() {
            continue;
        }
        terms.push(UnitTerm {
            loading: &item.loading,
            offset,
            cuts: x.b(item.threshold_group),
            mixtures,
        });
    }
    terms
}

fn objective(terms: &[UnitTerm<'_>], theta: &[f64], want_hessian: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = theta.len();
    let mut f = -0.5 * theta.iter().map(|v| v * v).sum::<f64>();
    let mut g = DVector::from_iterator(p, theta.iter().map(|v| -v));
    let mut h = if want_hessian {
        -DMatrix::identity(p, p)
    } else {
        DMatrix::zeros(0, 0)
    };
    for t in terms {
        let s = t.offset + theta.iter().zip(t.loading).map(|(a, b)| a * b).sum::<f64>();
        let (l0, l1, l2) = t.eval(s);
        f += l0;
        for a in 0..p {
            g[a] += l1 * t.loading[a];
        }
        if want_hessian {
            for a in 0..p {
                for b in 0..p {
                    h[(a, b)] += l2 * t.loading[a] * t.loading[b];
                }
            }
        }
    }
    (f, g, h)
}

/// Maximizes the fixed-parameter posterior of learner `learner`'s θ over the
/// units whose item passes `include_item`, by damped Newton ascent starting
/// from the prior mode.
pub fn map_theta(
    ds: &RatingsDataset,
    bp: &Blueprint,
    x: &NaturalParams,
    learner: usize,
    include_item: &dyn Fn(usize) -> bool,
    opts: &MapOptions,
) -> MapResult {
    let terms = unit_terms(ds, bp, x, learner, include_item, opts.mode);
    let p = bp.n_dims();
    let mut theta = vec![0.0; p];
    let mut lambda = 1e-6;
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let (f, g, h) = objective(&terms, &theta, true);
        if g.amax() < opts.grad_tol {
            return MapResult {
                theta,
                converged: true,
                iterations: iter,
            };
        }
        let mut improved = false;
        while lambda < 1e12 {
            let a = -&h + DMatrix::identity(p, p) * lambda;
            if let Some(chol) = a.cholesky() {
                let step = chol.solve(&g);
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
                let (fc, _, _) = objective(&terms, &cand, false);
                if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                    theta = cand;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let (_, g, _) = objective(&terms, &theta, false);
    MapResult {
        converged: g.amax() < opts.grad_tol,
        theta,
        iterations,
    }
}

/// Case-conditional θ̂ for every (case, learner).
pub fn case_conditional_thetas(
    ds: &RatingsDataset,
    bp: &Blueprint,
    x: &NaturalParams,
    opts: &MapOptions,
) -> CaseConditionalThetas {
    let values = (0..bp.n_cases())
        .map(|q| {
            (0..ds.n_learners())
                .into_par_iter()
                .map(|i| {
                    let r = map_theta(ds, bp, x, i, &|l| bp.item(l).case == q, opts);
                    r.converged.then_some(r.theta)
                })
                .collect()
        })
        .collect();
    CaseConditionalThetas {
        n_cases: bp.n_cases(),
        n_learners: ds.n_learners(),
        n_dims: bp.n_dims(),
        values,
    }
}
