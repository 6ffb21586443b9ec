//! Log-posterior and analytic gradient over the unconstrained parameters.

use serde::{Deserialize, Serialize};

use crate::design::{Blueprint, RatingsDataset, N_BOUNDARIES, N_CATEGORIES};
use crate::model::params::{ModelDims, NaturalParams, ParamLayout};
use crate::model::pmf::{linear_predictor, log_sigmoid, normalized_level, ordered_logit_pmf, sigmoid, Cuts, Pmf};
use crate::model::prior::{NormalPrior, PriorConfig};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// How ratings sharing one latent performance state are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    /// Each applicable rating contributes its own five-component mixture.
    #[default]
    PerRating,
    /// All applicable ratings of one (learner, item) pair are conditionally
    /// independent given a single latent state, which is summed out once.
    SharedLatent,
}

impl std::str::FromStr for LikelihoodMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-rating" => Ok(Self::PerRating),
            "shared-latent" => Ok(Self::SharedLatent),
            other => Err(format!("unknown likelihood mode '{other}'")),
        }
    }
}

impl std::fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerRating => "per-rating",
            Self::SharedLatent => "shared-latent",
        })
    }
}

/// Stage-2 quantities for one (rater, theta-group) pair.
#[derive(Debug, Clone)]
pub(crate) struct RaterTable {
    pub d_eff: f64,
    /// `rho[m][y]` = Pr(Y = y | η = m), 0-based.
    pub rho: [[f64; N_CATEGORIES]; N_CATEGORIES],
    /// `dens[m][k]` = logistic density at boundary `k` given η = m.
    pub dens: [[f64; N_BOUNDARIES]; N_CATEGORIES],
}

impl RaterTable {
    pub fn new(d_eff: f64, c_eff: &Cuts) -> Self {
        let mut rho = [[0.0; N_CATEGORIES]; N_CATEGORIES];
        let mut dens = [[0.0; N_BOUNDARIES]; N_CATEGORIES];
        for m in 0..N_CATEGORIES {
            let loc = d_eff * normalized_level(m);
            rho[m] = ordered_logit_pmf(c_eff, loc);
            for k in 0..N_BOUNDARIES {
                let u = c_eff[k] - loc;
                dens[m][k] = sigmoid(u) * sigmoid(-u);
            }
        }
        Self { d_eff, rho, dens }
    }

    pub fn all(x: &NaturalParams) -> Vec<Self> {
        let d = x.dims();
        let mut out = Vec::with_capacity(d.n_raters * d.n_groups);
        for j in 0..d.n_raters {
            for g in 0..d.n_groups {
                let (d_eff, c_eff) = crate::model::pmf::effective_rater_params(j, g, x);
                out.push(Self::new(d_eff, &c_eff));
            }
        }
        out
    }

    /// Derivatives of `rho[m][y]` summed against weights `w[m]`, returned as
    /// (d/d d_eff, d/d c_eff[y−1], d/d c_eff[y]) with 0-based `y`.
    #[inline]
    pub fn weighted_partials(&self, w: &[f64; N_CATEGORIES], y: usize) -> (f64, f64, f64) {
        let (mut dd, mut lo, mut up) = (0.0, 0.0, 0.0);
        for m in 0..N_CATEGORIES {
            let g_up = if y < N_BOUNDARIES { self.dens[m][y] } else { 0.0 };
            let g_lo = if y > 0 { self.dens[m][y - 1] } else { 0.0 };
            up += w[m] * g_up;
            lo += w[m] * g_lo;
            dd -= w[m] * normalized_level(m) * (g_up - g_lo);
        }
        (dd, -lo, up)
    }
}

/// Stage-1 distribution and boundary densities at linear predictor `s`.
#[inline]
pub(crate) fn stage1_with_density(b: &Cuts, s: f64) -> (Pmf, [f64; N_BOUNDARIES]) {
    let pi = ordered_logit_pmf(b, s);
    let mut f = [0.0; N_BOUNDARIES];
    for k in 0..N_BOUNDARIES {
        let u = b[k] - s;
        f[k] = sigmoid(u) * sigmoid(-u);
    }
    (pi, f)
}

/// Log-likelihood contribution of one latent unit (with gradient pieces).
///
/// Returns `(loglik, d/ds, d/db[k])` and accumulates stage-2 adjoints
/// through `stage2_adj(record index, d/d d_eff, d/d c_lo, d/d c_up)`.
pub(crate) fn unit_loglik(
    mode: LikelihoodMode,
    pi: &Pmf,
    f: &[f64; N_BOUNDARIES],
    obs: &[(&RaterTable, usize)],
    want_grad: bool,
    mut stage2_adj: impl FnMut(usize, f64, f64, f64),
) -> (f64, f64, [f64; N_BOUNDARIES]) {
    let mut lp = 0.0;
    let mut db = [0.0; N_BOUNDARIES];
    let mut ds = 0.0;
    let add_stage1 = |w: f64, col: &[f64; N_CATEGORIES], db: &mut [f64; N_BOUNDARIES], ds: &mut f64| {
        for k in 0..N_BOUNDARIES {
            let t = w * f[k] * (col[k] - col[k + 1]);
            db[k] += t;
            *ds -= t;
        }
    };
    match mode {
        LikelihoodMode::PerRating => {
            for (r, &(tbl, y)) in obs.iter().enumerate() {
                let col: [f64; N_CATEGORIES] = std::array::from_fn(|m| tbl.rho[m][y]);
                let lik: f64 = pi.iter().zip(&col).map(|(a, b)| a * b).sum();
                if lik < PROB_FLOOR {
                    lp += PROB_FLOOR.ln();
                    continue;
                }
                lp += lik.ln();
                if want_grad {
                    let w = 1.0 / lik;
                    add_stage1(w, &col, &mut db, &mut ds);
                    let (dd, lo, up) = tbl.weighted_partials(pi, y);
                    stage2_adj(r, w * dd, w * lo, w * up);
                }
            }
        }
        LikelihoodMode::SharedLatent => {
            if obs.is_empty() {
                return (0.0, 0.0, db);
            }
            let mut joint = [1.0; N_CATEGORIES];
            for &(tbl, y) in obs {
                for m in 0..N_CATEGORIES {
                    joint[m] *= tbl.rho[m][y];
                }
            }
            let lik: f64 = pi.iter().zip(&joint).map(|(a, b)| a * b).sum();
            if lik < PROB_FLOOR {
                return (PROB_FLOOR.ln(), 0.0, db);
            }
            lp = lik.ln();
            if want_grad {
                let w = 1.0 / lik;
                add_stage1(w, &joint, &mut db, &mut ds);
                for (r, &(tbl, y)) in obs.iter().enumerate() {
                    let mut weight = *pi;
                    for (r2, &(t2, y2)) in obs.iter().enumerate() {
                        if r2 != r {
                            for m in 0..N_CATEGORIES {
                                weight[m] *= t2.rho[m][y2];
                            }
                        }
                    }
                    let (dd, lo, up) = tbl.weighted_partials(&weight, y);
                    stage2_adj(r, w * dd, w * lo, w * up);
                }
            }
        }
    }
    (lp, ds, db)
}

/// Applicability log-likelihood `Σ A log σ(ω) + (1 − A) log(1 − σ(ω))`.
pub fn applicability_loglik(ds: &RatingsDataset, p: &NaturalParams, bp: &Blueprint) -> f64 {
    let mut lp = 0.0;
    for q in 0..bp.n_cases() {
        for g in 0..bp.n_groups() {
            let (n1, n0) = ds.gate_counts(q, g);
            let w = p.omega(q, g);
            if n1 > 0 {
                lp += n1 as f64 * log_sigmoid(w);
            }
            if n0 > 0 {
                lp += n0 as f64 * log_sigmoid(-w);
            }
        }
    }
    lp
}

/// The joint posterior of one design and dataset.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    bp: &'a Blueprint,
    ds: &'a RatingsDataset,
    prior: PriorConfig,
    layout: ParamLayout,
    mode: LikelihoodMode,
}

impl<'a> Model<'a> {
    pub fn new(bp: &'a Blueprint, ds: &'a RatingsDataset, prior: PriorConfig) -> Self {
        Self::with_mode(bp, ds, prior, LikelihoodMode::default())
    }

    pub fn with_mode(bp: &'a Blueprint, ds: &'a RatingsDataset, prior: PriorConfig, mode: LikelihoodMode) -> Self {
        let layout = ParamLayout::new(ModelDims::new(bp, ds));
        Self {
            bp,
            ds,
            prior,
            layout,
            mode,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dims(&self) -> ModelDims {
        self.layout.dims
    }

    pub fn blueprint(&self) -> &Blueprint {
        self.bp
    }

    pub fn dataset(&self) -> &RatingsDataset {
        self.ds
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn log_posterior(&self, z: &[f64]) -> f64 {
        self.eval(z, None)
    }

    /// Log-posterior; `grad` is overwritten with its gradient.
    pub fn log_posterior_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(z, Some(grad))
    }

    fn prior_of(&self, k: usize) -> NormalPrior {
        self.prior.for_coordinate(&self.layout, k)
    }

    /// Log-prior density of the unconstrained coordinates (transform
    /// Jacobians included, additive constants dropped).
    pub fn log_prior(&self, z: &[f64]) -> f64 {
        (0..z.len()).map(|k| self.prior_of(k).logp_grad(z[k]).0).sum()
    }

    fn eval(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        assert_eq!(z.len(), self.layout.len(), "unconstrained vector length");
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let want_grad = grad.is_some();
        let dims = self.layout.dims;
        let (n_dims, n_groups) = (dims.n_dims, dims.n_groups);
        let x = self.layout.to_natural(z);

        let mut lp = 0.0;
        for k in 0..z.len() {
            let (v, dv) = self.prior_of(k).logp_grad(z[k]);
            lp += v;
            if let Some(g) = grad.as_deref_mut() {
                g[k] = dv;
            }
        }

        lp += applicability_loglik(self.ds, &x, self.bp);
        if let Some(g) = grad.as_deref_mut() {
            for q in 0..dims.n_cases {
                for gr in 0..n_groups {
                    let (n1, n0) = self.ds.gate_counts(q, gr);
                    let w = x.omega(q, gr);
                    g[self.layout.omega.start + q * n_groups + gr] += n1 as f64 * sigmoid(-w) - n0 as f64 * sigmoid(w);
                }
            }
        }

        let tables = RaterTable::all(&x);
        let mut g_theta = vec![0.0; if want_grad { x.theta.len() } else { 0 }];
        let mut g_gamma = vec![0.0; if want_grad { x.gamma.len() } else { 0 }];
        let mut g_b = vec![0.0; if want_grad { x.b.len() } else { 0 }];
        let mut adj_d = vec![0.0; if want_grad { tables.len() } else { 0 }];
        let mut adj_c = vec![0.0; if want_grad { tables.len() * N_BOUNDARIES } else { 0 }];
        let mut obs: Vec<(&RaterTable, usize)> = Vec::with_capacity(dims.n_raters);
        let mut obs_cell: Vec<usize> = Vec::with_capacity(dims.n_raters);
        let records = self.ds.records();

        for unit in self.ds.units() {
            let item = self.bp.item(unit.item);
            let b = x.b(item.threshold_group);
            let s = linear_predictor(x.theta(unit.learner), &item.loading, x.gamma(item.case));
            let (pi, f) = stage1_with_density(&b, s);
            obs.clear();
            obs_cell.clear();
            for &r in self.ds.unit_records(unit) {
                let rec = &records[r];
                let cell = rec.rater * n_groups + item.theta_group;
                let y = rec.rating.expect("applicable record carries a rating") as usize - 1;
                obs.push((&tables[cell], y));
                obs_cell.push(cell);
            }
            let (v, dsum, db) = unit_loglik(self.mode, &pi, &f, &obs, want_grad, |r, dd, lo, up| {
                let cell = obs_cell[r];
                let y = obs[r].1;
                adj_d[cell] += dd;
                if y > 0 {
                    adj_c[cell * N_BOUNDARIES + y - 1] += lo;
                }
                if y < N_BOUNDARIES {
                    adj_c[cell * N_BOUNDARIES + y] += up;
                }
            });
            lp += v;
            if want_grad {
                let t = item.threshold_group;
                for k in 0..N_BOUNDARIES {
                    g_b[t * N_BOUNDARIES + k] += db[k];
                }
                let (i, q) = (unit.learner, item.case);
                for p in 0..n_dims {
                    let a = item.loading[p];
                    g_theta[i * n_dims + p] += dsum * a;
                    g_gamma[q * n_dims + p] += dsum * a;
                }
            }
        }

        if let Some(g) = grad {
            self.chain_to_unconstrained(z, &tables, &g_theta, &g_gamma, &g_b, &adj_d, &adj_c, g);
        }
        lp
    }

    #[allow(clippy::too_many_arguments)]
    fn chain_to_unconstrained(
        &self,
        z: &[f64],
        tables: &[RaterTable],
        g_theta: &[f64],
        g_gamma: &[f64],
        g_b: &[f64],
        adj_d: &[f64],
        adj_c: &[f64],
        g: &mut [f64],
    ) {
        let l = &self.layout;
        let dims = l.dims;
        let (n_dims, n_cases, n_groups) = (dims.n_dims, dims.n_cases, dims.n_groups);

        for (k, v) in g_theta.iter().enumerate() {
            g[l.theta.start + k] += v;
        }
        for q in 0..n_cases.saturating_sub(1) {
            for p in 0..n_dims {
                g[l.gamma.start + q * n_dims + p] += g_gamma[q * n_dims + p] - g_gamma[(n_cases - 1) * n_dims + p];
            }
        }
        let ordered_chain = |zrow: &[f64], grow: &[f64], out: &mut [f64]| {
            let mut tail = 0.0;
            for k in (0..N_BOUNDARIES).rev() {
                tail += grow[k];
                out[k] += if k == 0 { tail } else { tail * zrow[k].exp() };
            }
        };
        for t in 0..dims.n_thresholds {
            let r = t * N_BOUNDARIES..(t + 1) * N_BOUNDARIES;
            let zrow = &z[l.b.start + r.start..l.b.start + r.end];
            ordered_chain(zrow, &g_b[r.clone()], &mut g[l.b.start + r.start..l.b.start + r.end]);
        }
        for j in 0..dims.n_raters {
            // adjoints with respect to log d_eff and the additive criteria shift
            let dlog: Vec<f64> = (0..n_groups)
                .map(|gr| adj_d[j * n_groups + gr] * tables[j * n_groups + gr].d_eff)
                .collect();
            let dshift: Vec<f64> = (0..n_groups)
                .map(|gr| {
                    adj_c[(j * n_groups + gr) * N_BOUNDARIES..(j * n_groups + gr + 1) * N_BOUNDARIES]
                        .iter()
                        .sum()
                })
                .collect();
            g[l.log_d.start + j] += dlog.iter().sum::<f64>();
            for gr in 0..n_groups.saturating_sub(1) {
                let k = j * (n_groups - 1) + gr;
                g[l.delta_d.start + k] += dlog[gr] - dlog[n_groups - 1];
                g[l.delta_c.start + k] += dshift[gr] - dshift[n_groups - 1];
            }
            let mut gc = [0.0; N_BOUNDARIES];
            for gr in 0..n_groups {
                for k in 0..N_BOUNDARIES {
                    gc[k] += adj_c[(j * n_groups + gr) * N_BOUNDARIES + k];
                }
            }
            let r = j * N_BOUNDARIES..(j + 1) * N_BOUNDARIES;
            let zrow = &z[l.c.start + r.start..l.c.start + r.end];
            ordered_chain(zrow, &gc, &mut g[l.c.start + r.start..l.c.start + r.end]);
        }
    }
}

/// Log-posterior at unconstrained point `z`.
pub fn log_posterior(z: &[f64], ds: &RatingsDataset, bp: &Blueprint, prior: &PriorConfig) -> f64 {
    Model::new(bp, ds, prior.clone()).log_posterior(z)
}

/// Gradient of [`log_posterior`] with respect to every unconstrained coordinate.
pub fn grad_log_posterior(z: &[f64], ds: &RatingsDataset, bp: &Blueprint, prior: &PriorConfig) -> Vec<f64> {
    let model = Model::new(bp, ds, prior.clone());
    let mut g = vec![0.0; z.len()];
    model.log_posterior_grad(z, &mut g);
    g
}
