//! Natural (constrained) parameters and their unconstrained encoding.
//!
//! Unconstrained layout, in order:
//!
//! | block     | length      | map to natural                                   |
//! |-----------|-------------|--------------------------------------------------|
//! | `theta`   | N·P         | identity                                         |
//! | `gamma`   | (C−1)·P     | last case per dimension = −(sum of the others)   |
//! | `b`       | T·4         | first threshold, then log-increments             |
//! | `log_d`   | J           | `d = exp(z)`                                     |
//! | `delta_d` | J·(G−1)     | last group per rater = −(sum of the others)      |
//! | `c`       | J·4         | first criterion, then log-increments             |
//! | `delta_c` | J·(G−1)     | last group per rater = −(sum of the others)      |
//! | `omega`   | C·G         | identity                                         |

use std::ops::Range;

use crate::design::{Blueprint, RatingsDataset, N_BOUNDARIES};
use crate::error::{Error, Result};
use crate::model::pmf::Cuts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_learners: usize,
    pub n_dims: usize,
    pub n_cases: usize,
    pub n_groups: usize,
    pub n_thresholds: usize,
    pub n_raters: usize,
}

impl ModelDims {
    pub fn new(bp: &Blueprint, ds: &RatingsDataset) -> Self {
        Self {
            n_learners: ds.n_learners(),
            n_dims: bp.n_dims(),
            n_cases: bp.n_cases(),
            n_groups: bp.n_groups(),
            n_thresholds: bp.n_threshold_groups(),
            n_raters: ds.n_raters(),
        }
    }

    pub fn n_natural(&self) -> usize {
        let Self {
            n_learners: n,
            n_dims: p,
            n_cases: c,
            n_groups: g,
            n_thresholds: t,
            n_raters: j,
        } = *self;
        n * p + c * p + t * N_BOUNDARIES + j + j * g + j * N_BOUNDARIES + j * g + c * g
    }
}

/// Offsets of each block inside the unconstrained vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub dims: ModelDims,
    pub theta: Range<usize>,
    pub gamma: Range<usize>,
    pub b: Range<usize>,
    pub log_d: Range<usize>,
    pub delta_d: Range<usize>,
    pub c: Range<usize>,
    pub delta_c: Range<usize>,
    pub omega: Range<usize>,
}

impl ParamLayout {
    pub fn new(dims: ModelDims) -> Self {
        let ModelDims {
            n_learners: n,
            n_dims: p,
            n_cases: c,
            n_groups: g,
            n_thresholds: t,
            n_raters: j,
        } = dims;
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        Self {
            dims,
            theta: next(n * p),
            gamma: next(c.saturating_sub(1) * p),
            b: next(t * N_BOUNDARIES),
            log_d: next(j),
            delta_d: next(j * g.saturating_sub(1)),
            c: next(j * N_BOUNDARIES),
            delta_c: next(j * g.saturating_sub(1)),
            omega: next(c * g),
        }
    }

    pub fn len(&self) -> usize {
        self.omega.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block name for an unconstrained coordinate.
    pub fn block_of(&self, k: usize) -> &'static str {
        [
            (&self.theta, "theta"),
            (&self.gamma, "gamma"),
            (&self.b, "b"),
            (&self.log_d, "log_d"),
            (&self.delta_d, "delta_d"),
            (&self.c, "c"),
            (&self.delta_c, "delta_c"),
            (&self.omega, "omega"),
        ]
        .into_iter()
        .find(|(r, _)| r.contains(&k))
        .map(|(_, n)| n)
        .unwrap_or("?")
    }
}

/// One point in natural parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    dims: ModelDims,
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    pub delta_d: Vec<f64>,
    pub c: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub omega: Vec<f64>,
}

impl NaturalParams {
    /// All-zero shifts, unit detection and evenly spaced cutpoints.
    pub fn neutral(dims: ModelDims) -> Self {
        let cuts: Vec<f64> = (0..dims.n_thresholds.max(dims.n_raters))
            .flat_map(|_| [-1.5, -0.5, 0.5, 1.5])
            .collect();
        Self {
            dims,
            theta: vec![0.0; dims.n_learners * dims.n_dims],
            gamma: vec![0.0; dims.n_cases * dims.n_dims],
            b: cuts[..dims.n_thresholds * N_BOUNDARIES].to_vec(),
            d: vec![1.0; dims.n_raters],
            delta_d: vec![0.0; dims.n_raters * dims.n_groups],
            c: cuts[..dims.n_raters * N_BOUNDARIES].to_vec(),
            delta_c: vec![0.0; dims.n_raters * dims.n_groups],
            omega: vec![0.0; dims.n_cases * dims.n_groups],
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        let p = self.dims.n_dims;
        &self.theta[i * p..(i + 1) * p]
    }

    pub fn gamma(&self, q: usize) -> &[f64] {
        let p = self.dims.n_dims;
        &self.gamma[q * p..(q + 1) * p]
    }

    pub fn b(&self, t: usize) -> Cuts {
        self.b[t * N_BOUNDARIES..(t + 1) * N_BOUNDARIES]
            .try_into()
            .expect("threshold row")
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn delta_d(&self, j: usize) -> &[f64] {
        let g = self.dims.n_groups;
        &self.delta_d[j * g..(j + 1) * g]
    }

    pub fn c(&self, j: usize) -> Cuts {
        self.c[j * N_BOUNDARIES..(j + 1) * N_BOUNDARIES]
            .try_into()
            .expect("criteria row")
    }

    pub fn delta_c(&self, j: usize) -> &[f64] {
        let g = self.dims.n_groups;
        &self.delta_c[j * g..(j + 1) * g]
    }

    pub fn omega(&self, q: usize, g: usize) -> f64 {
        self.omega[q * self.dims.n_groups + g]
    }

    /// Checks ordering, centering and positivity up to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = self.dims;
        let lens = [
            (self.theta.len(), d.n_learners * d.n_dims, "theta"),
            (self.gamma.len(), d.n_cases * d.n_dims, "gamma"),
            (self.b.len(), d.n_thresholds * N_BOUNDARIES, "b"),
            (self.d.len(), d.n_raters, "d"),
            (self.delta_d.len(), d.n_raters * d.n_groups, "delta_d"),
            (self.c.len(), d.n_raters * N_BOUNDARIES, "c"),
            (self.delta_c.len(), d.n_raters * d.n_groups, "delta_c"),
            (self.omega.len(), d.n_cases * d.n_groups, "omega"),
        ];
        for (got, want, name) in lens {
            if got != want {
                return Err(Error::Params(format!("{name}: length {got}, expected {want}")));
            }
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Params("non-finite value".into()));
        }
        for p in 0..d.n_dims {
            let s: f64 = (0..d.n_cases).map(|q| self.gamma(q)[p]).sum();
            if s.abs() > tol {
                return Err(Error::Params(format!("gamma dimension {} sums to {s}", p + 1)));
            }
        }
        for t in 0..d.n_thresholds {
            if self.b(t).windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Params(format!("b row {} not increasing", t + 1)));
            }
        }
        for j in 0..d.n_raters {
            if self.d[j] <= 0.0 {
                return Err(Error::Params(format!("d[{}] not positive", j + 1)));
            }
            if self.c(j).windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Params(format!("c row {} not increasing", j + 1)));
            }
            let sd: f64 = self.delta_d(j).iter().sum();
            let sc: f64 = self.delta_c(j).iter().sum();
            if sd.abs() > tol || sc.abs() > tol {
                return Err(Error::Params(format!("rater {} shifts do not sum to zero", j + 1)));
            }
        }
        Ok(())
    }

    /// Concatenation of all blocks in [`natural_names`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.n_natural());
        for block in [
            &self.theta,
            &self.gamma,
            &self.b,
            &self.d,
            &self.delta_d,
            &self.c,
            &self.delta_c,
            &self.omega,
        ] {
            out.extend_from_slice(block);
        }
        out
    }

    pub fn from_flat(dims: ModelDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.n_natural() {
            return Err(Error::Mismatch(format!(
                "flat natural vector has {} entries, expected {}",
                flat.len(),
                dims.n_natural()
            )));
        }
        let mut rest = flat;
        let mut take = |len: usize| {
            let (head, tail) = rest.split_at(len);
            rest = tail;
            head.to_vec()
        };
        Ok(Self {
            dims,
            theta: take(dims.n_learners * dims.n_dims),
            gamma: take(dims.n_cases * dims.n_dims),
            b: take(dims.n_thresholds * N_BOUNDARIES),
            d: take(dims.n_raters),
            delta_d: take(dims.n_raters * dims.n_groups),
            c: take(dims.n_raters * N_BOUNDARIES),
            delta_c: take(dims.n_raters * dims.n_groups),
            omega: take(dims.n_cases * dims.n_groups),
        })
    }
}

/// Names of the natural parameters, 1-based, in [`NaturalParams::flat`] order.
pub fn natural_names(dims: ModelDims) -> Vec<String> {
    let mut names = Vec::with_capacity(dims.n_natural());
    let grid = |names: &mut Vec<String>, name: &str, rows: usize, cols: usize| {
        for r in 0..rows {
            for c in 0..cols {
                names.push(format!("{name}[{},{}]", r + 1, c + 1));
            }
        }
    };
    grid(&mut names, "theta", dims.n_learners, dims.n_dims);
    grid(&mut names, "gamma", dims.n_cases, dims.n_dims);
    grid(&mut names, "b", dims.n_thresholds, N_BOUNDARIES);
    names.extend((0..dims.n_raters).map(|j| format!("d[{}]", j + 1)));
    grid(&mut names, "delta_d", dims.n_raters, dims.n_groups);
    grid(&mut names, "c", dims.n_raters, N_BOUNDARIES);
    grid(&mut names, "delta_c", dims.n_raters, dims.n_groups);
    grid(&mut names, "omega", dims.n_cases, dims.n_groups);
    names
}

fn centered_from_free(free: &[f64], out: &mut [f64]) {
    let k = free.len();
    out[..k].copy_from_slice(free);
    out[k] = -free.iter().sum::<f64>();
}

fn ordered_from_free(free: &[f64], out: &mut [f64]) {
    out[0] = free[0];
    for k in 1..free.len() {
        out[k] = out[k - 1] + free[k].exp();
    }
}

fn free_from_ordered(ordered: &[f64], out: &mut [f64]) {
    out[0] = ordered[0];
    for k in 1..ordered.len() {
        out[k] = (ordered[k] - ordered[k - 1]).ln();
    }
}

impl ParamLayout {
    /// Maps any finite unconstrained vector to valid natural parameters.
    pub fn to_natural(&self, z: &[f64]) -> NaturalParams {
        assert_eq!(z.len(), self.len(), "unconstrained vector length");
        let d = self.dims;
        let (p, c, g) = (d.n_dims, d.n_cases, d.n_groups);
        let mut x = NaturalParams::neutral(d);
        x.theta.copy_from_slice(&z[self.theta.clone()]);

        let gz = &z[self.gamma.clone()];
        for dim in 0..p {
            let free: Vec<f64> = (0..c - 1).map(|q| gz[q * p + dim]).collect();
            let mut col = vec![0.0; c];
            centered_from_free(&free, &mut col);
            for q in 0..c {
                x.gamma[q * p + dim] = col[q];
            }
        }

        let bz = &z[self.b.clone()];
        for t in 0..d.n_thresholds {
            let r = t * N_BOUNDARIES..(t + 1) * N_BOUNDARIES;
            ordered_from_free(&bz[r.clone()], &mut x.b[r]);
        }
        for j in 0..d.n_raters {
            x.d[j] = z[self.log_d.start + j].exp();
            let r = j * N_BOUNDARIES..(j + 1) * N_BOUNDARIES;
            ordered_from_free(&z[self.c.clone()][r.clone()], &mut x.c[r]);
            let fr = j * (g - 1)..(j + 1) * (g - 1);
            centered_from_free(&z[self.delta_d.clone()][fr.clone()], &mut x.delta_d[j * g..(j + 1) * g]);
            centered_from_free(&z[self.delta_c.clone()][fr], &mut x.delta_c[j * g..(j + 1) * g]);
        }
        x.omega.copy_from_slice(&z[self.omega.clone()]);
        x
    }

    /// Inverse of [`to_natural`](Self::to_natural); the input must satisfy
    /// every natural-space constraint.
    pub fn from_natural(&self, x: &NaturalParams) -> Result<Vec<f64>> {
        if x.dims != self.dims {
            return Err(Error::Mismatch("natural parameters do not match layout".into()));
        }
        x.validate(1e-9)?;
        let d = self.dims;
        let (p, c, g) = (d.n_dims, d.n_cases, d.n_groups);
        let mut z = vec![0.0; self.len()];
        z[self.theta.clone()].copy_from_slice(&x.theta);
        for q in 0..c - 1 {
            for dim in 0..p {
                z[self.gamma.start + q * p + dim] = x.gamma[q * p + dim];
            }
        }
        for t in 0..d.n_thresholds {
            let r = t * N_BOUNDARIES..(t + 1) * N_BOUNDARIES;
            free_from_ordered(&x.b[r.clone()], &mut z[self.b.start + r.start..self.b.start + r.end]);
        }
        for j in 0..d.n_raters {
            z[self.log_d.start + j] = x.d[j].ln();
            let r = j * N_BOUNDARIES..(j + 1) * N_BOUNDARIES;
            free_from_ordered(&x.c[r.clone()], &mut z[self.c.start + r.start..self.c.start + r.end]);
            for k in 0..g - 1 {
                z[self.delta_d.start + j * (g - 1) + k] = x.delta_d[j * g + k];
                z[self.delta_c.start + j * (g - 1) + k] = x.delta_c[j * g + k];
            }
        }
        z[self.omega.clone()].copy_from_slice(&x.omega);
        Ok(z)
    }
}
