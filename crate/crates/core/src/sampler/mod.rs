//! No-U-Turn sampling, warmup adaptation and multi-chain orchestration.

pub mod adapt;
pub mod diagnostics;
pub mod export;
pub mod nuts;
pub mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{natural_names, Model, ModelDims, NaturalParams};
use crate::{Error, Result};
use adapt::{find_reasonable_step_size, DualAveraging, WindowedAdaptation};
use nuts::{nuts_step, PhasePoint};

pub use diagnostics::{compute_ess, compute_rhat, mcse_mean, quantile, Degenerate};
pub use export::{read_draws, write_draws};
pub use nuts::TransitionStats;
pub use report::{FitReport, ParamSummary, MIN_ESS_PER_CHAIN};

const INIT_ATTEMPTS: usize = 100;
const INIT_RADIUS: f64 = 0.5;

/// A differentiable log-density on an unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns the log-density at `z` and writes its gradient into `grad`.
    fn logp_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;

    /// Human-readable block name for coordinate `k`, used in error messages.
    fn block_name(&self, _k: usize) -> &'static str {
        "z"
    }
}

impl LogDensity for Model<'_> {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn logp_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(z, grad)
    }

    fn block_name(&self, k: usize) -> &'static str {
        self.layout().block_of(k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub base_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 750,
            target_accept: 0.99,
            max_tree_depth: 10,
            base_seed: 20240601,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.n_warmup == 0 || self.n_draws == 0 {
            return Err(Error::Config("n_warmup and n_draws must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::Config("max_tree_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn chain_seed(&self, chain: usize) -> u64 {
        self.base_seed ^ chain as u64
    }
}

/// Per-draw sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawStats {
    pub lp: f64,
    pub depth: usize,
    pub divergent: bool,
    pub step_size: f64,
    pub accept_stat: f64,
    pub n_leapfrog: usize,
}

/// Output of one chain on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct ChainSamples {
    pub dim: usize,
    /// Row-major `[draw][coordinate]`.
    pub z: Vec<f64>,
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainSamples {
    pub fn draw(&self, d: usize) -> &[f64] {
        &self.z[d * self.dim..(d + 1) * self.dim]
    }
}

fn initialize<T: LogDensity + ?Sized>(target: &T, rng: &mut ChaCha8Rng) -> Result<PhasePoint> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    let mut last_bad = None;
    for _ in 0..INIT_ATTEMPTS {
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS)).collect();
        let lp = target.logp_grad(&z, &mut grad);
        let bad_grad = grad.iter().position(|g| !g.is_finite());
        if lp.is_finite() && bad_grad.is_none() {
            return Ok(PhasePoint::new(target, z));
        }
        last_bad = bad_grad;
    }
    let block = last_bad.map_or("unknown", |k| target.block_name(k));
    Err(Error::Sampler(format!(
        "non-finite initial log-posterior after {INIT_ATTEMPTS} attempts (block {block})"
    )))
}

/// Runs warmup and sampling for a single chain.
pub fn sample_chain<T: LogDensity + ?Sized>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<ChainSamples> {
    cfg.validate()?;
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.chain_seed(chain));
    let mut point = initialize(target, &mut rng)?;

    let mut inv_mass = vec![1.0; dim];
    let mut step = find_reasonable_step_size(target, &point, &inv_mass, 1.0, &mut rng);
    let mut da = DualAveraging::new(cfg.target_accept, step);
    let mut windows = WindowedAdaptation::new(dim, cfg.n_warmup);
    let mut warmup_divergences = 0;
    for _ in 0..cfg.n_warmup {
        let (next, st) = nuts_step(target, &point, &mut rng, step, &inv_mass, cfg.max_tree_depth);
        point = next;
        warmup_divergences += usize::from(st.divergent);
        step = da.update(st.accept_stat);
        if let Some(m) = windows.observe(&point.q) {
            inv_mass = m;
            step = find_reasonable_step_size(target, &point, &inv_mass, step, &mut rng);
            da.restart(step);
        }
    }
    step = da.final_step();
    if warmup_divergences == cfg.n_warmup {
        return Err(Error::Sampler(format!(
            "chain {}: every warmup transition diverged",
            chain + 1
        )));
    }
    log::debug!("chain {}: step size {step:.4}", chain + 1);

    let mut z = Vec::with_capacity(cfg.n_draws * dim);
    let mut stats = Vec::with_capacity(cfg.n_draws);
    for _ in 0..cfg.n_draws {
        let (next, st) = nuts_step(target, &point, &mut rng, step, &inv_mass, cfg.max_tree_depth);
        point = next;
        z.extend_from_slice(&point.q);
        stats.push(DrawStats {
            lp: point.logp,
            depth: st.depth,
            divergent: st.divergent,
            step_size: st.step_size,
            accept_stat: st.accept_stat,
            n_leapfrog: st.n_leapfrog,
        });
    }
    Ok(ChainSamples {
        dim,
        z,
        stats,
        step_size: step,
        inv_mass,
        warmup_divergences,
    })
}

/// Runs independent chains in parallel. Results are ordered by chain index.
pub fn sample_chains<T: LogDensity + Sync + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<Vec<ChainSamples>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| sample_chain(target, cfg, c))
        .collect()
}

/// Retained draws on the natural scale, `[chain][draw][parameter]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    dims: ModelDims,
    names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    values: Vec<f64>,
    stats: Vec<DrawStats>,
    unconstrained: Option<Vec<Vec<f64>>>,
}

impl PosteriorDraws {
    pub(crate) fn from_parts(
        dims: ModelDims,
        n_chains: usize,
        n_draws: usize,
        values: Vec<f64>,
        stats: Vec<DrawStats>,
    ) -> Result<Self> {
        let names = natural_names(dims);
        if values.len() != n_chains * n_draws * names.len() || stats.len() != n_chains * n_draws {
            return Err(Error::Mismatch(format!(
                "draw storage holds {} values for {n_chains} chains × {n_draws} draws × {} parameters",
                values.len(),
                names.len()
            )));
        }
        Ok(Self {
            dims,
            names,
            n_chains,
            n_draws,
            values,
            stats,
            unconstrained: None,
        })
    }

    /// A single-draw container, convenient for plugging a known parameter set
    /// into the analysis routines.
    pub fn from_point(x: &NaturalParams) -> Self {
        let stats = DrawStats {
            lp: f64::NAN,
            depth: 0,
            divergent: false,
            step_size: f64::NAN,
            accept_stat: f64::NAN,
            n_leapfrog: 0,
        };
        Self::from_parts(x.dims(), 1, 1, x.flat(), vec![stats]).expect("consistent sizes")
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let k = self.n_params();
        let at = (chain * self.n_draws + draw) * k;
        &self.values[at..at + k]
    }

    pub fn natural(&self, chain: usize, draw: usize) -> NaturalParams {
        NaturalParams::from_flat(self.dims, self.draw(chain, draw)).expect("stored draws have model dimensions")
    }

    pub fn iter_natural(&self) -> impl Iterator<Item = NaturalParams> + '_ {
        (0..self.n_chains).flat_map(move |c| (0..self.n_draws).map(move |d| self.natural(c, d)))
    }

    pub fn stats(&self, chain: usize, draw: usize) -> &DrawStats {
        &self.stats[chain * self.n_draws + draw]
    }

    pub fn all_stats(&self) -> &[DrawStats] {
        &self.stats
    }

    /// Per-chain traces of parameter `k`.
    pub fn chains_of(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|d| self.draw(c, d)[k]).collect())
            .collect()
    }

    /// Pooled posterior mean of every parameter.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.n_params();
        let mut m = vec![0.0; k];
        for row in self.values.chunks_exact(k) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = (self.n_chains * self.n_draws) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn mean_natural(&self) -> NaturalParams {
        NaturalParams::from_flat(self.dims, &self.mean()).expect("model dimensions")
    }

    pub fn n_divergent(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    /// Unconstrained traces, present for draws produced in this process.
    pub fn unconstrained(&self) -> Option<&[Vec<f64>]> {
        self.unconstrained.as_deref()
    }
}

/// Samples the posterior of `model` and maps retained draws to the natural
/// scale.
pub fn run_chains(model: &Model<'_>, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    let chains = sample_chains(model, cfg)?;
    let layout = model.layout();
    let dims = model.dims();
    let mut values = Vec::with_capacity(cfg.n_chains * cfg.n_draws * dims.n_natural());
    let mut stats = Vec::with_capacity(cfg.n_chains * cfg.n_draws);
    for ch in &chains {
        for d in 0..cfg.n_draws {
            let x = layout.to_natural(ch.draw(d));
            debug_assert!(x.validate(1e-10).is_ok());
            values.extend(x.flat());
        }
        stats.extend_from_slice(&ch.stats);
    }
    let mut draws = PosteriorDraws::from_parts(dims, cfg.n_chains, cfg.n_draws, values, stats)?;
    draws.unconstrained = Some(chains.into_iter().map(|c| c.z).collect());
    Ok(draws)
}
