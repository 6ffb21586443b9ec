//! Forward simulation of designs, ground-truth parameters and ratings.
//!
//! Truth is drawn from a [`PriorConfig`] on the unconstrained scale and mapped
//! through the same transforms the sampler uses. The default
//! ([`default_truth`]) keeps the fitting prior for θ and γ and describes an
//! attentive rater panel and mostly applicable items for the other blocks.
//! Setting `truth` to the fitting prior turns a simulate→fit loop into an
//! exact calibration experiment.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::{Blueprint, Descriptor, ItemSpec, RatingRecord, RatingsDataset};
use crate::model::pmf::sigmoid;
use crate::model::{
    effective_rater_params, natural_names, stage1_pmf, stage2_pmf, ModelDims, NaturalParams, NormalPrior, ParamLayout,
    Pmf, PriorConfig,
};
use crate::{Error, Result};

const DIMENSION_LABELS: [&str; 6] = ["PC", "MK", "ICS", "PROF", "PBLI", "SBP"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LoadingStructure {
    /// One-hot on the item's primary dimension.
    #[default]
    Pure,
    /// Primary weight plus one randomly chosen secondary dimension.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_learners: usize,
    pub n_dims: usize,
    pub n_cases: usize,
    pub n_raters: usize,
    /// Theta-groups; `None` means one per dimension.
    pub n_groups: Option<usize>,
    /// Items per case, universal items included.
    pub items_per_case: usize,
    pub universal_items_per_case: usize,
    /// Minimum number of items whose primary dimension is `p`, counted over
    /// the whole blueprint.
    pub min_items_per_dim: usize,
    pub loadings: LoadingStructure,
    pub primary_weight: f64,
    pub secondary_weight: f64,
    /// Distributions the ground truth is drawn from.
    pub truth: PriorConfig,
    /// Overrides every applicability logit when set.
    pub omega_override: Option<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_learners: 40,
            n_dims: 6,
            n_cases: 4,
            n_raters: 4,
            n_groups: None,
            items_per_case: 30,
            universal_items_per_case: 6,
            min_items_per_dim: 5,
            loadings: LoadingStructure::Pure,
            primary_weight: 0.8,
            secondary_weight: 0.6,
            truth: default_truth(),
            omega_override: None,
            seed: 1,
        }
    }
}

/// Truth distributions used by [`SimConfig::default`].
///
/// Thresholds sit near (−2, −0.7, 0.6, 1.9) so latent levels spread over all
/// five categories; detection is near 5 with criteria spread evenly over
/// `[0, d]`; about 88% of items are applicable.
pub fn default_truth() -> PriorConfig {
    PriorConfig {
        b_first: NormalPrior::new(-2.0, 0.5),
        b_log_increment: NormalPrior::new(0.25, 0.2),
        log_d: NormalPrior::new(1.6, 0.2),
        delta_d: NormalPrior::new(0.0, 0.1),
        c_first: NormalPrior::new(0.6, 0.3),
        c_log_increment: NormalPrior::new(0.22, 0.15),
        delta_c: NormalPrior::new(0.0, 0.3),
        omega: NormalPrior::new(2.0, 0.5),
        ..PriorConfig::default()
    }
}

impl SimConfig {
    pub fn n_groups(&self) -> usize {
        self.n_groups.unwrap_or(self.n_dims)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_learners", self.n_learners),
            ("n_dims", self.n_dims),
            ("n_cases", self.n_cases),
            ("n_raters", self.n_raters),
            ("n_groups", self.n_groups()),
            ("items_per_case", self.items_per_case),
            ("min_items_per_dim", self.min_items_per_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        // primary dimensions are assigned round-robin over each case's slots
        for p in 0..self.n_dims {
            let per_case = self.items_per_case / self.n_dims + usize::from(p < self.items_per_case % self.n_dims);
            let n = per_case * self.n_cases;
            if n < self.min_items_per_dim {
                return Err(Error::Infeasible(format!(
                    "dimension {} gets {n} items but at least {} are required; raise items_per_case or n_cases",
                    p + 1,
                    self.min_items_per_dim
                )));
            }
        }
        if self.universal_items_per_case > self.items_per_case {
            return Err(Error::Config(
                "universal_items_per_case cannot exceed items_per_case".into(),
            ));
        }
        if self.loadings == LoadingStructure::Mixed {
            if self.n_dims < 2 {
                return Err(Error::Config("mixed loadings need at least two dimensions".into()));
            }
            if !(self.primary_weight > 0.0 && self.secondary_weight > 0.0) {
                return Err(Error::Config("loading weights must be positive".into()));
            }
        }
        if let Some(w) = self.omega_override {
            if !w.is_finite() {
                return Err(Error::Config("omega_override must be finite".into()));
            }
        }
        self.truth.validate()
    }

    pub fn from_json_str(s: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub params: NaturalParams,
    pub seed: u64,
    /// Sampled latent level per (learner, item), row-major, when recorded.
    pub eta: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    seed: u64,
    n_learners: usize,
    n_raters: usize,
    params: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<Vec<u8>>,
}

impl SimTruth {
    /// Serializes parameters as a name → value map plus the latent levels.
    pub fn to_json_string(&self) -> String {
        let dims = self.params.dims();
        let params = natural_names(dims)
            .into_iter()
            .zip(self.params.flat())
            .map(|(k, v)| (k, serde_json::Value::from(v)))
            .collect();
        let file = TruthFile {
            seed: self.seed,
            n_learners: dims.n_learners,
            n_raters: dims.n_raters,
            params,
            eta: self.eta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("truth serializes")
    }

    pub fn from_json_str(s: &str, path: &Path, bp: &Blueprint) -> Result<Self> {
        let file: TruthFile = serde_json::from_str(s).map_err(|e| Error::parse(path, e))?;
        let dims = dims_for(bp, file.n_learners, file.n_raters);
        let flat = natural_names(dims)
            .iter()
            .map(|name| {
                file.params
                    .get(name)
                    .and_then(serde_json::Value::as_f64)
                    .ok_or_else(|| Error::parse(path, format!("missing parameter {name}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if file.params.len() != flat.len() {
            return Err(Error::Mismatch(format!(
                "{}: {} parameters stored, blueprint implies {}",
                path.display(),
                file.params.len(),
                flat.len()
            )));
        }
        let params = NaturalParams::from_flat(dims, &flat)?;
        params.validate(1e-9)?;
        Ok(Self {
            params,
            seed: file.seed,
            eta: file.eta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, bp: &Blueprint) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path, bp)
    }
}

pub fn dims_for(bp: &Blueprint, n_learners: usize, n_raters: usize) -> ModelDims {
    ModelDims {
        n_learners,
        n_dims: bp.n_dims(),
        n_cases: bp.n_cases(),
        n_groups: bp.n_groups(),
        n_thresholds: bp.n_threshold_groups(),
        n_raters,
    }
}

fn dimension_label(p: usize, n_dims: usize) -> String {
    if n_dims == DIMENSION_LABELS.len() {
        DIMENSION_LABELS[p].to_string()
    } else {
        format!("Theta{}", p + 1)
    }
}

fn loading_for<R: Rng + ?Sized>(cfg: &SimConfig, primary: usize, rng: &mut R) -> Vec<f64> {
    let mut a = vec![0.0; cfg.n_dims];
    match cfg.loadings {
        LoadingStructure::Pure => a[primary] = 1.0,
        LoadingStructure::Mixed => {
            let others: Vec<usize> = (0..cfg.n_dims).filter(|&p| p != primary).collect();
            let secondary = *others.choose(rng).expect("at least two dimensions");
            a[primary] = cfg.primary_weight;
            a[secondary] = cfg.secondary_weight;
        }
    }
    a
}

fn primary_of(loading: &[f64]) -> usize {
    let mut best = 0;
    for (p, v) in loading.iter().enumerate() {
        if v.abs() > loading[best].abs() {
            best = p;
        }
    }
    best
}

/// Builds a blueprint and draws ground truth for it.
///
/// Every case holds `items_per_case` items whose primary dimensions cycle
/// through `0..P`; the first `universal_items_per_case` slots are universal
/// items that recur in every case with a shared threshold set.
pub fn gen_design<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<(Blueprint, SimTruth)> {
    cfg.validate()?;
    let (p_dims, n_groups) = (cfg.n_dims, cfg.n_groups());

    let cases: Vec<Descriptor> = (0..cfg.n_cases)
        .map(|q| Descriptor {
            id: format!("case{}", q + 1),
            label: format!("Case {}", q + 1),
        })
        .collect();
    let theta_groups: Vec<Descriptor> = (0..n_groups)
        .map(|g| {
            let label = if n_groups == p_dims {
                dimension_label(g, p_dims)
            } else {
                format!("Group {}", g + 1)
            };
            Descriptor {
                id: format!("g{}", g + 1),
                label,
            }
        })
        .collect();

    let n_universal = cfg.universal_items_per_case;
    let universal_loadings: Vec<Vec<f64>> = (0..n_universal).map(|u| loading_for(cfg, u % p_dims, rng)).collect();
    let mut items = Vec::with_capacity(cfg.items_per_case * cfg.n_cases);
    let mut next_threshold = n_universal;
    for q in 0..cfg.n_cases {
        for slot in 0..cfg.items_per_case {
            let primary = slot % p_dims;
            let (id, loading, threshold_group, universal) = if slot < n_universal {
                (
                    format!("u{:02}_{}", slot + 1, cases[q].id),
                    universal_loadings[slot].clone(),
                    slot,
                    true,
                )
            } else {
                let t = next_threshold;
                next_threshold += 1;
                (
                    format!(
                        "{}_{}_{:02}",
                        cases[q].id,
                        dimension_label(primary, p_dims).to_lowercase(),
                        slot + 1
                    ),
                    loading_for(cfg, primary, rng),
                    t,
                    false,
                )
            };
            items.push(ItemSpec {
                id,
                case: q,
                theta_group: primary_of(&loading) % n_groups,
                threshold_group,
                loading,
                universal,
            });
        }
    }
    let bp = Blueprint::new(p_dims, cases, theta_groups, items)?;
    let truth = gen_truth(cfg, &bp, rng)?;
    Ok((bp, truth))
}

/// Draws a parameter set from `cfg.truth` for the given blueprint.
pub fn gen_truth<R: Rng + ?Sized>(cfg: &SimConfig, bp: &Blueprint, rng: &mut R) -> Result<SimTruth> {
    let dims = dims_for(bp, cfg.n_learners, cfg.n_raters);
    let layout = ParamLayout::new(dims);
    let z: Vec<f64> = (0..layout.len())
        .map(|k| {
            let pr = cfg.truth.for_coordinate(&layout, k);
            Normal::new(pr.loc, pr.scale).expect("validated scale").sample(rng)
        })
        .collect();
    let mut params = layout.to_natural(&z);
    if let Some(w) = cfg.omega_override {
        params.omega.fill(w);
    }
    params.validate(1e-10)?;
    Ok(SimTruth {
        params,
        seed: cfg.seed,
        eta: None,
    })
}

fn draw_category<R: Rng + ?Sized>(pmf: &Pmf, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pmf.len() - 1
}

/// Simulates ratings for every (learner, rater, item).
///
/// Applicability and the latent level are drawn once per (learner, item)
/// and shared by all raters; each rater then scores independently. The
/// sampled latent levels are stored in `truth.eta`.
pub fn gen_ratings<R: Rng + ?Sized>(bp: &Blueprint, truth: &mut SimTruth, rng: &mut R) -> Result<RatingsDataset> {
    let x = &truth.params;
    let dims = x.dims();
    let (n, j_count, l_count) = (dims.n_learners, dims.n_raters, bp.n_items());
    let mut records = Vec::with_capacity(n * j_count * l_count);
    let mut etas = Vec::with_capacity(n * l_count);
    for i in 0..n {
        for l in 0..l_count {
            let item = bp.item(l);
            let applicable = rng.random::<f64>() < sigmoid(x.omega(item.case, item.theta_group));
            let s1 = stage1_pmf(
                x.theta(i),
                &item.loading,
                x.gamma(item.case),
                &x.b(item.threshold_group),
            )?;
            let eta = draw_category(&s1, rng) + 1;
            etas.push(eta as u8);
            for j in 0..j_count {
                let rating = if applicable {
                    let (d_eff, c_eff) = effective_rater_params(j, item.theta_group, x);
                    let s2 = stage2_pmf(eta, d_eff, &c_eff)?;
                    Some((draw_category(&s2, rng) + 1) as u8)
                } else {
                    None
                };
                records.push(RatingRecord {
                    learner: i,
                    rater: j,
                    item: l,
                    applicable,
                    rating,
                });
            }
        }
    }
    truth.eta = Some(etas);
    RatingsDataset::new(records, n, j_count, bp)
}

/// Complete simulated study.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub blueprint: Blueprint,
    pub truth: SimTruth,
    pub dataset: RatingsDataset,
}

/// Runs [`gen_design`] then [`gen_ratings`] from a single stream seeded by
/// `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (blueprint, mut truth) = gen_design(cfg, &mut rng)?;
    let dataset = gen_ratings(&blueprint, &mut truth, &mut rng)?;
    Ok(Simulation {
        blueprint,
        truth,
        dataset,
    })
}
