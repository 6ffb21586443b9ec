//! Post-estimation diagnostics.
//!
//! [`analyze`] turns posterior draws (or a single parameter point, such as
//! the simulation truth) into an [`AnalysisReport`]; [`AnalysisReport::write`]
//! lays the report out as one JSON document plus flat CSV tables.

pub mod cases;
pub mod icc;
pub mod stats;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{Blueprint, RatingsDataset};
use crate::model::NaturalParams;
use crate::sampler::{quantile, PosteriorDraws};
use crate::{Error, Result};

pub use cases::{case_conditional_thetas, map_theta, CaseConditionalThetas, MapOptions, MapResult};
pub use icc::{classify, icc_curve, item_flag, u_grid, IccCurve, ItemFlag};
pub use stats::{
    correlation_matrix, fisher_z_aggregate, fisher_z_mean_ci, pearson, pearson_p_value, permutation_p_value, MeanCi,
};

/// Fewest learners for which a correlation is reported.
pub const MIN_LEARNERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub n_perm: usize,
    pub perm_seed: u64,
    pub u_min: f64,
    pub u_max: f64,
    pub u_points: usize,
    pub map: MapOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            n_perm: 1000,
            perm_seed: 20240601,
            u_min: -3.0,
            u_max: 3.0,
            u_points: 61,
            map: MapOptions::default(),
        }
    }
}

pub type CorrMatrix = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Mean and central 95% interval of pooled draws.
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: quantile(&sorted, 0.025),
            upper: quantile(&sorted, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub dim: usize,
    pub n: usize,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseShiftRow {
    pub case: String,
    pub dim: usize,
    #[serde(flatten)]
    pub shift: Interval,
    pub coverage: usize,
}

/// Unweighted mean over dimensions of each case's posterior-mean shifts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveCaseMean {
    pub case: String,
    pub mean_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyCell {
    pub dim: usize,
    pub case_a: String,
    pub case_b: String,
    pub n: usize,
    pub r: Option<f64>,
    pub p_perm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub case_a: String,
    pub case_b: String,
    /// Learners whose profile correlation was undefined for this pair.
    pub excluded: usize,
    pub summary: Option<MeanCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaterShiftRow {
    pub rater: usize,
    pub group: String,
    #[serde(flatten)]
    pub shift: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemFlagRow {
    pub item: String,
    pub flag: ItemFlag,
    pub p_lowest: f64,
    pub p_highest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub options: AnalysisOptions,
    pub n_learners: usize,
    pub n_dims: usize,
    /// Absent when no generating values are supplied.
    pub recovery: Option<Vec<RecoveryRow>>,
    pub theta_corr_truth: Option<CorrMatrix>,
    pub theta_corr_est: CorrMatrix,
    pub case_shifts: Vec<CaseShiftRow>,
    pub naive_case_means: Vec<NaiveCaseMean>,
    pub case_conditional_unconverged: usize,
    pub consistency_by_dim: Vec<ConsistencyCell>,
    /// Fisher-z mean over dimensions, `[case][case]`.
    pub consistency_agg: CorrMatrix,
    pub profile_consistency: Vec<ProfileRow>,
    pub profile_overall: Option<MeanCi>,
    pub rater_dd: Vec<RaterShiftRow>,
    pub rater_dc: Vec<RaterShiftRow>,
    pub item_flags: Vec<ItemFlagRow>,
    #[serde(skip)]
    pub icc: Vec<IccCurve>,
}

fn pooled(draws: &PosteriorDraws, name: &str) -> Vec<f64> {
    let k = draws
        .index_of(name)
        .unwrap_or_else(|| panic!("parameter {name} missing from draws"));
    draws.chains_of(k).into_iter().flatten().collect()
}

fn theta_matrix(x: &NaturalParams) -> Vec<Vec<f64>> {
    (0..x.dims().n_learners).map(|i| x.theta(i).to_vec()).collect()
}

/// Per-dimension Pearson r between estimated and generating θ over learners.
pub fn recovery_correlations(est: &NaturalParams, truth: &NaturalParams) -> Vec<RecoveryRow> {
    let n = est.dims().n_learners;
    (0..est.dims().n_dims)
        .map(|p| {
            let a: Vec<f64> = (0..n).map(|i| est.theta(i)[p]).collect();
            let b: Vec<f64> = (0..n).map(|i| truth.theta(i)[p]).collect();
            let r = pearson(&a, &b);
            RecoveryRow {
                dim: p + 1,
                n,
                r,
                p_value: r.and_then(|r| pearson_p_value(r, n)),
            }
        })
        .collect()
}

/// P×P correlation matrix of the learners' θ.
pub fn theta_corr_matrix(x: &NaturalParams) -> CorrMatrix {
    correlation_matrix(&theta_matrix(x))
}

pub fn case_shift_summary(draws: &PosteriorDraws, bp: &Blueprint) -> (Vec<CaseShiftRow>, Vec<NaiveCaseMean>) {
    let mut rows = Vec::new();
    let mut naive = Vec::new();
    for (q, case) in bp.cases().iter().enumerate() {
        let mut total = 0.0;
        for p in 0..bp.n_dims() {
            let shift = Interval::of(&pooled(draws, &format!("gamma[{},{}]", q + 1, p + 1)));
            total += shift.mean;
            rows.push(CaseShiftRow {
                case: case.id.clone(),
                dim: p + 1,
                shift,
                coverage: bp.coverage(q, p),
            });
        }
        naive.push(NaiveCaseMean {
            case: case.id.clone(),
            mean_shift: total / bp.n_dims() as f64,
        });
    }
    (rows, naive)
}

fn pair_seed(base: u64, p: usize, a: usize, b: usize) -> u64 {
    base ^ ((p as u64) << 40 | (a as u64) << 20 | b as u64)
}

/// Per-dimension case×case correlations of case-conditional θ̂ over learners
/// with permutation p-values, plus the Fisher-z aggregate over dimensions.
pub fn between_learner_consistency(
    cct: &CaseConditionalThetas,
    bp: &Blueprint,
    n_perm: usize,
    seed: u64,
) -> (Vec<ConsistencyCell>, CorrMatrix) {
    let c = cct.n_cases;
    let mut cells = Vec::new();
    let mut agg = vec![vec![None; c]; c];
    for a in 0..c {
        agg[a][a] = Some(1.0);
        for b in a + 1..c {
            let mut rs = Vec::new();
            for p in 0..cct.n_dims {
                let (x, y): (Vec<f64>, Vec<f64>) = (0..cct.n_learners)
                    .filter_map(|i| Some((cct.get(a, i)?[p], cct.get(b, i)?[p])))
                    .unzip();
                let n = x.len();
                let (r, p_perm) = if n >= MIN_LEARNERS {
                    (
                        pearson(&x, &y),
                        permutation_p_value(&x, &y, n_perm, pair_seed(seed, p, a, b)),
                    )
                } else {
                    (None, None)
                };
                rs.extend(r);
                cells.push(ConsistencyCell {
                    dim: p + 1,
                    case_a: bp.cases()[a].id.clone(),
                    case_b: bp.cases()[b].id.clone(),
                    n,
                    r,
                    p_perm,
                });
            }
            let z = fisher_z_aggregate(&rs);
            agg[a][b] = z;
            agg[b][a] = z;
        }
    }
    (cells, agg)
}

/// Per case pair, each learner's correlation between their two
/// case-conditional profiles across dimensions, summarized on the Fisher-z
/// scale. The second value pools every (learner, pair) correlation.
pub fn within_learner_profile_consistency(
    cct: &CaseConditionalThetas,
    bp: &Blueprint,
) -> (Vec<ProfileRow>, Option<MeanCi>) {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for a in 0..cct.n_cases {
        for b in a + 1..cct.n_cases {
            let mut rs = Vec::new();
            let mut excluded = 0;
            for i in 0..cct.n_learners {
                match (cct.get(a, i), cct.get(b, i)) {
                    (Some(x), Some(y)) => match pearson(x, y) {
                        Some(r) => rs.push(r),
                        None => excluded += 1,
                    },
                    _ => excluded += 1,
                }
            }
            if excluded > 0 {
                log::info!(
                    "profile consistency {}-{}: {excluded} learner(s) excluded",
                    bp.cases()[a].id,
                    bp.cases()[b].id
                );
            }
            all.extend_from_slice(&rs);
            rows.push(ProfileRow {
                case_a: bp.cases()[a].id.clone(),
                case_b: bp.cases()[b].id.clone(),
                excluded,
                summary: fisher_z_mean_ci(&rs),
            });
        }
    }
    (rows, fisher_z_mean_ci(&all))
}

/// Δd (log scale) and Δc summaries per (rater, theta-group).
pub fn rater_shift_summary(draws: &PosteriorDraws, bp: &Blueprint) -> (Vec<RaterShiftRow>, Vec<RaterShiftRow>) {
    let dims = draws.dims();
    let table = |block: &str| {
        let mut rows = Vec::new();
        for j in 0..dims.n_raters {
            for (g, group) in bp.theta_groups().iter().enumerate() {
                rows.push(RaterShiftRow {
                    rater: j + 1,
                    group: group.id.clone(),
                    shift: Interval::of(&pooled(draws, &format!("{block}[{},{}]", j + 1, g + 1))),
                });
            }
        }
        rows
    };
    (table("delta_d"), table("delta_c"))
}

/// Runs every diagnostic. Case-conditional estimates, ICCs and item flags use
/// the posterior mean of the draws; `truth` enables the recovery table.
pub fn analyze(
    draws: &PosteriorDraws,
    bp: &Blueprint,
    ds: &RatingsDataset,
    truth: Option<&NaturalParams>,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let dims = draws.dims();
    if dims.n_dims != bp.n_dims()
        || dims.n_cases != bp.n_cases()
        || dims.n_groups != bp.n_groups()
        || dims.n_thresholds != bp.n_threshold_groups()
        || dims.n_learners != ds.n_learners()
        || dims.n_raters != ds.n_raters()
    {
        return Err(Error::Mismatch(format!(
            "draws have {dims:?}, design has {} dims, {} cases, {} groups, {} threshold groups, {} learners, {} raters",
            bp.n_dims(),
            bp.n_cases(),
            bp.n_groups(),
            bp.n_threshold_groups(),
            ds.n_learners(),
            ds.n_raters()
        )));
    }
    if let Some(t) = truth {
        if t.dims() != dims {
            return Err(Error::Mismatch(format!(
                "truth has {:?}, draws have {dims:?}",
                t.dims()
            )));
        }
    }
    if !(opts.u_min < opts.u_max && opts.u_points >= 2) {
        return Err(Error::Config(
            "ICC grid needs u_min < u_max and at least two points".into(),
        ));
    }

    let est = draws.mean_natural();
    let (case_shifts, naive_case_means) = case_shift_summary(draws, bp);
    let cct = case_conditional_thetas(ds, bp, &est, &opts.map);
    if cct.n_unconverged() > 0 {
        log::warn!("{} case-conditional estimates did not converge", cct.n_unconverged());
    }
    let (consistency_by_dim, consistency_agg) = between_learner_consistency(&cct, bp, opts.n_perm, opts.perm_seed);
    let (profile_consistency, profile_overall) = within_learner_profile_consistency(&cct, bp);
    let (rater_dd, rater_dc) = rater_shift_summary(draws, bp);

    let grid = u_grid(opts.u_min, opts.u_max, opts.u_points);
    let icc: Vec<IccCurve> = (0..bp.n_items()).map(|l| icc_curve(l, &est, bp, &grid)).collect();
    let item_flags = (0..bp.n_items())
        .map(|l| {
            let at_zero = icc_curve(l, &est, bp, &[0.0]).latent[0];
            ItemFlagRow {
                item: bp.item(l).id.clone(),
                flag: classify(&at_zero),
                p_lowest: at_zero[0],
                p_highest: at_zero[at_zero.len() - 1],
            }
        })
        .collect();

    Ok(AnalysisReport {
        options: *opts,
        n_learners: dims.n_learners,
        n_dims: dims.n_dims,
        recovery: truth.map(|t| recovery_correlations(&est, t)),
        theta_corr_truth: truth.map(theta_corr_matrix),
        theta_corr_est: theta_corr_matrix(&est),
        case_shifts,
        naive_case_means,
        case_conditional_unconverged: cct.n_unconverged(),
        consistency_by_dim,
        consistency_agg,
        profile_consistency,
        profile_overall,
        rater_dd,
        rater_dc,
        item_flags,
        icc,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(header).map_err(|e| Error::parse(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn matrix_rows(m: &CorrMatrix) -> Vec<Vec<String>> {
    m.iter()
        .enumerate()
        .map(|(a, row)| {
            std::iter::once((a + 1).to_string())
                .chain(row.iter().map(|v| opt(*v)))
                .collect()
        })
        .collect()
}

fn matrix_header(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once(prefix.to_string())
        .chain((1..=n).map(|k| format!("{prefix}{k}")))
        .collect()
}

/// Keeps item ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || "-_.".contains(ch) {
                ch
            } else {
                '_'
            }
        })
        .collect()
}

impl AnalysisReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `analysis.json` and the CSV tables into `dir`, returning every
    /// file written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let icc_dir = dir.join("icc");
        std::fs::create_dir_all(&icc_dir).map_err(|e| Error::io(&icc_dir, e))?;
        let mut files = Vec::new();
        let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            write_table(&path, header, rows)?;
            files.push(path);
            Ok(())
        };

        if let Some(rec) = &self.recovery {
            emit(
                "recovery.csv",
                &["dim", "n", "r", "p_value"],
                rec.iter()
                    .map(|r| vec![r.dim.to_string(), r.n.to_string(), opt(r.r), opt(r.p_value)])
                    .collect(),
            )?;
        }
        let dim_header = matrix_header("dim", self.n_dims);
        let dim_header: Vec<&str> = dim_header.iter().map(String::as_str).collect();
        if let Some(m) = &self.theta_corr_truth {
            emit("theta_corr_truth.csv", &dim_header, matrix_rows(m))?;
        }
        emit("theta_corr_est.csv", &dim_header, matrix_rows(&self.theta_corr_est))?;
        emit(
            "case_shifts.csv",
            &["case", "dim", "mean", "lower", "upper", "coverage"],
            self.case_shifts
                .iter()
                .map(|r| {
                    vec![
                        r.case.clone(),
                        r.dim.to_string(),
                        r.shift.mean.to_string(),
                        r.shift.lower.to_string(),
                        r.shift.upper.to_string(),
                        r.coverage.to_string(),
                    ]
                })
                .chain(self.naive_case_means.iter().map(|m| {
                    vec![
                        m.case.clone(),
                        "all".into(),
                        m.mean_shift.to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]
                }))
                .collect(),
        )?;
        emit(
            "consistency_by_dim.csv",
            &["dim", "case_a", "case_b", "n", "r", "p_perm"],
            self.consistency_by_dim
                .iter()
                .map(|c| {
                    vec![
                        c.dim.to_string(),
                        c.case_a.clone(),
                        c.case_b.clone(),
                        c.n.to_string(),
                        opt(c.r),
                        opt(c.p_perm),
                    ]
                })
                .collect(),
        )?;
        let case_header = matrix_header("case", self.consistency_agg.len());
        let case_header: Vec<&str> = case_header.iter().map(String::as_str).collect();
        emit("consistency_agg.csv", &case_header, matrix_rows(&self.consistency_agg))?;
        let profile_row = |a: &str, b: &str, excluded: String, s: Option<&MeanCi>| {
            vec![
                a.to_string(),
                b.to_string(),
                s.map_or(0, |s| s.n).to_string(),
                excluded,
                opt(s.map(|s| s.mean)),
                opt(s.map(|s| s.lower)),
                opt(s.map(|s| s.upper)),
            ]
        };
        emit(
            "profile_consistency.csv",
            &["case_a", "case_b", "n", "excluded", "mean_r", "lower", "upper"],
            self.profile_consistency
                .iter()
                .map(|r| profile_row(&r.case_a, &r.case_b, r.excluded.to_string(), r.summary.as_ref()))
                .chain(std::iter::once(profile_row(
                    "all",
                    "all",
                    String::new(),
                    self.profile_overall.as_ref(),
                )))
                .collect(),
        )?;
        let shift_rows = |rows: &[RaterShiftRow]| {
            rows.iter()
                .map(|r| {
                    vec![
                        r.rater.to_string(),
                        r.group.clone(),
                        r.shift.mean.to_string(),
                        r.shift.lower.to_string(),
                        r.shift.upper.to_string(),
                    ]
                })
                .collect()
        };
        let shift_header = ["rater", "group", "mean", "lower", "upper"];
        emit("rater_dd.csv", &shift_header, shift_rows(&self.rater_dd))?;
        emit("rater_dc.csv", &shift_header, shift_rows(&self.rater_dc))?;
        emit(
            "item_flags.csv",
            &["item", "flag", "p_lowest", "p_highest"],
            self.item_flags
                .iter()
                .map(|f| {
                    vec![
                        f.item.clone(),
                        f.flag.to_string(),
                        f.p_lowest.to_string(),
                        f.p_highest.to_string(),
                    ]
                })
                .collect(),
        )?;
        let icc_header = [
            "u",
            "latent_1",
            "latent_2",
            "latent_3",
            "latent_4",
            "latent_5",
            "observed_1",
            "observed_2",
            "observed_3",
            "observed_4",
            "observed_5",
        ];
        for curve in &self.icc {
            let rows = curve
                .u
                .iter()
                .zip(curve.latent.iter().zip(&curve.observed))
                .map(|(u, (lat, obs))| {
                    std::iter::once(u.to_string())
                        .chain(lat.iter().chain(obs).map(f64::to_string))
                        .collect()
                })
                .collect();
            emit(&format!("icc/{}.csv", file_stem(&curve.item)), &icc_header, rows)?;
        }

        let json = dir.join("analysis.json");
        std::fs::write(&json, self.to_json_string()).map_err(|e| Error::io(&json, e))?;
        files.push(json);
        Ok(files)
    }
}
