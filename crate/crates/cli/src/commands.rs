use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hrmsdt_core::analysis::{self, AnalysisOptions};
use hrmsdt_core::design::{load_blueprint, load_ratings, write_blueprint, write_ratings};
use hrmsdt_core::model::gradcheck::{check_gradient, GradCheckReport, GradTolerance};
use hrmsdt_core::model::{LikelihoodMode, Model, PriorConfig};
use hrmsdt_core::sampler::{read_draws, run_chains, write_draws, FitReport, SamplerConfig};
use hrmsdt_core::simulator::{dims_for, simulate as run_simulation, SimConfig, SimTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::manifest::{hash_outputs, Manifest, Step};
use crate::{AnalyzeArgs, CheckGradArgs, FitArgs, SimulateArgs};

/// A run finished but failed one of its diagnostic thresholds.
#[derive(Debug)]
pub struct DiagnosticFailure(pub String);

impl fmt::Display for DiagnosticFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DiagnosticFailure {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<DiagnosticFailure>().is_some() {
        return 2;
    }
    for cause in e.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if let Some(hrmsdt_core::Error::Io { .. }) = cause.downcast_ref::<hrmsdt_core::Error>() {
            return 3;
        }
    }
    1
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("failed to read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("failed to parse {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("settings serialize") + "\n";
    std::fs::write(path, text).with_context(|| format!("failed to write {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("failed to create {}", dir.display()))
}

fn settings<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("settings serialize")
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { cfg.$field = v; })*};
    }
    set!(seed => seed, learners => n_learners, dims => n_dims, cases => n_cases, raters => n_raters,
         items_per_case => items_per_case, universal_items_per_case => universal_items_per_case,
         min_items_per_dim => min_items_per_dim, loadings => loadings);
    if a.groups.is_some() {
        cfg.n_groups = a.groups;
    }
    if a.omega.is_some() {
        cfg.omega_override = a.omega;
    }
    cfg.validate()?;
    let sim = run_simulation(&cfg)?;

    let run = &a.out;
    create_dir(run)?;
    let mut files = vec![write_json(&run.join("sim_config.json"), &cfg)?];
    let bp_path = run.join("blueprint.json");
    write_blueprint(&bp_path, &sim.blueprint)?;
    let ratings_path = run.join("ratings.csv");
    write_ratings(&ratings_path, &sim.dataset, &sim.blueprint)?;
    let truth_path = run.join("truth.json");
    sim.truth.write(&truth_path)?;
    files.extend([bp_path, ratings_path, truth_path]);

    let mut manifest = Manifest::load_or_default(run)?;
    manifest.record(
        "simulate",
        Step {
            settings: settings(&cfg),
            inputs: Default::default(),
            outputs: hash_outputs(run, &files)?,
        },
    );
    manifest.write(run)?;
    println!(
        "simulated {} learners x {} items x {} raters ({} records) into {}",
        sim.dataset.n_learners(),
        sim.blueprint.n_items(),
        sim.dataset.n_raters(),
        sim.dataset.records().len(),
        run.display()
    );
    Ok(())
}

/// Everything `fit` resolves before sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub sampler: SamplerConfig,
    pub prior: PriorConfig,
    pub likelihood: LikelihoodMode,
    pub max_rhat: f64,
    pub max_divergence_rate: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            prior: PriorConfig::default(),
            likelihood: LikelihoodMode::default(),
            max_rhat: 1.05,
            max_divergence_rate: 0.01,
        }
    }
}

/// Threshold violations in a fit report, one message each.
pub fn threshold_failures(report: &FitReport, cfg: &FitConfig) -> Vec<String> {
    let mut out = Vec::new();
    let high: Vec<&str> = report
        .parameters
        .iter()
        .filter(|p| p.rhat > cfg.max_rhat)
        .map(|p| p.name.as_str())
        .collect();
    if !high.is_empty() {
        out.push(format!(
            "{} parameter(s) with R-hat > {} (max {:.4}; first: {})",
            high.len(),
            cfg.max_rhat,
            report.max_rhat,
            high[..high.len().min(5)].join(", ")
        ));
    }
    if report.divergence_rate > cfg.max_divergence_rate {
        out.push(format!(
            "{} divergent draws ({:.2}%) exceed the cap of {:.2}%",
            report.n_divergent,
            100.0 * report.divergence_rate,
            100.0 * cfg.max_divergence_rate
        ));
    }
    out
}

fn input_path(explicit: &Option<PathBuf>, run: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| run.join(name))
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(p) = &a.prior {
        cfg.prior = PriorConfig::load(p)?;
    }
    let s = &mut cfg.sampler;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { s.$field = v; })*};
    }
    set!(seed => base_seed, chains => n_chains, warmup => n_warmup, draws => n_draws,
         target_accept => target_accept, max_depth => max_tree_depth);
    if let Some(m) = a.likelihood {
        cfg.likelihood = m;
    }
    if let Some(v) = a.max_rhat {
        cfg.max_rhat = v;
    }
    if let Some(v) = a.max_divergence_rate {
        cfg.max_divergence_rate = v;
    }
    cfg.sampler.validate()?;
    cfg.prior.validate()?;

    let run = &a.out;
    create_dir(run)?;
    let mut manifest = Manifest::load_or_default(run)?;
    let bp_path = input_path(&a.blueprint, run, "blueprint.json");
    let ratings_path = input_path(&a.ratings, run, "ratings.csv");
    let bp = load_blueprint(&bp_path)?;
    let ds = load_ratings(&ratings_path, &bp)?;
    let inputs = [&bp_path, &ratings_path]
        .into_iter()
        .map(|p| manifest.verify_input(run, "fit", p))
        .collect::<Result<_>>()?;

    let model = Model::with_mode(&bp, &ds, cfg.prior.clone(), cfg.likelihood);
    log::info!(
        "fitting {} parameters: {} chains x ({} warmup + {} draws), {} likelihood",
        model.dim(),
        cfg.sampler.n_chains,
        cfg.sampler.n_warmup,
        cfg.sampler.n_draws,
        cfg.likelihood
    );
    let draws = run_chains(&model, &cfg.sampler)?;
    let report = FitReport::new(&draws, &cfg.sampler, &cfg.likelihood.to_string());

    let mut files = vec![write_json(&run.join("fit_config.json"), &cfg)?];
    let draws_dir = run.join("draws");
    if draws_dir.exists() {
        for stale in std::fs::read_dir(&draws_dir).with_context(|| format!("failed to read {}", draws_dir.display()))? {
            let stale = stale?.path();
            if stale.extension().is_some_and(|e| e == "csv") {
                std::fs::remove_file(&stale).with_context(|| format!("failed to remove {}", stale.display()))?;
            }
        }
    }
    files.extend(write_draws(&draws_dir, &draws)?);
    let report_path = run.join("fit_report.json");
    report.write(&report_path)?;
    files.push(report_path);

    manifest.record(
        "fit",
        Step {
            settings: settings(&cfg),
            inputs,
            outputs: hash_outputs(run, &files)?,
        },
    );
    manifest.write(run)?;

    println!(
        "max R-hat {:.4}, min bulk ESS {:.0}, min tail ESS {:.0}, {} divergent, mean accept {:.3}",
        report.max_rhat, report.min_ess_bulk, report.min_ess_tail, report.n_divergent, report.mean_accept_stat
    );
    if report.low_ess {
        log::warn!("effective sample size is low; consider more draws");
    }
    let failures = threshold_failures(&report, &cfg);
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        log::warn!("{f}");
    }
    if a.warn_only {
        Ok(())
    } else {
        Err(DiagnosticFailure(failures.join("; ")).into())
    }
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mut opts: AnalysisOptions = match &a.config {
        Some(p) => read_json(p)?,
        None => AnalysisOptions::default(),
    };
    if let Some(s) = a.seed {
        opts.perm_seed = s;
    }
    if let Some(n) = a.n_perm {
        opts.n_perm = n;
    }
    let run = &a.out;
    let fit_cfg_path = run.join("fit_config.json");
    opts.map.mode = match a.likelihood {
        Some(m) => m,
        None if fit_cfg_path.exists() => read_json::<FitConfig>(&fit_cfg_path)?.likelihood,
        None => LikelihoodMode::default(),
    };

    let manifest_before = Manifest::load_or_default(run)?;
    let bp_path = input_path(&a.blueprint, run, "blueprint.json");
    let ratings_path = input_path(&a.ratings, run, "ratings.csv");
    let draws_dir = input_path(&a.draws, run, "draws");
    let truth_path = match (&a.truth, a.no_truth) {
        (Some(p), _) => Some(p.clone()),
        (None, false) if run.join("truth.json").exists() => Some(run.join("truth.json")),
        _ => None,
    };

    let bp = load_blueprint(&bp_path)?;
    let ds = load_ratings(&ratings_path, &bp)?;
    let draws = read_draws(&draws_dir, dims_for(&bp, ds.n_learners(), ds.n_raters()))?;
    let truth = truth_path.as_ref().map(|p| SimTruth::load(p, &bp)).transpose()?;

    let mut read: Vec<PathBuf> = vec![bp_path, ratings_path];
    for c in 0..draws.n_chains() {
        read.push(hrmsdt_core::sampler::export::chain_file(&draws_dir, c));
    }
    read.extend(truth_path);
    let inputs = read
        .iter()
        .map(|p| manifest_before.verify_input(run, "analyze", p))
        .collect::<Result<_>>()?;

    let report = analysis::analyze(&draws, &bp, &ds, truth.as_ref().map(|t| &t.params), &opts)?;
    let out_dir = run.join("analysis");
    if out_dir.exists() {
        std::fs::remove_dir_all(&out_dir).with_context(|| format!("failed to clear {}", out_dir.display()))?;
    }
    let files = report.write(&out_dir)?;

    let mut manifest = manifest_before;
    manifest.record(
        "analyze",
        Step {
            settings: settings(&opts),
            inputs,
            outputs: hash_outputs(run, &files)?,
        },
    );
    manifest.write(run)?;

    match &report.recovery {
        Some(rows) => {
            let rs: Vec<String> = rows
                .iter()
                .map(|r| r.r.map_or_else(|| "NA".into(), |v| format!("{v:.3}")))
                .collect();
            println!("recovery r by dimension: {}", rs.join(" "));
        }
        None => println!("recovery unavailable (no truth file)"),
    }
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(())
}

/// The small instance used by `check-grad`: 6 learners, 3 dimensions,
/// 2 cases of 6 items, 2 raters.
pub fn grad_check_config(seed: u64) -> SimConfig {
    SimConfig {
        n_learners: 6,
        n_dims: 3,
        n_cases: 2,
        n_raters: 2,
        items_per_case: 6,
        universal_items_per_case: 3,
        min_items_per_dim: 2,
        seed,
        ..Default::default()
    }
}

#[derive(Debug, Serialize)]
struct GradCheckOutput {
    likelihood: LikelihoodMode,
    seed: u64,
    passed: bool,
    worst_parameter: Option<String>,
    #[serde(flatten)]
    report: GradCheckReport,
}

pub fn check_grad(a: CheckGradArgs) -> Result<()> {
    let sim = run_simulation(&grad_check_config(a.seed))?;
    let model = Model::with_mode(&sim.blueprint, &sim.dataset, PriorConfig::default(), a.likelihood);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x9e37_79b9);
    let points: Vec<Vec<f64>> = (0..a.points)
        .map(|_| {
            (0..model.dim())
                .map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let flip = a.inject_sign_flip;
    let report = check_gradient(
        |z| model.log_posterior(z),
        |z| {
            let mut g = vec![0.0; z.len()];
            model.log_posterior_grad(z, &mut g);
            if let Some(k) = flip {
                if k < g.len() {
                    g[k] = -g[k];
                }
            }
            g
        },
        &points,
        GradTolerance::default(),
    );
    let worst_parameter = report.worst.as_ref().map(|w| {
        format!(
            "{} (coordinate {})",
            model.layout().block_of(w.coordinate),
            w.coordinate
        )
    });
    let out = GradCheckOutput {
        likelihood: a.likelihood,
        seed: a.seed,
        passed: report.passed(),
        worst_parameter,
        report,
    };
    let text = serde_json::to_string_pretty(&out).expect("report serializes");
    println!("{text}");
    if let Some(p) = &a.out {
        std::fs::write(p, text + "\n").with_context(|| format!("failed to write {}", p.display()))?;
    }
    if out.passed {
        Ok(())
    } else {
        Err(DiagnosticFailure(format!(
            "{} gradient coordinate(s) disagree with finite differences; worst: {}",
            out.report.failures,
            out.worst_parameter.as_deref().unwrap_or("?")
        ))
        .into())
    }
}
