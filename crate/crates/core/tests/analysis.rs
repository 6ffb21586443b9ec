use hrmsdt_core::analysis::*;
use hrmsdt_core::design::{Blueprint, ItemSpec, RatingRecord, RatingsDataset};
use hrmsdt_core::model::pmf::ordered_logit_pmf;
use hrmsdt_core::model::{ModelDims, NaturalParams};
use hrmsdt_core::sampler::PosteriorDraws;
use hrmsdt_core::simulator::{simulate, SimConfig, Simulation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

proptest! {
    #[test]
    fn pearson_agrees_with_two_pass(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let want = two_pass(&x, &y);
        prop_assume!(want.is_finite());
        let got = pearson(&x, &y).unwrap();
        prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        prop_assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn fisher_aggregate_stays_in_range(rs in prop::collection::vec(-1.0f64..=1.0, 1..20)) {
        let r = fisher_z_aggregate(&rs).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        let ci = fisher_z_mean_ci(&rs).unwrap();
        prop_assert!(ci.lower <= ci.mean && ci.mean <= ci.upper);
    }
}

#[test]
fn fisher_closed_form() {
    assert!((fisher_z_aggregate(&[0.0, 0.8]).unwrap() - 0.5).abs() <= 1e-15);
    assert_eq!(fisher_z_aggregate(&[0.42]), Some(0.42));
}

#[test]
fn fisher_ci_five_values() {
    // z-scale mean ± 1.96·sd/√5, back-transformed
    let ci = fisher_z_mean_ci(&[0.12, 0.35, 0.58, 0.41, 0.77]).unwrap();
    assert_eq!(ci.n, 5);
    assert!((ci.mean - 0.478_382_995_699_451_6).abs() < 1e-12);
    assert!((ci.lower - 0.219_623_668_488_946_52).abs() < 1e-12);
    assert!((ci.upper - 0.674_258_035_771_048).abs() < 1e-12);
}

#[test]
fn permutation_identical_vectors_hit_bound() {
    let x: Vec<f64> = (0..40).map(|k| (k as f64 * 0.37).sin()).collect();
    for n_perm in [99, 1000] {
        let p = permutation_p_value(&x, &x, n_perm, 5).unwrap();
        assert_eq!(p, 1.0 / (n_perm + 1) as f64);
    }
    assert_eq!(permutation_p_value(&x, &x, 200, 9), permutation_p_value(&x, &x, 200, 9));
}

#[test]
fn permutation_null_is_not_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut abs_r = Vec::new();
    let mut small_p = 0;
    for rep in 0..40 {
        let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        abs_r.push(pearson(&x, &y).unwrap().abs());
        if permutation_p_value(&x, &y, 200, rep).unwrap() < 0.05 {
            small_p += 1;
        }
    }
    abs_r.sort_by(f64::total_cmp);
    assert!(abs_r[20] < 0.2, "median |r| {}", abs_r[20]);
    assert!(small_p <= 6, "{small_p} of 40 null replicates significant");
}

#[test]
fn independent_columns_have_small_correlations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let m = correlation_matrix(&rows);
    for a in 0..6 {
        assert_eq!(m[a][a], Some(1.0));
        for b in 0..6 {
            assert_eq!(m[a][b], m[b][a]);
            if a != b {
                assert!(m[a][b].unwrap().abs() < 0.45);
            }
        }
    }
}

#[test]
fn ordered_logit_limits_and_monotonicity() {
    let b = [-1.3, -0.2, 0.4, 1.9];
    assert!(ordered_logit_pmf(&b, -30.0)[0] > 1.0 - 1e-12);
    assert!(ordered_logit_pmf(&b, 30.0)[4] > 1.0 - 1e-12);
    let grid = u_grid(-3.0, 3.0, 61);
    let mut prev = ordered_logit_pmf(&b, grid[0]);
    for &u in &grid[1..] {
        let p = ordered_logit_pmf(&b, u);
        assert!(p[0] <= prev[0] && p[4] >= prev[4]);
        prev = p;
    }
}

fn sim(n_cases: usize, seed: u64) -> Simulation {
    simulate(&SimConfig {
        n_learners: 12,
        n_dims: 3,
        n_cases,
        n_raters: 2,
        items_per_case: 9,
        universal_items_per_case: 0,
        min_items_per_dim: 2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn icc_curves_are_pmfs() {
    let s = sim(2, 4);
    let x = &s.truth.params;
    let grid = u_grid(-3.0, 3.0, 61);
    for l in 0..s.blueprint.n_items() {
        let c = icc_curve(l, x, &s.blueprint, &grid);
        for (lat, obs) in c.latent.iter().zip(&c.observed) {
            assert!((lat.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((obs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let far = icc_curve(l, x, &s.blueprint, &[-30.0]);
        assert!(far.latent[0][0] > 0.999);
    }
}

#[test]
fn map_without_ratings_is_prior_mode() {
    let s = sim(2, 5);
    let records: Vec<RatingRecord> = s
        .dataset
        .records()
        .iter()
        .map(|r| {
            if r.learner == 0 {
                RatingRecord {
                    applicable: false,
                    rating: None,
                    ..*r
                }
            } else {
                *r
            }
        })
        .collect();
    let ds = RatingsDataset::new(records, 12, 2, &s.blueprint).unwrap();
    let cct = case_conditional_thetas(&ds, &s.blueprint, &s.truth.params, &MapOptions::default());
    for q in 0..2 {
        assert_eq!(cct.get(q, 0).unwrap(), &[0.0, 0.0, 0.0]);
    }
}

#[test]
fn single_case_matches_full_data_map() {
    let s = sim(1, 6);
    let opts = MapOptions::default();
    let cct = case_conditional_thetas(&s.dataset, &s.blueprint, &s.truth.params, &opts);
    assert_eq!(cct.n_unconverged(), 0);
    for p in 0..3 {
        let (a, b): (Vec<f64>, Vec<f64>) = (0..12)
            .map(|i| {
                let full = map_theta(&s.dataset, &s.blueprint, &s.truth.params, i, &|_| true, &opts);
                assert!(full.converged);
                (cct.get(0, i).unwrap()[p], full.theta[p])
            })
            .unzip();
        assert!(pearson(&a, &b).unwrap() >= 0.99);
    }
}

/// Duplicates a one-case design into two identical cases with identical
/// ratings and zero case shifts.
fn duplicated(s: &Simulation) -> (Blueprint, RatingsDataset, NaturalParams) {
    let bp = &s.blueprint;
    let n_items = bp.n_items();
    // shared threshold groups across cases require the universal flag
    let mut items: Vec<ItemSpec> = bp
        .items()
        .iter()
        .map(|it| ItemSpec {
            universal: true,
            ..it.clone()
        })
        .collect();
    items.extend(bp.items().iter().map(|it| ItemSpec {
        id: format!("{}_copy", it.id),
        case: 1,
        universal: true,
        ..it.clone()
    }));
    let mut cases = bp.cases().to_vec();
    cases.push(hrmsdt_core::design::Descriptor {
        id: "copy".into(),
        label: String::new(),
    });
    let bp2 = Blueprint::new(bp.n_dims(), cases, bp.theta_groups().to_vec(), items).unwrap();
    let mut records = s.dataset.records().to_vec();
    records.extend(s.dataset.records().iter().map(|r| RatingRecord {
        item: r.item + n_items,
        ..*r
    }));
    let ds = RatingsDataset::new(records, 12, 2, &bp2).unwrap();

    let x = &s.truth.params;
    let dims = ModelDims::new(&bp2, &ds);
    let mut flat = Vec::new();
    for i in 0..12 {
        flat.extend_from_slice(x.theta(i));
    }
    flat.extend(std::iter::repeat_n(0.0, 2 * bp.n_dims()));
    for t in 0..bp.n_threshold_groups() {
        flat.extend_from_slice(&x.b(t));
    }
    flat.extend_from_slice(x.d());
    for j in 0..2 {
        flat.extend_from_slice(x.delta_d(j));
    }
    for j in 0..2 {
        flat.extend_from_slice(&x.c(j));
    }
    for j in 0..2 {
        flat.extend_from_slice(x.delta_c(j));
    }
    for _ in 0..2 {
        flat.extend((0..bp.n_groups()).map(|g| x.omega(0, g)));
    }
    (bp2, ds, NaturalParams::from_flat(dims, &flat).unwrap())
}

#[test]
fn identical_cases_give_identical_estimates() {
    let s = sim(1, 7);
    let (bp, ds, x) = duplicated(&s);
    let cct = case_conditional_thetas(&ds, &bp, &x, &MapOptions::default());
    for i in 0..12 {
        assert_eq!(cct.get(0, i), cct.get(1, i));
    }
    let (rows, overall) = within_learner_profile_consistency(&cct, &bp);
    let s = rows[0].summary.unwrap();
    assert!((s.mean - 1.0).abs() < 1e-9 && (s.upper - s.lower).abs() < 1e-9);
    assert!((overall.unwrap().mean - 1.0).abs() < 1e-9);
    let (cells, agg) = between_learner_consistency(&cct, &bp, 200, 1);
    for c in &cells {
        assert!((c.r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.p_perm, Some(1.0 / 201.0));
    }
    assert!((agg[0][1].unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn truth_passthrough_reproduces_generating_values() {
    let s = sim(3, 8);
    let x = &s.truth.params;
    let draws = PosteriorDraws::from_point(x);
    let report = analyze(&draws, &s.blueprint, &s.dataset, Some(x), &AnalysisOptions::default()).unwrap();

    for row in report.recovery.as_ref().unwrap() {
        assert!((row.r.unwrap() - 1.0).abs() < 1e-12);
        assert!(row.p_value.unwrap() < 1e-10);
    }
    for row in &report.case_shifts {
        let q = s.blueprint.cases().iter().position(|c| c.id == row.case).unwrap();
        let want = x.gamma(q)[row.dim - 1];
        assert_eq!(row.shift.mean, want);
        assert_eq!((row.shift.lower, row.shift.upper), (want, want));
        assert_eq!(row.coverage, s.blueprint.coverage(q, row.dim - 1));
    }
    for p in 1..=3 {
        let total: f64 = report
            .case_shifts
            .iter()
            .filter(|r| r.dim == p)
            .map(|r| r.shift.mean)
            .sum();
        assert!(total.abs() < 1e-10);
    }
    for (block, rows) in [("dd", &report.rater_dd), ("dc", &report.rater_dc)] {
        for j in 1..=2 {
            let total: f64 = rows.iter().filter(|r| r.rater == j).map(|r| r.shift.mean).sum();
            assert!(total.abs() < 1e-10, "{block} rater {j}");
        }
    }
    for row in &report.rater_dd {
        let g = s
            .blueprint
            .theta_groups()
            .iter()
            .position(|t| t.id == row.group)
            .unwrap();
        assert_eq!(row.shift.mean, x.delta_d(row.rater - 1)[g]);
    }
    assert_eq!(report.theta_corr_truth.as_ref(), Some(&report.theta_corr_est));
    assert_eq!(report.icc.len(), s.blueprint.n_items());
}

#[test]
fn report_without_truth_omits_recovery() {
    let s = sim(2, 9);
    let draws = PosteriorDraws::from_point(&s.truth.params);
    let opts = AnalysisOptions {
        n_perm: 50,
        ..Default::default()
    };
    let report = analyze(&draws, &s.blueprint, &s.dataset, None, &opts).unwrap();
    assert!(report.recovery.is_none() && report.theta_corr_truth.is_none());

    let dir = tempfile::tempdir().unwrap();
    let files = report.write(dir.path()).unwrap();
    assert!(!dir.path().join("recovery.csv").exists());
    for name in [
        "theta_corr_est.csv",
        "case_shifts.csv",
        "consistency_agg.csv",
        "item_flags.csv",
        "analysis.json",
    ] {
        assert!(files.contains(&dir.path().join(name)), "{name}");
    }
    let icc_files = std::fs::read_dir(dir.path().join("icc")).unwrap().count();
    assert_eq!(icc_files, s.blueprint.n_items());

    let again = analyze(&draws, &s.blueprint, &s.dataset, None, &opts).unwrap();
    assert_eq!(again.to_json_string(), report.to_json_string());
}

#[test]
fn mismatched_draws_are_rejected() {
    let a = sim(2, 10);
    let b = sim(3, 10);
    let draws = PosteriorDraws::from_point(&a.truth.params);
    let err = analyze(&draws, &b.blueprint, &b.dataset, None, &AnalysisOptions::default()).unwrap_err();
    assert!(err.to_string().contains("mismatch"), "{err}");
}

#[test]
fn item_flag_thresholds() {
    for (b, want) in [
        ([-10.0, -9.0, -8.0, -7.0], ItemFlag::NearCeiling),
        ([7.0, 8.0, 9.0, 10.0], ItemFlag::NearFloor),
        ([-2.0, -1.0, 1.0, 2.0], ItemFlag::Informative),
    ] {
        assert_eq!(classify(&ordered_logit_pmf(&b, 0.0)), want);
    }
}
