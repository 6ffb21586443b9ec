use hrmsdt_core::design::{RatingRecord, RatingsDataset};
use hrmsdt_core::model::gradcheck::{check_gradient, GradTolerance};
use hrmsdt_core::model::{marginal_rating_pmf, LikelihoodMode, Model, NaturalParams, PriorConfig};
use hrmsdt_core::simulator::{simulate, SimConfig, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_sim(seed: u64) -> Simulation {
    // N=6, L=12, J=2, C=2, P=3
    let cfg = SimConfig {
        n_learners: 6,
        n_dims: 3,
        n_cases: 2,
        n_raters: 2,
        items_per_case: 6,
        universal_items_per_case: 3,
        min_items_per_dim: 2,
        seed,
        ..Default::default()
    };
    simulate(&cfg).unwrap()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain enumeration over the five latent levels, written without any of the
/// library's pmf helpers.
fn brute_force(theta: &[f64], a: &[f64], gamma: &[f64], b: &[f64], d: f64, c: &[f64], y: usize) -> f64 {
    let s: f64 = (0..a.len()).map(|p| (theta[p] + gamma[p]) * a[p]).sum();
    let cdf1 = |k: usize| match k {
        0 => 0.0,
        5 => 1.0,
        _ => logistic(b[k - 1] - s),
    };
    let mut total = 0.0;
    for eta in 1..=5usize {
        let p_eta = cdf1(eta) - cdf1(eta - 1);
        let loc = d * (eta as f64 - 1.0) / 4.0;
        let cdf2 = |k: usize| match k {
            0 => 0.0,
            5 => 1.0,
            _ => logistic(c[k - 1] - loc),
        };
        total += p_eta * (cdf2(y) - cdf2(y - 1));
    }
    total
}

fn random_params(sim: &Simulation, rng: &mut ChaCha8Rng) -> NaturalParams {
    let model = Model::new(&sim.blueprint, &sim.dataset, PriorConfig::default());
    let z: Vec<f64> = (0..model.dim())
        .map(|_| 1.2 * rng.sample::<f64, _>(StandardNormal))
        .collect::<Vec<f64>>();
    model.layout().to_natural(&z)
}

#[test]
fn marginal_pmf_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for rep in 0..20 {
        let sim = small_sim(rep);
        let bp = &sim.blueprint;
        for _ in 0..50 {
            let x = random_params(&sim, &mut rng);
            let i = rng.random_range(0..6);
            let j = rng.random_range(0..2);
            let l = rng.random_range(0..bp.n_items());
            let item = bp.item(l);
            let g = item.theta_group;
            let d_eff = x.d()[j] * x.delta_d(j)[g].exp();
            let c_eff: Vec<f64> = x.c(j).iter().map(|v| v + x.delta_c(j)[g]).collect();
            let pmf = marginal_rating_pmf(i, j, l, &x, bp);
            for y in 1..=5 {
                let want = brute_force(
                    x.theta(i),
                    &item.loading,
                    x.gamma(item.case),
                    &x.b(item.threshold_group),
                    d_eff,
                    &c_eff,
                    y,
                );
                worst = worst.max((pmf[y - 1] - want).abs());
            }
            instances += 1;
        }
    }
    assert_eq!(instances, 1000);
    assert!(worst <= 1e-14, "max abs difference {worst:e}");
}

#[test]
fn single_record_posterior_matches_hand_computation() {
    let sim = small_sim(3);
    let bp = &sim.blueprint;
    let rec = RatingRecord {
        learner: 0,
        rater: 1,
        item: 4,
        applicable: true,
        rating: Some(4),
    };
    let ds = RatingsDataset::new(vec![rec], 1, 2, bp).unwrap();
    let prior = PriorConfig::default();
    let model = Model::new(bp, &ds, prior.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = model.layout().to_natural(&z);

    let item = bp.item(4);
    let g = item.theta_group;
    let d_eff = x.d()[1] * x.delta_d(1)[g].exp();
    let c_eff: Vec<f64> = x.c(1).iter().map(|v| v + x.delta_c(1)[g]).collect();
    let lik = brute_force(
        x.theta(0),
        &item.loading,
        x.gamma(item.case),
        &x.b(item.threshold_group),
        d_eff,
        &c_eff,
        4,
    );
    let w = x.omega(item.case, g);
    let gate = logistic(w).ln();
    let want = model.log_prior(&z) + gate + lik.ln();
    let got = model.log_posterior(&z);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

fn gradient_report(mode: LikelihoodMode, seed: u64) -> hrmsdt_core::model::gradcheck::GradCheckReport {
    let sim = small_sim(seed);
    let model = Model::with_mode(&sim.blueprint, &sim.dataset, PriorConfig::default(), mode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let points: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            (0..model.dim())
                .map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        })
        .collect();
    check_gradient(
        |z| model.log_posterior(z),
        |z| {
            let mut g = vec![0.0; z.len()];
            model.log_posterior_grad(z, &mut g);
            g
        },
        &points,
        GradTolerance::default(),
    )
}

#[test]
fn gradient_matches_finite_differences_per_rating() {
    let r = gradient_report(LikelihoodMode::PerRating, 7);
    assert!(r.passed(), "{r:#?}");
    assert_eq!(r.points, 20);
}

#[test]
fn gradient_matches_finite_differences_shared_latent() {
    let r = gradient_report(LikelihoodMode::SharedLatent, 8);
    assert!(r.passed(), "{r:#?}");
}

#[test]
fn gradient_value_agrees_with_log_posterior() {
    let sim = small_sim(9);
    for mode in [LikelihoodMode::PerRating, LikelihoodMode::SharedLatent] {
        let model = Model::with_mode(&sim.blueprint, &sim.dataset, PriorConfig::default(), mode);
        let z = vec![0.1; model.dim()];
        let mut g = vec![0.0; model.dim()];
        assert_eq!(model.log_posterior_grad(&z, &mut g), model.log_posterior(&z));
    }
}

fn all_gated(sim: &Simulation) -> RatingsDataset {
    let records = sim
        .dataset
        .records()
        .iter()
        .map(|r| RatingRecord {
            applicable: false,
            rating: None,
            ..*r
        })
        .collect();
    RatingsDataset::new(records, 6, 2, &sim.blueprint).unwrap()
}

#[test]
fn all_gated_theta_gradient_is_prior_gradient() {
    let sim = small_sim(11);
    let ds = all_gated(&sim);
    let model = Model::new(&sim.blueprint, &ds, PriorConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut g = vec![0.0; z.len()];
    model.log_posterior_grad(&z, &mut g);
    for k in model.layout().theta.clone() {
        assert_eq!(g[k], -z[k]);
    }
    // theta does not enter the remaining terms
    let mut z2 = z.clone();
    for k in model.layout().theta.clone() {
        z2[k] = 0.0;
    }
    let theta_prior: f64 = model.layout().theta.clone().map(|k| -0.5 * z[k] * z[k]).sum();
    assert!((model.log_posterior(&z) - (model.log_posterior(&z2) + theta_prior)).abs() < 1e-9);
}

#[test]
fn gated_rating_values_do_not_matter() {
    let sim = small_sim(12);
    let mut ds = sim.dataset.clone();
    let gated: Vec<usize> = (0..ds.records().len())
        .filter(|&r| !ds.records()[r].applicable)
        .collect();
    assert!(!gated.is_empty());
    for mode in [LikelihoodMode::PerRating, LikelihoodMode::SharedLatent] {
        let model = Model::with_mode(&sim.blueprint, &sim.dataset, PriorConfig::default(), mode);
        let z = vec![0.3; model.dim()];
        let base = model.log_posterior(&z);
        let mut perturbed = ds.clone();
        for (n, &r) in gated.iter().enumerate() {
            perturbed.overwrite_gated_rating(r, Some((n % 5 + 1) as u8)).unwrap();
        }
        let model2 = Model::with_mode(&sim.blueprint, &perturbed, PriorConfig::default(), mode);
        assert_eq!(model2.log_posterior(&z).to_bits(), base.to_bits());
    }
    ds.overwrite_gated_rating(gated[0], None).unwrap();
}

#[test]
fn record_order_is_irrelevant() {
    let sim = small_sim(13);
    let mut records = sim.dataset.records().to_vec();
    records.reverse();
    let n = records.len();
    records.swap(0, n / 2);
    let shuffled = RatingsDataset::new(records, 6, 2, &sim.blueprint).unwrap();
    let a = Model::new(&sim.blueprint, &sim.dataset, PriorConfig::default());
    let b = Model::new(&sim.blueprint, &shuffled, PriorConfig::default());
    let z = vec![-0.2; a.dim()];
    assert_eq!(a.log_posterior(&z).to_bits(), b.log_posterior(&z).to_bits());
}

#[test]
fn non_finite_input_gives_negative_infinity() {
    let sim = small_sim(14);
    let model = Model::new(&sim.blueprint, &sim.dataset, PriorConfig::default());
    let mut z = vec![0.0; model.dim()];
    z[3] = f64::NAN;
    assert_eq!(model.log_posterior(&z), f64::NEG_INFINITY);
}

#[test]
fn extreme_points_stay_finite() {
    let sim = small_sim(15);
    let model = Model::new(&sim.blueprint, &sim.dataset, PriorConfig::default());
    for scale in [5.0, 20.0, 60.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(scale as u64);
        let z: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-scale..scale)).collect();
        let mut g = vec![0.0; z.len()];
        let lp = model.log_posterior_grad(&z, &mut g);
        assert!(lp.is_finite(), "scale {scale}");
        assert!(g.iter().all(|v| v.is_finite()), "scale {scale}");
    }
}
