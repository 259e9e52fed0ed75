use ctquant_core::stats::{
    auroc, auroc_point, bland_altman, clopper_pearson, icc_gap, icc_point, mae,
    mae_permutation_test, pearson, sample_size_mae, BootstrapConfig, IccForm, PairedMeasurements,
    Ratings,
};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut s, mut p, mut n) = (0.0, 0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                if scores[i] > scores[j] {
                    s += 1.0;
                } else if scores[i] == scores[j] {
                    s += 0.5;
                }
            }
        }
    }
    s / (p * n) as f64
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn shuffled_labels_give_chance_auroc() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scores: Vec<f64> = (0..1000).map(|_| normal_sample(&mut rng)).collect();
    let labels: Vec<bool> = (0..1000).map(|_| rng.random::<bool>()).collect();
    let a = auroc_point(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() < 0.05, "{a}");
    let ci = auroc(&scores, &labels, &BootstrapConfig { n_boot: 500, ..Default::default() }).unwrap();
    assert!(ci.lo <= a && a <= ci.hi);
}

#[test]
fn icc_recovers_variance_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let s = 3.0 * normal_sample(&mut rng);
            (0..3).map(|_| s + normal_sample(&mut rng)).collect()
        })
        .collect();
    let (v, _) = icc_point(&Ratings::from_rows(rows), IccForm::TwoWayRandomAbsolute).unwrap();
    assert!((v - 0.9).abs() < 0.02, "{v}");
}

#[test]
fn noisy_model_widens_the_icc_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut raters = Vec::new();
    let mut with_model = Vec::new();
    for _ in 0..120 {
        let truth = 30.0 + 6.0 * normal_sample(&mut rng);
        let r: Vec<f64> = (0..3).map(|_| truth + 0.5 * normal_sample(&mut rng)).collect();
        let mut m = r.clone();
        m.push(truth + 8.0 * normal_sample(&mut rng));
        raters.push(r);
        with_model.push(m);
    }
    let cfg = BootstrapConfig { n_boot: 2000, seed: 1, level: 0.95 };
    let g = icc_gap::<f64>(
        &Ratings::from_rows(raters.clone()),
        &Ratings::from_rows(with_model),
        IccForm::default(),
        &cfg,
    )
    .unwrap();
    assert!(g.hi > 0.05, "{g:?}");

    let avg: Vec<Vec<f64>> = raters
        .iter()
        .map(|r| {
            let mut m = r.clone();
            m.push(r.iter().sum::<f64>() / 3.0);
            m
        })
        .collect();
    let g = icc_gap::<f64>(&Ratings::from_rows(raters), &Ratings::from_rows(avg), IccForm::default(), &cfg)
        .unwrap();
    assert!(g.hi < 0.05, "{g:?}");
}

#[test]
fn bland_altman_seeded_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(258);
    let noise = Normal::new(0.5, 2.0).unwrap();
    let model: Vec<f64> = (0..258).map(|_| 40.0).collect();
    let truth: Vec<f64> = model.iter().map(|m| m + noise.sample(&mut rng)).collect();
    let p = PairedMeasurements::from_pairs(&model, &truth).unwrap();
    let b = bland_altman(&p, 5.0).unwrap();
    assert!((b.mean_diff - 0.5).abs() < 0.25, "{}", b.mean_diff);
    assert!(b.loa_lo < b.mean_diff && b.mean_diff < b.loa_hi);
}

#[test]
fn pearson_interval_coverage() {
    let rho: f64 = 0.8;
    let (mut covered, mut total) = (0, 0.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..100 {
            let x = normal_sample(&mut rng);
            let y = rho * x + (1.0 - rho * rho).sqrt() * normal_sample(&mut rng);
            xs.push(x);
            ys.push(y);
        }
        let r = pearson(&xs, &ys, 0.95).unwrap();
        total += r.point;
        if r.lo <= rho && rho <= r.hi {
            covered += 1;
        }
    }
    assert!(covered >= 90, "{covered}");
    assert!((total / 100.0 - rho).abs() < 0.02, "{total}");
}

#[test]
fn permutation_test_is_calibrated() {
    let mut below = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a: Vec<f64> = (0..20).map(|_| normal_sample(&mut rng).abs()).collect();
        let b: Vec<f64> = (0..20).map(|_| normal_sample(&mut rng).abs()).collect();
        if mae_permutation_test(&a, &b, 999, seed).unwrap().p_value < 0.05 {
            below += 1;
        }
    }
    let frac = below as f64 / 200.0;
    assert!((frac - 0.05).abs() <= 0.04, "{frac}");
}

#[test]
fn doubled_sd_needs_more_subjects() {
    let small = sample_size_mae(1.58, 1.09, 2.0, 0.95).unwrap();
    let large = sample_size_mae(1.58, 2.18, 2.0, 0.95).unwrap();
    // Re-derive the larger size with an independent scan.
    let t = |df: f64| {
        statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::StudentsT::new(0.0, 1.0, df).unwrap(),
            0.975,
        )
    };
    let oracle = (2..10_000usize)
        .find(|&n| 1.58 + t((n - 1) as f64) * 2.18 / (n as f64).sqrt() <= 2.0)
        .unwrap();
    assert_eq!(large, oracle);
    let ratio = large as f64 / small as f64;
    assert!((3.5..4.5).contains(&ratio), "{small} -> {large}");
}

#[test]
fn bootstrap_seed_moves_bounds_little() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model: Vec<f64> = (0..150).map(|_| 30.0 + 2.0 * normal_sample(&mut rng)).collect();
    let truth: Vec<f64> = model.iter().map(|m| m + 1.5 * normal_sample(&mut rng)).collect();
    let p = PairedMeasurements::from_pairs(&model, &truth).unwrap();
    let a = mae(&p, &BootstrapConfig::with_seed(1)).unwrap();
    let b = mae(&p, &BootstrapConfig::with_seed(2)).unwrap();
    let again = mae(&p, &BootstrapConfig::with_seed(1)).unwrap();
    assert_eq!(a, again);
    // 0.5 percentage points of the point estimate.
    assert!((a.lo - b.lo).abs() < 0.005 * a.point, "{a:?} {b:?}");
    assert!((a.hi - b.hi).abs() < 0.005 * a.point, "{a:?} {b:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_equals_pair_counting(
        data in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 4.0).collect();
        let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
        let has_both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        prop_assume!(has_both);
        prop_assert_eq!(auroc_point(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn icc_ignores_subject_order(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 3..30),
        seed in any::<u64>()
    ) {
        let (a, _) = icc_point(&Ratings::from_rows(rows.clone()), IccForm::default()).unwrap();
        let mut shuffled = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let (b, _) = icc_point(&Ratings::from_rows(shuffled), IccForm::default()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn mae_ignores_swapping_model_and_truth(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..40)
    ) {
        let m: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let t: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let cfg = BootstrapConfig { n_boot: 200, seed: 3, level: 0.95 };
        let a = mae(&PairedMeasurements::from_pairs(&m, &t).unwrap(), &cfg).unwrap();
        let b = mae(&PairedMeasurements::from_pairs(&t, &m).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_interval_contains_point_and_is_monotone(x in 0u64..300, extra in 0u64..300) {
        let n = x + extra + 1;
        let (lo, hi) = clopper_pearson(x, n, 0.95).unwrap();
        let p = x as f64 / n as f64;
        prop_assert!(lo <= p && p <= hi);
        let (lo_more, _) = clopper_pearson(x + 1, n + 1, 0.95).unwrap();
        prop_assert!(lo_more >= lo);
    }
}
