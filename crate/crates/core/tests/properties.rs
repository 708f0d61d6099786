mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use disparity_id::divergence::{
    c_function, objective_type1, objective_type2, raf, rescale, residual_from_logs, residuals_from_logs,
    trim, type2_term, EstimatorType, Measure, ResidualSet,
};
use disparity_id::features::delta;
use disparity_id::*;

fn measure() -> impl Strategy<Value = Measure> {
    prop_oneof![Just(Measure::Ld), Just(Measure::Hd), Just(Measure::Pcs)]
}

fn residuals(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(-1.0), Just(0.0), -1.0..30.0f64], 1..max)
}

fn spec(measure: Measure, estimator: EstimatorType, lo: f64, hi: f64, beta: f64) -> DivergenceSpec {
    DivergenceSpec {
        measure,
        estimator,
        trim_low: lo,
        trim_high: hi,
        beta,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn residuals_never_below_minus_one(log_g in -2000.0..2000.0f64, log_f in -2000.0..2000.0f64) {
        let d = residual_from_logs(log_g, log_f);
        prop_assert!(d.is_finite() && d >= -1.0);
    }

    #[test]
    fn trim_keeps_the_expected_count(values in residuals(150), lo in 0.0..0.45f64, hi in 0.0..0.45f64) {
        let m = values.len();
        let n_lo = (lo * m as f64).floor() as usize;
        let n_hi = (hi * m as f64).floor() as usize;
        let set = ResidualSet::new(values).unwrap();
        match trim(&set, lo, hi) {
            Ok(t) => {
                prop_assert_eq!(t.kept().len(), m - n_lo - n_hi);
                prop_assert!(t.kept().windows(2).all(|w| w[0] < w[1]));
                // every kept value lies between every dropped low and high value
                let kept_min = t.kept_residuals().fold(f64::INFINITY, f64::min);
                let kept_max = t.kept_residuals().fold(f64::NEG_INFINITY, f64::max);
                let dropped: Vec<f64> = (0..m).filter(|i| !t.kept().contains(i)).map(|i| t.residuals()[i]).collect();
                prop_assert!(dropped.iter().all(|&d| d <= kept_min || d >= kept_max));
            }
            Err(_) => prop_assert!(n_lo + n_hi >= m),
        }
    }

    #[test]
    fn rescale_preserves_sign_and_order(values in residuals(80), beta in 0.05..1.5f64) {
        let set = ResidualSet::new(values).unwrap();
        let r = rescale(&set, beta);
        prop_assert_eq!(r.kept(), set.kept());
        for (&a, &b) in set.residuals().iter().zip(r.residuals()) {
            prop_assert_eq!(a.signum() == b.signum() || a == 0.0, true);
            prop_assert!(b >= -1.0);
        }
        let order = |xs: &[f64]| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]).then(i.cmp(&j)));
            idx
        };
        prop_assert_eq!(order(set.residuals()), order(r.residuals()));
        let same = rescale(&set, 1.0);
        prop_assert_eq!(same.residuals(), set.residuals());
    }

    #[test]
    fn c_is_strictly_convex(m in measure(), a in -0.999..10.0f64, b in -0.999..10.0f64) {
        prop_assume!((a - b).abs() > 1e-3);
        let c = |x| c_function(m, x).unwrap();
        prop_assert!(c(0.5 * (a + b)) < 0.5 * (c(a) + c(b)));
    }

    #[test]
    fn raf_is_increasing(m in measure(), a in -0.99..10.0f64, gap in 1e-4..5.0f64) {
        prop_assert!(raf(m, a + gap).unwrap() > raf(m, a).unwrap());
    }

    #[test]
    fn type2_term_equals_c_over_ratio(m in measure(), d in -0.9..50.0f64) {
        let direct = c_function(m, d).unwrap() / (d + 1.0);
        prop_assert!((type2_term(m, d) - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn ld_type1_ignores_scaling_of_g(
        log_g in prop::collection::vec(-20.0..5.0f64, 40),
        offsets in prop::collection::vec(-3.0..3.0f64, 120),
        shift in -5.0..5.0f64,
        hi in 0.0..0.4f64,
    ) {
        // continuous offsets keep residuals free of exact ties
        let speakers: Vec<Vec<f64>> = offsets
            .chunks(40)
            .map(|o| log_g.iter().zip(o).map(|(g, d)| g + d).collect())
            .collect();
        let s = spec(Measure::Ld, EstimatorType::TypeI, 0.0, hi, 1.0);
        let score = |g: &[f64]| -> Vec<f64> {
            speakers
                .iter()
                .map(|f| {
                    let r = trim(&residuals_from_logs(g, f).unwrap(), 0.0, hi).unwrap();
                    objective_type1(&s, &r, f).unwrap()
                })
                .collect()
        };
        let shifted: Vec<f64> = log_g.iter().map(|g| g + shift).collect();
        let (a, b) = (score(&log_g), score(&shifted));
        let best = |v: &[f64]| (0..v.len()).fold(0, |m, i| if v[i] > v[m] { i } else { m });
        prop_assert_eq!(best(&a), best(&b));
    }

    #[test]
    fn neutral_residuals_give_neutral_scores(n in 1usize..100, m in measure()) {
        let set = ResidualSet::new(vec![0.0; n]).unwrap();
        let log_f = vec![-1.0; n];
        let t1 = objective_type1(&spec(m, EstimatorType::TypeI, 0.0, 0.0, 1.0), &set, &log_f).unwrap();
        match m {
            Measure::Ld => prop_assert_eq!(t1, -(n as f64)),
            Measure::Hd => prop_assert_eq!(t1, n as f64),
            Measure::Pcs => prop_assert_eq!(t1, -(n as f64)),
        }
        prop_assert_eq!(objective_type2(&spec(m, EstimatorType::TypeII, 0.0, 0.0, 1.0), &set).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_component_collapses(mean in -5.0..5.0f64, var in 0.1..5.0f64, x in -10.0..10.0f64) {
        let one = GmmModel::single(vec![mean], vec![var]).unwrap();
        let two = GmmModel::new(vec![0.5, 0.5], vec![vec![mean], vec![mean]], vec![vec![var], vec![var]]).unwrap();
        prop_assert!((one.log_density(&[x]).unwrap() - two.log_density(&[x]).unwrap()).abs() < 1e-12);
        prop_assert!((one.log_density(&[x]).unwrap() - common::naive_log_density(&one, &[x])).abs() < 1e-12);
    }

    #[test]
    fn mean_log_likelihood_ignores_duplication(seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = common::mixture_data(&mut rng, 3, 2, 40);
        let doubled = x.concat(&x).unwrap();
        let model = em_fit(&x, &EmConfig { num_components: 2, max_iters: 5, ..EmConfig::speaker_default() }).unwrap();
        let a = model.mean_log_likelihood(&x).unwrap();
        let b = model.mean_log_likelihood(&doubled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn em_is_reproducible(seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = common::mixture_data(&mut rng, 2, 3, 60);
        let config = EmConfig { num_components: 3, max_iters: 15, seed, ..EmConfig::speaker_default() };
        let a = em_fit(&x, &config).unwrap();
        let b = em_fit(&x, &config).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pct_preserves_norms_and_trace(seed in 0u64..1000, dim in 2usize..8) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = common::correlated_data(&mut rng, dim, 50);
        let p = pct_compute(&x).unwrap();
        let y = pct_apply(&p, &x).unwrap();
        for (a, b) in x.frames().zip(y.frames()) {
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((na - nb).abs() <= 1e-10 * na.max(1.0));
        }
        let trace = |c: Vec<Vec<f64>>| (0..dim).map(|i| c[i][i]).sum::<f64>();
        let (tx, ty) = (trace(common::covariance(&x)), trace(common::covariance(&y)));
        prop_assert!((tx - ty).abs() <= 1e-8 * tx);
        prop_assert_eq!(pct_compute(&x).unwrap(), p);
    }

    #[test]
    fn delta_of_constant_is_zero(value in -5.0..5.0f64, frames in 2usize..20) {
        let x = FeatureMatrix::from_frame_major(3, vec![value; 3 * frames], 0).unwrap();
        let d = delta(&x).unwrap();
        prop_assert!(d.as_frame_major().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decision_independent_of_model_order(scores in prop::collection::vec(-100.0..100.0f64, 1..8), rot in 0usize..8) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("s{i}")).collect();
        let map: BTreeMap<String, f64> = ids.iter().cloned().zip(scores.iter().copied()).collect();
        let n = scores.len();
        let rotated: BTreeMap<String, f64> = (0..n).map(|i| {
            let j = (i + rot) % n;
            (ids[j].clone(), scores[j])
        }).collect();
        let a = Decision::from_scores(map).unwrap();
        let b = Decision::from_scores(rotated).unwrap();
        prop_assert_eq!(&a.predicted, &b.predicted);
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(a.scores[&a.predicted], top);
    }

    #[test]
    fn fusion_of_one_map_keeps_its_winner(scores in prop::collection::vec(-100.0..100.0f64, 2..8)) {
        let map: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("s{i}"), *s)).collect();
        let single = Decision::from_scores(map.clone()).unwrap();
        for fusion in [Fusion::Standardized, Fusion::Sum] {
            prop_assert_eq!(&combine(std::slice::from_ref(&map), fusion).unwrap().predicted, &single.predicted);
        }
    }
}
