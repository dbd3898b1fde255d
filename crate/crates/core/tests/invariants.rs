use cqrnn::datagen::{
    censor_fleet, censor_partial, gen_synthetic, gen_trip_table, true_quantile, MixtureQuantiles,
    Noise, SyntheticSpec,
};
use cqrnn::losses::{censored_qr_nll, tilted_loss, tilted_nll, CensoredPoint, QuantileLevel, Side};
use cqrnn::metrics::{interval_metrics, point_metrics};
use cqrnn::models::{negate_features, predict_rows, InitScheme, MirrorWrapper, NetSpec, Tape};
use cqrnn::normal::std_normal_quantile;
use cqrnn::replicate::{ground_truth_coverage, UNIT_GAUSSIAN_MIL};
use cqrnn::tobit::{tobit_quantiles, TobitModel};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn level() -> impl Strategy<Value = f64> {
    0.001f64..0.999
}

fn noise() -> impl Strategy<Value = Noise> {
    prop_oneof![
        Just(Noise::StandardGaussian),
        Just(Noise::Heteroskedastic),
        Just(Noise::GaussianMixture),
        Just(Noise::Zero),
    ]
}

fn mixture_mode() -> impl Strategy<Value = MixtureQuantiles> {
    prop_oneof![
        Just(MixtureQuantiles::Exact),
        Just(MixtureQuantiles::ClosedForm)
    ]
}

proptest! {
    #[test]
    fn tilted_loss_is_nonnegative_and_zero_only_at_origin(r in -1e6f64..1e6, t in level()) {
        let theta = QuantileLevel::new(t).unwrap();
        let l = tilted_loss(r, theta);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, r == 0.0);
    }

    #[test]
    fn median_tilted_loss_is_half_absolute_error(r in -1e6f64..1e6) {
        prop_assert_eq!(tilted_loss(r, QuantileLevel::new(0.5).unwrap()), 0.5 * r.abs());
    }

    #[test]
    fn tilted_loss_mirror_symmetry(r in -1e3f64..1e3, t in level()) {
        let a = tilted_loss(r, QuantileLevel::new(t).unwrap());
        let b = tilted_loss(-r, QuantileLevel::new(1.0 - t).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn censored_loss_without_censoring_is_tilted_loss(
        rows in prop::collection::vec((-50f64..50.0, -50f64..50.0), 1..40),
        t in level(),
    ) {
        let theta = QuantileLevel::new(t).unwrap();
        let points: Vec<CensoredPoint> =
            rows.iter().map(|&(y, _)| CensoredPoint::new(y, f64::NEG_INFINITY, false)).collect();
        let targets: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let preds: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let c = censored_qr_nll(&points, &preds, theta, false).unwrap();
        let plain = tilted_nll(&targets, &preds, theta).unwrap();
        prop_assert!((c - plain).abs() <= 1e-9 * plain.abs().max(1.0));
    }

    #[test]
    fn generated_datasets_satisfy_the_clamp_and_reproduce(
        noise in noise(),
        mode in mixture_mode(),
        n in 1usize..400,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec::new(noise, n, seed).with_mixture_quantiles(mode);
        let a = gen_synthetic(&spec).unwrap();
        a.validate().unwrap();
        for i in 0..n {
            let ys = a.y_star.as_ref().unwrap()[i];
            prop_assert_eq!(a.y[i], ys.max(0.0));
            prop_assert_eq!(a.censored[i], ys <= 0.0);
            prop_assert_eq!(a.tau[i], 0.0);
        }
        let b = gen_synthetic(&spec).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn true_quantile_is_monotone_in_level(
        noise in noise(),
        x1 in prop_oneof![Just(-1.0), Just(1.0)],
        x2 in -4f64..4.0,
        t1 in level(),
        t2 in level(),
    ) {
        let x = [1.0, x1, x2];
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(true_quantile(noise, lo, &x).unwrap() <= true_quantile(noise, hi, &x).unwrap());
    }

    #[test]
    fn partial_censoring_never_raises_a_value(
        series in prop::collection::vec(0f64..500.0, 1..200),
        gamma in 0f64..=1.0,
        c in (0.01f64..0.99, 0.01f64..0.99),
        seed in any::<u64>(),
    ) {
        let (c1, c2) = if c.0 <= c.1 { c } else { (c.1, c.0) };
        let ds = censor_partial(&series, gamma, c1, c2, seed).unwrap();
        ds.validate().unwrap();
        prop_assert_eq!(ds.side, Side::Right);
        for (i, &v) in series.iter().enumerate() {
            prop_assert!(ds.y[i] <= v);
            prop_assert_eq!(ds.y_star.as_ref().unwrap()[i], v);
        }
        let k = ds.censored.iter().filter(|&&c| c).count();
        prop_assert_eq!(k, ((gamma * series.len() as f64).round() as usize).min(series.len()));
    }

    #[test]
    fn fleet_censoring_never_raises_a_count(alpha in 0f64..0.95, seed in any::<u64>()) {
        let trips = gen_trip_table(60, 40, 2.0, 0.3, seed).unwrap();
        let ds = censor_fleet(&trips, alpha, seed ^ 1).unwrap();
        ds.validate().unwrap();
        let ys = ds.y_star.as_ref().unwrap();
        prop_assert!(ds.y.iter().zip(ys).all(|(y, s)| y <= s));
        prop_assert!(ds.censored.iter().all(|&c| c));
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..100)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let m = point_metrics(&pred, &truth).unwrap();
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
    }

    #[test]
    fn coverage_is_invariant_under_increasing_maps(
        rows in prop::collection::vec((-5f64..5.0, 0f64..4.0, -8f64..8.0), 1..100),
    ) {
        let lower: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let upper: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let f = |v: &Vec<f64>| v.iter().map(|&t| t * t * t + t).collect::<Vec<_>>();
        let a = interval_metrics(&lower, &upper, &y).unwrap();
        let b = interval_metrics(&f(&lower), &f(&upper), &f(&y)).unwrap();
        prop_assert_eq!(a.icp, b.icp);
        prop_assert!((0.0..=1.0).contains(&a.icp));
        prop_assert!(a.mil >= 0.0);
    }

    #[test]
    fn tobit_quantiles_are_affine_in_the_normal_quantile(
        beta in prop::collection::vec(-3f64..3.0, 3),
        x2 in -3f64..3.0,
        sigma in 0.1f64..5.0,
        t1 in level(),
        t2 in level(),
    ) {
        prop_assume!((t1 - t2).abs() > 1e-6);
        let model = TobitModel { beta, sigma, side: Side::Left };
        let x = [1.0, -1.0, x2];
        let mean = model.mean(&x).unwrap();
        for t in [t1, t2] {
            let q = tobit_quantiles(&model, &x, t).unwrap();
            let expected = mean + sigma * std_normal_quantile(t).unwrap();
            prop_assert!((q - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(tobit_quantiles(&model, &x, lo).unwrap() < tobit_quantiles(&model, &x, hi).unwrap());
    }

    #[test]
    fn evaluation_dropout_is_the_identity(
        weights in prop::collection::vec(-3f64..3.0, 4),
        feats in prop::collection::vec(-3f64..3.0, 3),
    ) {
        let mut net = NetSpec::regularized().build(4).unwrap();
        net.params_mut().copy_from_slice(&weights);
        let mut x = vec![1.0];
        x.extend(&feats);
        let dot: f64 = weights.iter().zip(&x).map(|(w, v)| w * v).sum();
        prop_assert!((net.forward(&x).unwrap() - dot).abs() <= 1e-12);
        let unmasked = net.forward_train(&x, None, &mut Tape::new()).unwrap();
        prop_assert_eq!(unmasked, net.forward(&x).unwrap());
    }

    #[test]
    fn mirroring_twice_restores_predictions(
        seed in any::<u64>(),
        feats in prop::collection::vec(-3f64..3.0, 7),
        lstm in any::<bool>(),
    ) {
        let spec = if lstm { NetSpec::lstm() } else { NetSpec::elu() };
        let net = spec.build(8).unwrap().with_init(InitScheme::StandardNormal { seed });
        let mut x = vec![1.0];
        x.extend(&feats);
        let wrapper = MirrorWrapper::new(net.clone());
        let twice = -wrapper.predict(&negate_features(&x)).unwrap();
        prop_assert!((twice - net.forward(&x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn lstm_outputs_ignore_batch_order(
        seed in any::<u64>(),
        rows in prop::collection::vec(-3f64..3.0, 2..12),
        shift in 1usize..11,
    ) {
        let net = NetSpec::lstm().build(8).unwrap().with_init(InitScheme::StandardNormal { seed });
        // one constant lag window per sample
        let batch: Vec<Vec<f64>> = rows.iter().map(|&v| {
            let mut x = vec![1.0];
            x.extend([v; 7]);
            x
        }).collect();
        let mut rotated = batch.clone();
        let k = shift % batch.len();
        rotated.rotate_left(k);
        let a = predict_rows(&net, &batch).unwrap();
        let mut b = predict_rows(&net, &rotated).unwrap();
        b.rotate_right(k);
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn true_quantile_pair_covers_ninety_percent(noise in noise(), seed in any::<u64>()) {
        prop_assume!(noise != Noise::Zero);
        let icp = ground_truth_coverage(noise, 10_000, seed, MixtureQuantiles::Exact).unwrap();
        prop_assert!((icp - 0.90).abs() <= 0.02, "{noise:?}: {icp}");
    }

    #[test]
    fn closed_form_mixture_pair_covers_its_analytic_share(seed in any::<u64>()) {
        // weighted-sum noise of sd sqrt(0.8125) against bounds of sd sqrt(0.625)
        let n = Normal::new(0.0, 1.0).unwrap();
        let half = 0.625f64.sqrt() * n.inverse_cdf(0.95);
        let oracle = 2.0 * n.cdf(half / 0.8125f64.sqrt()) - 1.0;
        let icp = ground_truth_coverage(Noise::GaussianMixture, 10_000, seed, MixtureQuantiles::ClosedForm).unwrap();
        prop_assert!((icp - oracle).abs() <= 0.015, "{icp} vs {oracle}");
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn mixture_noise(mode: MixtureQuantiles) -> Vec<f64> {
    let ds = gen_synthetic(
        &SyntheticSpec::new(Noise::GaussianMixture, 200_000, 7).with_mixture_quantiles(mode),
    )
    .unwrap();
    ds.x.iter()
        .zip(ds.y_star.unwrap())
        .map(|(x, ys)| ys - x.iter().sum::<f64>())
        .collect()
}

#[test]
fn exact_mixture_noise_has_the_mixture_variance() {
    // 0.75 * 1 + 0.25 * 4
    let sd = sample_sd(&mixture_noise(MixtureQuantiles::Exact));
    assert!((sd - 1.75f64.sqrt()).abs() < 0.01, "{sd}");
}

#[test]
fn closed_form_mixture_noise_is_a_weighted_sum() {
    // 0.75^2 * 1 + 0.25^2 * 4
    let eps = mixture_noise(MixtureQuantiles::ClosedForm);
    let sd = sample_sd(&eps);
    assert!((sd - 0.8125f64.sqrt()).abs() < 0.01, "{sd}");
    // the published scoring uses the narrower sqrt(0.75^2 + 0.25^2) scale
    let half = 0.625f64.sqrt() * Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.95);
    let inside = eps.iter().filter(|e| e.abs() <= half).count() as f64 / eps.len() as f64;
    let oracle = 2.0 * Normal::new(0.0, 0.8125f64.sqrt()).unwrap().cdf(half) - 1.0;
    assert!((inside - oracle).abs() < 0.005, "{inside} vs {oracle}");
}

#[test]
fn unit_gaussian_interval_length_matches_statrs() {
    let oracle = 2.0 * Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.95);
    assert!((UNIT_GAUSSIAN_MIL - oracle).abs() < 1e-12);
}

#[test]
fn normal_quantile_matches_statrs_on_a_grid() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        let ours = std_normal_quantile(p).unwrap();
        assert!((ours - n.inverse_cdf(p)).abs() < 1e-9, "p = {p}");
    }
}
