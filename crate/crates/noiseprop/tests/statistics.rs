mod common;

use common::{close, random_field, tiny_arch, tiny_input};
use noiseprop::propagation::{propagate, Activation, Family, Stage};
use noiseprop::statistics::{
    abs_first_moment, central_fourth_moment, channel_moments, chi_step_decomposition, coactivation_mixed_fraction,
    effective_rank, effective_rank_flagged, effective_rank_of_covariance, fit_exponential, fit_power_law,
    histogram_log_moment, log_increment_terms, merge, normalized_sensitivity, power_law_reference,
    residual_cross_term, second_moments, AccumulatorSet, Histogram, HistogramPolicy, LayerStats, Meter, Metric,
    StatsAccumulator,
};
use noiseprop::tensor::{BatchedField, SeedStream};
use proptest::prelude::*;
use rand::Rng;

fn field(batch: usize, extent: usize, dims: usize, channels: usize, values: Vec<f64>) -> BatchedField {
    BatchedField::from_values(batch, extent, dims, channels, values).unwrap()
}

#[test]
fn constant_field_moments() {
    let f = field(2, 2, 1, 3, vec![3.0; 12]);
    let m1 = channel_moments(&f, 1).unwrap();
    assert_eq!(m1.nu, 3.0);
    let m2 = channel_moments(&f, 2).unwrap();
    assert_eq!(m2.mu, 0.0);
    assert_eq!(m2.nu, 9.0);
    assert!(channel_moments(&f, 3).is_err());
}

#[test]
fn moments_match_double_loop() {
    let f = random_field(1, 2, 2, 1, 3);
    for p in [1u32, 2, 4] {
        let m = channel_moments(&f, p).unwrap();
        let mut nus = Vec::new();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|b| (0..2).map(move |s| (b, s))).map(|(b, s)| f.get(b, s, c)).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            let nu = vals.iter().map(|v| v.powi(p as i32)).sum::<f64>() / 4.0;
            let mu = vals.iter().map(|v| (v - mean).powi(p as i32)).sum::<f64>() / 4.0;
            assert!(close(m.noncentral[c], nu, 1e-12));
            assert!(close(m.central[c], mu, 1e-12));
            nus.push(nu);
        }
        assert!(close(m.nu, nus.iter().sum::<f64>() / 3.0, 1e-12));
    }
}

#[test]
fn centered_field_moments_coincide() {
    // each channel is {+a, -a} over the batch
    let mut vals = Vec::new();
    for sign in [1.0, -1.0] {
        vals.extend([1.5 * sign, -0.3 * sign, 2.0 * sign]);
    }
    let f = field(2, 1, 1, 3, vals);
    let m = channel_moments(&f, 2).unwrap();
    assert_eq!(m.noncentral, m.central);
}

#[test]
fn second_moment_identity_holds() {
    for seed in 0..10 {
        let mut f = random_field(seed, 3, 4, 2, 5);
        f.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v += (i % 5) as f64);
        let (nu2, mu2) = second_moments(&f);
        let m1 = channel_moments(&f, 1).unwrap();
        let sq = m1.noncentral.iter().map(|m| m * m).sum::<f64>() / 5.0;
        assert!((nu2 - mu2 - sq).abs() < 1e-12 * nu2);
    }
}

#[test]
fn abs_first_moment_examples() {
    assert_eq!(abs_first_moment(&field(1, 2, 1, 1, vec![-2.0, -2.0])), 2.0);
    assert_eq!(abs_first_moment(&field(1, 4, 1, 1, vec![1.0, -1.0, -1.0, 1.0])), 1.0);
    let f = random_field(2, 1000, 1, 1, 400);
    // folded normal mean by trapezoid integration of 2 x exp(-x^2/2)/sqrt(2 pi)
    let h = 1e-4;
    let folded: f64 = (0..200_000)
        .map(|i| {
            let x = i as f64 * h;
            let w = if i == 0 { 0.5 } else { 1.0 };
            w * 2.0 * x * (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
        })
        .sum();
    assert!((folded - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-6);
    assert!((abs_first_moment(&f) / folded - 1.0).abs() < 0.01);
}

#[test]
fn fourth_moment_of_gaussian_is_three() {
    let f = random_field(3, 2000, 1, 1, 100);
    let k = central_fourth_moment(&f) / second_moments(&f).1.powi(2);
    assert!((k - 3.0).abs() < 0.1, "{k}");
}

#[test]
fn rank_one_features_have_unit_rank() {
    let dir = [1.0, -2.0, 0.5, 3.0];
    let mut rng = SeedStream::new(4).rng();
    let vals: Vec<f64> = (0..50)
        .flat_map(|_| {
            let s: f64 = rng.random_range(-1.0..1.0);
            dir.iter().map(move |d| s * d).collect::<Vec<_>>()
        })
        .collect();
    let f = field(50, 1, 1, 4, vals);
    assert!((effective_rank(&f) - 1.0).abs() < 1e-9);
}

#[test]
fn injected_covariances() {
    let mut id = vec![0.0; 64];
    (0..8).for_each(|i| id[i * 8 + i] = 1.0);
    assert_eq!(effective_rank_of_covariance(&id, 8).value, 8.0);
    let mut k3 = vec![0.0; 64];
    (0..3).for_each(|i| k3[i * 8 + i] = 2.5);
    assert!((effective_rank_of_covariance(&k3, 8).value - 3.0).abs() < 1e-12);
    let zero = effective_rank_flagged(&field(3, 1, 1, 2, vec![1.0; 6]));
    assert_eq!(zero.value, 1.0);
    assert!(zero.zero_covariance);
}

#[test]
fn white_field_rank_near_width() {
    let f = random_field(5, 100_000, 1, 1, 8);
    let r = effective_rank(&f);
    assert!((7.0..=8.0).contains(&r), "{r}");
}

#[test]
fn sensitivity_examples() {
    assert_eq!(normalized_sensitivity(2.0, 5.0, 2.0, 5.0).unwrap().chi, 1.0);
    // constant rescaling of both fields
    let s = normalized_sensitivity(4.0 * 0.3, 4.0 * 7.0, 0.3, 7.0).unwrap();
    assert!((s.chi - 1.0).abs() < 1e-15);
    let a = normalized_sensitivity(0.7, 3.0, 0.2, 1.0).unwrap();
    let b = normalized_sensitivity(4.0 * 0.7, 3.0, 4.0 * 0.2, 1.0).unwrap();
    assert!((a.chi - b.chi).abs() < 1e-12);
    assert!((a.noise_factor - a.chi * a.chi).abs() < 1e-15);
    assert!((a.snr - 3.0 / 0.7).abs() < 1e-15);
    assert!(normalized_sensitivity(0.0, 1.0, 1.0, 1.0).is_err());
    assert!(normalized_sensitivity(1.0, 0.0, 1.0, 1.0).is_err());
}

#[test]
fn step_decomposition_multiplies() {
    let d = chi_step_decomposition(1.7, 2.3, 2.9).unwrap();
    assert!((d.delta_chi - d.delta_chi_bn * d.delta_chi_phi).abs() < 1e-15);
    assert!(chi_step_decomposition(0.0, 1.0, 1.0).is_err());
}

#[test]
fn increment_terms_examples() {
    let t = log_increment_terms(&[1.3; 5]).unwrap();
    assert!(t.m_under.abs() < 1e-15);
    assert!(t.s_under.iter().all(|s| s.abs() < 1e-15));

    let t = log_increment_terms(&[0.5, 2.0]).unwrap();
    assert!((t.m_bar - 1.25f64.ln()).abs() < 1e-15);
    assert!((t.m_under + 1.25f64.ln()).abs() < 1e-15);
    assert_eq!(t.s_under.len(), 2);

    let t = log_increment_terms(&[0.5, -1.0, 2.0, 0.0]).unwrap();
    assert_eq!(t.excluded, 2);
    assert!(log_increment_terms(&[1.0, -1.0]).is_err());
}

#[test]
fn coactivation_examples() {
    assert_eq!(coactivation_mixed_fraction(&field(2, 2, 1, 1, vec![1.0, 2.0, 3.0, 4.0])), 0.0);
    assert_eq!(coactivation_mixed_fraction(&field(2, 2, 1, 2, vec![1.0, -1.0, 2.0, 0.0, -1.0, 1.0, -2.0, 5.0])), 1.0);
    let f = random_field(6, 32, 8, 2, 16);
    let expected = 1.0 - 2.0 * 0.5f64.powi(32);
    assert!((coactivation_mixed_fraction(&f) - expected).abs() < 1e-6);
}

#[test]
fn cross_term_examples() {
    let skip = random_field(7, 3, 4, 1, 2);
    let zero = skip.zeros_like();
    assert_eq!(residual_cross_term(&skip, &zero).unwrap(), 0.0);
    let self_term = residual_cross_term(&skip, &skip).unwrap();
    assert!((self_term - second_moments(&skip).1).abs() < 1e-14);
    assert!(residual_cross_term(&skip, &random_field(1, 3, 4, 1, 3)).is_err());
}

#[test]
fn power_law_fits() {
    let exact: Vec<f64> = (0..=50).map(|l| 2.0 * (l.max(1) as f64).powf(0.3)).collect();
    let f = fit_power_law(&exact, 1..=50).unwrap();
    assert!((f.exponent - 0.3).abs() < 1e-9);
    assert!((f.intercept - 2f64.ln()).abs() < 1e-9);
    assert!((f.r_squared - 1.0).abs() < 1e-9);

    let mut rng = SeedStream::new(8).rng();
    let noisy: Vec<f64> = exact
        .iter()
        .map(|c| c * (1.0 + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)))
        .collect();
    assert!((fit_power_law(&noisy, 1..=50).unwrap().exponent - 0.3).abs() < 0.02);

    assert!(fit_power_law(&exact, 0..=10).is_err());
    assert!(fit_power_law(&exact, 3..=4).is_err());
    assert!(fit_power_law(&exact, 1..=60).is_err());
    assert!((power_law_reference(2f64.sqrt(), 2) - 1.5).abs() < 1e-12);
}

#[test]
fn exponential_fits() {
    let exact: Vec<f64> = (0..=40).map(|l| (0.05 * l as f64).exp()).collect();
    let f = fit_exponential(&exact, 0..=40).unwrap();
    assert!((f.rate - 0.05).abs() < 1e-12);
    let mut rng = SeedStream::new(9).rng();
    let noisy: Vec<f64> = exact
        .iter()
        .map(|c| c * (1.0 + 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal)))
        .collect();
    assert!((fit_exponential(&noisy, 0..=40).unwrap().rate / 0.05 - 1.0).abs() < 0.1);
    let mut bad = exact.clone();
    bad[10] = 0.0;
    assert!(fit_exponential(&bad, 0..=40).is_err());
}

#[test]
fn histogram_bins_and_conservation() {
    let mut h = Histogram::new(-1.0, 1.0, 4).unwrap();
    for v in [-5.0, -0.9, -0.1, 0.0, 0.6, 0.99, 7.0] {
        h.push(v);
    }
    assert_eq!(h.counts, vec![2, 1, 1, 3]);
    assert_eq!(h.total(), 7);
    assert_eq!(h.edges(1), (-0.5, 0.0));
    assert!(Histogram::new(1.0, 1.0, 3).is_err());
}

#[test]
fn accumulator_statistics() {
    let vals = [1.0, 4.0, -2.0, 3.5, 0.25];
    let mut a = StatsAccumulator::default();
    vals.iter().for_each(|v| a.push(*v));
    let mean = vals.iter().sum::<f64>() / 5.0;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((a.mean - mean).abs() < 1e-15);
    assert!((a.variance() - var).abs() < 1e-14);
    assert!((a.stderr() - (var / 5.0).sqrt()).abs() < 1e-14);
    assert_eq!(StatsAccumulator::single(2.0).variance(), 0.0);
}

#[test]
fn merge_examples() {
    let mut a = StatsAccumulator::default();
    [1.0, 2.0, 7.0].iter().for_each(|v| a.push(*v));
    assert_eq!(merge(&a, &StatsAccumulator::default()).unwrap(), a);
    assert_eq!(merge(&StatsAccumulator::default(), &a).unwrap(), a);

    let vals = [0.5, -3.0, 2.25, 9.0];
    let singles: Vec<_> = vals.iter().map(|v| StatsAccumulator::single(*v)).collect();
    let merged = merge(&merge(&singles[0], &singles[1]).unwrap(), &merge(&singles[2], &singles[3]).unwrap()).unwrap();
    let mut direct = StatsAccumulator::default();
    vals.iter().for_each(|v| direct.push(*v));
    assert_eq!(merged.count, 4);
    assert!(close(merged.mean, direct.mean, 1e-12));
    assert!(close(merged.m2, direct.m2, 1e-12));

    let h = StatsAccumulator::with_histogram(Histogram::new(0.0, 1.0, 2).unwrap());
    let g = StatsAccumulator::with_histogram(Histogram::new(0.0, 1.0, 3).unwrap());
    assert!(merge(&h, &g).is_err());
}

fn stats(layer: usize, values: &[(Metric, f64)]) -> LayerStats {
    LayerStats {
        layer,
        stage: Stage::Activation,
        values: values.to_vec(),
        degenerate: false,
    }
}

#[test]
fn accumulator_set_histograms() {
    let policy = HistogramPolicy {
        layers: vec![2],
        bins: 10,
        lo: -5.0,
        hi: 5.0,
    };
    let mut sets = Vec::new();
    for r in 0..7 {
        let mut s = AccumulatorSet::new(Some(policy.clone()));
        s.record(&stats(1, &[(Metric::LogNu2Ratio, 0.1 * r as f64)])).unwrap();
        s.record(&stats(2, &[(Metric::LogNu2Ratio, -0.3 * r as f64), (Metric::Chi, 1.0)])).unwrap();
        s.finish_realization();
        sets.push(s);
    }
    let set = AccumulatorSet::tree_merge(sets).unwrap();
    assert_eq!(set.realizations(), 7);
    let h = histogram_log_moment(&set, Stage::Activation, Metric::LogNu2Ratio, &[2]).unwrap();
    assert_eq!(h[0].1.total(), 7);
    assert!(histogram_log_moment(&set, Stage::Activation, Metric::LogNu2Ratio, &[1]).is_err());
    assert!(histogram_log_moment(&set, Stage::Activation, Metric::Chi, &[2]).is_err());
    assert!(set.get(2, Stage::Activation, Metric::Chi).unwrap().histogram.is_none());

    let mut single = AccumulatorSet::new(Some(policy));
    single.record(&stats(2, &[(Metric::LogNu2Ratio, 0.42)])).unwrap();
    let h = &histogram_log_moment(&single, Stage::Activation, Metric::LogNu2Ratio, &[2]).unwrap()[0].1;
    assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
}

#[test]
fn mean_curve_and_degenerate_counts() {
    let mut s = AccumulatorSet::new(None);
    s.record(&stats(1, &[(Metric::Chi, 2.0)])).unwrap();
    s.record(&stats(3, &[(Metric::Chi, 4.0)])).unwrap();
    s.record_degenerate(3);
    let curve = s.mean_curve(Stage::Activation, Metric::Chi, 3);
    assert!(curve[0].is_nan() && curve[2].is_nan());
    assert_eq!((curve[1], curve[3]), (2.0, 4.0));
    assert_eq!(s.degenerate_counts().get(&3), Some(&1));
    assert!(s.merge(&AccumulatorSet::new(Some(HistogramPolicy { layers: vec![], bins: 1, lo: 0.0, hi: 1.0 }))).is_err());
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), *m);
    }
    assert_eq!(Metric::DeltaChi.log_companion(), Some(Metric::LogDeltaChi));
    assert!("no_such_metric".parse::<Metric>().is_err());
}

fn measure(family: Family, activation: Activation, sigma: f64, seed: u64) -> Vec<LayerStats> {
    let arch = tiny_arch(family, 4, activation);
    let mut input = tiny_input(&arch, seed);
    input.noise.scale(sigma);
    let mut meter = Meter::new(family, activation, arch.residual_depth, None);
    propagate(&arch, input, SeedStream::new(seed))
        .unwrap()
        .flat_map(|s| meter.observe(&s.unwrap()).unwrap())
        .collect()
}

#[test]
fn meter_reference_layer_has_unit_chi() {
    for family in [Family::Vanilla, Family::BnFeedforward, Family::BnResnet, Family::ResnetNoBn] {
        let all = measure(family, Activation::Relu, 1.0, 1);
        assert_eq!(all[0].stage, Stage::Input);
        assert_eq!(all[0].get(Metric::Chi), Some(1.0));
    }
}

#[test]
fn meter_decomposition_is_exact() {
    for seed in 0..5 {
        let all = measure(Family::BnFeedforward, Activation::Relu, 1.0, seed);
        for s in all.iter().filter(|s| s.stage == Stage::Activation) {
            let norm = all.iter().find(|n| n.layer == s.layer && n.stage == Stage::Norm).unwrap();
            let (bn, phi) = (norm.get(Metric::DeltaChiBn).unwrap(), s.get(Metric::DeltaChiPhi).unwrap());
            assert!((s.get(Metric::DeltaChi).unwrap() - bn * phi).abs() < 1e-12);
        }
    }
}

#[test]
fn meter_linear_activation_step_is_neutral() {
    let all = measure(Family::BnFeedforward, Activation::Linear, 1.0, 3);
    for s in all.iter().filter(|s| s.stage == Stage::Activation) {
        assert!((s.get(Metric::DeltaChiPhi).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn meter_chi_is_invariant_to_noise_scale() {
    for family in [Family::Vanilla, Family::BnFeedforward, Family::BnResnet] {
        let a = measure(family, Activation::Relu, 1.0, 5);
        let b = measure(family, Activation::Relu, 1e-3, 5);
        for (x, y) in a.iter().zip(&b) {
            if let (Some(u), Some(v)) = (x.get(Metric::Chi), y.get(Metric::Chi)) {
                assert!((u - v).abs() < 1e-12 * u.max(1.0), "{u} {v}");
            }
        }
    }
}

#[test]
fn meter_values_stay_in_range() {
    for family in [Family::Vanilla, Family::BnResnet] {
        for s in measure(family, Activation::Relu, 1.0, 7) {
            if let Some(r) = s.get(Metric::ReffSignal) {
                assert!((1.0..=4.0).contains(&r));
            }
            if let Some(f) = s.get(Metric::CoactivationMixed) {
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}

#[test]
fn meter_flags_zero_signal() {
    let arch = tiny_arch(Family::Vanilla, 2, Activation::Relu);
    let mut input = tiny_input(&arch, 1);
    input.signal.values_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut meter = Meter::new(Family::Vanilla, Activation::Relu, 0, None);
    let stats: Vec<LayerStats> = propagate(&arch, input, SeedStream::new(1))
        .unwrap()
        .flat_map(|s| meter.observe(&s.unwrap()).unwrap())
        .collect();
    assert!(meter.is_degenerate());
    assert!(stats.iter().all(|s| s.degenerate && s.get(Metric::Chi).is_none()));
}

fn arb_acc() -> impl Strategy<Value = StatsAccumulator> {
    prop::collection::vec(-1e3f64..1e3, 0..20).prop_map(|v| {
        let mut a = StatsAccumulator::default();
        v.iter().for_each(|x| a.push(*x));
        a
    })
}

proptest! {
    #[test]
    fn merge_is_commutative(a in arb_acc(), b in arb_acc()) {
        let x = merge(&a, &b).unwrap();
        let y = merge(&b, &a).unwrap();
        prop_assert_eq!(x.count, y.count);
        prop_assert!(close(x.mean, y.mean, 1e-12));
        prop_assert!(close(x.m2, y.m2, 1e-12));
    }

    #[test]
    fn merge_is_associative(a in arb_acc(), b in arb_acc(), c in arb_acc()) {
        let x = merge(&merge(&a, &b).unwrap(), &c).unwrap();
        let y = merge(&a, &merge(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(x.count, y.count);
        prop_assert!(close(x.mean, y.mean, 1e-12));
        prop_assert!(close(x.m2, y.m2, 1e-9));
    }

    #[test]
    fn jensen_gap_is_never_positive(d in prop::collection::vec(1e-3f64..1e3, 2..50)) {
        let t = log_increment_terms(&d).unwrap();
        prop_assert!(t.m_under <= 0.0);
        prop_assert!(t.s_under.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn effective_rank_is_bounded(seed in 0u64..1000, c in 1usize..10) {
        let r = effective_rank(&random_field(seed, 3, 2, 1, c));
        prop_assert!(r >= 1.0 && r <= c as f64);
    }
}
