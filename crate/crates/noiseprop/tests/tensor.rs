use noiseprop::tensor::{conv_periodic, he_init_conv, receptive_field, BatchedField, ConvParams, SeedStream};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_field(seed: u64, batch: usize, extent: usize, dims: usize, channels: usize) -> BatchedField {
    let mut rng = SeedStream::new(seed).rng();
    let len = batch * extent.pow(dims as u32) * channels;
    let values = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    BatchedField::from_values(batch, extent, dims, channels, values).unwrap()
}

fn random_params(seed: u64, kernel: usize, dims: usize, c_in: usize, c_out: usize) -> ConvParams {
    let mut rng = SeedStream::new(seed).rng();
    let mut p = he_init_conv(kernel, dims, c_in, c_out, &mut rng).unwrap();
    for b in p.bias.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    p
}

/// Direct sum over taps and channels with explicit modular indexing.
fn brute_force_conv(input: &BatchedField, p: &ConvParams) -> Vec<f64> {
    let n = input.extent() as i64;
    let n_out = input.extent() / p.stride;
    let k = p.kernel as i64;
    let off = k / 2;
    let s = p.stride as i64;
    let wrap = |v: i64| v.rem_euclid(n) as usize;
    let mut out = Vec::new();
    for m in 0..input.batch() {
        if p.dims == 1 {
            for a in 0..n_out as i64 {
                for co in 0..p.out_channels {
                    let mut acc = p.bias[co];
                    for t in 0..k {
                        let src = wrap(s * a + t - off);
                        for ci in 0..p.in_channels {
                            acc += p.weight(t as usize, ci, co) * input.get(m, src, ci);
                        }
                    }
                    out.push(acc);
                }
            }
        } else {
            for a0 in 0..n_out as i64 {
                for a1 in 0..n_out as i64 {
                    for co in 0..p.out_channels {
                        let mut acc = p.bias[co];
                        for t0 in 0..k {
                            for t1 in 0..k {
                                let src = wrap(s * a0 + t0 - off) * n as usize + wrap(s * a1 + t1 - off);
                                let tap = (t0 * k + t1) as usize;
                                for ci in 0..p.in_channels {
                                    acc += p.weight(tap, ci, co) * input.get(m, src, ci);
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn he_init_variance_matches_fan_in() {
    // 10^6 entries: K=3, d=2, c_in=64, c_out = 1737
    let mut rng = SeedStream::new(11).rng();
    let p = he_init_conv(3, 2, 64, 1737, &mut rng).unwrap();
    let n = p.weights.len() as f64;
    assert!(n >= 1e6);
    let mean = p.weights.iter().sum::<f64>() / n;
    let var = p.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    let target: f64 = 2.0 / (9.0 * 64.0);
    assert!((target - 0.003_472_2).abs() < 1e-7);
    assert!((var / target - 1.0).abs() < 0.01, "variance {var} vs {target}");
}

#[test]
fn he_init_bias_is_zero_and_replayable() {
    let a = he_init_conv(3, 2, 5, 7, &mut SeedStream::new(3).rng()).unwrap();
    let b = he_init_conv(3, 2, 5, 7, &mut SeedStream::new(3).rng()).unwrap();
    assert!(a.bias.iter().all(|b| *b == 0.0));
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.weights.len(), 9 * 5 * 7);
}

#[test]
fn he_init_rejects_bad_counts() {
    let mut rng = SeedStream::new(0).rng();
    assert!(he_init_conv(2, 2, 3, 3, &mut rng).is_err());
    assert!(he_init_conv(3, 2, 0, 3, &mut rng).is_err());
    assert!(he_init_conv(3, 3, 1, 3, &mut rng).is_err());
}

#[test]
fn identity_kernel_returns_input() {
    let x = random_field(1, 3, 4, 2, 5);
    let y = conv_periodic(&x, &ConvParams::identity(2, 5).unwrap()).unwrap();
    assert_eq!(x, y);
}

#[test]
fn zero_input_gives_zero_output() {
    let x = BatchedField::zeros(2, 4, 2, 3).unwrap();
    let mut p = random_params(2, 3, 2, 3, 4);
    p.bias.iter_mut().for_each(|b| *b = 0.0);
    let y = conv_periodic(&x, &p).unwrap();
    assert!(y.values().iter().all(|v| *v == 0.0));
}

#[test]
fn kernel_with_first_tap_is_a_circular_shift() {
    let x = BatchedField::from_values(1, 4, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut p = ConvParams::zeros(3, 1, 1, 1).unwrap();
    p.weights = vec![1.0, 0.0, 0.0];
    let y = conv_periodic(&x, &p).unwrap();
    // output[a] = input[a - 1]
    assert_eq!(y.values(), &[4.0, 1.0, 2.0, 3.0]);
    assert!(max_abs_diff(y.values(), &brute_force_conv(&x, &p)) < 1e-12);
}

#[test]
fn conv_matches_brute_force_in_one_and_two_dims() {
    for (dims, extent, kernel, stride) in [(1, 6, 3, 1), (1, 6, 5, 2), (2, 4, 3, 1), (2, 6, 3, 2), (2, 5, 5, 1), (2, 1, 3, 1)] {
        let x = random_field(10 + dims as u64, 2, extent, dims, 3);
        let p = random_params(20, kernel, dims, 3, 4).with_stride(stride).unwrap();
        let y = conv_periodic(&x, &p).unwrap();
        assert_eq!(y.extent(), extent / stride);
        let d = max_abs_diff(y.values(), &brute_force_conv(&x, &p));
        assert!(d < 1e-12, "dims {dims} extent {extent} K {kernel} s {stride}: {d}");
    }
}

#[test]
fn conv_shape_errors() {
    let x = random_field(0, 1, 5, 2, 3);
    let p = random_params(0, 3, 2, 3, 2);
    assert!(conv_periodic(&x, &p.clone().with_stride(2).unwrap()).is_err());
    let wrong = random_params(0, 3, 2, 4, 2);
    assert!(conv_periodic(&x, &wrong).is_err());
}

#[test]
fn unit_receptive_field_is_the_input() {
    let x = random_field(4, 2, 3, 2, 4);
    let rf = receptive_field(&x, 1, 1).unwrap();
    assert_eq!(rf.values, x.values());
    assert_eq!(rf.width(), 4);
}

#[test]
fn receptive_field_product_equals_conv() {
    let x = random_field(5, 2, 4, 2, 3);
    for stride in [1, 2] {
        let p = random_params(6, 3, 2, 3, 5).with_stride(stride).unwrap();
        let rf = receptive_field(&x, 3, stride).unwrap();
        let via_rf = rf.apply(&p).unwrap();
        let direct = conv_periodic(&x, &p).unwrap();
        assert!(max_abs_diff(via_rf.values(), direct.values()) < 1e-12);
    }
}

#[test]
fn channel_index_sets_partition_columns() {
    let x = random_field(7, 1, 4, 2, 5);
    let rf = receptive_field(&x, 3, 1).unwrap();
    let mut all: Vec<usize> = (0..5).flat_map(|c| rf.channel_index_set(c)).collect();
    for c in 0..5 {
        assert_eq!(rf.channel_index_set(c).len(), 9);
    }
    all.sort();
    assert_eq!(all, (0..rf.width()).collect::<Vec<_>>());
}

#[test]
fn receptive_field_gram_trace_matches_feature_trace() {
    let x = random_field(8, 3, 7, 1, 4);
    let rf = receptive_field(&x, 5, 1).unwrap();
    let r = rf.width() as f64;
    let c = x.channels() as f64;
    // (1/R) tr Gram(rho) = (1/R) sum of squares of all RF entries
    let rf_trace: f64 = rf.values.iter().map(|v| v * v).sum::<f64>() / r;
    let feature_trace: f64 = x.values().iter().map(|v| v * v).sum::<f64>() / c;
    assert!((rf_trace - feature_trace).abs() < 1e-12 * feature_trace.max(1.0));
}

#[test]
fn receptive_field_preserves_channel_statistics() {
    for (dims, extent) in [(1, 9), (2, 5)] {
        let x = random_field(9, 2, extent, dims, 3);
        let rf = receptive_field(&x, 3, 1).unwrap();
        for c in 0..3 {
            let mut expected: Vec<f64> = (0..x.batch())
                .flat_map(|m| (0..x.sites()).map(move |s| (m, s)))
                .map(|(m, s)| x.get(m, s, c))
                .collect();
            expected.sort_by(f64::total_cmp);
            for i in rf.channel_index_set(c) {
                let mut col: Vec<f64> = (0..rf.rows()).map(|row| rf.get(row, i)).collect();
                col.sort_by(f64::total_cmp);
                assert_eq!(col, expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let u = random_field(seed, 2, 4, 2, 3);
        let v = random_field(seed + 1, 2, 4, 2, 3);
        let mut p = random_params(seed + 2, 3, 2, 3, 2);
        p.bias.iter_mut().for_each(|x| *x = 0.0);
        let combo = BatchedField::from_values(2, 4, 2, 3,
            u.values().iter().zip(v.values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = conv_periodic(&combo, &p).unwrap();
        let cu = conv_periodic(&u, &p).unwrap();
        let cv = conv_periodic(&v, &p).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(cu.values()).zip(cv.values()) {
            prop_assert!((l - (a * x + b * y)).abs() < 1e-12 * (1.0 + l.abs()));
        }
    }
}
