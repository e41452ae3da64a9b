use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    t(shape, &v)
}

/// Random values bounded away from zero so no ReLU/max kink sits within h.
fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    t(shape, &v)
}

fn check() -> GradCheck {
    GradCheck::default()
}

#[test]
fn matmul_identity_and_hand_values() {
    let tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(i2.matmul(a).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    let row = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let col = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    assert_eq!(row.matmul(col).unwrap().value().data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
    let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
    let err = a.matmul(b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let report = check()
            .run(|_, p| Ok(p[0].matmul(p[1])?.sum()), &[a, b])
            .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}

#[test]
fn elementwise_values() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    assert_eq!(a.sub(b).unwrap().value().data(), &[-2.0, -2.0]);
    let s = tape.constant(Tensor::scalar(10.0));
    assert_eq!(a.mul(s).unwrap().value().data(), &[10.0, 20.0]);
    assert_eq!(a.scale(0.5).value().data(), &[0.5, 1.0]);
    let bad = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    assert!(matches!(a.add(bad), Err(Error::Shape { .. })));
}

#[test]
fn product_rule_gradient() {
    let tape = Tape::new();
    let a = tape.param(Tensor::scalar(2.0));
    let b = tape.param(Tensor::scalar(3.0));
    let loss = a.mul(b).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(a).unwrap().item(), 3.0);
    assert_eq!(g.get(b).unwrap().item(), 2.0);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_away_from_zero(&[3, 5], &mut rng);
        let b = random(&[3, 5], &mut rng);
        let s = random(&[1], &mut rng);
        let w = random(&[3, 5], &mut rng);
        let report = check()
            .run(
                |_, p| {
                    let x = p[0].relu().mul(p[1])?.add(p[0])?.sub(p[1].scale(0.3))?.mul(p[2])?;
                    Ok(x.mul(p[3])?.sum())
                },
                &[a, b, s, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn relu_kink_coordinates_are_skipped() {
    let x = t(&[4], &[0.0, 1.5, -2.0, 0.0]);
    let cfg = GradCheck {
        skip_zero: true,
        ..GradCheck::default()
    };
    let report = cfg.run(|_, p| Ok(p[0].relu().sum()), &[x]).unwrap();
    assert_eq!(report.probed, 2);
    assert!(report.max_relative_error < 1e-8);
}

#[test]
fn quadratic_gradient_check() {
    let report = check()
        .run(|_, p| Ok(p[0].mul(p[0])?.sum()), &[Tensor::scalar(3.0)])
        .unwrap();
    assert!(report.max_relative_error < 1e-8, "{report:?}");
}

#[test]
fn concat_values_roundtrip_and_gradient() {
    let tape = Tape::new();
    let a = tape.constant(t(&[1, 1], &[1.0]));
    let b = tape.constant(t(&[1, 1], &[2.0]));
    assert_eq!(a.concat(b).unwrap().value().data(), &[1.0, 2.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random(&[3, 2], &mut rng);
    let x = tape.constant(m.clone());
    let z = tape.constant(Tensor::zeros(&[3, 4]));
    let back = x.concat(z).unwrap().slice_cols(0, 2).unwrap();
    assert_eq!(*back.value(), m);

    let c = tape.constant(Tensor::<f64>::zeros(&[2, 1]));
    assert!(matches!(a.concat(c), Err(Error::Shape { .. })));

    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 2], &mut rng);
        let b = random(&[3, 3], &mut rng);
        let w = random(&[5, 1], &mut rng);
        let report = check()
            .run(
                |_, p| {
                    let cat = p[0].concat(p[1])?;
                    let tail = cat.slice_cols(1, 5)?;
                    Ok(cat.matmul(p[2])?.sum().add(tail.mul(tail)?.sum())?)
                },
                &[a, b, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}

fn segment_scan(x: &Tensor<f64>, ids: &[usize], num: usize, max: bool) -> Vec<f64> {
    let cols = x.shape()[1];
    let mut out = Vec::new();
    for s in 0..num {
        for c in 0..cols {
            let vals: Vec<f64> = (0..ids.len())
                .filter(|&r| ids[r] == s)
                .map(|r| x.data()[r * cols + c])
                .collect();
            out.push(if max {
                vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            });
        }
    }
    out
}

#[test]
fn segment_max_values() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 0.0]));
    assert_eq!(x.segment_max(&[0, 0], 1).unwrap().value().data(), &[3.0, 2.0]);
    let y = tape.constant(t(&[3, 1], &[4.0, 5.0, 6.0]));
    assert_eq!(y.segment_max(&[0, 1, 2], 3).unwrap().value().data(), &[4.0, 5.0, 6.0]);
    assert!(matches!(
        y.segment_max(&[0, 0, 2], 3),
        Err(Error::EmptySegment { segment: 1, .. })
    ));
}

#[test]
fn segment_max_ties_route_to_lowest_row() {
    let tape = Tape::new();
    let x = tape.param(t(&[3, 1], &[5.0, 5.0, 1.0]));
    let m = x.segment_max(&[0, 0, 0], 1).unwrap().sum();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn segment_reductions_match_scan_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[10, 4], &mut rng);
        let mut ids: Vec<usize> = (0..10).map(|i| i % 3).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let max = v.segment_max(&ids, 3).unwrap();
        assert_eq!(max.value().data(), segment_scan(&x, &ids, 3, true).as_slice());
        let mean = v.segment_mean(&ids, 3).unwrap();
        for (a, b) in mean.value().data().iter().zip(segment_scan(&x, &ids, 3, false)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn segment_mean_values_and_gradients() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2, 1], &[2.0, 4.0]));
    assert_eq!(x.segment_mean(&[0, 0], 1).unwrap().value().data(), &[3.0]);
    let y = tape.constant(t(&[1, 1], &[7.0]));
    assert_eq!(y.segment_mean(&[0], 1).unwrap().value().data(), &[7.0]);

    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[7, 3], &mut rng);
        let w = random(&[3, 3], &mut rng);
        let ids = [0, 1, 2, 0, 1, 2, 2];
        let report = check()
            .run(
                |_, p| {
                    let m = p[0].segment_mean(&ids, 3)?;
                    let mx = p[0].segment_max(&ids, 3)?;
                    Ok(m.mul(p[1])?.sum().add(mx.mul(p[1])?.sum())?)
                },
                &[x, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn segment_standardize_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[9, 3], &mut rng);
        let w = random(&[9, 3], &mut rng);
        let ids = [0, 0, 0, 0, 1, 1, 1, 1, 1];
        let report = check()
            .run(
                |_, p| {
                    let y = p[0].segment_standardize(&ids, 2, 1e-5)?;
                    Ok(y.mul(p[1])?.sum())
                },
                &[x, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn gather_rows_gradient_scatters() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 3], &mut rng);
        let w = random(&[6, 3], &mut rng);
        let idx: Rc<[usize]> = vec![0, 2, 2, 3, 1, 0].into();
        let report = check()
            .run(
                |_, p| Ok(p[0].gather_rows(idx.clone())?.mul(p[1])?.sum()),
                &[x, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}

#[test]
fn conv2d_values() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random(&[1, 1, 4, 5], &mut rng);
    let x = tape.constant(img.clone());
    let one = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    assert_eq!(*x.conv2d(one, 1).unwrap().value(), img);

    let sq = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    assert_eq!(sq.conv2d(ones, 1).unwrap().value().data(), &[10.0]);

    let big = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 3]));
    assert!(sq.conv2d(big, 1).is_err());
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let bias = random(&[3], &mut rng);
        let stride = 1 + (seed as usize % 2);
        let report = check()
            .run(
                |_, p| {
                    let y = p[0].conv2d(p[1], stride)?.add_channel_bias(p[2])?;
                    Ok(y.mul(y)?.sum())
                },
                &[x, k, bias],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "seed {seed}: {report:?}");
    }
}

#[test]
fn maxpool_values_and_scan_oracle() {
    let tape = Tape::new();
    let sq = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(sq.maxpool2d(2).unwrap().value().data(), &[4.0]);
    assert_eq!(sq.maxpool2d(1).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    let odd = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 2]));
    assert!(odd.maxpool2d(2).is_err());

    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 3, 6, 4], &mut rng);
        let out = tape.constant(x.clone()).maxpool2d(2).unwrap().value();
        let mut expect = Vec::new();
        for plane in 0..6 {
            for oy in 0..3 {
                for ox in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data()[plane * 24 + (oy * 2 + dy) * 4 + ox * 2 + dx]);
                        }
                    }
                    expect.push(m);
                }
            }
        }
        assert_eq!(out.data(), expect.as_slice());
        let w = random(&[2, 3, 3, 2], &mut rng);
        let report = check()
            .run(|_, p| Ok(p[0].maxpool2d(2)?.mul(p[1])?.sum()), &[x, w])
            .unwrap();
        assert!(report.max_relative_error < 1e-6);
    }
}

#[test]
fn global_avg_pool_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 3, 4, 4], &mut rng);
        let w = random(&[2, 3], &mut rng);
        let report = check()
            .run(|_, p| Ok(p[0].global_avg_pool()?.mul(p[1])?.sum()), &[x, w])
            .unwrap();
        assert!(report.max_relative_error < 1e-6);
    }
}

#[test]
fn cross_entropy_closed_forms() {
    let tape = Tape::new();
    let uniform = tape.constant(Tensor::<f64>::zeros(&[1, 5]));
    let l = uniform.softmax_cross_entropy(&[2]).unwrap().item();
    assert!((l - 5f64.ln()).abs() < 1e-12);
    let x = tape.constant(t(&[1, 2], &[10.0, -10.0]));
    let l = x.softmax_cross_entropy(&[0]).unwrap().item();
    let direct = (1.0 + (-20f64).exp()).ln();
    assert!((l - direct).abs() <= 1e-12 * direct);
    assert!((l - 2.06e-9).abs() < 1e-11);
    assert!(matches!(
        x.softmax_cross_entropy(&[2]),
        Err(Error::Label { label: 2, classes: 2 })
    ));
}

#[test]
fn cross_entropy_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 3], &mut rng);
        let report = check()
            .run(|_, p| p[0].scale(3.0).softmax_cross_entropy(&[0, 2, 1, 2]), &[x])
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn cosine_similarity_cases() {
    let tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let s = a.cosine_similarity_matrix(a).unwrap().value();
    assert!((s.data()[0] - 1.0).abs() < 1e-9 && (s.data()[3] - 1.0).abs() < 1e-9);
    assert_eq!(s.data()[1], 0.0);
    assert_eq!(s.data()[2], 0.0);
    let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
    assert_eq!(z.cosine_similarity_matrix(z).unwrap().item(), 0.0);
}

#[test]
fn cosine_similarity_gradient() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let w = random(&[3, 3], &mut rng);
        let report = check()
            .run(
                |_, p| Ok(p[0].cosine_similarity_matrix(p[1])?.mul(p[2])?.sum()),
                &[a, b, w],
            )
            .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn backward_contracts() {
    let tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
    let unrelated = tape.param(t(&[1], &[5.0]));
    let g = tape.backward(x.sum()).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert!(g.get(unrelated).is_none());

    let x = tape.param(Tensor::scalar(2.0));
    let y = tape.param(Tensor::scalar(3.0));
    let g = tape.backward(x.mul(y).unwrap()).unwrap();
    assert_eq!((g.get(x).unwrap().item(), g.get(y).unwrap().item()), (3.0, 2.0));

    let v = tape.param(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
}

#[test]
fn generic_over_f32() {
    let tape = Tape::<f32>::new();
    let a = tape.param(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
    let y = a.matmul(b).unwrap().sum();
    assert_eq!(y.item(), 11.0f32);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[3.0f32, 4.0]);
}

proptest! {
    #[test]
    fn cross_entropy_shift_invariant(
        logits in proptest::collection::vec(-5.0f64..5.0, 6),
        shift in -50.0f64..50.0,
        label in 0usize..3,
    ) {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &logits));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let y = tape.constant(t(&[2, 3], &shifted));
        let a = x.softmax_cross_entropy(&[label, 0]).unwrap().item();
        let b = y.softmax_cross_entropy(&[label, 0]).unwrap().item();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cosine_bounded_and_scale_invariant(
        a in proptest::collection::vec(-3.0f64..3.0, 8),
        b in proptest::collection::vec(-3.0f64..3.0, 8),
        scale in 0.01f64..100.0,
    ) {
        let tape = Tape::new();
        let av = tape.constant(t(&[2, 4], &a));
        let bv = tape.constant(t(&[2, 4], &b));
        let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let sv = tape.constant(t(&[2, 4], &scaled));
        let s = av.cosine_similarity_matrix(bv).unwrap().value();
        let s2 = sv.cosine_similarity_matrix(bv).unwrap().value();
        for (x, y) in s.data().iter().zip(s2.data()) {
            prop_assert!(x.abs() <= 1.0 + 1e-9);
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn kink_guard_drops_only_straddling_probes() {
    // 3e-6 sits within h of the ReLU kink; 0.7 and -0.4 are far from it.
    let x = t(&[3], &[3e-6, 0.7, -0.4]);
    let plain = check().run(|_, p| Ok(p[0].relu().sum()), &[x.clone()]).unwrap();
    assert!(plain.max_relative_error > 0.1, "{plain:?}");
    let guarded = GradCheck {
        kink_guard: true,
        ..GradCheck::default()
    }
    .run(|_, p| Ok(p[0].relu().sum()), &[x])
    .unwrap();
    assert_eq!((guarded.kinks, guarded.probed), (1, 2));
    assert!(guarded.max_relative_error < 1e-8, "{guarded:?}");
}

#[test]
fn kink_guard_still_reports_wrong_gradients() {
    // The taped pass differentiates x² while finite differences see x³: a
    // smooth mismatch the guard must not hide.
    let x = t(&[2], &[0.3, 0.8]);
    let guarded = GradCheck {
        kink_guard: true,
        ..GradCheck::default()
    }
    .run(
        |tape, p| {
            if p[0].requires_grad() {
                Ok(p[0].mul(p[0])?.sum())
            } else {
                p[0].mul(p[0])?.mul(p[0])?.sum().add(tape.constant(Tensor::scalar(0.0)))
            }
        },
        &[x],
    )
    .unwrap();
    assert_eq!(guarded.kinks, 0);
    assert!(guarded.max_relative_error > 0.1, "{guarded:?}");
}
