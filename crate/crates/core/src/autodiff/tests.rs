use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, REL_TOLERANCE};
use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Random values bounded away from zero, so relu kinks are never straddled.
fn rand_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    t(shape, &data)
}

/// Random rows whose top two entries differ by more than 1e-3.
fn rand_distinct_max(rng: &mut ChaCha8Rng, rows: usize, len: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows * len);
    for _ in 0..rows {
        loop {
            let row: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut s = row.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            if len == 1 || s[0] - s[1] > 1e-3 {
                data.extend(row);
                break;
            }
        }
    }
    t(&[rows, len], &data)
}

/// Direct nested-loop same-length cross-correlation.
fn conv_oracle(x: &[f64], b: usize, l: usize, w: &[f64], f: usize, k: usize, bias: &[f64]) -> Vec<f64> {
    let left = k / 2;
    let mut out = vec![0.0; b * f * l];
    for n in 0..b {
        for fi in 0..f {
            for ti in 0..l {
                let mut s = bias[fi];
                for j in 0..k {
                    let src = ti as i64 + j as i64 - left as i64;
                    if src >= 0 && (src as usize) < l {
                        s += w[fi * k + j] * x[n * l + src as usize];
                    }
                }
                out[(n * f + fi) * l + ti] = s;
            }
        }
    }
    out
}

/// Random projection of `y` onto a scalar, so every output element matters.
fn project<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = g.constant(rand_tensor(&mut rng, &y.shape()));
    Ok(y.mul(r)?.sum())
}

fn assert_passes(name: &str, report: gradcheck::GradCheckReport) {
    assert!(
        report.passed(),
        "{name}: max rel error {} at {:?} (tol {REL_TOLERANCE})",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn linear_identity_and_hand_example() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.constant(t(&[2], &[0.0, 0.0]));
    assert_eq!(x.linear(w, Some(b)).unwrap().value().data(), &[1.0, 2.0]);

    let x = g.constant(t(&[1, 2], &[1.0, 1.0]));
    let w = g.constant(t(&[2, 1], &[2.0, 3.0]));
    let b = g.constant(t(&[1], &[1.0]));
    let y = x.linear(w, Some(b)).unwrap();
    assert_eq!(y.shape(), vec![1, 1]);
    assert_eq!(y.value().data(), &[6.0]);
}

#[test]
fn linear_shape_error_lists_both_shapes() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    let w = g.constant(Tensor::zeros(&[4, 2]));
    match x.linear(w, None) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn linear_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = [
            rand_tensor(&mut rng, &[3, 4]),
            rand_tensor(&mut rng, &[4, 2]),
            rand_tensor(&mut rng, &[2]),
        ];
        let r = check_gradients(&params, |g, v| {
            let y = v[0].linear(v[1], Some(v[2]))?;
            project(g, y, seed)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}

#[test]
fn conv_even_kernel_example() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[1, 2], &[1.0, 1.0]));
    let b = g.constant(t(&[1], &[0.0]));
    assert_eq!(x.conv1d_same(w, b).unwrap().value().data(), &[1.0, 3.0, 5.0]);
}

#[test]
fn conv_delta_kernel_is_identity() {
    for k in [1, 2, 5, 8, 320] {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let g = Graph::<f64>::new();
        let xt = rand_tensor(&mut rng, &[2, 1, 400]);
        let mut wd = vec![0.0; k];
        wd[k / 2] = 1.0;
        let x = g.constant(xt.clone());
        let w = g.constant(t(&[1, k], &wd));
        let b = g.constant(t(&[1], &[0.0]));
        let y = x.conv1d_same(w, b).unwrap();
        assert_eq!(y.shape(), vec![2, 1, 400]);
        assert_eq!(y.value().data(), xt.data());
    }
}

#[test]
fn conv_full_size_dims_give_64_by_400() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 400]));
    let w = g.constant(Tensor::zeros(&[64, 320]));
    let b = g.constant(Tensor::zeros(&[64]));
    assert_eq!(x.conv1d_same(w, b).unwrap().shape(), vec![1, 64, 400]);
}

#[test]
fn conv_gradcheck() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = [
            rand_tensor(&mut rng, &[2, 1, 16]),
            rand_tensor(&mut rng, &[3, 5]),
            rand_tensor(&mut rng, &[3]),
        ];
        let r = check_gradients(&params, |g, v| {
            let y = v[0].conv1d_same(v[1], v[2])?;
            project(g, y, seed)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}

#[test]
fn pooling_and_relu_examples() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 3], &[1.0, 5.0, 3.0, 2.0, 2.0, 2.0]));
    assert_eq!(x.max_over_last().unwrap().value().data(), &[5.0, 2.0]);
    let x = g.constant(t(&[1, 3], &[1.0, 5.0, 3.0]));
    assert_eq!(x.mean_over_last().unwrap().value().data(), &[3.0]);
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn empty_axis_is_a_shape_error() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 0]));
    assert!(matches!(x.max_over_last(), Err(Error::Shape { .. })));
    assert!(matches!(x.mean_over_last(), Err(Error::Shape { .. })));
}

#[test]
fn max_ties_route_to_lowest_index() {
    let g = Graph::<f64>::new();
    let x = g.param(t(&[2, 3], &[2.0, 2.0, 2.0, 0.0, 7.0, 7.0]));
    let m = x.max_over_last().unwrap();
    g.backward(m.sum()).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn softmax_examples() {
    let g = Graph::<f64>::new();
    let y = g.constant(t(&[2], &[0.0, 0.0])).softmax_last().unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.5]);
    let y = g.constant(t(&[2], &[1000.0, 0.0])).softmax_last().unwrap();
    assert_eq!(y.value().data()[0], 1.0);
    assert!(y.value().data()[1] >= 0.0 && y.value().data()[1] < 1e-300);
    let y = g.constant(t(&[2], &[1.0, 0.0])).softmax_last().unwrap();
    // e/(1+e) evaluated independently
    let e = 1f64.exp();
    assert!((y.value().data()[0] - e / (1.0 + e)).abs() < 1e-12);
    assert!((y.value().data()[0] - 0.73106).abs() < 1e-5);
    assert!((y.value().data()[1] - 0.26894).abs() < 1e-5);
}

#[test]
fn layer_norm_constant_row_is_zero() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 4], &[3.0; 4]));
    let gain = g.constant(t(&[4], &[1.0; 4]));
    let bias = g.constant(t(&[4], &[0.0; 4]));
    assert_eq!(x.layer_norm(gain, bias).unwrap().value().data(), &[0.0; 4]);
}

#[test]
fn attention_single_token_returns_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Graph::<f64>::new();
    let q = g.constant(rand_tensor(&mut rng, &[2, 3, 1, 4]));
    let k = g.constant(rand_tensor(&mut rng, &[2, 3, 1, 4]));
    let vt = rand_tensor(&mut rng, &[2, 3, 1, 4]);
    let v = g.constant(vt.clone());
    assert_eq!(scaled_dot_attention(q, k, v).unwrap().value().data(), vt.data());
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Graph::<f64>::new();
    let xt = rand_tensor(&mut rng, &[4, 8]);
    let x = g.constant(xt.clone());
    assert_eq!(x.dropout(0.5, false, &mut rng).unwrap().value().data(), xt.data());
    let y = x.dropout(0.5, true, &mut rng).unwrap();
    for (&a, &b) in y.value().data().iter().zip(xt.data()) {
        assert!(a == 0.0 || (a - 2.0 * b).abs() < 1e-15);
    }
    assert!(x.dropout(1.0, true, &mut rng).is_err());
}

#[test]
fn huber_examples() {
    let g = Graph::<f64>::new();
    let p = g.constant(t(&[1, 3], &[0.1, 0.2, 0.3]));
    assert_eq!(huber_loss(p, p, 1.0).unwrap().value().data(), &[0.0]);
    let h = |e: f64| {
        let g = Graph::<f64>::new();
        let p = g.constant(t(&[1], &[e]));
        let z = g.constant(t(&[1], &[0.0]));
        let v = huber_loss(p, z, 1.0).unwrap().value().data()[0];
        v
    };
    assert_eq!(h(0.5), 0.125);
    assert_eq!(h(2.0), 1.5);
    assert_eq!(h(-2.0), 1.5);
    let a = g.constant(Tensor::zeros(&[2]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(huber_loss(a, b, 1.0), Err(Error::Shape { .. })));
}

#[test]
fn backward_of_sum_is_ones() {
    let g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    g.backward(x.sum()).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Graph::<f64>::new();
    let x = g.param(rand_tensor(&mut rng, &[2, 3]));
    let w = g.param(rand_tensor(&mut rng, &[3, 2]));
    let loss = x.linear(w, None).unwrap().relu().sum();
    g.backward(loss).unwrap();
    let once = g.grad(w).unwrap();
    g.backward(loss).unwrap();
    let twice = g.grad(w).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[3]));
    assert!(matches!(g.backward(x.relu()), Err(Error::Contract(_))));
}

#[test]
fn composite_huber_relu_linear_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&mut rng, &[4, 5]);
        let w = rand_tensor(&mut rng, &[5, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let target = rand_tensor(&mut rng, &[4, 3]);
        let r = check_gradients(&[x, w, b], |g, v| {
            let y = v[0].linear(v[1], Some(v[2]))?.relu();
            huber_loss(y, g.constant(target.clone()), 0.5)
        })
        .unwrap();
        assert_passes("huber(relu(linear))", r);
    }
}

#[test]
fn primitive_gradchecks() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_off_kink(&mut rng, &[3, 4]);
        assert_passes(
            "relu",
            check_gradients(&[x], |g, v| project(g, v[0].relu(), seed)).unwrap(),
        );

        let x = rand_distinct_max(&mut rng, 3, 6);
        assert_passes(
            "max",
            check_gradients(&[x], |g, v| project(g, v[0].max_over_last()?, seed)).unwrap(),
        );

        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        assert_passes(
            "mean",
            check_gradients(&[x.clone()], |g, v| project(g, v[0].mean_axis(1)?, seed)).unwrap(),
        );
        assert_passes(
            "softmax",
            check_gradients(&[x.clone()], |g, v| project(g, v[0].softmax_last()?, seed)).unwrap(),
        );
        assert_passes(
            "sigmoid",
            check_gradients(&[x.clone()], |g, v| project(g, v[0].sigmoid(), seed)).unwrap(),
        );

        let gain = rand_tensor(&mut rng, &[4]);
        let bias = rand_tensor(&mut rng, &[4]);
        assert_passes(
            "layer_norm",
            check_gradients(&[x.clone(), gain, bias], |g, v| {
                project(g, v[0].layer_norm(v[1], v[2])?, seed)
            })
            .unwrap(),
        );

        let q = rand_tensor(&mut rng, &[1, 2, 3, 4]);
        let k = rand_tensor(&mut rng, &[1, 2, 5, 4]);
        let vv = rand_tensor(&mut rng, &[1, 2, 5, 4]);
        assert_passes(
            "attention",
            check_gradients(&[q, k, vv], |g, v| {
                project(g, scaled_dot_attention(v[0], v[1], v[2])?, seed)
            })
            .unwrap(),
        );

        let a = rand_tensor(&mut rng, &[2, 3, 4, 2]);
        assert_passes(
            "swap",
            check_gradients(&[a], |g, v| project(g, v[0].swap_axes12()?, seed)).unwrap(),
        );

        let y = rand_tensor(&mut rng, &[3, 4]);
        assert_passes(
            "add_broadcast",
            check_gradients(&[x.clone(), y], |g, v| project(g, v[0].add_broadcast(v[1])?, seed)).unwrap(),
        );
        assert_passes(
            "narrow",
            check_gradients(&[x.clone()], |g, v| project(g, v[0].narrow(1)?, seed)).unwrap(),
        );

        let (r1, r2) = (rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 3]));
        assert_passes(
            "stack",
            check_gradients(&[r1, r2], |g, v| project(g, stack(&[v[0], v[1]], 1)?, seed)).unwrap(),
        );

        let routes = rand_tensor(&mut rng, &[2, 3, 4]);
        let w = rand_tensor(&mut rng, &[2, 3]);
        assert_passes(
            "combine",
            check_gradients(&[routes, w], |g, v| project(g, combine(v[0], v[1])?, seed)).unwrap(),
        );

        let p = rand_tensor(&mut rng, &[3, 2]).map(|v| 3.0 * v);
        let target = rand_tensor(&mut rng, &[3, 2]);
        // keep |e| away from delta so the kink is not straddled
        let ok = p
            .data()
            .iter()
            .zip(target.data())
            .all(|(a, b)| ((a - b).abs() - 1.0).abs() > 1e-3);
        if ok {
            assert_passes(
                "huber",
                check_gradients(&[p, target], |_, v| huber_loss(v[0], v[1], 1.0)).unwrap(),
            );
        }
    }
}

#[test]
fn dropout_gradient_uses_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Graph::<f64>::new();
    let x = g.param(rand_tensor(&mut rng, &[10]));
    let y = x.dropout(0.3, true, &mut rng).unwrap();
    g.backward(y.sum()).unwrap();
    let grad = g.grad(x).unwrap();
    for (&gi, (&yi, &xi)) in grad.data().iter().zip(y.value().data().iter().zip(x.value().data())) {
        assert!((gi * xi - yi).abs() < 1e-12);
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Graph::<f32>::new();
        let x = g.constant(rand_tensor(&mut rng, &[3, 1, 40]).cast());
        let w = g.param(rand_tensor(&mut rng, &[4, 7]).cast());
        let b = g.param(rand_tensor(&mut rng, &[4]).cast());
        let y = x
            .conv1d_same(w, b)
            .unwrap()
            .max_over_last()
            .unwrap()
            .softmax_last()
            .unwrap();
        let out = y.value().clone();
        g.backward(y.sum()).unwrap();
        (out, g.grad(w).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_nested_loop_oracle(b in 1usize..3, l in 1usize..24, f in 1usize..4, k in 1usize..12, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xt = rand_tensor(&mut rng, &[b, 1, l]);
        let wt = rand_tensor(&mut rng, &[f, k]);
        let bt = rand_tensor(&mut rng, &[f]);
        let g = Graph::<f64>::new();
        let y = g.constant(xt.clone()).conv1d_same(g.constant(wt.clone()), g.constant(bt.clone())).unwrap();
        prop_assert_eq!(y.shape(), vec![b, f, l]);
        let oracle = conv_oracle(xt.data(), b, l, wt.data(), f, k, bt.data());
        for (a, o) in y.value().data().iter().zip(&oracle) {
            prop_assert!((a - o).abs() <= 1e-10 * o.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..5, d in 1usize..12, scale in 0.1f64..500.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::<f64>::new();
        let y = g.constant(rand_tensor(&mut rng, &[rows, d]).map(|v| v * scale)).softmax_last().unwrap();
        for row in y.value().rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn max_backward_sends_unit_mass_to_one_slot(rows in 1usize..6, len in 1usize..10, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::<f64>::new();
        let x = g.param(rand_tensor(&mut rng, &[rows, len]));
        g.backward(x.max_over_last().unwrap().sum()).unwrap();
        let grad = g.grad(x).unwrap();
        for row in grad.rows() {
            prop_assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }
}
