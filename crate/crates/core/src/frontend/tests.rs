use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::autodiff::gradcheck::{check_gradients, REL_TOLERANCE};
use crate::autodiff::Graph;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap()
}

fn tiny(kind: FrontEndKind, nf: usize, pooling: Pooling) -> FrontEndConfig {
    FrontEndConfig {
        kind,
        n_filterbanks: nf,
        pooling,
        alpha: 100.0,
        embed_dim: 4,
        hidden_width: 6,
        filters_per_bank: 4,
        kernel_length: 8,
        router_widths: vec![5],
        patch_length: 16,
    }
}

fn build<F: Real>(cfg: &FrontEndConfig, seed: u64) -> (ParamStore<F>, FrontEnd) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fe = FrontEnd::new(&mut store, &mut rng, cfg).unwrap();
    (store, fe)
}

fn embed(store: &ParamStore<f64>, fe: &FrontEnd, patches: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::new();
    let vars = store.bind_frozen(&g);
    let x = g.constant(patches.clone());
    let out = fe.forward(&vars, x).unwrap();
    let v = out.embeddings.value().clone();
    v
}

/// Nested softmax evaluated directly for two logits.
fn sparsify_pair(a: f64, b: f64, alpha: f64) -> f64 {
    let p = 1.0 / (1.0 + (b - a).exp());
    1.0 / (1.0 + (-alpha * (2.0 * p - 1.0)).exp())
}

fn sparsify_values(logits: &[f64], n: usize, alpha: f64) -> Vec<f64> {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[logits.len() / n, n], logits).unwrap());
    let v = sparsify(x, alpha).unwrap().value().data().to_vec();
    v
}

#[test]
fn baseline_zero_patch_gives_zero_embedding() {
    let cfg = FrontEndConfig {
        kind: FrontEndKind::Baseline,
        ..FrontEndConfig::default()
    };
    let (store, fe) = build::<f64>(&cfg, 3);
    let out = embed(&store, &fe, &Tensor::zeros(&[1, 40, 400]));
    assert_eq!(out.shape(), &[1, 40, 64]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn baseline_forces_single_route() {
    let cfg = FrontEndConfig {
        kind: FrontEndKind::Baseline,
        n_filterbanks: 4,
        ..tiny(FrontEndKind::Baseline, 4, Pooling::Max)
    };
    let (_, fe) = build::<f32>(&cfg, 0);
    assert_eq!(fe.config.n_filterbanks, 1);
    assert!(fe.router().is_none());
}

#[test]
fn router_examples() {
    let w = sparsify_values(&[0.0, 0.0], 2, 100.0);
    assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);

    let w = sparsify_values(&[1.0, 0.0], 2, 10.0);
    let expect = sparsify_pair(1.0, 0.0, 10.0);
    assert!((expect - 0.99027).abs() < 1e-4, "oracle {expect}");
    assert!((w[0] - expect).abs() < 1e-12);
    assert!((w[1] - (1.0 - expect)).abs() < 1e-12);

    let w = sparsify_values(&[1.0, 0.0], 2, 100.0);
    assert!(w[0] > 1.0 - 1e-15, "{}", w[0]);
}

#[test]
fn bank_zero_patch_gives_zero_embedding() {
    for pooling in [Pooling::Max, Pooling::Avg] {
        let cfg = FrontEndConfig {
            pooling,
            filters_per_bank: 8,
            embed_dim: 8,
            router_widths: vec![16],
            ..FrontEndConfig::default()
        };
        let (store, fe) = build::<f64>(&cfg, 1);
        let out = embed(&store, &fe, &Tensor::zeros(&[2, 3, 400]));
        assert_eq!(out.shape(), &[2, 3, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn bank_responses_are_filters_by_patch_length() {
    let cfg = FrontEndConfig {
        router_widths: vec![8],
        ..FrontEndConfig::default()
    };
    let (store, fe) = build::<f32>(&cfg, 2);
    let g = Graph::new();
    let vars = store.bind_frozen(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = g.constant(rand_tensor(&mut rng, &[1, 400]).cast());
    let r = fe.filter_banks().unwrap().responses(&vars, x, 0).unwrap();
    assert_eq!(r.shape(), vec![1, 64, 400]);
}

#[test]
fn delta_kernel_bank_returns_rectified_patch_max() {
    let cfg = tiny(FrontEndKind::BankOfFilterbanks, 1, Pooling::Max);
    let (mut store, fe) = build::<f64>(&cfg, 4);
    let bank = fe.filter_banks().unwrap().banks[0];
    let (f, k) = (cfg.filters_per_bank, cfg.kernel_length);
    let mut delta = vec![0.0; f * k];
    for i in 0..f {
        delta[i * k + k / 2] = 1.0;
    }
    *store.get_mut(bank.kernels) = Tensor::from_f64(&[f, k], &delta).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let patches = rand_tensor(&mut rng, &[1, 3, 16]);
    let out = embed(&store, &fe, &patches);
    for (tok, row) in patches.rows().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        for i in 0..f {
            assert!((out.data()[tok * f + i] - m).abs() < 1e-12);
        }
    }
}

#[test]
fn single_expert_moe_matches_baseline() {
    let moe_cfg = tiny(FrontEndKind::Moe, 1, Pooling::Max);
    let (moe_store, moe) = build::<f64>(&moe_cfg, 6);
    let (mut base_store, base) = build::<f64>(&tiny(FrontEndKind::Baseline, 1, Pooling::Max), 7);
    let copied: Vec<(String, Tensor<f64>)> = moe_store
        .iter()
        .filter_map(|(n, t)| {
            n.strip_prefix("expert.0.")
                .map(|rest| (format!("baseline.{rest}"), t.clone()))
        })
        .collect();
    base_store
        .load_named(copied.iter().map(|(n, t)| (n.as_str(), t)))
        .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let patches = rand_tensor(&mut rng, &[2, 5, 16]);
    assert_eq!(embed(&moe_store, &moe, &patches), embed(&base_store, &base, &patches));
}

#[test]
fn routed_shapes() {
    for kind in [FrontEndKind::Moe, FrontEndKind::BankOfFilterbanks] {
        let cfg = tiny(kind, 3, Pooling::Avg);
        let (store, fe) = build::<f64>(&cfg, 10);
        let g = Graph::new();
        let vars = store.bind_frozen(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = g.constant(rand_tensor(&mut rng, &[2, 5, 16]));
        let out = fe.forward(&vars, x).unwrap();
        assert_eq!(out.embeddings.shape(), vec![2, 5, 4]);
        assert_eq!(out.per_route.unwrap().shape(), vec![2, 5, 3, 4]);
        let r = fe.route(&vars, x).unwrap().unwrap();
        assert_eq!(r.weights.shape(), &[2, 5, 3]);
        assert_eq!(r.route_index.len(), 10);
    }
}

#[test]
fn combine_examples_match_oracle() {
    let g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let routes = rand_tensor(&mut rng, &[2, 3, 4]);
    let r = g.constant(routes.clone());

    let one_hot = g.constant(Tensor::from_f64(&[2, 3], &[0., 1., 0., 0., 0., 1.]).unwrap());
    let y = combine(r, one_hot).unwrap().value().clone();
    assert_eq!(&y.data()[..4], &routes.data()[4..8]);
    assert_eq!(&y.data()[4..], &routes.data()[20..24]);

    let w = rand_tensor(&mut rng, &[2, 3]);
    let y = combine(r, g.constant(w.clone())).unwrap().value().clone();
    for n in 0..2 {
        for e in 0..4 {
            let want: f64 = (0..3)
                .map(|k| w.data()[n * 3 + k] * routes.data()[(n * 3 + k) * 4 + e])
                .sum();
            assert!((y.data()[n * 4 + e] - want).abs() < 1e-12);
        }
    }

    let uniform = g.constant(Tensor::full(&[2, 3], 1.0 / 3.0));
    let y = combine(r, uniform).unwrap().value().clone();
    for n in 0..2 {
        for e in 0..4 {
            let mean: f64 = (0..3).map(|k| routes.data()[(n * 3 + k) * 4 + e]).sum::<f64>() / 3.0;
            assert!((y.data()[n * 4 + e] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn routed_output_lies_in_convex_hull_of_routes() {
    let cfg = FrontEndConfig {
        alpha: 2.0,
        ..tiny(FrontEndKind::BankOfFilterbanks, 3, Pooling::Max)
    };
    let (store, fe) = build::<f64>(&cfg, 13);
    let g = Graph::new();
    let vars = store.bind_frozen(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let out = fe
        .forward(&vars, g.constant(rand_tensor(&mut rng, &[3, 4, 16])))
        .unwrap();
    let y = out.embeddings.value().clone();
    let routes = out.per_route.unwrap().value().clone();
    for n in 0..12 {
        for e in 0..4 {
            let vals: Vec<f64> = (0..3).map(|k| routes.data()[(n * 3 + k) * 4 + e]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = y.data()[n * 4 + e];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

#[test]
fn permuting_tokens_permutes_embeddings() {
    for kind in [
        FrontEndKind::Baseline,
        FrontEndKind::Moe,
        FrontEndKind::BankOfFilterbanks,
    ] {
        let cfg = tiny(kind, 2, Pooling::Max);
        let (store, fe) = build::<f64>(&cfg, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let patches = rand_tensor(&mut rng, &[1, 5, 16]);
        let perm = [3, 0, 4, 1, 2];
        let mut permuted = Vec::new();
        for &i in &perm {
            permuted.extend_from_slice(patches.row(i));
        }
        let permuted = Tensor::new(&[1, 5, 16], permuted).unwrap();
        let a = embed(&store, &fe, &patches);
        let b = embed(&store, &fe, &permuted);
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(b.row(j), a.row(i));
        }
    }
}

/// Gradient check of a random projection of the embeddings, over every
/// parameter and the input patches. Seeds whose analytic pass sits within
/// `1e-4` of a relu or max-pool kink are skipped.
fn gradcheck_front_end(cfg: &FrontEndConfig, wanted: usize) {
    let mut passed = 0;
    for seed in 0..wanted as u64 * 4 {
        let (store, fe) = build::<f64>(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut params = store.tensors().to_vec();
        params.push(rand_tensor(&mut rng, &[2, 3, cfg.patch_length]));
        let proj = rand_tensor(&mut rng, &[2, 3, cfg.embed_dim]);
        let report = check_gradients(&params, |g, vars| {
            let (x, weights) = vars.split_last().unwrap();
            let y = fe.forward(weights, *x)?.embeddings;
            Ok(y.mul(g.constant(proj.clone()))?.sum())
        })
        .unwrap();
        if report.kink_margin < 1e-4 {
            continue;
        }
        assert!(
            report.passed(),
            "{} seed {seed}: rel error {} at {:?} (tol {REL_TOLERANCE})",
            cfg.label(),
            report.max_rel_error,
            report.worst
        );
        passed += 1;
        if passed == wanted {
            return;
        }
    }
    panic!("{}: only {passed} seeds away from kinks", cfg.label());
}

#[test]
fn baseline_gradcheck() {
    gradcheck_front_end(&tiny(FrontEndKind::Baseline, 1, Pooling::Max), 3);
}

#[test]
fn moe_gradcheck() {
    gradcheck_front_end(
        &FrontEndConfig {
            alpha: 3.0,
            ..tiny(FrontEndKind::Moe, 2, Pooling::Max)
        },
        3,
    );
}

#[test]
fn bank_gradcheck_both_poolings() {
    gradcheck_front_end(&tiny(FrontEndKind::BankOfFilterbanks, 2, Pooling::Max), 3);
    gradcheck_front_end(&tiny(FrontEndKind::BankOfFilterbanks, 2, Pooling::Avg), 3);
    gradcheck_front_end(
        &FrontEndConfig {
            alpha: 3.0,
            ..tiny(FrontEndKind::BankOfFilterbanks, 3, Pooling::Max)
        },
        2,
    );
}

#[test]
fn validation_rejects_bad_configs() {
    let base = FrontEndConfig::default();
    let bad = [
        FrontEndConfig {
            n_filterbanks: 0,
            ..base.clone()
        },
        FrontEndConfig {
            alpha: 0.0,
            ..base.clone()
        },
        FrontEndConfig {
            kernel_length: 401,
            ..base.clone()
        },
        FrontEndConfig {
            filters_per_bank: 32,
            ..base.clone()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Validation { .. })), "{cfg:?}");
    }
    assert!(base.validate().is_ok());
    assert_eq!(base.label(), "bf-nf2-max");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparsified_rows_are_stochastic_and_keep_argmax(
        n in 2usize..8,
        alpha in 1.0f64..200.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let w = sparsify_values(&logits, n, alpha);
        for (l, row) in logits.chunks(n).zip(w.chunks(n)) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let mut sorted = l.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[0] - sorted[1] > 1e-6 {
                prop_assert_eq!(argmax(row), argmax(l));
            }
        }
    }
}
