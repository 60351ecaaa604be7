//! Structural and behavioral checks of the assembled model.

use lct_core::model::{count_macs, count_params, encoder_macs, encoder_params};
use lct_core::{Graph, LctConfig, LctModel, Mode, Rng, Tensor};

fn cfg_11() -> LctConfig {
    LctConfig { num_encoders: 1, num_stem_convs: 1, num_classes: 10, input: [32, 32, 3], ..Default::default() }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform_range(-1.0, 1.0) as f32)
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

#[test]
fn token_sequence_length_and_logit_shape() {
    let mut rng = Rng::new(1);
    let mut model = LctModel::<f32>::build(cfg_11(), &mut rng).unwrap();
    let x = random_input(&[2, 32, 32, 3], 2);
    let mut g = Graph::new();
    let mut drng = Rng::new(0);
    let out = model.forward(&mut g, &x, Mode::Eval, &mut drng).unwrap();
    assert_eq!(g.value(out.tokens).shape(), &[2, 64, 128]);
    assert_eq!(g.value(out.logits).shape(), &[2, 10]);
    assert!(g.value(out.logits).is_finite());
}

#[test]
fn build_is_seed_deterministic() {
    let a = LctModel::<f32>::build(cfg_11(), &mut Rng::new(7)).unwrap();
    let b = LctModel::<f32>::build(cfg_11(), &mut Rng::new(7)).unwrap();
    assert_eq!(a.get_flat(), b.get_flat());
    let c = LctModel::<f32>::build(cfg_11(), &mut Rng::new(8)).unwrap();
    assert_ne!(a.get_flat(), c.get_flat());
    // same structure regardless of seed
    assert_eq!(a.flat_len(), c.flat_len());
}

#[test]
fn per_encoder_parameter_delta_is_constant() {
    // hand count at D=128, h=4, ratio 1:
    // QKV 3*(128*128+128)=49536, out 16512, MLP 33024, two LN 512
    assert_eq!(encoder_params(&cfg_11()), 99_584);

    let count = |l: usize, m: usize| {
        let cfg = LctConfig { num_encoders: l, num_stem_convs: m, ..cfg_11() };
        count_params(&LctModel::<f32>::build(cfg, &mut Rng::new(0)).unwrap())
    };
    for m in [1, 3] {
        let deltas: Vec<u64> = (1..4).map(|l| count(l + 1, m) - count(l, m)).collect();
        for d in &deltas {
            assert_eq!(*d, 99_584, "encoder delta must be constant in L");
        }
    }
    // stem deltas constant in L
    let stem_delta: Vec<u64> = [1usize, 2, 4].iter().map(|&l| count(l, 3) - count(l, 1)).collect();
    assert!(stem_delta.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn exact_parameter_count_for_smallest_variant() {
    // tokenizer 80,896 + encoder 99,584 + seqpool 385 + classifier 1,290
    let model = LctModel::<f32>::build(cfg_11(), &mut Rng::new(0)).unwrap();
    assert_eq!(count_params(&model), 182_155);
    // running stats: stem 64 + dws (64+128) + 4 bottlenecks (64+64+128), doubled
    assert_eq!(model.buffer_elements(), 2 * (64 + 192 + 4 * 256));
    assert_eq!(model.flat_len(), 182_155 + 2560);
}

#[test]
fn single_conv_bn_parameter_arithmetic() {
    // 3x3 conv 3->64 without bias plus BN affine: 1728 + 128
    let cfg = LctConfig { num_stem_convs: 1, ..cfg_11() };
    let model = LctModel::<f32>::build(cfg, &mut Rng::new(0)).unwrap();
    let stem_params: u64 = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("tokenizer.stem.0."))
        .map(|p| p.tensor.numel() as u64)
        .sum();
    assert_eq!(stem_params, 1_728 + 128);
}

#[test]
fn encoder_macs_closed_form_at_t64() {
    let macs = encoder_macs(&cfg_11());
    assert_eq!(macs, 7_340_032);
}

#[test]
fn analytic_macs_equal_graph_op_walk() {
    // brute-force oracle: run batch-1 eval forward and let each op charge
    // its own cost from runtime shapes
    for cfg in [
        cfg_11(),
        LctConfig { num_encoders: 2, num_stem_convs: 3, input: [28, 28, 1], ..cfg_11() },
        LctConfig { num_bottlenecks: 2, mlp_ratio: 2.0, ..cfg_11() },
    ] {
        let mut model = LctModel::<f32>::build(cfg.clone(), &mut Rng::new(3)).unwrap();
        let x = random_input(&[1, cfg.input[0], cfg.input[1], cfg.input[2]], 4);
        let mut g = Graph::new();
        let mut drng = Rng::new(0);
        model.forward(&mut g, &x, Mode::Eval, &mut drng).unwrap();
        assert_eq!(g.macs(), count_macs(&cfg), "config {cfg:?}");
    }
}

#[test]
fn table_budget_targets_within_band() {
    let published_m: [(usize, usize, f64); 8] = [
        (1, 1, 0.21),
        (2, 1, 0.31),
        (4, 1, 0.51),
        (8, 1, 0.91),
        (1, 3, 0.25),
        (2, 3, 0.35),
        (4, 3, 0.55),
        (8, 3, 0.95),
    ];
    for (l, m, millions) in published_m {
        let cfg = LctConfig { num_encoders: l, num_stem_convs: m, ..cfg_11() };
        let params = count_params(&LctModel::<f32>::build(cfg, &mut Rng::new(0)).unwrap()) as f64;
        let target = millions * 1e6;
        let rel = (params - target).abs() / target;
        assert!(rel <= 0.15, "variant {l}/{m}: {params} vs {target} ({rel:.3})");
    }
}

#[test]
fn eval_forward_is_pure() {
    let mut model = LctModel::<f32>::build(cfg_11(), &mut Rng::new(5)).unwrap();
    let x = random_input(&[2, 32, 32, 3], 6);
    let flat_before = model.get_flat();
    let run = |model: &mut LctModel<f32>| {
        let mut g = Graph::new();
        let mut drng = Rng::new(9);
        let out = model.forward(&mut g, &x, Mode::Eval, &mut drng).unwrap();
        g.value(out.logits).data().to_vec()
    };
    let a = run(&mut model);
    let b = run(&mut model);
    assert_eq!(a, b, "eval forward must be bit-identical");
    assert_eq!(model.get_flat(), flat_before, "eval must not touch state");
}

#[test]
fn token_permutation_leaves_logits_unchanged() {
    let cfg = cfg_11();
    let mut model = LctModel::<f32>::build(cfg.clone(), &mut Rng::new(11)).unwrap();
    let x = random_input(&[2, 32, 32, 3], 12);
    let t = cfg.tokens();

    let mut perm: Vec<usize> = (0..t).collect();
    Rng::new(13).shuffle(&mut perm);

    let mut run = |perm: Option<&[usize]>| {
        let mut g = Graph::new();
        let mut drng = Rng::new(0);
        let nodes = model.bind_params(&mut g, false);
        let out = model.forward_with(&mut g, &nodes, &x, Mode::Eval, &mut drng, perm).unwrap();
        g.value(out.logits).data().to_vec()
    };
    let base = run(None);
    let permuted = run(Some(&perm));
    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn bottleneck_blocks_are_identity_at_zero_weights() {
    let cfg = cfg_11();
    let mut model = LctModel::<f32>::build(cfg.clone(), &mut Rng::new(21)).unwrap();
    // zero every bottleneck-branch weight; the residual add must pass the
    // input through untouched
    let zero_idx: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.name.contains("bottleneck"))
        .map(|(i, _)| i)
        .collect();
    for i in zero_idx {
        model.update_param(i, |d| d.fill(0.0));
    }

    // compare against a config with zero bottlenecks
    let cfg_nb = LctConfig { num_bottlenecks: 1, ..cfg.clone() };
    let _ = cfg_nb; // bottleneck-free reference built by skipping blocks is
                    // not constructible through the public config (R >= 1);
                    // instead check identity directly on the tokens:
    let x = random_input(&[1, 32, 32, 3], 22);
    let mut g = Graph::new();
    let mut drng = Rng::new(0);
    let out = model.forward(&mut g, &x, Mode::Eval, &mut drng).unwrap();
    // tokens are produced after the bottleneck stack; rebuild the stack
    // prefix by hand: stem -> dws gives the same tokens when every
    // bottleneck contributes exactly zero. Verify via linearity: run the
    // same model twice; zeroed branches make the two bottleneck sums
    // identical, so the forward must be deterministic AND equal to the
    // one-bottleneck-zeroed version. Here it suffices that the branch
    // output is exactly zero: BN(conv(0-weight)) = beta = 0, so check that
    // tokens match a second forward where bottleneck count differs only
    // through zeroed branches.
    let tokens_a = g.value(out.tokens).data().to_vec();

    // model with the same stem/dws weights but only zeroed branches is the
    // identity on its input; so doubling R must not change the tokens
    let mut cfg_double = cfg.clone();
    cfg_double.num_bottlenecks = 8;
    let mut model2 = LctModel::<f32>::build(cfg_double, &mut Rng::new(21)).unwrap();
    // copy stem + dws params from model by name; zero all bottlenecks
    let src: std::collections::HashMap<String, Vec<f32>> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.tensor.data().to_vec()))
        .collect();
    for i in 0..model2.params().len() {
        let name = model2.params()[i].name.clone();
        if name.contains("bottleneck") {
            model2.update_param(i, |d| d.fill(0.0));
        } else if let Some(v) = src.get(&name) {
            model2.update_param(i, |d| d.copy_from_slice(v));
        }
    }
    let mut g2 = Graph::new();
    let out2 = model2.forward(&mut g2, &x, Mode::Eval, &mut Rng::new(0)).unwrap();
    let tokens_b = g2.value(out2.tokens).data().to_vec();
    assert_eq!(tokens_a, tokens_b, "zeroed bottlenecks must be identity maps");
}

#[test]
fn seqpool_weights_are_a_distribution() {
    let cfg = cfg_11();
    let mut model = LctModel::<f32>::build(cfg, &mut Rng::new(31)).unwrap();
    for seed in 0..5 {
        let x = random_input(&[3, 32, 32, 3], 100 + seed);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, Mode::Eval, &mut Rng::new(0)).unwrap();
        let w = g.value(out.pool_weights);
        assert_eq!(w.shape(), &[3, 1, 64]);
        for row in w.data().chunks(64) {
            let total: f32 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn seqpool_single_and_identical_tokens() {
    // T = 1: weight exactly 1, pooled output equals the single token
    let cfg = LctConfig { input: [4, 4, 3], ..cfg_11() };
    let mut model = LctModel::<f64>::build(cfg, &mut Rng::new(41)).unwrap();
    let x = random_input(&[1, 4, 4, 3], 42).cast::<f64>();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert_eq!(g.value(out.tokens).shape(), &[1, 1, 128]);
    assert_eq!(g.value(out.pool_weights).data(), &[1.0]);
}

#[test]
fn flat_roundtrip_is_bit_identical() {
    let mut model = LctModel::<f32>::build(cfg_11(), &mut Rng::new(51)).unwrap();
    let flat = model.get_flat();
    model.set_flat(&flat).unwrap();
    assert_eq!(model.get_flat(), flat);

    let bad = vec![0.0f32; flat.len() - 1];
    assert!(model.set_flat(&bad).is_err());
}

#[test]
fn flat_length_equals_params_plus_running_stats() {
    let model = LctModel::<f32>::build(cfg_11(), &mut Rng::new(61)).unwrap();
    assert_eq!(
        model.flat_len() as u64,
        count_params(&model) + model.buffer_elements() as u64
    );
}

#[test]
fn forward_rejects_wrong_spatial_size() {
    let mut model = LctModel::<f32>::build(cfg_11(), &mut Rng::new(71)).unwrap();
    let x = random_input(&[1, 28, 28, 3], 72);
    let mut g = Graph::new();
    assert!(model.forward(&mut g, &x, Mode::Eval, &mut Rng::new(0)).is_err());
}

#[test]
fn build_rejects_bad_input_size() {
    let cfg = LctConfig { input: [30, 32, 3], ..cfg_11() };
    assert!(LctModel::<f32>::build(cfg, &mut Rng::new(0)).is_err());
}
