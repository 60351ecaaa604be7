//! Hand-checkable forward values and error paths for the primitive ops.

use lct_core::{Graph, Mode, Padding, Rng, Tensor};

fn leaf_f64(g: &mut Graph<f64>, shape: &[usize], data: Vec<f64>) -> lct_core::NodeId {
    g.leaf(Tensor::from_vec(shape.to_vec(), data).unwrap())
}

#[test]
fn conv2d_ones_kernel_sums_receptive_field() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 3, 3, 1], vec![1.0; 9]);
    let w = leaf_f64(&mut g, &[3, 3, 1, 1], vec![1.0; 9]);
    let y = g.conv2d(x, w, 1, Padding::Same).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 3, 3, 1]);
    // corners see a 2x2 patch, center the full 3x3
    assert_eq!(out.data()[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(out.data()[corner], 4.0);
    }
    for edge in [1, 3, 5, 7] {
        assert_eq!(out.data()[edge], 6.0);
    }
}

#[test]
fn conv2d_stride2_same_halves_spatial() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 4, 4, 1], (0..16).map(|v| v as f64).collect());
    let w = leaf_f64(&mut g, &[3, 3, 1, 1], vec![1.0; 9]);
    let y = g.conv2d(x, w, 2, Padding::Same).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 2, 1]);
}

#[test]
fn conv2d_channel_mismatch_and_bad_stride() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 4, 4, 2], vec![0.0; 32]);
    let w = leaf_f64(&mut g, &[3, 3, 3, 4], vec![0.0; 108]);
    assert!(g.conv2d(x, w, 1, Padding::Same).is_err());
    let w2 = leaf_f64(&mut g, &[3, 3, 2, 4], vec![0.0; 72]);
    assert!(g.conv2d(x, w2, 0, Padding::Same).is_err());
}

#[test]
fn depthwise_ones_valid_sums_window() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 3, 3, 2], vec![1.0; 18]);
    let w = leaf_f64(&mut g, &[3, 3, 2], vec![1.0; 18]);
    let y = g.depthwise_conv2d(x, w, 1, Padding::Valid).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 2]);
    assert_eq!(g.value(y).data(), &[9.0, 9.0]);
}

#[test]
fn depthwise_channel_isolation() {
    let mut rng = Rng::new(11);
    let base: Vec<f64> = (0..2 * 5 * 5 * 3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let w: Vec<f64> = (0..27).map(|_| rng.uniform_range(-1.0, 1.0)).collect();

    let run = |xdata: Vec<f64>| {
        let mut g = Graph::<f64>::new();
        let x = leaf_f64(&mut g, &[2, 5, 5, 3], xdata);
        let wn = leaf_f64(&mut g, &[3, 3, 3], w.clone());
        let y = g.depthwise_conv2d(x, wn, 1, Padding::Same).unwrap();
        g.value(y).data().to_vec()
    };

    let y0 = run(base.clone());
    let mut perturbed = base.clone();
    for (i, v) in perturbed.iter_mut().enumerate() {
        if i % 3 == 0 {
            *v += 0.5; // bump channel 0 only
        }
    }
    let y1 = run(perturbed);
    for (i, (a, b)) in y0.iter().zip(&y1).enumerate() {
        if i % 3 == 0 {
            assert_ne!(a, b, "channel 0 output should change at {i}");
        } else {
            assert_eq!(a, b, "channels 1,2 must be bit-identical at {i}");
        }
    }
}

#[test]
fn pointwise_identity_weight_is_identity() {
    let mut rng = Rng::new(3);
    let xdata: Vec<f64> = (0..1 * 4 * 4 * 3).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 4, 4, 3], xdata.clone());
    let w = leaf_f64(&mut g, &[3, 3], eye);
    let y = g.pointwise_conv2d(x, w).unwrap();
    assert_eq!(g.value(y).data(), xdata.as_slice());
}

#[test]
fn pointwise_equals_flattened_matmul() {
    let mut rng = Rng::new(4);
    let xdata: Vec<f64> = (0..2 * 3 * 3 * 4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let wdata: Vec<f64> = (0..4 * 5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();

    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[2, 3, 3, 4], xdata.clone());
    let w = leaf_f64(&mut g, &[4, 5], wdata.clone());
    let y = g.pointwise_conv2d(x, w).unwrap();

    let mut g2 = Graph::<f64>::new();
    let xf = leaf_f64(&mut g2, &[18, 4], xdata);
    let wf = leaf_f64(&mut g2, &[4, 5], wdata);
    let ym = g2.matmul(xf, wf).unwrap();

    assert_eq!(g.value(y).data(), g2.value(ym).data());
}

#[test]
fn batchnorm_normalizes_two_point_batch() {
    // values {1,3} in one channel: mean 2, biased std 1 -> {-1,+1}
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[2, 1, 1, 1], vec![1.0, 3.0]);
    let gamma = leaf_f64(&mut g, &[1], vec![1.0]);
    let beta = leaf_f64(&mut g, &[1], vec![0.0]);
    let (y, mean, var) = g.batchnorm_train(x, gamma, beta, 1e-12).unwrap();
    assert!((g.value(y).data()[0] + 1.0).abs() < 1e-6);
    assert!((g.value(y).data()[1] - 1.0).abs() < 1e-6);
    assert_eq!(mean, vec![2.0]);
    assert_eq!(var, vec![1.0]);
}

#[test]
fn batchnorm_constant_input_gives_zeros() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[4, 2, 2, 3], vec![7.5; 48]);
    let gamma = leaf_f64(&mut g, &[3], vec![1.0; 3]);
    let beta = leaf_f64(&mut g, &[3], vec![0.0; 3]);
    let (y, _, _) = g.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    for v in g.value(y).data() {
        assert_eq!(*v, 0.0);
    }
}

#[test]
fn batchnorm_eval_with_initial_stats_is_affine_identity() {
    // eval before any train update: running mean 0, var 1
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 1, 2, 2], vec![0.5, -0.25, 2.0, 0.0]);
    let gamma = leaf_f64(&mut g, &[2], vec![1.0; 2]);
    let beta = leaf_f64(&mut g, &[2], vec![0.0; 2]);
    let y = g.batchnorm_eval(x, gamma, beta, &[0.0, 0.0], &[1.0, 1.0], 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, -0.25, 2.0, 0.0]);
}

#[test]
fn layernorm_constant_token_and_prenormalized_token() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 2, 2], vec![3.0, 3.0, -1.0, 1.0]);
    let gamma = leaf_f64(&mut g, &[2], vec![1.0; 2]);
    let beta = leaf_f64(&mut g, &[2], vec![0.0; 2]);
    let y = g.layernorm(x, gamma, beta, 1e-12).unwrap();
    let out = g.value(y).data();
    // constant token -> zeros
    assert!(out[0].abs() < 1e-5 && out[1].abs() < 1e-5);
    // [-1,1] already has mean 0, std 1
    assert!((out[2] + 1.0).abs() < 1e-6 && (out[3] - 1.0).abs() < 1e-6);
}

#[test]
fn layernorm_dim_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 2, 4], vec![0.0; 8]);
    let gamma = leaf_f64(&mut g, &[3], vec![1.0; 3]);
    let beta = leaf_f64(&mut g, &[3], vec![0.0; 3]);
    assert!(g.layernorm(x, gamma, beta, 1e-5).is_err());
}

fn attention_leaves(g: &mut Graph<f64>, d: usize, rng: &mut Rng) -> lct_core::AttentionNodes {
    let mut mat = |g: &mut Graph<f64>| {
        let data: Vec<f64> = (0..d * d).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        g.leaf(Tensor::from_vec(vec![d, d], data).unwrap())
    };
    let wq = mat(g);
    let wk = mat(g);
    let wv = mat(g);
    let wo = mat(g);
    let mut bias = |g: &mut Graph<f64>| {
        let data: Vec<f64> = (0..d).map(|_| rng.uniform_range(-0.1, 0.1)).collect();
        g.leaf(Tensor::from_vec(vec![d], data).unwrap())
    };
    let bq = bias(g);
    let bk = bias(g);
    let bv = bias(g);
    let bo = bias(g);
    lct_core::AttentionNodes { wq, bq, wk, bk, wv, bv, wo, bo }
}

#[test]
fn mhsa_single_token_reduces_to_value_path() {
    let d = 8;
    let mut rng = Rng::new(9);
    let mut g = Graph::<f64>::new();
    let zdata: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let z = leaf_f64(&mut g, &[1, 1, d], zdata);
    let p = attention_leaves(&mut g, d, &mut rng);
    let mut drng = Rng::new(0);
    let y = g.mhsa(z, &p, 2, 0.0, Mode::Eval, &mut drng).unwrap();

    // with T=1 the softmax weight is exactly 1: out = Wo(Wv z + bv) + bo
    let v = g.linear(z, p.wv, p.bv).unwrap();
    let expect = g.linear(v, p.wo, p.bo).unwrap();
    let (ya, yb) = (g.value(y).data(), g.value(expect).data());
    for (a, b) in ya.iter().zip(yb) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn mhsa_is_token_permutation_equivariant() {
    let (n, t, d) = (2, 5, 8);
    let mut rng = Rng::new(10);
    let zdata: Vec<f64> = (0..n * t * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let perm = vec![3, 0, 4, 1, 2];

    let mut g = Graph::<f64>::new();
    let z = leaf_f64(&mut g, &[n, t, d], zdata);
    let p = attention_leaves(&mut g, d, &mut rng);
    let mut drng = Rng::new(0);
    let y = g.mhsa(z, &p, 4, 0.0, Mode::Eval, &mut drng).unwrap();
    let y_perm = g.permute_tokens(y, &perm).unwrap();

    let zp = g.permute_tokens(z, &perm).unwrap();
    let y2 = g.mhsa(zp, &p, 4, 0.0, Mode::Eval, &mut drng).unwrap();

    for (a, b) in g.value(y_perm).data().iter().zip(g.value(y2).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mhsa_rejects_indivisible_heads() {
    let mut g = Graph::<f64>::new();
    let z = leaf_f64(&mut g, &[1, 2, 6], vec![0.0; 12]);
    let p = attention_leaves(&mut g, 6, &mut Rng::new(0));
    let mut drng = Rng::new(0);
    assert!(g.mhsa(z, &p, 4, 0.0, Mode::Eval, &mut drng).is_err());
}

#[test]
fn softmax_symmetry_and_row_sums() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 2], vec![0.0, 0.0]);
    let y = g.softmax(x, 1).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let mut rng = Rng::new(2);
    let data: Vec<f64> = (0..60).map(|_| rng.uniform_range(-30.0, 30.0)).collect();
    let x2 = leaf_f64(&mut g, &[5, 12], data);
    let y2 = g.softmax(x2, 1).unwrap();
    for row in g.value(y2).data().chunks(12) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
    }
}

#[test]
fn elementwise_fixed_points() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[3], vec![-1.0, 0.0, 2.0]);
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let ge = g.gelu(x).unwrap();
    assert_eq!(g.value(ge).data()[1], 0.0);
    // gelu(x) -> x for large x, -> 0 for very negative x
    let big = leaf_f64(&mut g, &[2], vec![10.0, -10.0]);
    let gb = g.gelu(big).unwrap();
    assert!((g.value(gb).data()[0] - 10.0).abs() < 1e-9);
    assert!(g.value(gb).data()[1].abs() < 1e-9);
}

#[test]
fn dropout_statistics_and_scaling() {
    let n = 10_000;
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[n], vec![2.0; n]);
    let mut rng = Rng::new(77).substream("dropout");
    let y = g.dropout(x, 0.5, &mut rng).unwrap();
    let out = g.value(y).data();
    let kept = out.iter().filter(|v| **v != 0.0).count();
    let frac = kept as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.05, "kept fraction {frac}");
    for v in out {
        assert!(*v == 0.0 || (*v - 4.0).abs() < 1e-12, "kept values scaled by 1/(1-p): {v}");
    }
}

#[test]
fn dropout_rejects_bad_probability() {
    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[2], vec![1.0, 2.0]);
    let mut rng = Rng::new(0);
    assert!(g.dropout(x, 1.0, &mut rng).is_err());
    assert!(g.dropout(x, -0.1, &mut rng).is_err());
}

#[test]
fn backward_linear_and_quadratic() {
    // loss = sum(x) -> grad ones
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap().with_grad());
    let loss = g.sum(x).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);

    // loss = sum(x*x) -> grad 2x
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap().with_grad());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_rejects_nonscalar_and_double_call() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    assert!(g.backward(x).is_err());

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let loss = g.sum(x).unwrap();
    g.backward(loss).unwrap();
    assert!(g.backward(loss).is_err());
}

#[test]
fn label_smoothed_ce_uniform_logits_is_ln_k() {
    let mut g = Graph::<f64>::new();
    let logits = leaf_f64(&mut g, &[4, 10], vec![0.3; 40]);
    for eps in [0.0, 0.1, 0.5] {
        let loss = g.label_smoothed_ce(logits, &[1, 5, 0, 9], eps).unwrap();
        assert!((g.value(loss).item() - (10.0f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn label_smoothed_ce_eps_zero_is_plain_ce() {
    let mut rng = Rng::new(6);
    let logits_data: Vec<f64> = (0..3 * 5).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let labels = [2usize, 0, 4];
    let mut g = Graph::<f64>::new();
    let logits = leaf_f64(&mut g, &[3, 5], logits_data.clone());
    let loss = g.label_smoothed_ce(logits, &labels, 0.0).unwrap();

    // independent plain cross-entropy
    let mut expect = 0.0;
    for (r, &lbl) in labels.iter().enumerate() {
        let row = &logits_data[r * 5..(r + 1) * 5];
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        expect -= row[lbl] - max - denom.ln();
    }
    expect /= 3.0;
    assert!((g.value(loss).item() - expect).abs() < 1e-12);
}

#[test]
fn label_smoothed_ce_rejects_bad_labels() {
    let mut g = Graph::<f64>::new();
    let logits = leaf_f64(&mut g, &[2, 3], vec![0.0; 6]);
    assert!(g.label_smoothed_ce(logits, &[0, 3], 0.1).is_err());
}

#[test]
fn graph_macs_count_matmul_and_conv() {
    let mut g = Graph::<f64>::new();
    let a = leaf_f64(&mut g, &[4, 6], vec![0.0; 24]);
    let b = leaf_f64(&mut g, &[6, 5], vec![0.0; 30]);
    g.matmul(a, b).unwrap();
    assert_eq!(g.macs(), 4 * 6 * 5);

    let mut g = Graph::<f64>::new();
    let x = leaf_f64(&mut g, &[1, 32, 32, 3], vec![0.0; 3072]);
    let w = leaf_f64(&mut g, &[3, 3, 3, 64], vec![0.0; 1728]);
    g.conv2d(x, w, 2, Padding::Same).unwrap();
    assert_eq!(g.macs(), 442_368); // 3*3*3*64*16*16
}
