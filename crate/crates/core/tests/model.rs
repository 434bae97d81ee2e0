mod common;

use common::*;
use ofrnn_core::autodiff::{linear_forward, Tape};
use ofrnn_core::decode::CandidatePool;
use ofrnn_core::harness::model_grad_check;
use ofrnn_core::math::sigmoid;
use ofrnn_core::model::{
    attention_scores, attention_weights, context_vector, feature_map_forward, lstm_step, predict_step,
    unroll, unroll_states, BoundParams, FeatureMaps, ModelParams, Trainable, UnrollOptions,
};
use ofrnn_core::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.dims()[1];
    (0..w.dims()[0]).map(|r| dot(&w.data()[r * cols..(r + 1) * cols], x)).collect()
}

#[test]
fn linear_matches_scalar_loop() {
    let mut r = rng(1);
    let x = random_tensor(&mut r, &[4], 2.0);
    let w = random_tensor(&mut r, &[8, 4], 2.0);
    let b = random_tensor(&mut r, &[8], 2.0);
    let y = linear_forward(&x, &w, &b).unwrap();
    for i in 0..8 {
        let mut acc = b.data()[i];
        for j in 0..4 {
            acc += w.data()[i * 4 + j] * x.data()[j];
        }
        assert!((y.data()[i] - acc).abs() < 1e-12);
    }
    assert!(linear_forward(&x, &Tensor::zeros(&[8, 3]), &b).is_err());
}

#[test]
fn feature_head_examples() {
    let mut r = rng(2);
    let fm = random_features(&mut r, 6, 3);
    let mut p = ModelParams::zeros(dims(4, 3, 6)).unwrap();
    let probs = feature_map_forward(&fm, &p.feature).unwrap();
    assert_eq!(probs.data(), &[0.5; 4]);

    p.feature.weight = random_tensor(&mut r, &[4, 3], 1.0);
    p.feature.bias = random_tensor(&mut r, &[4], 1.0);
    let probs = feature_map_forward(&fm, &p.feature).unwrap();
    let mean: Vec<f64> = (0..3).map(|j| (0..6).map(|i| fm.region(i)[j]).sum::<f64>() / 6.0).collect();
    let logits = matvec(&p.feature.weight, &mean);
    for l in 0..4 {
        let want = sigmoid(logits[l] + p.feature.bias.data()[l]);
        assert!((probs.data()[l] - want).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&probs.data()[l]));
    }

    // One region: pooling is the identity.
    let single = FeatureMaps::from_rows(1, 3, fm.region(2).to_vec()).unwrap();
    let pooled = feature_map_forward(&single, &p.feature).unwrap();
    let logits = matvec(&p.feature.weight, fm.region(2));
    for l in 0..4 {
        assert!((pooled.data()[l] - sigmoid(logits[l] + p.feature.bias.data()[l])).abs() < 1e-12);
    }
}

#[test]
fn attention_scores_match_per_region_oracle() {
    let mut r = rng(3);
    let d = dims(3, 4, 7);
    let p = random_model(4, d, 0.8);
    let fm = random_features(&mut r, 7, 4);
    let h = random_tensor(&mut r, &[5], 1.0);
    let eps = attention_scores(&fm, &h, &p.attention).unwrap();
    let from_h = matvec(&p.attention.w_hidden, h.data());
    for i in 0..7 {
        let from_v = matvec(&p.attention.w_region, fm.region(i));
        let mut e = 0.0;
        for a in 0..4 {
            let pre = from_v[a] + from_h[a] + p.attention.bias.data()[a];
            e += p.attention.w_score.data()[a] * pre.tanh();
        }
        assert!((eps.data()[i] - e).abs() < 1e-12);
    }

    let zero = ModelParams::zeros(d).unwrap();
    assert_eq!(attention_scores(&fm, &h, &zero.attention).unwrap().data(), &[0.0; 7]);

    let mut decoupled = p.clone();
    decoupled.attention.w_hidden.data_mut().fill(0.0);
    let a = attention_scores(&fm, &h, &decoupled.attention).unwrap();
    let b = attention_scores(&fm, &random_tensor(&mut r, &[5], 3.0), &decoupled.attention).unwrap();
    assert_eq!(a, b);
}

#[test]
fn attention_weight_examples() {
    let a = attention_weights(&Tensor::vector(vec![3f64.ln(), 0.0])).unwrap();
    assert!((a.data()[0] - 0.75).abs() < 1e-15 && (a.data()[1] - 0.25).abs() < 1e-15);
    let u = attention_weights(&Tensor::vector(vec![0.4; 5])).unwrap();
    assert!(u.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn context_vector_examples() {
    let mut r = rng(5);
    let fm = random_features(&mut r, 5, 3);
    for i in 0..5 {
        let mut alpha = vec![0.0; 5];
        alpha[i] = 1.0;
        let z = context_vector(&fm, &Tensor::vector(alpha)).unwrap();
        assert_eq!(z.data(), fm.region(i));
    }
    let z = context_vector(&fm, &Tensor::filled(&[5], 0.2)).unwrap();
    let alpha = uniform_vec(&mut r, 5, 1.0);
    let zr = context_vector(&fm, &Tensor::vector(alpha.clone())).unwrap();
    for j in 0..3 {
        let mean = (0..5).map(|i| fm.region(i)[j]).sum::<f64>() / 5.0;
        assert!((z.data()[j] - mean).abs() < 1e-12);
        let acc: f64 = (0..5).map(|i| alpha[i] * fm.region(i)[j]).sum();
        assert!((zr.data()[j] - acc).abs() < 1e-12);
    }
    assert!(context_vector(&fm, &Tensor::filled(&[4], 0.25)).is_err());
}

#[test]
fn lstm_step_matches_gate_oracle() {
    let mut r = rng(6);
    let d = dims(3, 2, 4);
    let p = random_model(7, d, 0.9);
    let v = random_tensor(&mut r, &[3], 1.0);
    let z = random_tensor(&mut r, &[2], 1.0);
    let y = Tensor::vector(vec![1.0, 0.0, 1.0]);
    let h0 = random_tensor(&mut r, &[5], 1.0);
    let c0 = random_tensor(&mut r, &[5], 1.0);
    let (h, c) = lstm_step(&v, &z, &y, &h0, &c0, &p.lstm).unwrap();

    let input: Vec<f64> = [v.data(), z.data(), y.data()].concat();
    let hid = 5;
    let wi = &p.lstm.w_input;
    let wh = &p.lstm.w_hidden;
    let pre = |row: usize| -> f64 {
        let mut acc = p.lstm.bias.data()[row];
        for j in 0..input.len() {
            acc += wi.data()[row * input.len() + j] * input[j];
        }
        for j in 0..hid {
            acc += wh.data()[row * hid + j] * h0.data()[j];
        }
        acc
    };
    for u in 0..hid {
        let i = sigmoid(pre(u));
        let f = sigmoid(pre(hid + u));
        let g = pre(2 * hid + u).tanh();
        let o = sigmoid(pre(3 * hid + u));
        let cell = f * c0.data()[u] + i * g;
        assert!((c.data()[u] - cell).abs() < 1e-12);
        assert!((h.data()[u] - o * cell.tanh()).abs() < 1e-12);
    }

    let zero = ModelParams::zeros(d).unwrap();
    let zeros = |n| Tensor::zeros(&[n]);
    let (h, c) = lstm_step(&v, &z, &y, &zeros(5), &zeros(5), &zero.lstm).unwrap();
    assert_eq!((h.data(), c.data()), (&[0.0; 5][..], &[0.0; 5][..]));
    assert!(lstm_step(&v, &z, &y, &zeros(4), &zeros(5), &p.lstm).is_err());
}

#[test]
fn prediction_head_matches_two_layer_oracle() {
    let mut r = rng(8);
    let d = dims(3, 2, 4);
    let p = random_model(9, d, 0.9);
    let v = random_tensor(&mut r, &[3], 1.0);
    let z = random_tensor(&mut r, &[2], 1.0);
    let y = Tensor::vector(vec![0.0, 1.0, 0.0]);
    let h = random_tensor(&mut r, &[5], 1.0);
    let out = predict_step(&v, &z, &y, &h, &p.prediction).unwrap();
    assert_eq!(out.len(), 3);
    let x: Vec<f64> = [v.data(), z.data(), y.data(), h.data()].concat();
    let hidden: Vec<f64> = matvec(&p.prediction.w1, &x)
        .iter()
        .zip(p.prediction.b1.data())
        .map(|(a, b)| (a + b).max(0.0))
        .collect();
    let logits = matvec(&p.prediction.w2, &hidden);
    for l in 0..3 {
        assert!((out.data()[l] - logits[l] - p.prediction.b2.data()[l]).abs() < 1e-12);
    }
    let zero = ModelParams::zeros(d).unwrap();
    assert_eq!(predict_step(&v, &z, &y, &h, &zero.prediction).unwrap().data(), &[0.0; 3]);
}

#[test]
fn two_step_unroll_equals_manual_composition() {
    let mut r = rng(10);
    let d = dims(4, 3, 6);
    let p = random_model(11, d, 0.7);
    let fm = random_features(&mut r, 6, 3);
    let states = unroll_states(&fm, &p, 2, UnrollOptions::confidence()).unwrap();

    let mut v_pred = feature_map_forward(&fm, &p.feature).unwrap();
    let mut h = Tensor::zeros(&[5]);
    let mut c = Tensor::zeros(&[5]);
    let mut y = Tensor::zeros(&[4]);
    let mut pool = CandidatePool::full(4);
    for s in &states {
        let alpha = attention_weights(&attention_scores(&fm, &h, &p.attention).unwrap()).unwrap();
        let z = context_vector(&fm, &alpha).unwrap();
        let (h1, c1) = lstm_step(&v_pred, &z, &y, &h, &c, &p.lstm).unwrap();
        let logits = predict_step(&v_pred, &z, &y, &h1, &p.prediction).unwrap();
        let label = ofrnn_core::decode::pool_select(logits.data(), &pool).unwrap();
        pool.remove(label).unwrap();

        assert!(s.v_pred.max_abs_diff(&v_pred) < 1e-12);
        assert!(s.alpha.max_abs_diff(&alpha) < 1e-12);
        assert!(s.z.max_abs_diff(&z) < 1e-12);
        assert!(s.h.max_abs_diff(&h1) < 1e-12);
        assert!(s.cell.max_abs_diff(&c1) < 1e-12);
        assert!(s.p.max_abs_diff(&logits) < 1e-12);
        assert_eq!(s.label, label);
        assert_eq!(s.pool, pool);

        y.data_mut()[label] = 1.0;
        assert_eq!(s.y_hard, y);
        v_pred = ofrnn_core::autodiff::sigmoid(&logits);
        h = h1;
        c = c1;
    }
}

#[test]
fn step_state_invariants() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let d = dims(5, 3, 4);
        let p = random_model(seed, d, 1.5);
        let fm = random_features(&mut r, 4, 3);
        let states = unroll_states(&fm, &p, 5, UnrollOptions::confidence()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for s in &states {
            assert!((s.alpha.sum() - 1.0).abs() < 1e-9);
            assert_eq!(s.y_hard.sum() as usize, s.t);
            assert_eq!(s.pool.len(), 5 - s.t);
            assert!(seen.insert(s.label));
            for &v in s.p.data() {
                let q = sigmoid(v);
                assert!(q > 0.0 && q < 1.0);
            }
        }
    }
}

#[test]
fn single_region_attention_is_trivial() {
    let mut r = rng(12);
    let p = random_model(13, dims(3, 2, 1), 1.0);
    let fm = random_features(&mut r, 1, 2);
    for s in unroll_states(&fm, &p, 3, UnrollOptions::confidence()).unwrap() {
        assert_eq!(s.alpha.data(), &[1.0]);
        assert_eq!(s.z.data(), fm.region(0));
    }
}

#[test]
fn forced_order_is_validated_and_followed() {
    let mut r = rng(14);
    let p = random_model(15, dims(4, 2, 3), 1.0);
    let fm = random_features(&mut r, 3, 2);
    let order = [2, 0, 3];
    let states = unroll_states(
        &fm,
        &p,
        3,
        UnrollOptions {
            attention_on: true,
            forced_order: Some(&order),
            dropout: None,
        },
    )
    .unwrap();
    assert_eq!(states.iter().map(|s| s.label).collect::<Vec<_>>(), order);
    for bad in [&[2, 2, 0][..], &[0, 1, 4], &[0, 1]] {
        let opts = UnrollOptions {
            attention_on: true,
            forced_order: Some(bad),
            dropout: None,
        };
        assert!(unroll_states(&fm, &p, 3, opts).is_err());
    }
    assert!(unroll_states(&fm, &p, 0, UnrollOptions::confidence()).is_err());
    assert!(unroll_states(&fm, &p, 5, UnrollOptions::confidence()).is_err());
}

#[test]
fn three_step_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let (params, fm, target) = ofrnn_core::harness::gradcheck_problem(seed).unwrap();
        let report = model_grad_check(&params, &fm, &target, 0.8, seed).unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        assert_eq!(report.coordinates, params.to_tensors().iter().map(Tensor::len).sum::<usize>());
    }
}

#[test]
fn attention_off_leaves_theta_a_without_gradient() {
    let mut r = rng(16);
    let d = dims(4, 3, 5);
    let p = random_model(17, d, 1.0);
    let fm = random_features(&mut r, 5, 3);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &p, Trainable::ALL);
    let opts = UnrollOptions {
        attention_on: false,
        ..Default::default()
    };
    let run = unroll(&mut tape, &bound, &fm, &p, 3, opts).unwrap();
    let mut loss = tape.bce_with_logits(run.feature_logits, &[1.0, 0.0, 0.0, 1.0]).unwrap();
    for s in &run.steps {
        assert!(tape.value(s.vars.alpha).data().iter().all(|&a| a == 0.2));
        let l = tape.bce_with_logits(s.vars.logits, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        loss = tape.add(loss, l).unwrap();
    }
    let grads = bound.gradients(&tape.backward(loss).unwrap());
    for (g, (group, _, _)) in grads.iter().zip(p.tensors()) {
        let nonzero = g.data().iter().any(|&v| v != 0.0);
        assert_eq!(nonzero, group != ofrnn_core::model::ParamGroup::Attention, "{}", group.name());
    }

    // Perturbing θ_a changes nothing.
    let mut q = p.clone();
    q.attention.w_region.data_mut()[0] += 5.0;
    q.attention.w_score.data_mut()[1] -= 2.0;
    let off = || UnrollOptions {
        attention_on: false,
        ..Default::default()
    };
    assert_eq!(unroll_states(&fm, &p, 3, off()).unwrap(), unroll_states(&fm, &q, 3, off()).unwrap());
}

#[test]
fn region_permutation_permutes_alpha() {
    let mut r = rng(18);
    let d = dims(3, 2, 5);
    let p = random_model(19, d, 1.0);
    let fm = random_features(&mut r, 5, 2);
    let perm = [3, 0, 4, 1, 2];
    let rows: Vec<f64> = perm.iter().flat_map(|&i| fm.region(i).to_vec()).collect();
    let permuted = FeatureMaps::from_rows(5, 2, rows).unwrap();
    let a = unroll_states(&fm, &p, 3, UnrollOptions::confidence()).unwrap();
    let b = unroll_states(&permuted, &p, 3, UnrollOptions::confidence()).unwrap();
    for (sa, sb) in a.iter().zip(&b) {
        for (j, &i) in perm.iter().enumerate() {
            assert!((sb.alpha.data()[j] - sa.alpha.data()[i]).abs() < 1e-12);
        }
        assert!(sa.z.max_abs_diff(&sb.z) < 1e-12);
        assert_eq!(sa.label, sb.label);
    }

    // Uniform attention: z is the region mean whatever the order.
    let off = || UnrollOptions {
        attention_on: false,
        ..Default::default()
    };
    let a = unroll_states(&fm, &p, 2, off()).unwrap();
    let b = unroll_states(&permuted, &p, 2, off()).unwrap();
    for (sa, sb) in a.iter().zip(&b) {
        assert!(sa.z.max_abs_diff(&sb.z) < 1e-12);
    }
}

#[test]
fn keep_prob_one_equals_no_dropout() {
    let mut r = rng(20);
    let d = dims(4, 3, 5);
    let p = random_model(21, d, 1.0);
    let fm = random_features(&mut r, 5, 3);
    let mut dropout = ofrnn_core::train::Dropout::new(1.0, 9).unwrap();
    let masked = unroll_states(
        &fm,
        &p,
        3,
        UnrollOptions {
            attention_on: true,
            forced_order: None,
            dropout: Some(&mut dropout),
        },
    )
    .unwrap();
    assert_eq!(masked, unroll_states(&fm, &p, 3, UnrollOptions::confidence()).unwrap());
}
