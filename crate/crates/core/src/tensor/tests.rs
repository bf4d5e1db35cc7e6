use proptest::prelude::*;
use crate::rng::Rng;

use super::*;

fn store_with(inputs: &[(&str, &[usize], Vec<f64>)]) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = inputs
        .iter()
        .map(|(name, shape, values)| store.add(*name, shape, values.clone()).unwrap())
        .collect();
    (store, ids)
}

fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

#[test]
fn matmul_identity_and_selector() {
    let mut tape = Tape::new();
    let eye = tape.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let m = tape.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);

    let sel = tape.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
    let col = tape.constant(vec![2.0, 5.0], &[2, 1]).unwrap();
    let out = tape.matmul(sel, col).unwrap();
    assert_eq!(tape.shape(out), &[1, 1]);
    assert_eq!(tape.value(out), &[2.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.zeros(&[2, 3]);
    let b = tape.zeros(&[2, 3]);
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3] × [2, 3]"), "{}", err);
}

#[test]
fn matmul_sum_gradient() {
    let mut rng = Rng::new(3);
    let a = random(&mut rng, 6);
    let b = random(&mut rng, 12);
    let (mut store, ids) = store_with(&[("a", &[2, 3], a), ("b", &[3, 4], b.clone())]);
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let a = s.bind(t, ids[0]);
        let b = s.bind(t, ids[1]);
        let c = t.matmul(a, b)?;
        Ok(t.sum(c))
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-6, "{:?}", report);
    // d/dA[i,p] of Σ AB is the p-th row sum of B, broadcast over rows i.
    let grad = &store.get(ids[0]).grad;
    for i in 0..2 {
        for p in 0..3 {
            let row_sum: f64 = b[p * 4..(p + 1) * 4].iter().sum();
            assert!((grad[i * 3 + p] - row_sum).abs() < 1e-12);
        }
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![1.0, 2.0], &[2]).unwrap();
    let b = tape.constant(vec![3.0, 4.0], &[2]).unwrap();
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s), &[4.0, 6.0]);
    let ones = tape.constant(vec![1.0, 1.0], &[2]).unwrap();
    let m = tape.mul(a, ones).unwrap();
    assert_eq!(tape.value(m), tape.value(a));
    let c = tape.zeros(&[3]);
    assert!(matches!(tape.add(a, c), Err(Error::Shape { .. })));
}

#[test]
fn mul_gradient_check() {
    let mut rng = Rng::new(11);
    let (mut store, ids) = store_with(&[("a", &[3, 3], random(&mut rng, 9)), ("b", &[3, 3], random(&mut rng, 9))]);
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let (a, b) = (s.bind(t, ids[0]), s.bind(t, ids[1]));
        let m = t.mul(a, b)?;
        let sq = t.mul(m, m)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-6, "{:?}", report);
}

#[test]
fn concat_examples_and_gradient() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![1.0], &[1]).unwrap();
    let b = tape.constant(vec![2.0], &[1]).unwrap();
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c), &[1.0, 2.0]);

    let fwd = tape.zeros(&[3, 4]);
    let bwd = tape.zeros(&[3, 4]);
    let h = tape.concat(&[fwd, bwd], 1).unwrap();
    assert_eq!(tape.shape(h), &[3, 8]);

    let bad = tape.zeros(&[2, 4]);
    assert!(tape.concat(&[fwd, bad], 1).is_err());

    let mut rng = Rng::new(5);
    let weights = random(&mut rng, 2 * 5);
    let (mut store, ids) = store_with(&[("a", &[2, 2], random(&mut rng, 4)), ("b", &[2, 3], random(&mut rng, 6))]);
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let (a, b) = (s.bind(t, ids[0]), s.bind(t, ids[1]));
        let c = t.concat(&[a, b], 1)?;
        let w = t.constant(weights.clone(), &[2, 5])?;
        let p = t.mul(c, w)?;
        let q = t.mul(p, c)?;
        Ok(t.sum(q))
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-6, "{:?}", report);
}

#[test]
fn activation_values_and_gradients() {
    let mut tape = Tape::new();
    let z = tape.scalar(0.0, false);
    let s = tape.sigmoid(z);
    let th = tape.tanh(z);
    assert_eq!(tape.item(s), 0.5);
    assert_eq!(tape.item(th), 0.0);

    for kind in [Activation::Sigmoid, Activation::Tanh] {
        let mut rng = Rng::new(17);
        let (mut store, ids) = store_with(&[("x", &[6], random(&mut rng, 6))]);
        let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
            let x = s.bind(t, ids[0]);
            let y = t.activation(x, kind);
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-6, "{:?}: {:?}", kind, report);
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![0.0, 0.0], &[2]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y), &[0.5, 0.5]);

    let x = tape.constant(vec![1.0, -1.0], &[2]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert!((tape.value(y)[0] - 0.88080).abs() <= 1e-4);
    assert!((tape.value(y)[1] - 0.11920).abs() <= 1e-4);

    let x = tape.constant(vec![1000.0, 0.0], &[2]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert!(tape.value(y).iter().all(|v| v.is_finite()));

    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_axis_zero_runs_down_columns() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![1.0, 5.0, 1.0, -3.0], &[2, 2]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y);
    assert_eq!(v[0], 0.5);
    assert_eq!(v[2], 0.5);
    assert!((v[1] + v[3] - 1.0).abs() < 1e-15);
}

#[test]
fn masked_softmax_excludes_entries() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3.0, 100.0, 3.0, 1.0, 2.0, 3.0], &[2, 3]).unwrap();
    let y = tape
        .masked_softmax(x, vec![true, false, true, false, false, false])
        .unwrap();
    assert_eq!(tape.value(y), &[0.5, 0.0, 0.5, 0.0, 0.0, 0.0]);
}

#[test]
fn dropout_contract() {
    let mut tape = Tape::new();
    let mut rng = Rng::new(1);
    let x = tape.constant(vec![1.0; 100_000], &[100_000]).unwrap();
    let same = tape.dropout(x, 0.0, &mut rng, true).unwrap();
    assert_eq!(same, x);
    let eval = tape.dropout(x, 0.7, &mut rng, false).unwrap();
    assert_eq!(eval, x);
    assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());

    let rate = 0.4;
    let y = tape.dropout(x, rate, &mut rng, true).unwrap();
    let zeros = tape.value(y).iter().filter(|&&v| v == 0.0).count();
    let frac = zeros as f64 / 100_000.0;
    assert!((frac - rate).abs() <= 0.01, "{}", frac);
    let survivor = tape.value(y).iter().find(|&&v| v != 0.0).unwrap();
    assert!((survivor - 1.0 / 0.6).abs() < 1e-15);
}

#[test]
fn backward_square_and_accumulation() {
    let mut tape = Tape::new();
    let x = tape.scalar(3.0, true);
    let loss = tape.mul(x, x).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), vec![6.0]);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), vec![12.0]);
    tape.zero_grad();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), vec![6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
}

#[test]
fn sum_sigmoid_gradient() {
    let mut rng = Rng::new(23);
    let (mut store, ids) = store_with(&[("x", &[8], random(&mut rng, 8))]);
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let x = s.bind(t, ids[0]);
        let y = t.sigmoid(x);
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-5);
}

#[test]
fn grad_check_trivial_functions() {
    let (mut store, ids) = store_with(&[("x", &[], vec![3.0])]);
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let x = s.bind(t, ids[0]);
        t.mul(x, x)
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-6);
    assert!((store.get(ids[0]).grad[0] - 6.0).abs() < 1e-12);

    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |_, t| Ok(t.scalar(2.5, false))).unwrap();
    assert_eq!(report.max_relative_error, 0.0);
}

#[test]
fn nll_gradient_and_errors() {
    let mut tape = Tape::new();
    let p = tape.constant(vec![0.25; 8], &[2, 4]).unwrap();
    let l = tape.nll(p, &[Some(1), None]).unwrap();
    assert!((tape.item(l) - 4f64.ln()).abs() < 1e-15);
    assert!(tape.nll(p, &[Some(4), None]).is_err());
    assert!(tape.nll(p, &[Some(1)]).is_err());
}

#[test]
fn first_non_finite_names_the_node() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![0.0, 1.0], &[1, 2]).unwrap();
    let _ok = tape.exp(x);
    let l = tape.nll(x, &[Some(0)]).unwrap();
    match tape.first_non_finite() {
        Some(Error::NonFinite { node, op, .. }) => {
            assert_eq!(node, l.index());
            assert_eq!(op, "nll");
        }
        other => panic!("{:?}", other),
    }
}

#[test]
fn embed_skips_pad_row() {
    let (mut store, ids) = store_with(&[("table", &[3, 2], vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0])]);
    let mut tape = Tape::new();
    let table = store.bind(&mut tape, ids[0]);
    let e = tape.embed(table, &[1, 0, 1, 2], 0).unwrap();
    assert_eq!(tape.row(e, 1), &[0.0, 0.0]);
    assert_eq!(tape.row(e, 0), tape.row(e, 2));
    let loss = tape.sum(e);
    tape.backward(loss).unwrap();
    store.accumulate_grads(&tape);
    // gradient of the sum is the occurrence count of each token in its row
    assert_eq!(store.get(ids[0]).grad, vec![0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let table = store.bind(&mut tape, ids[0]);
    assert!(tape.embed(table, &[3], 0).is_err());
}

/// One random instance of every differentiable operation, composed into a
/// scalar via a fixed random projection.
fn op_suite(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let r = rng.inclusive(1, 4);
    let c = rng.inclusive(1, 4);
    let k = rng.inclusive(1, 4);
    let inputs = [
        ("a", vec![r, k], random(&mut rng, r * k)),
        ("b", vec![k, c], random(&mut rng, k * c)),
        ("bt", vec![c, k], random(&mut rng, c * k)),
        ("m", vec![r, c], random(&mut rng, r * c)),
        ("bias", vec![c], random(&mut rng, c)),
        ("s", vec![], random(&mut rng, 1)),
    ];
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .map(|(n, s, v)| store.add(*n, s, v.clone()).unwrap())
        .collect();
    let proj = random(&mut rng, r * c);
    let allowed: Vec<bool> = (0..r * c).map(|i| i % c != 0 || c == 1).collect();
    let drop_seed = rng.below(1000) as u64;
    let report = grad_check(&mut store, &ids, DEFAULT_EPSILON, |s, t| {
        let v: Vec<Var> = ids.iter().map(|&id| s.bind(t, id)).collect();
        let ab = t.matmul(v[0], v[1])?;
        let abt = t.matmul_t(v[0], v[2])?;
        let x = t.add(ab, abt)?;
        let x = t.sub(x, v[3])?;
        let x = t.add_row(x, v[4])?;
        let x = t.scale_by(x, v[5])?;
        let x = t.add_scalar(x, v[5])?;
        let sig = t.sigmoid(x);
        let th = t.tanh(x);
        let x = t.mul(sig, th)?;
        let ax = t.abs(x);
        let ex = t.exp(ax);
        let sm = t.softmax(ex, 1)?;
        let sm0 = t.softmax(x, 0)?;
        let ms = t.masked_softmax(x, allowed.clone())?;
        let x = t.add(sm, sm0)?;
        let x = t.add(x, ms)?;
        let tr = t.transpose(x)?;
        let back = t.transpose(tr)?;
        let both = t.concat(&[back, x], 1)?;
        let x = t.slice_cols(both, c / 2, c)?;
        let g = t.gather_rows((0..r).rev().map(|i| Some((x, i))).collect(), c)?;
        let mut drng = Rng::new(drop_seed);
        let g = t.dropout(g, 0.3, &mut drng, true)?;
        let w = t.constant(proj.clone(), &[r, c])?;
        let out = t.mul(g, w)?;
        let out = t.scale(out, 0.7);
        let probs = t.softmax(out, 1)?;
        let targets: Vec<Option<usize>> = (0..r).map(|i| if i == 0 { None } else { Some(i % c) }).collect();
        let nll = t.nll(probs, &targets)?;
        let total = t.sum(out);
        t.add(total, nll)
    })
    .unwrap();
    report.max_relative_error
}

#[test]
fn every_op_passes_grad_check_on_random_inputs() {
    for seed in 0..10 {
        let err = op_suite(seed);
        assert!(err <= 1e-5, "seed {}: {}", seed, err);
    }
}

#[test]
fn replay_is_bit_identical() {
    assert_eq!(op_suite(3).to_bits(), op_suite(3).to_bits());
}

#[test]
fn zero_grad_then_backward_equals_fresh() {
    let mut rng = Rng::new(9);
    let (mut store, ids) = store_with(&[("x", &[2, 3], random(&mut rng, 6)), ("w", &[3, 3], random(&mut rng, 9))]);
    let run = |store: &ParamStore, tape: &mut Tape| {
        let x = store.bind(tape, ids[0]);
        let w = store.bind(tape, ids[1]);
        let y = tape.matmul(x, w).unwrap();
        let y = tape.tanh(y);
        tape.sum(y)
    };
    let mut tape = Tape::new();
    let loss = run(&store, &mut tape);
    tape.backward(loss).unwrap();
    store.accumulate_grads(&tape);
    let fresh = store.get(ids[1]).grad.clone();
    store.accumulate_grads(&tape);
    store.zero_grad();
    tape.zero_grad();
    tape.backward(loss).unwrap();
    store.accumulate_grads(&tape);
    assert_eq!(store.get(ids[1]).grad, fresh);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
        let n = values.len();
        let mut tape = Tape::new();
        let x = tape.constant(values, &[n]).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        let total: f64 = tape.value(y).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        // entries are strictly inside (0, 1) unless the row is a singleton
        for &v in tape.value(y) {
            prop_assert!(v > 0.0 && (v < 1.0 || n == 1));
        }
    }
}
