use proptest::prelude::*;
use sepflow_tensor::{Graph, Tensor};

#[test]
fn identity_matmul() {
    let mut g = Graph::<f32>::new();
    let i = g.constant(Tensor::identity(2));
    let m = g.constant(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = g.matmul(i, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn annihilating_matmul() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::new(1, 2, vec![1.0, 0.0]).unwrap());
    let b = g.constant(Tensor::new(2, 1, vec![0.0, 5.0]).unwrap());
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[0.0]);
}

#[test]
fn constant_row_normalizes_to_bias() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::row(vec![5.0, 5.0, 5.0]));
    let gain = g.constant(Tensor::full(1, 3, 1.0));
    let bias = g.constant(Tensor::zeros(1, 3));
    let y = g.layer_norm(x, Some(gain), Some(bias), 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn normalized_row_is_fixed_point() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::row(vec![1.0, -1.0]));
    let y = g.layer_norm(x, None, None, 1e-12).unwrap();
    for (a, b) in g.value(y).data().iter().zip([1.0, -1.0]) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(g.layer_norm(x, None, None, 0.0).is_err());
}

#[test]
fn single_key_attention_returns_value_row() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::from_fn(4, 8, |r, c| (r as f64 - c as f64) * 0.3));
    let k = g.constant(Tensor::from_fn(1, 8, |_, c| c as f64));
    let v = g.constant(Tensor::from_fn(1, 8, |_, c| 10.0 - c as f64));
    let out = g.attention(q, k, v, 2).unwrap();
    for r in 0..4 {
        assert_eq!(g.value(out).row_slice(r), g.value(v).row_slice(0));
    }
}

#[test]
fn dominant_key_selects_its_value() {
    // Scaled logit margin: 20²/sqrt(4) vs 0 → weight on other keys ≈ e^-200.
    let d = 4;
    let q = Tensor::<f64>::from_fn(3, d, |r, c| if r == c { 20.0 } else { 0.0 });
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let v = g.constant(Tensor::identity(d).slice_rows(0, 3));
    let out = g.attention(qv, qv, v, 1).unwrap();
    for r in 0..3 {
        for c in 0..d {
            let expect = if r == c { 1.0 } else { 0.0 };
            assert!((g.value(out).at(r, c) - expect).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_deterministic_and_pure(seed in 0u64..1000, rows in 1usize..6) {
        let x = Tensor::<f64>::from_fn(rows, 8, |r, c| ((seed as f64 + 1.0) * (r * 8 + c) as f64 * 0.17).sin());
        let w = Tensor::<f64>::from_fn(8, 8, |r, c| ((r + 3 * c) as f64 * 0.11 + seed as f64).cos());
        let run = || {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let wv = g.param(w.clone());
            let h = g.matmul(xv, wv).unwrap();
            let n = g.layer_norm(h, None, None, 1e-5).unwrap();
            let a = g.attention(n, n, n, 2).unwrap();
            let y = g.gelu(a);
            let loss = g.mean(y);
            let grads = g.backward(loss).unwrap();
            prop_assert_eq!(g.value(xv), &x.clone().tracked());
            prop_assert_eq!(g.value(wv), &w.clone().tracked());
            Ok((grads.get(xv).unwrap().clone(), grads.get(wv).unwrap().clone()))
        };
        let first = run()?;
        let second = run()?;
        for (a, b) in first.0.data().iter().zip(second.0.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in first.1.data().iter().zip(second.1.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert!(first.0.all_finite() && first.1.all_finite());
    }
}
