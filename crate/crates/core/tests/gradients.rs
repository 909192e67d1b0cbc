//! Finite-difference verification of every autodiff primitive and of small
//! composite graphs.

use unitab_core::gradcheck::grad_check;
use unitab_core::tape::{mask_value, Tape};
use unitab_core::tensor::Tensor;
use unitab_core::CoreError;

fn seeded(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    // Deterministic quasi-random fill in [-1, 1], no RNG dependency needed.
    let n: usize = shape.iter().product();
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let data = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn matmul_gradients() {
    let params = vec![seeded(vec![3, 4], 1), seeded(vec![4, 2], 2)];
    let err = grad_check(
        |tape, p| {
            let c = tape.matmul(&p[0], &p[1])?;
            tape.mean(&c)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "matmul rel err {err}");
}

#[test]
fn matmul_nt_gradients() {
    let params = vec![seeded(vec![3, 4], 3), seeded(vec![5, 4], 4)];
    let err = grad_check(
        |tape, p| {
            let c = tape.matmul_nt(&p[0], &p[1])?;
            tape.mean(&c)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "matmul_nt rel err {err}");
}

#[test]
fn add_scale_bias_gradients() {
    let params = vec![seeded(vec![4, 3], 5), seeded(vec![4, 3], 6), seeded(vec![3], 7)];
    let err = grad_check(
        |tape, p| {
            let s = tape.add(&p[0], &p[1])?;
            let sc = tape.scale(&s, 1.7)?;
            let b = tape.add_bias(&sc, &p[2])?;
            tape.mean(&b)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "add/scale/bias rel err {err}");
}

#[test]
fn softmax_gradients() {
    let params = vec![seeded(vec![3, 5], 8)];
    let err = grad_check(
        |tape, p| {
            let s = tape.softmax_lastdim(&p[0])?;
            // weight the entries so the gradient is not trivially zero
            let w = seeded(vec![3, 5], 9);
            let prod = tape.squared_error(&s, &w)?;
            tape.mean(&prod)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-5, "softmax rel err {err}");
}

#[test]
fn layernorm_gradients() {
    let params = vec![seeded(vec![4, 6], 10), seeded(vec![6], 11), seeded(vec![6], 12)];
    let err = grad_check(
        |tape, p| {
            let y = tape.layernorm_lastdim(&p[0], &p[1], &p[2], 1e-5)?;
            let target = seeded(vec![4, 6], 13);
            let e = tape.squared_error(&y, &target)?;
            tape.mean(&e)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-5, "layernorm rel err {err}");
}

#[test]
fn gelu_gradients() {
    let params = vec![seeded(vec![5, 3], 14)];
    let err = grad_check(
        |tape, p| {
            let g = tape.gelu(&p[0])?;
            tape.mean(&g)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "gelu rel err {err}");
}

#[test]
fn embed_lookup_gradients() {
    let params = vec![seeded(vec![7, 4], 15)];
    let err = grad_check(
        |tape, p| {
            let rows = tape.embed_lookup(&p[0], &[0, 3, 3, 6, 1])?;
            let t = seeded(vec![5, 4], 16);
            let e = tape.squared_error(&rows, &t)?;
            tape.mean(&e)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "embed rel err {err}");
}

#[test]
fn concat_slice_reshape_gradients() {
    let params = vec![seeded(vec![3, 4], 17), seeded(vec![2, 4], 18)];
    let err = grad_check(
        |tape, p| {
            let cat = tape.concat_rows(&[&p[0], &p[1]])?;
            let left = tape.slice_cols(&cat, 0, 2)?;
            let right = tape.slice_cols(&cat, 2, 4)?;
            let side = tape.concat_cols(&[&right, &left])?;
            let head = tape.slice_rows(&side, 1, 4)?;
            let flat = tape.reshape(&head, vec![12])?;
            tape.sum(&flat)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "concat/slice rel err {err}");
}

#[test]
fn cross_entropy_gradients() {
    let params = vec![seeded(vec![4, 3], 19)];
    let err = grad_check(
        |tape, p| {
            let ce = tape.cross_entropy(&p[0], &[0, 2, 1, 2])?;
            tape.mean(&ce)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "cross-entropy rel err {err}");
}

// Composite: a miniature attention-shaped graph exercising most primitives
// together, including an additive mask.
#[test]
fn composite_graph_matches_finite_differences() {
    let params = vec![
        seeded(vec![4, 3], 20), // x
        seeded(vec![3, 3], 21), // wq
        seeded(vec![3, 3], 22), // wk
        seeded(vec![3, 3], 23), // wv
        seeded(vec![3], 24),    // gamma
        seeded(vec![3], 25),    // beta
    ];
    let err = grad_check(
        |tape, p| {
            let h = tape.layernorm_lastdim(&p[0], &p[4], &p[5], 1e-5)?;
            let q = tape.matmul(&h, &p[1])?;
            let k = tape.matmul(&h, &p[2])?;
            let v = tape.matmul(&h, &p[3])?;
            let scores = tape.matmul_nt(&q, &k)?;
            let scaled = tape.scale(&scores, 1.0 / (3.0f64).sqrt())?;
            let mut mask_vals = vec![0.0; 16];
            mask_vals[3] = mask_value::<f64>();
            mask_vals[7] = mask_value::<f64>();
            let mask = Tensor::from_vec(vec![4, 4], mask_vals).unwrap();
            let masked = tape.add(&scaled, &mask)?;
            let probs = tape.softmax_lastdim(&masked)?;
            let out = tape.matmul(&probs, &v)?;
            let act = tape.gelu(&out)?;
            tape.mean(&act)
        },
        &params,
        64,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "composite rel err {err}");
}

#[test]
fn linear_layer_passes_tight_tolerance() {
    let params = vec![seeded(vec![6, 4], 26), seeded(vec![4], 27)];
    let x = seeded(vec![8, 6], 28);
    let y = seeded(vec![8, 4], 29);
    let err = grad_check(
        |tape, p| {
            let z = tape.matmul(&x, &p[0])?;
            let zb = tape.add_bias(&z, &p[1])?;
            let e = tape.squared_error(&zb, &y)?;
            tape.mean(&e)
        },
        &params,
        128,
        0,
    )
    .unwrap();
    assert!(err < 1e-6, "linear layer rel err {err}");
}

#[test]
fn constant_function_has_zero_error() {
    let params = vec![seeded(vec![3], 30)];
    let err = grad_check(
        |tape, p| {
            // output does not depend on p: slice p then ignore it
            let _ = tape.scale(&p[0], 2.0)?;
            let c = Tensor::scalar(5.0);
            let lifted = tape.scale(&c, 1.0)?;
            tape.sum(&lifted)
        },
        &params,
        8,
        0,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn non_deterministic_fragment_is_rejected() {
    use std::cell::Cell;
    let counter = Cell::new(0.0f64);
    let params = vec![seeded(vec![2], 31)];
    let result = grad_check(
        |tape, p| {
            counter.set(counter.get() + 1.0);
            let noise = Tensor::scalar(counter.get());
            let shifted = tape.scale(&noise, 1.0)?;
            let s = tape.sum(&p[0])?;
            let both = tape.add(&s, &shifted)?;
            tape.sum(&both)
        },
        &params,
        8,
        0,
    );
    assert!(matches!(result, Err(CoreError::NonDeterministic)));
}
