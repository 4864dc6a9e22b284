use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Error;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn all_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(close(*x, *y, tol), "component {i}: {x} vs {y}");
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central finite differences of `f` at `x` with step 1e-4.
fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn assert_matches_fd(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        assert!(rel <= tol, "component {i}: analytic {a} vs numeric {n}");
    }
}

/// Builds a loss from parameter values, returns (loss value, analytic grad).
fn grad_of(build: &dyn Fn(&Tensor) -> Tensor, shape: &[usize], x: &[f64]) -> (f64, Vec<f64>) {
    let p = Tensor::param(x.to_vec(), shape).unwrap();
    let loss = build(&p);
    loss.backward().unwrap();
    (loss.value(), p.grad().unwrap())
}

fn check_op_gradient(build: &dyn Fn(&Tensor) -> Tensor, shape: &[usize], x: &[f64]) {
    let (_, analytic) = grad_of(build, shape, x);
    let numeric = fd_grad(
        &|v: &[f64]| {
            let p = Tensor::param(v.to_vec(), shape).unwrap();
            build(&p).value()
        },
        x,
    );
    assert_matches_fd(&analytic, &numeric, 1e-4);
}

#[test]
fn from_vec_rejects_shape_mismatch() {
    let err = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn matmul_identity_passthrough() {
    let eye = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let v = Tensor::from_vec(vec![3.0, 4.0], &[2, 1]).unwrap();
    let out = eye.matmul(&v).unwrap();
    assert_eq!(out.shape(), &[2, 1]);
    assert_eq!(out.to_vec(), vec![3.0, 4.0]);
}

#[test]
fn matmul_row_times_column() {
    let a = Tensor::from_vec(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = Tensor::from_vec(vec![3.0, 4.0], &[2, 1]).unwrap();
    let out = a.matmul(&b).unwrap();
    assert_eq!(out.shape(), &[1, 1]);
    assert_eq!(out.to_vec(), vec![11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let a = Tensor::from_vec(vec![0.0; 6], &[2, 3]).unwrap();
    let b = Tensor::from_vec(vec![0.0; 4], &[2, 2]).unwrap();
    let err = a.matmul(&b).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a0 = random_vec(&mut rng, 12);
    let b0 = random_vec(&mut rng, 8);
    let b_fixed = b0.clone();
    check_op_gradient(
        &move |a: &Tensor| {
            let b = Tensor::from_vec(b_fixed.clone(), &[4, 2]).unwrap();
            a.matmul(&b).unwrap().sum()
        },
        &[3, 4],
        &a0,
    );
    let a_fixed = a0.clone();
    check_op_gradient(
        &move |b: &Tensor| {
            let a = Tensor::from_vec(a_fixed.clone(), &[3, 4]).unwrap();
            a.matmul(b).unwrap().sum()
        },
        &[4, 2],
        &b0,
    );
}

#[test]
fn masked_softmax_uniform_logits() {
    let x = Tensor::from_vec(vec![0.0; 4], &[4]).unwrap();
    let out = x.masked_softmax(&[true; 4]).unwrap();
    all_close(&out.to_vec(), &[0.25; 4], 1e-12);
}

#[test]
fn masked_softmax_zeroes_masked_positions() {
    let x = Tensor::from_vec(vec![5.0, 5.0, -1.0], &[3]).unwrap();
    let out = x.masked_softmax(&[true, true, false]).unwrap();
    let v = out.to_vec();
    all_close(&v[..2], &[0.5, 0.5], 1e-12);
    assert_eq!(v[2], 0.0);
}

#[test]
fn masked_softmax_matches_reference_values() {
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    let out = x.masked_softmax(&[true; 3]).unwrap();
    all_close(&out.to_vec(), &[0.09003, 0.24473, 0.66524], 1e-4);
}

#[test]
fn masked_softmax_rejects_all_false_mask() {
    let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
    let err = x.masked_softmax(&[false, false]).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn masked_softmax_valid_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.gen_range(1..8);
        let x = Tensor::param(random_vec(&mut rng, n), &[n]).unwrap();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..n)] = true;
        let out = x.masked_softmax(&mask).unwrap();
        let v = out.to_vec();
        let total: f64 = v.iter().sum();
        assert!(close(total, 1.0, 1e-9));
        assert!(v.iter().all(|w| *w >= 0.0));
        out.sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (i, m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(v[i], 0.0);
                assert_eq!(g[i], 0.0);
            }
        }
    }
}

#[test]
fn masked_softmax_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x0 = random_vec(&mut rng, 5);
    let weights = random_vec(&mut rng, 5);
    check_op_gradient(
        &move |x: &Tensor| {
            let w = Tensor::from_vec(weights.clone(), &[5]).unwrap();
            let mask = [true, false, true, true, true];
            x.masked_softmax(&mask).unwrap().mul(&w).unwrap().sum()
        },
        &[5],
        &x0,
    );
}

#[test]
fn stop_gradient_is_identity_forward() {
    let x = Tensor::param(vec![1.5, -2.0], &[2]).unwrap();
    let sg = x.stop_gradient();
    assert_eq!(sg.to_vec(), x.to_vec());
    assert_eq!(sg.shape(), x.shape());
    assert!(!sg.requires_grad());
}

#[test]
fn stop_gradient_cuts_backward_flow() {
    let x = Tensor::param(vec![2.0, 3.0], &[2]).unwrap();
    let y = Tensor::param(vec![5.0, 7.0], &[2]).unwrap();
    let loss = x.stop_gradient().mul(&y).unwrap().sum();
    loss.backward().unwrap();
    assert!(x.grad().is_none() || x.grad().unwrap() == vec![0.0, 0.0]);
    assert_eq!(y.grad().unwrap(), vec![2.0, 3.0]);
}

#[test]
fn masked_mean_pool_averages_valid_rows() {
    let x = Tensor::from_vec(vec![2.0, 4.0, 6.0, 8.0], &[2, 2]).unwrap();
    let out = x.masked_mean_pool(2).unwrap();
    assert_eq!(out.to_vec(), vec![4.0, 6.0]);
}

#[test]
fn masked_mean_pool_ignores_padding() {
    let x = Tensor::from_vec(vec![2.0, 4.0, 999.0, 999.0], &[2, 2]).unwrap();
    let out = x.masked_mean_pool(1).unwrap();
    assert_eq!(out.to_vec(), vec![2.0, 4.0]);
}

#[test]
fn masked_mean_pool_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let v = random_vec(&mut rng, 15);
    let x = Tensor::from_vec(v.clone(), &[5, 3]).unwrap();
    let out = x.masked_mean_pool(3).unwrap();
    let expected: Vec<f64> = (0..3).map(|c| (v[c] + v[3 + c] + v[6 + c]) / 3.0).collect();
    assert_eq!(out.to_vec(), expected);
}

#[test]
fn masked_mean_pool_rejects_zero_valid() {
    let x = Tensor::from_vec(vec![1.0, 2.0], &[1, 2]).unwrap();
    let err = x.masked_mean_pool(0).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn masked_mean_pool_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x0 = random_vec(&mut rng, 12);
    check_op_gradient(
        &|x: &Tensor| x.masked_mean_pool(2).unwrap().sum(),
        &[4, 3],
        &x0,
    );
}

#[test]
fn cross_entropy_of_one_hot_is_zero() {
    let p = Tensor::from_vec(vec![0.0, 1.0, 0.0], &[3]).unwrap();
    let loss = p.cross_entropy(1).unwrap();
    assert!(close(loss.value(), 0.0, 1e-12));
}

#[test]
fn cross_entropy_of_uniform_is_log_class_count() {
    let p = Tensor::from_vec(vec![0.25; 4], &[4]).unwrap();
    for label in 0..4 {
        let loss = p.cross_entropy(label).unwrap();
        assert!(close(loss.value(), 4.0_f64.ln(), 1e-6));
    }
}

#[test]
fn cross_entropy_matches_reference_value() {
    let p = Tensor::from_vec(vec![0.7, 0.2, 0.1], &[3]).unwrap();
    let loss = p.cross_entropy(1).unwrap();
    assert!(close(loss.value(), 1.6094, 1e-4));
    assert!(close(loss.value(), -(0.2_f64.ln()), 1e-12));
}

#[test]
fn cross_entropy_rejects_bad_inputs() {
    let p = Tensor::from_vec(vec![0.7, 0.2, 0.1], &[3]).unwrap();
    assert!(matches!(
        p.cross_entropy(3).unwrap_err(),
        Error::InvalidInput(_)
    ));
    let q = Tensor::from_vec(vec![0.7, 0.7], &[2]).unwrap();
    assert!(matches!(
        q.cross_entropy(0).unwrap_err(),
        Error::InvalidInput(_)
    ));
}

#[test]
fn cross_entropy_gradient_is_reciprocal_at_label() {
    let p = Tensor::param(vec![0.4, 0.35, 0.25], &[3]).unwrap();
    p.cross_entropy(1).unwrap().backward().unwrap();
    all_close(&p.grad().unwrap(), &[0.0, -1.0 / 0.35, 0.0], 1e-12);
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    // Perturbing probabilities directly would break the sums-to-one
    // precondition, so the check runs through a softmax.
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let x0 = random_vec(&mut rng, 4);
    check_op_gradient(
        &|x: &Tensor| x.softmax().unwrap().cross_entropy(2).unwrap(),
        &[4],
        &x0,
    );
}

#[test]
fn elementwise_reference_points() {
    let zero = Tensor::from_vec(vec![0.0], &[1]).unwrap();
    assert_eq!(zero.tanh().to_vec(), vec![0.0]);
    assert_eq!(zero.sigmoid().to_vec(), vec![0.5]);
    let a = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
    let b = Tensor::from_vec(vec![3.0], &[1]).unwrap();
    let cat = Tensor::concat(&[a, b], 0).unwrap();
    assert_eq!(cat.to_vec(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn add_and_mul_reject_shape_mismatch() {
    let a = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
    let b = Tensor::from_vec(vec![1.0], &[1]).unwrap();
    assert!(matches!(a.add(&b).unwrap_err(), Error::Dimension(_)));
    assert!(matches!(a.mul(&b).unwrap_err(), Error::Dimension(_)));
}

#[test]
fn dropout_is_identity_at_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = Tensor::from_vec(vec![1.0, -2.0, 3.5], &[3]).unwrap();
    let out = x.dropout(0.3, false, &mut rng).unwrap();
    assert_eq!(out.to_vec(), x.to_vec());
    let out = x.dropout(0.0, true, &mut rng).unwrap();
    assert_eq!(out.to_vec(), x.to_vec());
}

#[test]
fn dropout_rescales_survivors_during_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let p = 0.3;
    let x = Tensor::param(vec![1.0; 1000], &[1000]).unwrap();
    let out = x.dropout(p, true, &mut rng).unwrap();
    let keep = 1.0 / (1.0 - p);
    let mut dropped = 0usize;
    for v in out.to_vec() {
        assert!(v == 0.0 || close(v, keep, 1e-12), "unexpected value {v}");
        if v == 0.0 {
            dropped += 1;
        }
    }
    let rate = dropped as f64 / 1000.0;
    assert!((rate - p).abs() < 0.06, "drop rate {rate}");
    out.sum().backward().unwrap();
    let g = x.grad().unwrap();
    for (gv, ov) in g.iter().zip(out.to_vec()) {
        assert_eq!(*gv, if ov == 0.0 { 0.0 } else { keep });
    }
}

#[test]
fn dropout_rejects_bad_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = Tensor::from_vec(vec![1.0], &[1]).unwrap();
    assert!(x.dropout(1.0, true, &mut rng).is_err());
    assert!(x.dropout(-0.1, true, &mut rng).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sum_of_squares() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(x.backward().unwrap_err(), Error::InvalidInput(_)));
}

#[test]
fn backward_accumulates_until_zeroed() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    let loss = x.sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    x.zero_grad();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
}

#[test]
fn backward_handles_reused_subexpressions() {
    // loss = (x + x) . x = 2 x^2, so grad = 4x.
    let x = Tensor::param(vec![1.0, 3.0], &[2]).unwrap();
    let doubled = x.add(&x).unwrap();
    doubled.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 12.0]);
}

#[test]
fn narrow_and_concat_round_trip_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let x0 = random_vec(&mut rng, 12);
    check_op_gradient(
        &|x: &Tensor| {
            let left = x.narrow(1, 0, 2).unwrap();
            let right = x.narrow(1, 2, 2).unwrap();
            Tensor::concat(&[right, left.scale(2.0)], 1)
                .unwrap()
                .tanh()
                .sum()
        },
        &[3, 4],
        &x0,
    );
}

#[test]
fn narrow_rejects_out_of_range() {
    let x = Tensor::from_vec(vec![0.0; 6], &[2, 3]).unwrap();
    assert!(x.narrow(1, 2, 2).is_err());
    assert!(x.narrow(2, 0, 1).is_err());
}

#[test]
fn select_rows_gathers_and_scatters() {
    let table = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
    let picked = table.select_rows(&[2, 0, 2]).unwrap();
    assert_eq!(picked.shape(), &[3, 2]);
    assert_eq!(picked.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    picked.sum().backward().unwrap();
    assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    assert!(table.select_rows(&[3]).is_err());
}

#[test]
fn unary_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x0 = random_vec(&mut rng, 6);
    check_op_gradient(&|x: &Tensor| x.tanh().sum(), &[6], &x0);
    check_op_gradient(&|x: &Tensor| x.sigmoid().sum(), &[6], &x0);
    check_op_gradient(&|x: &Tensor| x.exp().sum(), &[6], &x0);
    check_op_gradient(&|x: &Tensor| x.scale(-1.7).sum(), &[6], &x0);
    let positive: Vec<f64> = x0.iter().map(|v| v.abs() + 0.5).collect();
    check_op_gradient(&|x: &Tensor| x.log().sum(), &[6], &positive);
    check_op_gradient(&|x: &Tensor| x.mean(), &[6], &x0);
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x0 = random_vec(&mut rng, 8);
    let w0 = random_vec(&mut rng, 8);
    check_op_gradient(
        &move |x: &Tensor| {
            let w = Tensor::from_vec(w0.clone(), &[4, 2]).unwrap();
            let h = x.reshape(&[2, 4]).unwrap().matmul(&w).unwrap().tanh();
            let pooled = h.masked_mean_pool(2).unwrap();
            let probs = pooled.softmax().unwrap();
            probs.cross_entropy(0).unwrap()
        },
        &[8],
        &x0,
    );
}

#[test]
fn forward_backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let x = Tensor::param(random_vec(&mut rng, 10), &[10]).unwrap();
        let dropped = x.dropout(0.3, true, &mut rng).unwrap();
        let loss = dropped.tanh().sum();
        loss.backward().unwrap();
        (loss.value().to_bits(), x.grad().unwrap())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    let bits = |g: &[f64]| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&g1), bits(&g2));
}
