use super::*;
use crate::error::Error;
use crate::rng::{randn_vec, stream, stream_rng};
use crate::Result;

fn assert_close(actual: &[f64], expected: &[f64], tol: f64, msg: &str) {
    assert_eq!(actual.len(), expected.len(), "{msg}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected.iter()).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{msg}[{i}]: got {a}, expected {e} (diff {})",
            (a - e).abs()
        );
    }
}

fn randn_tensor(rows: usize, cols: usize, index: u64) -> Tensor {
    let mut rng = stream_rng(42, stream::CHECK, index);
    Tensor::from_rows(rows, cols, randn_vec(rows * cols, &mut rng)).unwrap()
}

// ── elementwise and matmul ──────────────────────────────────────────

#[test]
fn add_elementwise() {
    let a = Tensor::row(&[1.0, 2.0]).unwrap();
    let b = Tensor::row(&[3.0, 4.0]).unwrap();
    assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
}

#[test]
fn add_broadcasts_row_either_side() {
    let m = Tensor::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let r = Tensor::row(&[10.0, 20.0]).unwrap();
    assert_eq!(m.add(&r).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
    assert_eq!(r.add(&m).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
}

#[test]
fn add_shape_mismatch_is_descriptive() {
    let a = Tensor::zeros(2, 2);
    let b = Tensor::zeros(3, 1);
    let err = a.add(&b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("2x2") && err.contains("3x1"), "{err}");
}

#[test]
fn matmul_identity() {
    let m = Tensor::from_rows(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let out = Tensor::eye(2).matmul(&m).unwrap();
    assert_eq!(out.data(), m.data());
}

#[test]
fn matmul_shape_mismatch() {
    let a = Tensor::zeros(2, 3);
    let b = Tensor::zeros(2, 3);
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
}

#[test]
fn hadamard_grad_of_sum_is_other_operand() {
    let a = randn_tensor(3, 4, 1);
    let b = randn_tensor(3, 4, 2);
    let f = |x: &Tensor| Ok(x.hadamard(&b)?.sum());
    let analytic = analytic_grad(f, &a).unwrap();
    assert_close(&analytic, b.data(), 1e-12, "d(sum(a*b))/da = b");
    assert!(finite_diff_check(f, &a, 1e-6).unwrap() < 1e-8);
}

#[test]
fn broadcast_add_grad_sums_columns() {
    let x = randn_tensor(5, 3, 3);
    let bias = randn_tensor(1, 3, 4);
    // d(sum(x + bias))/d(bias_c) = number of rows
    let analytic = analytic_grad(|b: &Tensor| Ok(x.add(b)?.sum()), &bias).unwrap();
    assert_close(&analytic, &[5.0, 5.0, 5.0], 1e-12, "broadcast adjoint");
}

// ── unary ───────────────────────────────────────────────────────────

#[test]
fn exp_of_zero_is_one() {
    let out = Tensor::scalar(0.0).exp().unwrap();
    assert_eq!(out.item(), 1.0);
}

#[test]
fn exp_grad_at_one_is_e() {
    let x = Tensor::scalar(1.0);
    let f = |x: &Tensor| Ok(x.exp()?.sum());
    let analytic = analytic_grad(f, &x).unwrap();
    assert_close(&analytic, &[std::f64::consts::E], 1e-12, "d exp/dx at 1");
    assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-8);
}

#[test]
fn power_integer_case() {
    let out = Tensor::scalar(2.0).power(4.0).unwrap();
    assert_eq!(out.item(), 16.0);
}

#[test]
fn power_negative_base_fractional_exponent_errors() {
    let x = Tensor::from_rows(1, 2, vec![1.0, -2.0]).unwrap();
    match x.power(0.5).unwrap_err() {
        Error::NegativeBase { value, row, col, .. } => {
            assert_eq!((value, row, col), (-2.0, 0, 1));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn exp_overflow_is_an_error() {
    let x = Tensor::scalar(1e4);
    assert!(matches!(x.exp(), Err(Error::NonFinite { .. })));
}

// ── reductions ──────────────────────────────────────────────────────

#[test]
fn mean_and_sum_rows_examples() {
    let m = Tensor::from_rows(2, 2, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
    assert_eq!(m.mean().item(), 5.0);
    let m = Tensor::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m.sum_rows().data(), &[3.0, 7.0]);
}

#[test]
fn mean_grad_is_one_over_n() {
    let x = randn_tensor(3, 4, 5);
    let analytic = analytic_grad(|x: &Tensor| Ok(x.mean()), &x).unwrap();
    assert_close(&analytic, &vec![1.0 / 12.0; 12], 1e-15, "mean grad");
}

// ── p-norms ─────────────────────────────────────────────────────────

#[test]
fn p_norm_rows_triangle() {
    let x = Tensor::row(&[3.0, 4.0]).unwrap();
    assert_eq!(x.p_norm_rows(2).unwrap().item(), 5.0);
}

#[test]
fn p_norm_rows_l4_of_ones() {
    let x = Tensor::row(&[1.0, 1.0, 1.0, 1.0]).unwrap();
    assert_close(
        &[x.p_norm_rows(4).unwrap().item()],
        &[std::f64::consts::SQRT_2],
        1e-15,
        "4^(1/4)",
    );
}

#[test]
fn p_norm_rows_rejects_other_orders() {
    let x = Tensor::row(&[1.0]).unwrap();
    assert!(matches!(
        x.p_norm_rows(3),
        Err(Error::UnsupportedNormOrder { p: 3 })
    ));
}

#[test]
fn p_norm_grad_at_three_four() {
    let x = Tensor::row(&[3.0, 4.0]).unwrap();
    let f = |x: &Tensor| Ok(x.p_norm_rows(2)?.sum());
    let analytic = analytic_grad(f, &x).unwrap();
    assert_close(&analytic, &[0.6, 0.8], 1e-12, "x/||x||");
    assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-8);
}

#[test]
fn p_norm_zero_row_has_zero_subgradient() {
    let x = Tensor::zeros(2, 3);
    let analytic = analytic_grad(|x: &Tensor| Ok(x.p_norm_rows(2)?.sum()), &x).unwrap();
    assert_eq!(analytic, vec![0.0; 6]);
}

#[test]
fn pairwise_pnorm_matches_scalar_loop() {
    for &p in &[2u32, 4] {
        let x = randn_tensor(5, 3, 6 + p as u64);
        let c = randn_tensor(4, 3, 7 + p as u64);
        let d = pairwise_pnorm(&x, &c, p).unwrap();
        for r in 0..5 {
            for u in 0..4 {
                let mut acc = 0.0f64;
                for j in 0..3 {
                    acc += (x.get(r, j) - c.get(u, j)).abs().powi(p as i32);
                }
                let expected = acc.powf(1.0 / p as f64);
                assert!((d.get(r, u) - expected).abs() < 1e-12);
            }
        }
    }
}

// ── backward semantics ──────────────────────────────────────────────

#[test]
fn backward_of_sum_gives_ones() {
    let tape = Tape::new();
    let x = randn_tensor(2, 3, 8);
    tape.watch(&x);
    let loss = x.sum();
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn backward_mse_matches_hand_derivation() {
    let x = randn_tensor(4, 2, 9);
    let c = randn_tensor(4, 2, 10);
    let n = x.numel() as f64;
    let f = |x: &Tensor| {
        let d = x.sub(&c)?;
        Ok(d.hadamard(&d)?.mean())
    };
    let analytic = analytic_grad(f, &x).unwrap();
    let hand: Vec<f64> = x
        .data()
        .iter()
        .zip(c.data().iter())
        .map(|(xi, ci)| 2.0 * (xi - ci) / n)
        .collect();
    assert_close(&analytic, &hand, 1e-12, "2(x-c)/N");
    assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-8);
}

#[test]
fn repeated_backward_doubles_grads() {
    let tape = Tape::new();
    let x = randn_tensor(2, 2, 11);
    tape.watch(&x);
    let loss = x.hadamard(&x).unwrap().mean();
    tape.backward(&loss).unwrap();
    let once = x.grad().unwrap();
    tape.backward(&loss).unwrap();
    let twice = x.grad().unwrap();
    let doubled: Vec<f64> = once.iter().map(|g| 2.0 * g).collect();
    assert_eq!(twice, doubled);
}

#[test]
fn backward_requires_scalar_loss() {
    let tape = Tape::new();
    let x = randn_tensor(2, 2, 12);
    tape.watch(&x);
    let y = x.relu();
    assert!(matches!(
        tape.backward(&y),
        Err(Error::NonScalarLoss { rows: 2, cols: 2 })
    ));
}

#[test]
fn backward_requires_attached_loss() {
    let tape = Tape::new();
    assert!(matches!(
        tape.backward(&Tensor::scalar(1.0)),
        Err(Error::DetachedLoss)
    ));
}

#[test]
fn watched_leaf_outside_loss_gets_zero_grad() {
    let tape = Tape::new();
    let x = randn_tensor(1, 3, 13);
    let unused = randn_tensor(2, 2, 14);
    tape.watch(&x);
    tape.watch(&unused);
    let loss = x.sum();
    tape.backward(&loss).unwrap();
    assert_eq!(unused.grad().unwrap(), vec![0.0; 4]);
}

#[test]
fn tape_replay_reproduces_identical_grads() {
    let x = randn_tensor(3, 3, 15);
    let run = || {
        let tape = Tape::new();
        let xw = x.detach();
        tape.watch(&xw);
        let loss = xw.hadamard(&xw).unwrap().exp().unwrap().mean();
        tape.backward(&loss).unwrap();
        let g = xw.grad().unwrap();
        xw.zero_grad();
        g
    };
    assert_eq!(run(), run());
}

#[test]
fn mixing_tapes_is_an_error() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = randn_tensor(1, 2, 16);
    let b = randn_tensor(1, 2, 17);
    t1.watch(&a);
    t2.watch(&b);
    assert!(matches!(a.add(&b), Err(Error::TapeMismatch { op: "add" })));
}

#[test]
fn slice_rows_scatters_gradient() {
    let x = randn_tensor(3, 2, 18);
    let analytic = analytic_grad(|x: &Tensor| Ok(x.slice_rows(1, 2)?.sum()), &x).unwrap();
    assert_eq!(analytic, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
}

// ── softmax cross-entropy op ────────────────────────────────────────

#[test]
fn softmax_xent_uniform_logits_is_ln_classes() {
    let logits = Tensor::zeros(4, 6);
    let loss = softmax_cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
    assert!((loss.item() - 6.0f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_xent_grad_matches_finite_differences() {
    let logits = randn_tensor(5, 6, 19);
    let labels = [0usize, 3, 5, 1, 2];
    let f = |z: &Tensor| softmax_cross_entropy(z, &labels);
    assert!(finite_diff_check(f, &logits, 1e-6).unwrap() < 1e-9);
}

#[test]
fn softmax_xent_rejects_bad_labels() {
    let logits = Tensor::zeros(2, 6);
    assert!(matches!(
        softmax_cross_entropy(&logits, &[0, 6]),
        Err(Error::LabelOutOfRange { row: 1, label: 6, .. })
    ));
}

// ── finite-difference oracle self-tests ─────────────────────────────

#[test]
fn fd_self_test_on_quadratic() {
    let x = randn_tensor(3, 3, 20);
    let f = |x: &Tensor| Ok(x.hadamard(x)?.sum());
    assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-6);
}

#[test]
fn fd_of_constant_function_is_zero() {
    let x = randn_tensor(2, 2, 21);
    let f = |_: &Tensor| Ok(Tensor::scalar(7.0));
    assert_eq!(finite_diff_check(f, &x, 1e-6).unwrap(), 0.0);
}

#[test]
fn fd_of_rbf_activation_form() {
    // phi(x) = sum_i exp(-gamma * ||x - c_i||)
    let c = randn_tensor(4, 6, 22);
    let gamma = 0.7;
    let f = |x: &Tensor| {
        let d = pairwise_pnorm(x, &c, 2)?;
        Ok(d.scale(-gamma)?.exp()?.sum())
    };
    let x = randn_tensor(3, 6, 23);
    assert!(finite_diff_check(f, &x, 1e-6).unwrap() < 1e-5);
}

#[test]
fn every_op_passes_finite_diff_at_random_points() {
    // Small per-op sweep; the acceptance suite runs the full 100-point one.
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let x = randn_tensor(3, 4, 100 + i);
        let other = randn_tensor(3, 4, 200 + i);
        let row = randn_tensor(1, 4, 300 + i);
        let centroids = randn_tensor(5, 4, 400 + i);
        let cases: Vec<Box<dyn Fn(&Tensor) -> Result<Tensor>>> = vec![
            Box::new(move |x| Ok(x.add(&other)?.hadamard(x)?.sum())),
            Box::new(move |x| Ok(x.sub(&row)?.hadamard(x)?.mean())),
            Box::new(|x| Ok(x.exp()?.mean())),
            Box::new(|x| Ok(x.scale(-1.3)?.softplus().sum())),
            Box::new(|x| Ok(x.hadamard(x)?.power(1.5)?.sum())),
            Box::new(|x| Ok(x.negate().relu().sum())),
            Box::new(|x| Ok(x.sum_rows().hadamard(&x.sum_rows())?.sum())),
            Box::new(|x| Ok(x.p_norm_rows(2)?.sum())),
            Box::new(|x| Ok(x.p_norm_rows(4)?.mean())),
            Box::new(move |x| Ok(pairwise_pnorm(x, &centroids, 4)?.mean())),
            Box::new(|x| {
                let m = mean_cols(x)?;
                Ok(x.sub(&m)?.hadamard(&x.sub(&m)?)?.mean())
            }),
        ];
        for f in cases {
            let x = x.detach();
            worst = worst.max(finite_diff_check(f.as_ref(), &x, 1e-6).unwrap());
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}
