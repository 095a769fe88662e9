use enzyme_core::gradcheck::{numeric_gradient, relative_error, FD_STEP};
use enzyme_core::numerics::{NumericsError, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Gradient of `build` w.r.t. its single parameter input, checked against
/// central differences with the `|a-n| / (|n| + 1e-8) < 1e-6` criterion.
fn check_unary_grad<F>(input: &Tensor, build: F)
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.param(input.clone());
    let loss = build(&mut tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().to_vec();

    let numeric = numeric_gradient(
        |v: &[f64]| {
            let mut t = Tape::new();
            let x = t.param(Tensor::new(input.shape().to_vec(), v.to_vec()).unwrap());
            let out = build(&mut t, x);
            t.value(out).item()
        },
        input.data(),
        FD_STEP,
    );
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *n, 1e-8);
        assert!(err < 1e-6, "coord {i}: analytic {a} numeric {n} rel {err}");
    }
}

/// Reduce an arbitrary output to a scalar with fixed random weights so that
/// every output entry contributes a distinct adjoint.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::eye(2));
    let m = tape.constant(Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap());
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out), tape.value(m));

    let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 1]);
    assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, &[5, 4], -2.0, 2.0);
    let b = random_tensor(&mut rng, &[4, 3], -2.0, 2.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let mut expected = 0.0;
            for k in 0..4 {
                expected += a.get(i, k) * b.get(k, j);
            }
            assert!((tape.value(c).get(i, j) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, NumericsError::Shape { .. }));
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
}

#[test]
fn softmax_uniform_and_stable() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25; 4]);

    let x = tape.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data()[0], 1.0);
    assert!(tape.value(y).data()[1] < 1e-300);
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[7], -3.0, 3.0);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax(v).unwrap();
    let total: f64 = x.data().iter().map(|v| v.exp()).sum();
    for (yi, xi) in tape.value(y).data().iter().zip(x.data()) {
        assert!((yi - xi.exp() / total).abs() < 1e-12);
    }
}

#[test]
fn softmax_empty_axis_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 0]));
    assert_eq!(tape.softmax(x).unwrap_err(), NumericsError::Empty { op: "softmax" });
}

#[test]
fn backward_square_and_constant_function() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![5], vec![0.3, -1.0, 2.0, 0.0, 4.0]).unwrap());
    let s = tape.softmax(x).unwrap();
    let loss = tape.sum(s).unwrap();
    tape.backward(loss).unwrap();
    for g in tape.grad(x).unwrap() {
        assert!(g.abs() < 1e-15, "{g}");
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        tape.backward(x),
        Err(NumericsError::NonScalarLoss { .. })
    ));
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let input = random_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let w1 = random_tensor(&mut rng, &[8, 6], -0.5, 0.5);
    let w2 = random_tensor(&mut rng, &[8, 8], -0.5, 0.5);
    let w3 = random_tensor(&mut rng, &[1, 8], -0.5, 0.5);
    let params = [w1, w2, w3];

    let run = |tape: &mut Tape, ws: &[Var]| {
        let x = tape.constant(input.clone());
        let h = tape.matmul_t(x, ws[0]).unwrap();
        let h = tape.silu(h).unwrap();
        let h = tape.matmul_t(h, ws[1]).unwrap();
        let h = tape.sigmoid(h).unwrap();
        let o = tape.matmul_t(h, ws[2]).unwrap();
        tape.sum(o).unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = run(&mut tape, &vars);
    tape.backward(loss).unwrap();

    for (pi, p) in params.iter().enumerate() {
        let analytic = tape.grad(vars[pi]).unwrap().to_vec();
        let numeric = numeric_gradient(
            |v: &[f64]| {
                let mut t = Tape::new();
                let vars: Vec<Var> = params
                    .iter()
                    .enumerate()
                    .map(|(j, q)| {
                        if j == pi {
                            t.param(Tensor::new(q.shape().to_vec(), v.to_vec()).unwrap())
                        } else {
                            t.param(q.clone())
                        }
                    })
                    .collect();
                let l = run(&mut t, &vars);
                t.value(l).item()
            },
            p.data(),
            FD_STEP,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-8) < 1e-6, "param {pi}: {a} vs {n}");
        }
    }
}

#[test]
fn silu_at_zero_and_layer_norm_of_constant() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(0.0));
    let y = tape.silu(x).unwrap();
    assert_eq!(tape.value(y).item(), 0.0);

    let x = tape.constant(Tensor::new(vec![1, 4], vec![2.5; 4]).unwrap());
    let g = tape.constant(Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap());
    let b = tape.constant(Tensor::zeros(&[1, 4]));
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 4]);
}

#[test]
fn ln_of_non_positive_is_a_domain_error() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(tape.ln(x), Err(NumericsError::Domain { op: "ln", .. })));
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let positive = random_tensor(&mut rng, &[3, 4], 0.5, 2.0);
    let other = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let row = random_tensor(&mut rng, &[1, 4], -1.0, 1.0);
    let col = random_tensor(&mut rng, &[3, 1], -1.0, 1.0);
    let wide = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);

    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.add(v, c).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum(y).unwrap()
    });
    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.sub(c, v).unwrap();
        weighted_sum(t, y, 1)
    });
    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.mul(v, c).unwrap();
        let y = t.mul(y, v).unwrap();
        weighted_sum(t, y, 2)
    });
    let o = other.clone();
    check_unary_grad(&positive, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.div(c, v).unwrap();
        let z = t.div(y, v).unwrap();
        weighted_sum(t, z, 3)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.exp(v).unwrap();
        weighted_sum(t, y, 4)
    });
    check_unary_grad(&positive, |t, v| {
        let y = t.ln(v).unwrap();
        weighted_sum(t, y, 5)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.silu(v).unwrap();
        weighted_sum(t, y, 6)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.relu(v).unwrap();
        weighted_sum(t, y, 7)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.sigmoid(v).unwrap();
        weighted_sum(t, y, 8)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.softmax(v).unwrap();
        weighted_sum(t, y, 9)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.log_softmax(v).unwrap();
        weighted_sum(t, y, 10)
    });
    let r = row.clone();
    check_unary_grad(&x, move |t, v| {
        let g = t.constant(r.clone());
        let b = t.constant(r.clone());
        let y = t.layer_norm(v, g, b).unwrap();
        weighted_sum(t, y, 11)
    });
    // Affine parameters of layer_norm.
    let xs = x.clone();
    check_unary_grad(&row, move |t, v| {
        let xv = t.constant(xs.clone());
        let y = t.layer_norm(xv, v, v).unwrap();
        weighted_sum(t, y, 12)
    });
    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.concat(&[v, c, v]).unwrap();
        weighted_sum(t, y, 13)
    });
    let r = row.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(r.clone());
        let y = t.concat_rows(&[c, v, v]).unwrap();
        weighted_sum(t, y, 30)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.slice_cols(v, 1, 3).unwrap();
        weighted_sum(t, y, 14)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.gather_rows(v, &[2, 0, 2, 1]).unwrap();
        weighted_sum(t, y, 15)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.segment_sum(v, &[1, 0, 1], 2).unwrap();
        weighted_sum(t, y, 16)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.sum_pool(v).unwrap();
        weighted_sum(t, y, 17)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.l2_norm(v).unwrap();
        weighted_sum(t, y, 18)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.pick(v, &[(0, 1), (2, 3), (0, 1)]).unwrap();
        weighted_sum(t, y, 19)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.reshape(v, vec![2, 6]).unwrap();
        weighted_sum(t, y, 20)
    });
    let r = row.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(r.clone());
        let y = t.add_row(v, c).unwrap();
        let y = t.mul(y, y).unwrap();
        weighted_sum(t, y, 21)
    });
    let xs = x.clone();
    check_unary_grad(&row, move |t, v| {
        let c = t.constant(xs.clone());
        let y = t.add_row(c, v).unwrap();
        let y = t.mul(y, y).unwrap();
        weighted_sum(t, y, 22)
    });
    let c0 = col.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(c0.clone());
        let y = t.mul_col(v, c).unwrap();
        weighted_sum(t, y, 23)
    });
    let xs = x.clone();
    check_unary_grad(&col, move |t, v| {
        let c = t.constant(xs.clone());
        let y = t.mul_col(c, v).unwrap();
        weighted_sum(t, y, 24)
    });
    check_unary_grad(&x, |t, v| {
        let y = t.scale(v, -2.5).unwrap();
        weighted_sum(t, y, 25)
    });
    let w = wide.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(w.clone());
        let y = t.matmul(v, c).unwrap();
        weighted_sum(t, y, 26)
    });
    let xs = x.clone();
    check_unary_grad(&wide, move |t, v| {
        let c = t.constant(xs.clone());
        let y = t.matmul(c, v).unwrap();
        weighted_sum(t, y, 27)
    });
    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.matmul_t(v, c).unwrap();
        weighted_sum(t, y, 28)
    });
    let o = other.clone();
    check_unary_grad(&x, move |t, v| {
        let c = t.constant(o.clone());
        let y = t.matmul_t(c, v).unwrap();
        weighted_sum(t, y, 29)
    });
}

#[test]
fn fan_out_doubles_the_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let f = |t: &mut Tape, x: Var| {
        let y = t.silu(x).unwrap();
        let y = t.mul(y, x).unwrap();
        t.sum(y).unwrap()
    };

    let mut once = Tape::new();
    let x1 = once.param(input.clone());
    let l1 = f(&mut once, x1);
    once.backward(l1).unwrap();

    let mut twice = Tape::new();
    let x2 = twice.param(input);
    let a = f(&mut twice, x2);
    let b = f(&mut twice, x2);
    let l2 = twice.add(a, b).unwrap();
    twice.backward(l2).unwrap();

    for (g1, g2) in once.grad(x1).unwrap().iter().zip(twice.grad(x2).unwrap()) {
        assert_eq!(2.0 * g1, *g2);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let p = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(c, p).unwrap();
    tape.backward(y).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(p).unwrap(), &[2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let mut tape = Tape::new();
        let n = values.len();
        let x = tape.constant(Tensor::new(vec![n], values).unwrap());
        let y = tape.softmax(x).unwrap();
        let total: f64 = tape.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(tape.value(y).data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn elementwise_ops_stay_finite(values in prop::collection::vec(-50f64..50.0, 1..30)) {
        let mut tape = Tape::new();
        let n = values.len();
        let x = tape.param(Tensor::new(vec![1, n], values).unwrap());
        let ops: Vec<Var> = vec![
            tape.silu(x).unwrap(),
            tape.sigmoid(x).unwrap(),
            tape.relu(x).unwrap(),
            tape.log_softmax(x).unwrap(),
            tape.l2_norm(x).unwrap(),
        ];
        for v in ops {
            prop_assert!(tape.value(v).all_finite());
        }
    }
}
