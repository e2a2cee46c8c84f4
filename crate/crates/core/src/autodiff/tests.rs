use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn add_is_elementwise() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    assert_eq!(a.add(b).unwrap().to_vec(), vec![4.0, 6.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    assert_eq!(a.softmax().to_vec(), vec![0.5, 0.5]);
}

#[test]
fn matmul_of_ones_contracts_inner_dim() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::full(&[2, 3], 1.0));
    let b = tape.constant(Tensor::full(&[3, 2], 1.0));
    let c = a.matmul(b).unwrap();
    assert_eq!(c.shape(), vec![2, 2]);
    assert_eq!(c.to_vec(), vec![3.0; 4]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 2]));
    let err = a.matmul(b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 2]
        }
    );
    assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { op: "add", .. })));
}

#[test]
fn derivative_of_square() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.mul(x).unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().data(), &[6.0]);
}

#[test]
fn derivative_of_log_sigmoid_at_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    x.sigmoid().log().backward().unwrap();
    assert!((x.grad().data()[0] - 0.5).abs() < 1e-15);
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    x.log_sigmoid().backward().unwrap();
    assert!((x.grad().data()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn softmax_sum_has_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[4], &[0.3, -1.0, 2.0, 0.1]));
    x.softmax().sum().backward().unwrap();
    for g in x.grad().data() {
        assert!(g.abs() < 1e-15);
    }
}

#[test]
fn backward_requires_scalar_root() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3]));
    let y = x.exp();
    assert!(matches!(tape.backward(y), Err(TensorError::NotScalar { .. })));
}

#[test]
fn unreached_leaves_have_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let unused = tape.leaf(t(&[2], &[1.0, 1.0]));
    x.exp().backward().unwrap();
    assert_eq!(unused.grad().data(), &[0.0, 0.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.mul(x).unwrap();
    y.backward().unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().data(), &[12.0]);
    tape.zero_grad();
    y.backward().unwrap();
    assert_eq!(x.grad().data(), &[6.0]);
}

#[test]
fn softmax_rows_sum_to_one_and_layer_norm_standardizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::new();
    let x = tape.constant(random(&mut rng, &[7, 5]).reshaped(vec![7, 5]).unwrap().clone());
    let big = x.scale(30.0);
    for row in big.softmax().to_vec().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // eps inside the square root shrinks the variance by eps / raw variance
    let scaled = x.scale(100.0).offset(3.0);
    for row in scaled.layer_norm().to_vec().chunks(5) {
        let mean = row.iter().sum::<f64>() / 5.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-8, "variance {var}");
    }
}

#[test]
fn quadratic_form_passes_gradient_check() {
    let q = t(&[3, 3], &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 3.0]);
    let f = scalar_fn(move |tape, x| {
        let qm = tape.constant(q.clone());
        let col = x.reshape(&[3, 1])?;
        let row = x.reshape(&[1, 3])?;
        Ok(row.matmul(qm)?.matmul(col)?.sum())
    });
    let err = finite_difference_check(f, &t(&[3], &[0.7, -1.2, 0.4]), 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn constant_function_has_zero_error() {
    let f = scalar_fn(|tape, _x| Ok(tape.scalar(4.0).offset(0.0)));
    let err = finite_difference_check(f, &t(&[2], &[1.0, 2.0]), 1e-5).unwrap();
    assert_eq!(err, 0.0);
    let bad = finite_difference_check(f, &t(&[2], &[1.0, 2.0]), 0.0);
    assert!(bad.is_err());
}

/// Reduces an arbitrary tensor to a scalar with non-uniform weights so that
/// every output coordinate contributes a distinct gradient.
fn weighted_sum<'t>(y: Var<'t>, salt: f64) -> Result<Var<'t>, TensorError> {
    let n = y.numel();
    let w: Vec<f64> = (0..n).map(|i| libm::sin(1.0 + i as f64 * 0.7 + salt)).collect();
    let wt = y.tape().constant(Tensor::new(y.shape(), w)?);
    Ok(y.mul(wt)?.sum())
}

fn check_kind(kind: OpKind, shapes: &[&[usize]], positive: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<Tensor> = shapes
        .iter()
        .map(|s| {
            let mut x = random(&mut rng, s);
            if positive {
                x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
            }
            x
        })
        .collect();
    let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
    let flat: Vec<f64> = parts.iter().flat_map(|p| p.data().to_vec()).collect();
    let owned_shapes: Vec<Vec<usize>> = shapes.iter().map(|s| s.to_vec()).collect();
    let k = kind.clone();
    let f = scalar_fn(move |_tape, x| {
        let mut inputs = Vec::new();
        let mut off = 0;
        for (s, &n) in owned_shapes.iter().zip(&sizes) {
            inputs.push(x.slice(0, off, n)?.reshape(s)?);
            off += n;
        }
        let y = forward_op(&k, &inputs)?;
        weighted_sum(y, seed as f64)
    });
    let point = Tensor::vector(flat);
    let err = finite_difference_check(f, &point, 1e-5).unwrap();
    assert!(err < 1e-4, "{kind:?}: max relative error {err}");
}

#[test]
fn every_op_kind_passes_randomized_gradient_checks() {
    for seed in 0..5u64 {
        check_kind(OpKind::Add, &[&[2, 3], &[3]], false, seed);
        check_kind(OpKind::Add, &[&[4, 1], &[4, 3]], false, seed);
        check_kind(OpKind::Sub, &[&[3, 1, 2], &[4, 1]], false, seed);
        check_kind(OpKind::Mul, &[&[2, 3], &[2, 3]], false, seed);
        check_kind(OpKind::Mul, &[&[2, 1, 3], &[4, 1]], false, seed);
        check_kind(OpKind::MatMul, &[&[2, 3], &[3, 4]], false, seed);
        check_kind(OpKind::MatMul, &[&[2, 2, 3], &[2, 3, 2]], false, seed);
        check_kind(OpKind::MatMul, &[&[2, 2, 3], &[3, 2]], false, seed);
        check_kind(OpKind::Sum, &[&[2, 3]], false, seed);
        check_kind(OpKind::Mean, &[&[2, 3]], false, seed);
        check_kind(OpKind::Exp, &[&[5]], false, seed);
        check_kind(OpKind::Log, &[&[5]], true, seed);
        check_kind(OpKind::Sigmoid, &[&[5]], false, seed);
        check_kind(OpKind::Softplus, &[&[5]], false, seed);
        check_kind(OpKind::Tanh, &[&[5]], false, seed);
        check_kind(OpKind::Softmax, &[&[3, 4]], false, seed);
        check_kind(OpKind::LayerNorm, &[&[3, 4]], false, seed);
        check_kind(OpKind::Concat { axis: 1 }, &[&[2, 2], &[2, 3]], false, seed);
        check_kind(
            OpKind::Slice {
                axis: 1,
                start: 1,
                len: 2,
            },
            &[&[3, 4]],
            false,
            seed,
        );
        check_kind(OpKind::Reshape(vec![3, 2]), &[&[2, 3]], false, seed);
        check_kind(OpKind::Transpose, &[&[2, 3, 4]], false, seed);
        check_kind(
            OpKind::MaskedFill {
                mask: vec![false, true, false],
                fill: -3.0,
            },
            &[&[2, 3]],
            false,
            seed,
        );
    }
}

#[test]
fn remaining_ops_pass_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let point = random(&mut rng, &[24]);
    let f = scalar_fn(|_t, x| {
        let a = x.reshape(&[2, 3, 4])?;
        let p = a.permute(&[2, 0, 1])?;
        let s = p.sum_axis(1)?;
        let lse = a.log_sum_exp();
        let ls = a.log_softmax();
        let g = a.gather(1, &[2, 0, 1, 1], 2)?;
        let r = a.relu().sqrt().offset(0.0);
        let q = x.square().offset(1.0).sqrt();
        let d = x.div(q)?;
        let lr = a.leaky_relu(0.1);
        let total = weighted_sum(s, 0.1)?
            .add(weighted_sum(lse, 0.2)?)?
            .add(weighted_sum(ls, 0.3)?)?
            .add(weighted_sum(g, 0.4)?)?
            .add(weighted_sum(d, 0.5)?)?
            .add(weighted_sum(a.mean_axis(2)?, 0.6)?)?
            .add(weighted_sum(lr, 0.7)?)?;
        // relu/sqrt are checked away from their kinks
        let _ = r;
        Ok(total)
    });
    let err = finite_difference_check(f, &point, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn tape_counts_matmul_work() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[4, 2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 5]));
    a.matmul(b).unwrap();
    assert_eq!(tape.stats().matmul_flops, 4 * 2 * 3 * 5);
    assert_eq!(tape.stats().nodes, 3);
}

#[test]
fn masked_softmax_ignores_filled_entries() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2, 3], &[0.2, 5.0, -0.1, 1.0, 2.0, 3.0]));
    let p = x.masked_fill(&[false, true, false], MASK_FILL).unwrap().softmax();
    let v = p.to_vec();
    assert_eq!(v[1], 0.0);
    assert_eq!(v[4], 0.0);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    weighted_sum(p, 0.0).unwrap().backward().unwrap();
    let g = x.grad();
    assert_eq!(g.data()[1], 0.0);
    assert_eq!(g.data()[4], 0.0);
}
