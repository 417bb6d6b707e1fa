use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::exec::{exec_mode, for_each_chunk_mut, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Transpose {
    No,
    Yes,
}

const PAR_ROWS: usize = 64;

/// `C (m×n) = alpha · op(A) · op(B) + beta · C` on contiguous row-major
/// storage. `op(A)` is `m×k`; with `Transpose::Yes` the buffer holds `k×m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    ta: Transpose,
    b: &[T],
    tb: Transpose,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert_eq!(c.len(), m * n, "gemm: C size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    let rows_per = match exec_mode() {
        ExecMode::Parallel => PAR_ROWS,
        ExecMode::Reference => m,
    };
    for_each_chunk_mut(c, rows_per * n, |ci, cc| {
        let i0 = ci * rows_per;
        let mm = cc.len() / n;
        let a_off = match ta {
            Transpose::No => i0 * k,
            Transpose::Yes => i0,
        };
        // SAFETY: offsets and strides stay inside the length-checked buffers.
        unsafe {
            T::gemm_raw(
                mm,
                k,
                n,
                alpha,
                a.as_ptr().add(a_off),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                cc.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(shape_err!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    };
    if k != k2 {
        return Err(shape_err!(
            "matmul inner extents differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(
        m,
        n,
        k,
        T::one(),
        a.data(),
        Transpose::No,
        b.data(),
        Transpose::No,
        T::zero(),
        c.data_mut(),
    );
    Ok(c)
}

/// `y = x · Wᵀ + b` with `x: N×in`, `W: out×in`, `b: out`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let &[out, inp] = w.shape() else {
        return Err(shape_err!("linear weight must be rank 2, got {:?}", w.shape()));
    };
    let n = x.leading();
    if x.row_len() != inp {
        return Err(shape_err!("linear expects {} input features, got {:?}", inp, x.shape()));
    }
    if b.numel() != out {
        return Err(shape_err!("linear bias has {} entries, expected {}", b.numel(), out));
    }
    let mut y = Tensor::zeros(&[n, out]);
    gemm(
        n,
        out,
        inp,
        T::one(),
        x.data(),
        Transpose::No,
        w.data(),
        Transpose::Yes,
        T::zero(),
        y.data_mut(),
    );
    let bias = b.data();
    for row in y.data_mut().chunks_mut(out) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(y)
}

/// Returns `(dx, dW, db)` for [`linear_forward`].
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let &[out, inp] = w.shape() else {
        return Err(shape_err!("linear weight must be rank 2, got {:?}", w.shape()));
    };
    let n = x.leading();
    if dy.shape() != [n, out] || x.row_len() != inp {
        return Err(shape_err!(
            "linear backward shapes disagree: x {:?}, W {:?}, dy {:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        ));
    }
    let mut dw = Tensor::zeros(&[out, inp]);
    gemm(
        out,
        inp,
        n,
        T::one(),
        dy.data(),
        Transpose::Yes,
        x.data(),
        Transpose::No,
        T::zero(),
        dw.data_mut(),
    );
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        n,
        inp,
        out,
        T::one(),
        dy.data(),
        Transpose::No,
        w.data(),
        Transpose::No,
        T::zero(),
        dx.data_mut(),
    );
    let mut db = Tensor::zeros(&[out]);
    for row in dy.data().chunks(out) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((dx, dw, db))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the forward input was strictly positive; the
/// derivative at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(shape_err!(
            "relu backward: input {:?} vs grad {:?}",
            x.shape(),
            dy.shape()
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let &[n, k] = logits.shape() else {
        return Err(shape_err!("logits must be N×K, got {:?}", logits.shape()));
    };
    if labels.len() != n {
        return Err(shape_err!("{} labels for {} logit rows", labels.len(), n));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} outside [0, {k})")));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    for ((row, grow), &label) in logits.data().chunks(k).zip(grad.data_mut().chunks_mut(k)).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (g, &z) in grow.iter_mut().zip(row) {
            let e = (z - max).exp();
            *g = e;
            sum += e;
        }
        total += sum.ln() + max - row[label];
        for g in grow.iter_mut() {
            *g = *g / sum * inv_n;
        }
        grow[label] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a.data()[i * k + t] * b.data()[t * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let eye = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::new(&[3, 3], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap().data(), b.data());
        let a = Tensor::new(&[1, 1], vec![2.0f32]).unwrap();
        let b = Tensor::new(&[1, 1], vec![3.0f32]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random(&[4, 5], &mut rng);
            let b = random(&[5, 3], &mut rng);
            let c = matmul(&a, &b).unwrap();
            for (x, y) in c.data().iter().zip(triple_loop(&a, &b)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
        let v = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(matmul(&v, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_gemm_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[6, 4], &mut rng); // stored k×m for op(A) = Aᵀ (4×6)
        let b = random(&[5, 6], &mut rng); // stored n×k for op(B) = Bᵀ (6×5)
        let mut c = vec![0.0; 4 * 5];
        gemm(
            4,
            5,
            6,
            1.0,
            a.data(),
            Transpose::Yes,
            b.data(),
            Transpose::Yes,
            0.0,
            &mut c,
        );
        for i in 0..4 {
            for j in 0..5 {
                let want: f64 = (0..6).map(|t| a.data()[t * 4 + i] * b.data()[j * 6 + t]).sum();
                assert!((c[i * 5 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::new(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::new(&[4], vec![-1.0f32, -2.0, -0.5, -9.0]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(&[50], &mut rng);
        let y = relu(&r);
        for (a, b) in r.data().iter().zip(y.data()) {
            let want = if *a > 0.0 { *a } else { 0.0 };
            assert_eq!(want, *b);
        }
        let g = relu_backward(&x, &Tensor::new(&[3], vec![5.0, 5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let logits = Tensor::<f64>::zeros(&[2, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[3, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_large_margin_goes_to_zero() {
        let logits = Tensor::new(&[1, 3], vec![0.0f32, 200.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn cross_entropy_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels = [0usize, 3, 2];
        let logits64: Tensor<f64> = Tensor::from_fn(&[3, 4], |_| rng.random_range(-3.0..3.0));
        let logits32: Tensor<f32> = logits64.cast();
        // definition: -log(exp(z_y) / sum_j exp(z_j)), no stabilisation
        let direct: f64 = logits64
            .data()
            .chunks(4)
            .zip(labels)
            .map(|(row, y)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[y].exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        let (loss, grad) = softmax_cross_entropy(&logits32, &labels).unwrap();
        assert!((loss as f64 - direct).abs() < 1e-6);
        for (i, row) in grad.data().chunks(4).enumerate() {
            let z: f64 = logits64.data()[i * 4..i * 4 + 4].iter().map(|v| v.exp()).sum();
            for (j, g) in row.iter().enumerate() {
                let p = logits64.data()[i * 4 + j].exp() / z;
                let want = (p - if j == labels[i] { 1.0 } else { 0.0 }) / 3.0;
                assert!((*g as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(softmax_cross_entropy(&logits, &[3]), Err(Error::Input(_))));
    }

    #[test]
    fn linear_gradient_matches_hand_formula() {
        // quadratic loss 0.5/N * |X W^T - y|^2: dW = (ŷ - y)^T X / N
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6, 3], &mut rng);
        let w = random(&[1, 3], &mut rng);
        let b = Tensor::zeros(&[1]);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yhat = linear_forward(&x, &w, &b).unwrap();
        let resid: Vec<f64> = yhat.data().iter().zip(&y).map(|(a, b)| (a - b) / 6.0).collect();
        let dy = Tensor::new(&[6, 1], resid.clone()).unwrap();
        let (_, dw, db) = linear_backward(&x, &w, &dy).unwrap();
        for j in 0..3 {
            let want: f64 = (0..6).map(|i| x.data()[i * 3 + j] * resid[i]).sum();
            assert!((dw.data()[j] - want).abs() < 1e-12);
        }
        assert!((db.data()[0] - resid.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn linear_zero_input_gives_zero_weight_grad() {
        let x = Tensor::<f64>::zeros(&[4, 3]);
        let w = Tensor::from_fn(&[2, 3], |i| i as f64);
        let dy = Tensor::from_fn(&[4, 2], |i| 1.0 + i as f64);
        let (_, dw, db) = linear_backward(&x, &w, &dy).unwrap();
        assert!(dw.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v != 0.0));
    }
}
