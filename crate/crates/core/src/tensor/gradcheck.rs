//! Central-difference gradient checking in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, conv_output_extent, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, relu, relu_backward, softmax_cross_entropy, BnMode, BnState,
    Param, Tensor,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub within_tol: bool,
}

/// Compares the analytic gradients returned by `op` against central
/// differences with step `h`.
///
/// `op` maps the inputs to a scalar and the gradient of that scalar with
/// respect to each input. The error per element is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(op: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> GradCheck
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    let (_, analytic) = op(inputs);
    assert_eq!(analytic.len(), inputs.len(), "one gradient per input");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[t].shape(), "gradient shape");
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let (plus, _) = op(&work);
            work[t].data_mut()[i] = orig - h;
            let (minus, _) = op(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    GradCheck {
        max_rel_error: worst,
        within_tol: worst <= tol,
    }
}

/// Worst error of one kernel's backward over a batch of random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

const STEP: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ r·y` and its gradient `r`: turns a tensor-valued kernel into a scalar.
fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks the backward pass of every layer kernel (linear, convolution,
/// ReLU, max-pooling, train-mode batch norm, softmax cross-entropy) against
/// central differences on `instances` random small shapes each.
pub fn check_kernels(instances: usize, seed: u64) -> Result<Vec<KernelCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |op, worst: f64| {
        out.push(KernelCheck {
            op,
            instances,
            max_rel_error: worst,
        })
    };

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n, i, o) = (
            rng.random_range(1..=4),
            rng.random_range(1..=6),
            rng.random_range(1..=5),
        );
        let inputs = [
            uniform(&mut rng, &[n, i]),
            uniform(&mut rng, &[o, i]),
            uniform(&mut rng, &[o]),
        ];
        let r = uniform(&mut rng, &[n, o]);
        let op = |xs: &[Tensor<f64>]| {
            let y = linear_forward(&xs[0], &xs[1], &xs[2]).unwrap();
            let (dx, dw, db) = linear_backward(&xs[0], &xs[1], &r).unwrap();
            (project(&y, &r), vec![dx, dw, db])
        };
        worst = worst.max(grad_check(op, &inputs, STEP, 1.0).max_rel_error);
    }
    record("linear", worst);

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n, ci, co) = (
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let (k, stride, pad) = (
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(0..=1),
        );
        let (ho, wo) = (
            conv_output_extent(h, k, stride, pad)?,
            conv_output_extent(w, k, stride, pad)?,
        );
        let inputs = [
            uniform(&mut rng, &[n, ci, h, w]),
            uniform(&mut rng, &[co, ci, k, k]),
            uniform(&mut rng, &[co]),
        ];
        let r = uniform(&mut rng, &[n, co, ho, wo]);
        let op = |xs: &[Tensor<f64>]| {
            let y = conv2d_forward(&xs[0], &xs[1], Some(&xs[2]), stride, pad).unwrap();
            let g = conv2d_backward(&xs[0], &xs[1], &r, stride, pad).unwrap();
            (project(&y, &r), vec![g.input, g.kernels, g.bias])
        };
        worst = worst.max(grad_check(op, &inputs, STEP, 1.0).max_rel_error);
    }
    record("conv2d", worst);

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = [rng.random_range(1..=3), rng.random_range(1..=6)];
        // kept away from the kink at 0
        let x = Tensor::from_fn(&shape, |_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let r = uniform(&mut rng, &shape);
        let op = |xs: &[Tensor<f64>]| (project(&relu(&xs[0]), &r), vec![relu_backward(&xs[0], &r).unwrap()]);
        worst = worst.max(grad_check(op, &[x], STEP, 1.0).max_rel_error);
    }
    record("relu", worst);

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(2..=6),
            rng.random_range(2..=6),
        ];
        let x = uniform(&mut rng, &shape);
        let (y, _) = maxpool2_forward(&x)?;
        let r = uniform(&mut rng, y.shape());
        let op = |xs: &[Tensor<f64>]| {
            let (y, arg) = maxpool2_forward(&xs[0]).unwrap();
            (
                project(&y, &r),
                vec![maxpool2_backward(xs[0].shape(), &arg, &r).unwrap()],
            )
        };
        worst = worst.max(grad_check(op, &[x], STEP, 1.0).max_rel_error);
    }
    record("maxpool2", worst);

    let mut worst = 0.0f64;
    for t in 0..instances {
        let (n, c) = (rng.random_range(4..=6), rng.random_range(1..=3));
        let shape = if t % 2 == 0 {
            vec![n, c]
        } else {
            vec![n, c, rng.random_range(1..=3), rng.random_range(1..=3)]
        };
        let inputs = [
            uniform(&mut rng, &shape),
            Tensor::from_fn(&[c], |_| rng.random_range(0.5..1.5)),
            uniform(&mut rng, &[c]),
        ];
        let r = uniform(&mut rng, &shape);
        let op = |xs: &[Tensor<f64>]| {
            let mut st = BnState::new(c);
            st.gamma = Param::new(xs[1].clone());
            st.beta = Param::new(xs[2].clone());
            let (y, cache) = batchnorm_forward(&xs[0], &mut st, BnMode::Train).unwrap();
            let (dz, dg, db) = batchnorm_backward(&r, &cache, &st).unwrap();
            (project(&y, &r), vec![dz, dg, db])
        };
        worst = worst.max(grad_check(op, &inputs, STEP, 1.0).max_rel_error);
    }
    record("batchnorm", worst);

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let logits = Tensor::from_fn(&[n, k], |_| rng.random_range(-3.0..3.0));
        let op = |xs: &[Tensor<f64>]| {
            let (l, g) = softmax_cross_entropy(&xs[0], &labels).unwrap();
            (l, vec![g])
        };
        worst = worst.max(grad_check(op, &[logits], STEP, 1.0).max_rel_error);
    }
    record("softmax_cross_entropy", worst);

    Ok(out)
}
