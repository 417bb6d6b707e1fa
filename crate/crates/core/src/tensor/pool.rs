//! 2×2 max pooling with stride 2.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Returns the pooled tensor and, per output element, the flat input index
/// it was taken from. Ties go to the first maximal element in row-major
/// window order.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(shape_err!("maxpool expects N×C×H×W, got {:?}", x.shape()));
    };
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(shape_err!("maxpool input {:?} smaller than window", x.shape()));
    }
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let y = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                y[o] = src[best];
                arg.push(best);
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Result<Tensor<T>> {
    if dout.numel() != argmax.len() {
        return Err(shape_err!(
            "maxpool backward: {} grads for {} pooled outputs",
            dout.numel(),
            argmax.len()
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    Ok(dx)
}
