//! 2-D cross-correlation with zero padding, lowered to GEMM via im2col.

use super::{gemm, Scalar, Tensor, Transpose};
use crate::error::{shape_err, Result};
use crate::exec::{for_each_chunk_mut, map_indexed};

/// Samples per partial kernel-gradient accumulator.
const GRAD_GROUP: usize = 8;

/// `(extent + 2·pad − kernel) / stride + 1`, rejecting empty outputs.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(shape_err!("conv stride must be positive"));
    }
    if extent + 2 * pad < kernel {
        return Err(shape_err!(
            "conv kernel {} larger than padded extent {}",
            kernel,
            extent + 2 * pad
        ));
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let &[n, c_in, h, w] = input.shape() else {
            return Err(shape_err!("conv input must be N×C×H×W, got {:?}", input.shape()));
        };
        let &[c_out, kc, kh, kw] = kernels.shape() else {
            return Err(shape_err!(
                "conv kernels must be Cout×Cin×kh×kw, got {:?}",
                kernels.shape()
            ));
        };
        if kc != c_in {
            return Err(shape_err!(
                "conv kernels expect {} input channels, input has {}",
                kc,
                c_in
            ));
        }
        let ho = conv_output_extent(h, kh, stride, pad)?;
        let wo = conv_output_extent(w, kw, stride, pad)?;
        Ok(Geometry {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.h * self.w
    }

    /// Fills `col` (`patch × out_plane`) from one input sample.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * plane..][..plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back onto one input-gradient sample.
    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * plane..][..plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; output is `N × C_out × H' × W'`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, kernels, stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.c_out {
            return Err(shape_err!("conv bias has {} entries, expected {}", b.numel(), g.c_out));
        }
    }
    let plane = g.out_plane();
    let mut out = Tensor::zeros(&[g.n, g.c_out, g.ho, g.wo]);
    let x = input.data();
    let k = kernels.data();
    for_each_chunk_mut(out.data_mut(), g.c_out * plane, |n, y| {
        let mut col = vec![T::zero(); g.patch() * plane];
        g.im2col(&x[n * g.in_sample()..][..g.in_sample()], &mut col);
        gemm(
            g.c_out,
            plane,
            g.patch(),
            T::one(),
            k,
            Transpose::No,
            &col,
            Transpose::No,
            T::zero(),
            y,
        );
        if let Some(b) = bias {
            for (row, &bb) in y.chunks_mut(plane).zip(b.data()) {
                row.iter_mut().for_each(|v| *v += bb);
            }
        }
    });
    Ok(out)
}

/// Gradients of a convolution with respect to input, kernels and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, kernels, stride, pad)?;
    if dout.shape() != [g.n, g.c_out, g.ho, g.wo] {
        return Err(shape_err!(
            "conv backward: grad {:?} does not match output {:?}",
            dout.shape(),
            [g.n, g.c_out, g.ho, g.wo]
        ));
    }
    let plane = g.out_plane();
    let patch = g.patch();
    let x = input.data();
    let dy = dout.data();

    let groups = g.n.div_ceil(GRAD_GROUP);
    let partials = map_indexed(groups, |gi| {
        let mut acc = vec![T::zero(); g.c_out * patch];
        let mut col = vec![T::zero(); patch * plane];
        for n in gi * GRAD_GROUP..((gi + 1) * GRAD_GROUP).min(g.n) {
            g.im2col(&x[n * g.in_sample()..][..g.in_sample()], &mut col);
            gemm(
                g.c_out,
                patch,
                plane,
                T::one(),
                &dy[n * g.c_out * plane..][..g.c_out * plane],
                Transpose::No,
                &col,
                Transpose::Yes,
                T::one(),
                &mut acc,
            );
        }
        acc
    });
    let mut dk = Tensor::zeros(kernels.shape());
    for part in partials {
        for (d, p) in dk.data_mut().iter_mut().zip(part) {
            *d += p;
        }
    }

    let mut db = Tensor::zeros(&[g.c_out]);
    for sample in dy.chunks(g.c_out * plane) {
        for (acc, row) in db.data_mut().iter_mut().zip(sample.chunks(plane)) {
            *acc += row.iter().copied().sum::<T>();
        }
    }

    let k = kernels.data();
    let mut dx = Tensor::zeros(input.shape());
    for_each_chunk_mut(dx.data_mut(), g.in_sample(), |n, dxn| {
        let mut col = vec![T::zero(); patch * plane];
        gemm(
            patch,
            plane,
            g.c_out,
            T::one(),
            k,
            Transpose::Yes,
            &dy[n * g.c_out * plane..][..g.c_out * plane],
            Transpose::No,
            T::zero(),
            &mut col,
        );
        g.col2im(&col, dxn);
    });

    Ok(ConvGrads {
        input: dx,
        kernels: dk,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn direct(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let [n, c, h, w] = x.shape().try_into().unwrap();
        let [co, _, kh, kw] = k.shape().try_into().unwrap();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * co * ho * wo];
        for s in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * c + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((s * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 1, 4, 5], |i| i as f32 * 0.5 - 3.0);
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
        let y = conv2d_forward(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_patch() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(&[1, 1, 2, 2], vec![1.0f32; 4]).unwrap();
        let y = conv2d_forward(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn lenet_first_layer_shape() {
        let x = Tensor::<f32>::zeros(&[1, 1, 28, 28]);
        let k = Tensor::<f32>::zeros(&[20, 1, 5, 5]);
        let b = Tensor::<f32>::zeros(&[20]);
        let y = conv2d_forward(&x, &k, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 20, 24, 24]);
    }

    #[test]
    fn matches_direct_loops_with_padding_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)] {
            let x = Tensor::from_fn(&[2, 3, 7, 6], |_| rng.random_range(-1.0..1.0));
            let k = Tensor::from_fn(&[4, 3, 3, 2], |_| rng.random_range(-1.0..1.0));
            let y = conv2d_forward(&x, &k, None, stride, pad).unwrap();
            assert_eq!(y.shape()[2], (7 + 2 * pad - 3) / stride + 1);
            assert_eq!(y.shape()[3], (6 + 2 * pad - 2) / stride + 1);
            for (a, b) in y.data().iter().zip(direct(&x, &k, stride, pad)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &k, None, 1, 0), Err(Error::Shape(_))));
        let k2 = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert!(matches!(conv2d_forward(&x, &k2, None, 1, 0), Err(Error::Shape(_))));
        assert!(conv2d_forward(&x, &k, None, 1, 1).is_ok());
    }
}
