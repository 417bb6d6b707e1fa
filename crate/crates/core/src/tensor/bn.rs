//! Batch normalization, `z_out = γ·(z_in − μ)/sqrt(σ² + ε) + β`, per channel.

use super::{Param, Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BnState<T> {
    /// `γ = 1`, `β = 0`, running mean 0 and variance 1, `ε = 1e-5`, momentum 0.1.
    pub fn new(channels: usize) -> Self {
        BnState {
            gamma: Param::new(Tensor::from_fn(&[channels], |_| T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Saved forward quantities for [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: BnMode,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(shape_err!("batchnorm expects N×C or N×C×H×W, got {:?}", shape)),
    }
}

pub fn batchnorm_forward<T: Scalar>(
    z: &Tensor<T>,
    state: &mut BnState<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, s) = layout(z.shape())?;
    if c != state.channels() {
        return Err(shape_err!(
            "batchnorm has {} channels, input has {}",
            state.channels(),
            c
        ));
    }
    let count = n * s;
    let x = z.data();
    let mut inv_std = vec![T::zero(); c];
    let mut mean = vec![T::zero(); c];
    match mode {
        BnMode::Train => {
            for ch in 0..c {
                let mut sum = 0.0f64;
                for i in 0..n {
                    for v in &x[(i * c + ch) * s..][..s] {
                        sum += v.to_f64().unwrap();
                    }
                }
                let mu = sum / count as f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    for v in &x[(i * c + ch) * s..][..s] {
                        let d = v.to_f64().unwrap() - mu;
                        sq += d * d;
                    }
                }
                let var = sq / count as f64;
                mean[ch] = T::lit(mu);
                inv_std[ch] = T::lit(1.0 / (var + state.eps.to_f64().unwrap()).sqrt());
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                let m = state.momentum;
                state.running_mean[ch] = (T::one() - m) * state.running_mean[ch] + m * mean[ch];
                state.running_var[ch] = (T::one() - m) * state.running_var[ch] + m * T::lit(unbiased);
            }
        }
        BnMode::Eval => {
            for ch in 0..c {
                mean[ch] = state.running_mean[ch];
                inv_std[ch] = T::one() / (state.running_var[ch] + state.eps).sqrt();
            }
        }
    }
    let mut xhat = vec![T::zero(); x.len()];
    let out = normalize(z, state, &mean, &inv_std, Some(&mut xhat), (n, c, s));
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            shape: z.shape().to_vec(),
            mode,
        },
    ))
}

/// Eval-mode forward that leaves the state untouched.
pub fn batchnorm_eval<T: Scalar>(z: &Tensor<T>, state: &BnState<T>) -> Result<Tensor<T>> {
    let (n, c, s) = layout(z.shape())?;
    if c != state.channels() {
        return Err(shape_err!(
            "batchnorm has {} channels, input has {}",
            state.channels(),
            c
        ));
    }
    let inv_std: Vec<T> = state
        .running_var
        .iter()
        .map(|&v| T::one() / (v + state.eps).sqrt())
        .collect();
    Ok(normalize(z, state, &state.running_mean, &inv_std, None, (n, c, s)))
}

fn normalize<T: Scalar>(
    z: &Tensor<T>,
    state: &BnState<T>,
    mean: &[T],
    inv_std: &[T],
    mut xhat: Option<&mut [T]>,
    (n, c, s): (usize, usize, usize),
) -> Tensor<T> {
    let x = z.data();
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    let mut out = Tensor::zeros(z.shape());
    let y = out.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * s;
            for t in base..base + s {
                let h = (x[t] - mean[ch]) * inv_std[ch];
                if let Some(xh) = xhat.as_deref_mut() {
                    xh[t] = h;
                }
                y[t] = gamma[ch] * h + beta[ch];
            }
        }
    }
    out
}

/// Returns `(dz, dγ, dβ)`.
pub fn batchnorm_backward<T: Scalar>(
    dout: &Tensor<T>,
    cache: &BnCache<T>,
    state: &BnState<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dout.shape() != cache.shape.as_slice() {
        return Err(shape_err!(
            "batchnorm backward: grad {:?} vs forward {:?}",
            dout.shape(),
            cache.shape
        ));
    }
    let (n, c, s) = layout(&cache.shape)?;
    let count = T::from_usize(n * s).unwrap();
    let dy = dout.data();
    let gamma = state.gamma.value.data();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dz = Tensor::zeros(&cache.shape);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * s;
            for t in base..base + s {
                sum_dy += dy[t];
                sum_dy_xhat += dy[t] * cache.xhat[t];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let g = gamma[ch];
        let inv = cache.inv_std[ch];
        let dx = dz.data_mut();
        for i in 0..n {
            let base = (i * c + ch) * s;
            for t in base..base + s {
                dx[t] = match cache.mode {
                    BnMode::Eval => dy[t] * g * inv,
                    BnMode::Train => g * inv / count * (count * dy[t] - sum_dy - cache.xhat[t] * sum_dy_xhat),
                };
            }
        }
    }
    Ok((dz, dgamma, dbeta))
}
