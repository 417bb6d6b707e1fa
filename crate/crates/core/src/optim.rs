//! SGD with momentum, Adam, and staged learning-rate division.
//!
//! Frozen (pruned) entries are skipped by every step and their moments are
//! held at zero, so a masked parameter stays exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::Model;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd(c) => c.lr,
            OptimizerConfig::Adam(c) => c.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            OptimizerConfig::Sgd(c) => {
                if !(c.lr > 0.0) {
                    return bad(format!("sgd lr must be > 0, got {}", c.lr));
                }
                if !(0.0..1.0).contains(&c.momentum) {
                    return bad(format!("momentum must be in [0, 1), got {}", c.momentum));
                }
                if !(c.weight_decay >= 0.0) {
                    return bad(format!("weight_decay must be ≥ 0, got {}", c.weight_decay));
                }
            }
            OptimizerConfig::Adam(c) => {
                if !(c.lr > 0.0) {
                    return bad(format!("adam lr must be > 0, got {}", c.lr));
                }
                if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) {
                    return bad(format!("betas must be in [0, 1), got {} {}", c.beta1, c.beta2));
                }
                if !(c.eps > 0.0) {
                    return bad(format!("eps must be > 0, got {}", c.eps));
                }
            }
        }
        Ok(())
    }
}

/// One SGD step over a flat tensor: `v ← m·v + g + λw; w ← w − lr·v`.
pub fn sgd_step<T: Scalar>(
    w: &mut [T],
    g: &[T],
    v: &mut [T],
    frozen: Option<&[bool]>,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if g.len() != w.len() || v.len() != w.len() || frozen.is_some_and(|f| f.len() != w.len()) {
        return Err(shape_err!(
            "sgd: {} params, {} grads, {} velocities",
            w.len(),
            g.len(),
            v.len()
        ));
    }
    let (m, wd, lr) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay), T::lit(lr));
    for i in 0..w.len() {
        if frozen.is_some_and(|f| f[i]) {
            v[i] = T::zero();
            continue;
        }
        v[i] = m * v[i] + g[i] + wd * w[i];
        w[i] -= lr * v[i];
    }
    Ok(())
}

/// One bias-corrected Adam step at step count `t ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    frozen: Option<&[bool]>,
    cfg: &AdamConfig,
    lr: f64,
    t: u64,
) -> Result<()> {
    if t < 1 {
        return Err(Error::State("adam step count must be ≥ 1".into()));
    }
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() || frozen.is_some_and(|f| f.len() != w.len()) {
        return Err(shape_err!("adam: {} params, {} grads", w.len(), g.len()));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(t as f64));
    let (eps, lr, one) = (T::lit(cfg.eps), T::lit(lr), T::one());
    for i in 0..w.len() {
        if frozen.is_some_and(|f| f[i]) {
            m[i] = T::zero();
            v[i] = T::zero();
            continue;
        }
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

fn default_divisor() -> f64 {
    10.0
}

/// Piecewise-constant schedule: `base / divisor^(milestones passed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStageSchedule {
    pub base_lr: f64,
    #[serde(default = "default_divisor")]
    pub divisor: f64,
    /// Fractions of the total epoch count, strictly increasing in (0, 1).
    #[serde(default)]
    pub milestones: Vec<f64>,
}

impl LrStageSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrStageSchedule {
            base_lr,
            divisor: 2.0,
            milestones: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.divisor > 1.0) {
            return Err(Error::Config(format!(
                "lr schedule needs base_lr > 0 and divisor > 1, got {} and {}",
                self.base_lr, self.divisor
            )));
        }
        let increasing = self.milestones.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.milestones.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
            return Err(Error::Config(format!(
                "milestones {:?} must be strictly increasing in (0, 1)",
                self.milestones
            )));
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch` of `total`. A milestone `f` has
    /// passed once `epoch > f·total`.
    pub fn lr_at_epoch(&self, epoch: usize, total: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&f| epoch as f64 > f * total as f64)
            .count();
        self.base_lr / self.divisor.powi(passed as i32)
    }
}

/// Optimizer moments, one slot per model parameter tensor in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    /// First moment (SGD velocity).
    pub m: Vec<Vec<T>>,
    /// Second moment; empty slots for SGD.
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, model: &Model<T>) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = model.params().map(|(_, _, p)| p.numel()).collect();
        let adam = matches!(config, OptimizerConfig::Adam(_));
        Ok(Optimizer {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes
                .iter()
                .map(|&n| vec![T::zero(); if adam { n } else { 0 }])
                .collect(),
            t: 0,
        })
    }

    fn check(&self, model: &Model<T>) -> Result<()> {
        let sizes: Vec<usize> = model.params().map(|(_, _, p)| p.numel()).collect();
        if sizes.len() != self.m.len() || sizes.iter().zip(&self.m).any(|(&n, m)| n != m.len()) {
            return Err(Error::State("optimizer state does not match the model".into()));
        }
        Ok(())
    }

    /// Updates every trainable parameter from its current gradient.
    /// Parameters without a gradient are left alone.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) -> Result<()> {
        self.check(model)?;
        self.t += 1;
        let t = self.t;
        let config = self.config;
        for (slot, (_, _, p)) in model.params_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = p.value.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let frozen = p.frozen().map(<[bool]>::to_vec);
            let w = p.value.data_mut();
            match &config {
                OptimizerConfig::Sgd(c) => sgd_step(w, &g, &mut self.m[slot], frozen.as_deref(), c, lr)?,
                OptimizerConfig::Adam(c) => {
                    adam_step(w, &g, &mut self.m[slot], &mut self.v[slot], frozen.as_deref(), c, lr, t)?
                }
            }
        }
        Ok(())
    }

    /// Zeroes the moments of every frozen entry; called after each prune.
    pub fn clear_frozen(&mut self, model: &Model<T>) -> Result<()> {
        self.check(model)?;
        for (slot, (_, _, p)) in model.params().enumerate() {
            if let Some(f) = p.frozen() {
                for (i, _) in f.iter().enumerate().filter(|(_, &k)| k) {
                    self.m[slot][i] = T::zero();
                    if let Some(v) = self.v[slot].get_mut(i) {
                        *v = T::zero();
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use crate::tensor::{softmax_cross_entropy, BnMode, Tensor};

    fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum,
            weight_decay,
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut w = [1.0f64];
        sgd_step(&mut w, &[2.0], &mut [0.0], None, &sgd(0.1, 0.0, 0.0), 0.1).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_without_gradient() {
        let mut w = [1.0f64];
        let mut v = [1.0f64];
        sgd_step(&mut w, &[0.0], &mut v, None, &sgd(0.1, 0.9, 0.0), 0.1).unwrap();
        assert!((1.0 - w[0] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_coupled() {
        let mut w = [2.0f64];
        sgd_step(&mut w, &[0.0], &mut [0.0], None, &sgd(0.5, 0.0, 0.1), 0.5).unwrap();
        assert!((w[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn frozen_entries_stay_zero() {
        let mut w = [0.0f32, 1.0];
        let mut v = [0.3f32, 0.0];
        let frozen = [true, false];
        sgd_step(&mut w, &[5.0, 1.0], &mut v, Some(&frozen), &sgd(0.1, 0.9, 0.1), 0.1).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(v[0], 0.0);
        let (mut m, mut s) = ([0.2f32, 0.0], [0.1f32, 0.0]);
        adam_step(
            &mut w,
            &[5.0, 1.0],
            &mut m,
            &mut s,
            Some(&frozen),
            &AdamConfig::with_lr(0.1),
            0.1,
            1,
        )
        .unwrap();
        assert_eq!((w[0], m[0], s[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = [0.5f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_step(
            &mut w,
            &[1.0],
            &mut m,
            &mut v,
            None,
            &AdamConfig::with_lr(0.001),
            0.001,
            1,
        )
        .unwrap();
        assert!((0.5 - w[0] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_zero_gradient_is_no_op() {
        let mut w = [0.5f64, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_step(
            &mut w,
            &[0.0, 0.0],
            &mut m,
            &mut v,
            None,
            &AdamConfig::with_lr(0.1),
            0.1,
            1,
        )
        .unwrap();
        assert_eq!(w, [0.5, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut w = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let mut last = 0.0;
        for t in 1..=1000 {
            let before = w[0];
            adam_step(&mut w, &[0.3], &mut m, &mut v, None, &cfg, cfg.lr, t).unwrap();
            last = before - w[0];
        }
        assert!((last - 0.01).abs() / 0.01 < 0.01, "{last}");
    }

    #[test]
    fn adam_rejects_step_zero_and_bad_shapes() {
        let cfg = AdamConfig::with_lr(0.1);
        let r = adam_step(&mut [0.0f64], &[1.0], &mut [0.0], &mut [0.0], None, &cfg, 0.1, 0);
        assert!(matches!(r, Err(Error::State(_))));
        let r = sgd_step(&mut [0.0f64; 2], &[1.0], &mut [0.0; 2], None, &sgd(0.1, 0.0, 0.0), 0.1);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn staged_lr() {
        let s = LrStageSchedule {
            base_lr: 0.1,
            divisor: 5.0,
            milestones: vec![0.25, 0.5, 0.75],
        };
        assert_eq!(s.lr_at_epoch(1, 100), 0.1);
        assert!((s.lr_at_epoch(60, 100) - 0.004).abs() < 1e-15);
        let f = LrStageSchedule {
            base_lr: 0.005,
            divisor: 2.0,
            milestones: vec![0.25, 0.5, 0.75],
        };
        assert!((f.lr_at_epoch(80, 100) - 0.000625).abs() < 1e-15);
        let lrs: Vec<f64> = (1..=100).map(|e| s.lr_at_epoch(e, 100)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn schedule_validation() {
        let bad = LrStageSchedule {
            base_lr: 0.1,
            divisor: 5.0,
            milestones: vec![0.5, 0.25],
        };
        assert!(bad.validate().is_err());
        let bad = LrStageSchedule {
            base_lr: 0.1,
            divisor: 1.0,
            milestones: vec![],
        };
        assert!(bad.validate().is_err());
        assert!(OptimizerConfig::Sgd(sgd(0.1, 1.0, 0.0)).validate().is_err());
        assert!(OptimizerConfig::Adam(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::with_lr(0.1)
        })
        .validate()
        .is_err());
    }

    #[test]
    fn optimizer_preserves_masks_on_a_model() {
        let mut model = Model::<f32>::build(&ModelSpec::mlp_parity(6, 5), 3).unwrap();
        for (_, _, p) in model.params_mut() {
            p.freeze(0);
            p.freeze(2 % p.numel());
        }
        let mut opt = Optimizer::new(OptimizerConfig::Adam(AdamConfig::with_lr(0.05)), &model).unwrap();
        let x = Tensor::from_fn(&[8, 6], |i| ((i * 37 % 11) as f32 - 5.0) / 5.0);
        let y: Vec<usize> = (0..8).map(|i| i % 2).collect();
        for _ in 0..5 {
            let logits = model.forward(&x, BnMode::Train).unwrap();
            let (_, dl) = softmax_cross_entropy(&logits, &y).unwrap();
            model.backward(&dl).unwrap();
            model.mask_grads();
            opt.step(&mut model, 0.05).unwrap();
        }
        for (_, _, p) in model.params() {
            assert_eq!(p.value.data()[0], 0.0);
            assert_eq!(p.value.data()[2 % p.numel()], 0.0);
        }
        opt.clear_frozen(&model).unwrap();
        assert!(opt.m.iter().all(|m| m[0] == 0.0));
    }

    #[test]
    fn stale_state_is_rejected() {
        let mut a = Model::<f32>::build(&ModelSpec::mlp_parity(6, 5), 3).unwrap();
        let b = Model::<f32>::build(&ModelSpec::mlp_parity(6, 4), 3).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::Sgd(sgd(0.1, 0.9, 0.0)), &b).unwrap();
        assert!(matches!(opt.step(&mut a, 0.1), Err(Error::State(_))));
    }

    #[test]
    fn config_json_roundtrip() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"adam","lr":0.01}"#).unwrap();
        assert_eq!(c, OptimizerConfig::Adam(AdamConfig::with_lr(0.01)));
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"kind":"sgd","lr":0.1,"nesterov":true}"#).is_err());
    }
}
