use super::{Scalar, Tensor};

/// A trainable tensor plus the per-entry freeze mask used by pruning.
///
/// A frozen entry is held at exactly zero: its value is zeroed when frozen,
/// its gradient is zeroed before every optimizer step, and optimizers skip it.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    frozen: Option<Vec<bool>>,
    /// When false the whole tensor is excluded from optimizer updates.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param {
            value,
            frozen: None,
            trainable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn frozen(&self) -> Option<&[bool]> {
        self.frozen.as_deref()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.as_ref().is_some_and(|f| f[i])
    }

    /// Zeroes and freezes entry `i`.
    pub fn freeze(&mut self, i: usize) {
        let n = self.value.numel();
        self.frozen.get_or_insert_with(|| vec![false; n])[i] = true;
        self.value.data_mut()[i] = T::zero();
    }

    /// Releases entry `i` without touching its value.
    pub fn unfreeze(&mut self, i: usize) {
        if let Some(f) = self.frozen.as_mut() {
            f[i] = false;
        }
    }

    pub fn set_frozen(&mut self, mask: Option<Vec<bool>>) {
        if let Some(m) = &mask {
            assert_eq!(m.len(), self.value.numel(), "freeze mask length");
        }
        self.frozen = mask.filter(|m| m.iter().any(|&b| b));
        self.enforce();
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.as_ref().map_or(0, |f| f.iter().filter(|&&b| b).count())
    }

    /// Writes zero into every frozen entry.
    pub fn enforce(&mut self) {
        if let Some(f) = &self.frozen {
            for (v, &k) in self.value.data_mut().iter_mut().zip(f) {
                if k {
                    *v = T::zero();
                }
            }
        }
    }

    /// Zeroes the gradient of every frozen entry.
    pub fn mask_grad(&mut self) {
        if let Some(f) = &self.frozen {
            let g = self.value.grad_mut();
            for (v, &k) in g.iter_mut().zip(f) {
                if k {
                    *v = T::zero();
                }
            }
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.value.data().iter().filter(|v| **v != T::zero()).count()
    }
}
