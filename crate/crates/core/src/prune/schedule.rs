use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_mu() -> f64 {
    10.0
}

/// Target support size per epoch: a fast hyperbolic drop to `(1 − p0)·M`
/// over the first `n1` epochs, then steps of `nu` every `nc` epochs until
/// `K = round(M·(1 − p))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub p0: f64,
    pub p: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub nu: f64,
    pub nc: usize,
    pub n1: usize,
    pub niter: usize,
}

impl AnnealSchedule {
    /// A schedule that prunes straight to `p` at the first epoch.
    pub fn immediate(p: f64, niter: usize) -> Self {
        AnnealSchedule {
            p0: p,
            p,
            mu: default_mu(),
            nu: 0.01,
            nc: 1,
            n1: 1,
            niter,
        }
    }

    /// `K = round(M·(1 − p))`.
    pub fn target(&self, m: usize) -> usize {
        (m as f64 * (1.0 - self.p)).round() as usize
    }

    /// Checks parameter ranges, that phase 2 can reach `p` within `niter`,
    /// and that at least one member survives.
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.p0) || !(0.0..=1.0).contains(&self.p) || self.p0 > self.p {
            return bad(format!("need 0 ≤ p0 ≤ p ≤ 1, got p0={} p={}", self.p0, self.p));
        }
        if !(self.mu > 0.0) || !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!(
                "need mu > 0 and nu in (0, 1], got mu={} nu={}",
                self.mu, self.nu
            ));
        }
        if self.nc == 0 || self.n1 == 0 || self.niter < self.n1 {
            return bad(format!(
                "need nc ≥ 1, n1 ≥ 1 and niter ≥ n1, got nc={} n1={} niter={}",
                self.nc, self.n1, self.niter
            ));
        }
        let reach = self.p0 + ((self.niter - self.n1) / self.nc) as f64 * self.nu;
        if reach < self.p - 1e-9 {
            return bad(format!(
                "schedule reaches only {reach:.4} by epoch {} but p = {}",
                self.niter, self.p
            ));
        }
        if m == 0 || self.target(m) < 1 {
            return bad(format!("p = {} leaves no survivors out of {m}", self.p));
        }
        Ok(())
    }

    /// Real-valued `M_e` for `1 ≤ e ≤ niter`.
    pub fn real_value(&self, e: usize, m: usize) -> Result<f64> {
        if e < 1 || e > self.niter {
            return Err(Error::Input(format!("epoch {e} outside [1, {}]", self.niter)));
        }
        let m = m as f64;
        Ok(if e < self.n1 {
            let (n1, e) = (self.n1 as f64, e as f64);
            ((1.0 - self.p0) + self.p0 * (n1 - e) / (self.mu * e + n1)) * m
        } else {
            let steps = ((e - self.n1) / self.nc) as f64;
            (1.0 - self.p.min(self.p0 + steps * self.nu)) * m
        })
    }

    /// Integer `M_e`: the rounded real value clamped to `[K, prev]`.
    pub fn value(&self, e: usize, m: usize, prev: usize) -> Result<usize> {
        let k = self.target(m);
        let r = self.real_value(e, m)?.round() as usize;
        Ok(r.min(prev).max(k))
    }

    /// Integer targets for epochs `1..=niter`.
    pub fn trajectory(&self, m: usize) -> Result<Vec<usize>> {
        self.validate(m)?;
        let mut prev = m;
        (1..=self.niter)
            .map(|e| {
                prev = self.value(e, m, prev)?;
                Ok(prev)
            })
            .collect()
    }

    /// Epochs at which the target may change: every epoch of phase 1,
    /// every `nc`-th epoch of phase 2, and the last epoch.
    pub fn is_prune_epoch(&self, e: usize) -> bool {
        e < self.n1 || (e - self.n1).is_multiple_of(self.nc) || e == self.niter
    }
}
