//! Adam and RMSProp parameter updates, L2 weight penalty, and the
//! exponentially decayed learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

/// Exponent applied to the decay rates in Adam's bias correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasCorrection {
    /// `1 - rho^t` (standard Adam).
    StepPower,
    /// `1 - rho`, a constant rescaling.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// RMSProp decay rate.
    pub rho: f64,
    pub delta: f64,
    pub bias_correction: BiasCorrection,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            rho1: 0.9,
            rho2: 0.999,
            rho: 0.9,
            delta: 1e-8,
            bias_correction: BiasCorrection::StepPower,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            ..Self::adam(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.rho1) && unit(self.rho2) && unit(self.rho)) {
            return Err(Error::Config(format!(
                "decay rates must lie in (0, 1): rho1={}, rho2={}, rho={}",
                self.rho1, self.rho2, self.rho
            )));
        }
        if !(self.delta > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate and delta must be positive: lr={}, delta={}",
                self.learning_rate, self.delta
            )));
        }
        Ok(())
    }

    /// Apply one update of the configured kind. `step` counts from 1.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, step: u64) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => adam_step(store, grads, self, step),
            OptimizerKind::RmsProp => rmsprop_step(store, grads, self),
        }
    }
}

fn check_gradients(store: &ParamStore, grads: &Gradients) -> Result<()> {
    grads.check_aligned(store)?;
    for (p, g) in store.iter().zip(&grads.params) {
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} at {}[{bad}]; step rejected",
                g.data()[bad],
                p.name
            )));
        }
    }
    Ok(())
}

/// One Adam update:
/// `s <- rho1 s + (1-rho1) g`, `r <- rho2 r + (1-rho2) g*g`,
/// bias-corrected `s_hat`, `r_hat`, then `theta += -lr * s_hat / sqrt(r_hat + delta)`.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, config: &OptimizerConfig, step: u64) -> Result<()> {
    config.validate()?;
    if step == 0 {
        return Err(Error::Config("adam step index starts at 1".into()));
    }
    check_gradients(store, grads)?;
    let (c1, c2) = match config.bias_correction {
        BiasCorrection::StepPower => {
            let t = step.min(i32::MAX as u64) as i32;
            (1.0 - config.rho1.powi(t), 1.0 - config.rho2.powi(t))
        }
        BiasCorrection::Literal => (1.0 - config.rho1, 1.0 - config.rho2),
    };
    for (p, g) in store.iter_mut().zip(&grads.params) {
        let (theta, s, r) = (p.value.data_mut(), p.s.data_mut(), p.r.data_mut());
        for i in 0..theta.len() {
            let gi = g.data()[i];
            s[i] = config.rho1 * s[i] + (1.0 - config.rho1) * gi;
            r[i] = config.rho2 * r[i] + (1.0 - config.rho2) * gi * gi;
            let s_hat = s[i] / c1;
            let r_hat = r[i] / c2;
            theta[i] += -config.learning_rate * s_hat / (r_hat + config.delta).sqrt();
        }
    }
    Ok(())
}

/// One RMSProp update: `r <- rho r + (1-rho) g*g`, `theta += -lr / (delta + sqrt(r)) * g`.
pub fn rmsprop_step(store: &mut ParamStore, grads: &Gradients, config: &OptimizerConfig) -> Result<()> {
    config.validate()?;
    check_gradients(store, grads)?;
    for (p, g) in store.iter_mut().zip(&grads.params) {
        let (theta, r) = (p.value.data_mut(), p.r.data_mut());
        for i in 0..theta.len() {
            let gi = g.data()[i];
            r[i] = config.rho * r[i] + (1.0 - config.rho) * gi * gi;
            theta[i] += -(config.learning_rate / (config.delta + r[i].sqrt())) * gi;
        }
    }
    Ok(())
}

/// `eta * sum(w^2)` over weight tensors; biases and normalization
/// parameters are excluded.
pub fn l2_penalty(store: &ParamStore, eta: f64) -> f64 {
    eta * store
        .iter()
        .filter(|p| p.kind == ParamKind::Weight)
        .map(|p| p.value.data().iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
}

/// Add the gradient of [`l2_penalty`] (`2 eta w`) to `grads`.
pub fn add_l2_gradient(store: &ParamStore, grads: &mut Gradients, eta: f64) {
    if eta == 0.0 {
        return;
    }
    for (p, g) in store.iter().zip(grads.params.iter_mut()) {
        if p.kind == ParamKind::Weight {
            for (gi, w) in g.data_mut().iter_mut().zip(p.value.data()) {
                *gi += 2.0 * eta * w;
            }
        }
    }
}

/// `alpha0 * decay^(step / period)`.
pub fn decayed_lr(alpha0: f64, decay: f64, step: u64, period: u64) -> f64 {
    alpha0 * decay.powf(step as f64 / period.max(1) as f64)
}
