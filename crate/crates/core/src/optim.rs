//! SGD, Adam and RMSProp with per-parameter state.
//!
//! Update rules (`g` the batch-mean gradient, `t` the global step):
//!
//! * SGD: `θ ← θ − lr·g` (no momentum)
//! * Adam: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
//!   `θ ← θ − lr·m̂ / (√v̂ + ε)` with `m̂ = m/(1−β1ᵗ)`, `v̂ = v/(1−β2ᵗ)`
//! * RMSProp: `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − lr·g / (√v + ε)`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamMut;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::Rmsprop];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown optimizer '{s}' (expected adam, sgd or rmsprop)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot<T: Scalar> {
    shape: Vec<usize>,
    m: Vec<T>,
    v: Vec<T>,
}

/// One optimizer run: hyperparameters, the global step count, and moment
/// slots indexed like the parameter list handed to [`Optimizer::step`].
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    lr: f64,
    hyper: Hyperparams,
    step_count: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        Self::with_hyperparams(kind, lr, Hyperparams::default())
    }

    pub fn with_hyperparams(kind: OptimizerKind, lr: f64, hyper: Hyperparams) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            hyper,
            step_count: 0,
            slots: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one global step to every trainable parameter. Frozen
    /// parameters are never written.
    pub fn step(&mut self, params: &mut [ParamMut<'_, T>]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    shape: p.value.shape().to_vec(),
                    m: vec![T::zero(); p.value.len()],
                    v: vec![T::zero(); p.value.len()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters but {} were passed",
                self.slots.len(),
                params.len()
            )));
        }
        for (p, slot) in params.iter().zip(&self.slots) {
            if p.value.shape() != slot.shape.as_slice() || p.grad.shape() != slot.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {} has value {:?} / grad {:?}, optimizer slot is {:?}",
                    p.name,
                    p.value.shape(),
                    p.grad.shape(),
                    slot.shape
                )));
            }
        }
        self.step_count += 1;
        let lr = T::from_f64_lossy(self.lr);
        for (p, slot) in params.iter_mut().zip(&mut self.slots) {
            if !p.trainable {
                continue;
            }
            let value = p.value.data_mut();
            let grad = p.grad.data();
            match self.kind {
                OptimizerKind::Sgd => sgd_update(value, grad, lr),
                OptimizerKind::Adam => {
                    adam_update(value, grad, &mut slot.m, &mut slot.v, lr, self.step_count, &self.hyper)
                }
                OptimizerKind::Rmsprop => rmsprop_update(value, grad, &mut slot.v, lr, &self.hyper),
            }
        }
        Ok(())
    }
}

pub fn sgd_update<T: Scalar>(value: &mut [T], grad: &[T], lr: T) {
    for (theta, &g) in value.iter_mut().zip(grad) {
        *theta -= lr * g;
    }
}

/// One Adam update at global step `t` (1-based).
pub fn adam_update<T: Scalar>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    t: u64,
    hyper: &Hyperparams,
) {
    let beta1 = T::from_f64_lossy(hyper.beta1);
    let beta2 = T::from_f64_lossy(hyper.beta2);
    let eps = T::from_f64_lossy(hyper.eps);
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = T::from_f64_lossy(1.0 - hyper.beta1.powi(exp));
    let bc2 = T::from_f64_lossy(1.0 - hyper.beta2.powi(exp));
    let one = T::one();
    for (((theta, &g), m), v) in value.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (one - beta1) * g;
        *v = beta2 * *v + (one - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn rmsprop_update<T: Scalar>(value: &mut [T], grad: &[T], v: &mut [T], lr: T, hyper: &Hyperparams) {
    let rho = T::from_f64_lossy(hyper.rho);
    let eps = T::from_f64_lossy(hyper.eps);
    let one = T::one();
    for ((theta, &g), v) in value.iter_mut().zip(grad).zip(v.iter_mut()) {
        *v = rho * *v + (one - rho) * g * g;
        *theta -= lr * g / (v.sqrt() + eps);
    }
}
