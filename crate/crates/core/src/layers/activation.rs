use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `max(0, x)`; the subgradient at exactly zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.mask = Some((x.shape().to_vec(), mask));
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if grad_out.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "relu upstream gradient {:?} does not match {shape:?}",
                grad_out.shape()
            )));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Tensor::from_vec(shape, data)
    }
}

/// Collapses any input to rank 1.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.input_shape = Some(x.shape().to_vec());
        x.reshape(&[x.len()])
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        grad_out.reshape(shape)
    }
}

/// Softmax output layer paired with categorical cross-entropy.
#[derive(Debug, Clone)]
pub struct SoftmaxCe<T: Scalar> {
    classes: usize,
    probs: Option<Tensor<T>>,
}

/// Max-shifted softmax of a rank-1 tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits
        .data()
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let exps = logits.map(|v| (v - max).exp());
    let total = exps.sum();
    exps.map(|v| v / total)
}

impl<T: Scalar> SoftmaxCe<T> {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            probs: None,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward(&mut self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        if logits.shape() != [self.classes] {
            return Err(Error::shape(format!(
                "softmax expects {} logits, got {:?}",
                self.classes,
                logits.shape()
            )));
        }
        let probs = softmax(logits);
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    fn cached(&self) -> Result<&Tensor<T>> {
        self.probs
            .as_ref()
            .ok_or_else(|| Error::State("softmax used before forward".into()))
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.classes {
            return Err(Error::Invalid(format!(
                "target class {target} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// `-ln p[target]` of the last forward pass.
    pub fn loss(&self, target: usize) -> Result<T> {
        self.check_target(target)?;
        Ok(-self.cached()?.data()[target].ln())
    }

    /// Gradient of the cross-entropy with respect to the logits:
    /// `probs − onehot(target)`.
    pub fn loss_gradient(&self, target: usize) -> Result<Tensor<T>> {
        self.check_target(target)?;
        let mut g = self.cached()?.clone();
        g.data_mut()[target] -= T::one();
        Ok(g)
    }

    /// Backward through the softmax alone, given a gradient with respect
    /// to the probabilities.
    pub fn backward(&mut self, grad_probs: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.cached()?;
        let inner = p.dot(grad_probs)?;
        let data = p
            .data()
            .iter()
            .zip(grad_probs.data())
            .map(|(&pi, &gi)| pi * (gi - inner))
            .collect();
        Tensor::from_vec(p.shape(), data)
    }
}

/// Loss and probabilities for one set of logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<(T, Tensor<T>)> {
    let mut layer = SoftmaxCe::new(logits.len());
    let probs = layer.forward(logits)?;
    Ok((layer.loss(target)?, probs))
}
