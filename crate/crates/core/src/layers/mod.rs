//! Differentiable layers: forward, backward, and Glorot initialization.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` *accumulates* parameter gradients so a batch can be summed
//! sample by sample before the optimizer step.

mod activation;
mod block;
mod conv;
mod dense;
mod init;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use activation::{softmax, softmax_cross_entropy, Flatten, Relu, SoftmaxCe};
pub use block::{InceptionBlock, ResidualBlock};
pub use conv::Conv2d;
pub use dense::Dense;
pub use init::GlorotUniform;
pub use pool::MaxPool2d;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self { value, grad }
    }
}

/// Mutable view of one parameter, as handed to the optimizer.
#[derive(Debug)]
pub struct ParamMut<'a, T: Scalar> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
    pub trainable: bool,
}

/// Serializable description of a layer; enough to rebuild its structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Relu,
    SoftmaxCe,
    /// `body(x) + shortcut(x)`, the shortcut being the identity or a 1×1
    /// projection.
    Residual {
        body: Vec<LayerSpec>,
        projection: bool,
    },
    /// Parallel branches over the same input, concatenated along channels.
    Inception {
        branches: Vec<Vec<LayerSpec>>,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d { filters, kernel }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool2d { size: 2, stride: 2 }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::SoftmaxCe => "softmax_ce",
            LayerSpec::Residual { .. } => "residual",
            LayerSpec::Inception { .. } => "inception",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv2d(Conv2d<T>),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense<T>),
    Relu(Relu),
    SoftmaxCe(SoftmaxCe<T>),
    Residual(ResidualBlock<T>),
    Inception(InceptionBlock<T>),
}

impl<T: Scalar> Layer<T> {
    /// Instantiates `spec` for an input of `input_shape`, drawing initial
    /// weights from `rng`. Returns the layer and its output shape.
    pub fn build<R: Rng + ?Sized>(
        spec: &LayerSpec,
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<(Self, Vec<usize>)> {
        let layer = match spec {
            LayerSpec::Conv2d { filters, kernel } => {
                let [_, _, c] = *input_shape else {
                    return Err(Error::shape(format!(
                        "conv2d needs an H×W×C input, got {input_shape:?}"
                    )));
                };
                Layer::Conv2d(Conv2d::new(c, *filters, *kernel, rng)?)
            }
            LayerSpec::MaxPool2d { size, stride } => Layer::MaxPool2d(MaxPool2d::new(*size, *stride)),
            LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            LayerSpec::Dense { units } => {
                let [n_in] = *input_shape else {
                    return Err(Error::shape(format!(
                        "dense needs a flat input, got {input_shape:?} (missing flatten?)"
                    )));
                };
                Layer::Dense(Dense::new(n_in, *units, rng)?)
            }
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::SoftmaxCe => {
                let [k] = *input_shape else {
                    return Err(Error::shape(format!(
                        "softmax needs a flat input, got {input_shape:?}"
                    )));
                };
                Layer::SoftmaxCe(SoftmaxCe::new(k))
            }
            LayerSpec::Residual { body, projection } => {
                Layer::Residual(ResidualBlock::build(body, *projection, input_shape, rng)?)
            }
            LayerSpec::Inception { branches } => {
                Layer::Inception(InceptionBlock::build(branches, input_shape, rng)?)
            }
        };
        let out = layer.output_shape(input_shape)?;
        Ok((layer, out))
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                filters: c.filters(),
                kernel: c.kernel().0,
            },
            Layer::MaxPool2d(p) => LayerSpec::MaxPool2d {
                size: p.size,
                stride: p.stride,
            },
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense { units: d.n_out() },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::SoftmaxCe(_) => LayerSpec::SoftmaxCe,
            Layer::Residual(r) => r.spec(),
            Layer::Inception(b) => b.spec(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::MaxPool2d(p) => p.output_shape(input),
            Layer::Flatten(_) => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => d.output_shape(input),
            Layer::Relu(_) => Ok(input.to_vec()),
            Layer::SoftmaxCe(s) => {
                if input == [s.classes()] {
                    Ok(input.to_vec())
                } else {
                    Err(Error::shape(format!(
                        "softmax expects [{}], got {input:?}",
                        s.classes()
                    )))
                }
            }
            Layer::Residual(r) => r.output_shape(input),
            Layer::Inception(b) => b.output_shape(input),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::MaxPool2d(p) => p.forward(x),
            Layer::Flatten(f) => f.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu(r) => r.forward(x),
            Layer::SoftmaxCe(s) => s.forward(x),
            Layer::Residual(r) => r.forward(x),
            Layer::Inception(b) => b.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(c) => c.backward(grad_out),
            Layer::MaxPool2d(p) => p.backward(grad_out),
            Layer::Flatten(f) => f.backward(grad_out),
            Layer::Dense(d) => d.backward(grad_out),
            Layer::Relu(r) => r.backward(grad_out),
            Layer::SoftmaxCe(s) => s.backward(grad_out),
            Layer::Residual(r) => r.backward(grad_out),
            Layer::Inception(b) => b.backward(grad_out),
        }
    }

    /// Read-only parameters in a fixed traversal order, named under `prefix`.
    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        match self {
            Layer::Conv2d(c) => {
                out.push((format!("{prefix}.weight"), &c.weight));
                out.push((format!("{prefix}.bias"), &c.bias));
            }
            Layer::Dense(d) => {
                out.push((format!("{prefix}.weight"), &d.weight));
                out.push((format!("{prefix}.bias"), &d.bias));
            }
            Layer::Residual(r) => r.params(prefix, out),
            Layer::Inception(b) => b.params(prefix, out),
            _ => {}
        }
    }

    /// Mutable parameters, same order and names as [`Layer::params`].
    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        fn push<'a, T: Scalar>(
            out: &mut Vec<ParamMut<'a, T>>,
            name: String,
            p: &'a mut Param<T>,
            trainable: bool,
        ) {
            out.push(ParamMut {
                name,
                value: &mut p.value,
                grad: &mut p.grad,
                trainable,
            });
        }
        match self {
            Layer::Conv2d(c) => {
                push(out, format!("{prefix}.weight"), &mut c.weight, c.trainable);
                push(out, format!("{prefix}.bias"), &mut c.bias, c.trainable);
            }
            Layer::Dense(d) => {
                push(out, format!("{prefix}.weight"), &mut d.weight, d.trainable);
                push(out, format!("{prefix}.bias"), &mut d.bias, d.trainable);
            }
            Layer::Residual(r) => r.params_mut(prefix, out),
            Layer::Inception(b) => b.params_mut(prefix, out),
            _ => {}
        }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        match self {
            Layer::Conv2d(c) => c.trainable = trainable,
            Layer::Dense(d) => d.trainable = trainable,
            Layer::Residual(r) => r.set_trainable(trainable),
            Layer::Inception(b) => b.set_trainable(trainable),
            _ => {}
        }
    }

    /// False when any parameter inside the layer is frozen.
    pub fn is_trainable(&self) -> bool {
        match self {
            Layer::Conv2d(c) => c.trainable,
            Layer::Dense(d) => d.trainable,
            Layer::Residual(r) => r.is_trainable(),
            Layer::Inception(b) => b.is_trainable(),
            _ => true,
        }
    }

    pub fn zero_grad(&mut self) {
        let mut views = Vec::new();
        self.params_mut("", &mut views);
        for p in views {
            p.grad.fill(T::zero());
        }
    }
}

/// Runs `layers` in order.
pub(crate) fn forward_seq<T: Scalar>(layers: &mut [Layer<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut cur = x.clone();
    for layer in layers.iter_mut() {
        cur = layer.forward(&cur)?;
    }
    Ok(cur)
}

/// Backward through `layers` in reverse order.
pub(crate) fn backward_seq<T: Scalar>(layers: &mut [Layer<T>], grad: &Tensor<T>) -> Result<Tensor<T>> {
    let mut cur = grad.clone();
    for layer in layers.iter_mut().rev() {
        cur = layer.backward(&cur)?;
    }
    Ok(cur)
}

/// Builds a layer sequence with shape propagation, labelling failures with
/// `stage` and the layer index.
pub(crate) fn build_seq<T: Scalar, R: Rng + ?Sized>(
    specs: &[LayerSpec],
    input_shape: &[usize],
    stage: &str,
    rng: &mut R,
) -> Result<(Vec<Layer<T>>, Vec<usize>)> {
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let (layer, out) = Layer::build(spec, &shape, rng).map_err(|e| match e {
            Error::Build { .. } => e,
            other => Error::Build {
                stage: format!("{stage}{i} ({}) on input {shape:?}", spec.name()),
                reason: other.to_string(),
            },
        })?;
        layers.push(layer);
        shape = out;
    }
    Ok((layers, shape))
}
