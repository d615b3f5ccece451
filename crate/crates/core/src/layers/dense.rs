use rand::Rng;

use super::{GlorotUniform, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Fully connected layer, `out = xᵀW + b` with `W: n_in×n_out`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub trainable: bool,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        let init = GlorotUniform::new(n_in, n_out)?;
        let weight = Tensor::from_vec(&[n_in, n_out], init.fill(n_in * n_out, rng))?;
        Self::from_params(weight, Tensor::zeros(&[n_out])?)
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape(format!(
                "dense wants n_in×n_out weights and n_out biases, got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            trainable: true,
            input: None,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.n_in()] {
            return Err(Error::shape(format!(
                "dense expects a flat input of length {}, got {input:?}",
                self.n_in()
            )));
        }
        Ok(vec![self.n_out()])
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.output_shape(x.shape())?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let mut out = vec![T::zero(); n_out];
        gemm(1, n_in, n_out, x.data(), self.weight.value.data(), &mut out);
        for (v, &b) in out.iter_mut().zip(self.bias.value.data()) {
            *v += b;
        }
        self.input = Some(x.clone());
        Tensor::from_vec(&[n_out], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        let n_out = self.n_out();
        if grad_out.shape() != [n_out] {
            return Err(Error::shape(format!(
                "dense upstream gradient {:?} does not match output [{n_out}]",
                grad_out.shape()
            )));
        }
        let g = grad_out.data();
        let dw = self.weight.grad.data_mut();
        for (row, &xi) in dw.chunks_exact_mut(n_out).zip(x.data()) {
            for (d, &gj) in row.iter_mut().zip(g) {
                *d += xi * gj;
            }
        }
        for (d, &gj) in self.bias.grad.data_mut().iter_mut().zip(g) {
            *d += gj;
        }
        let dx: Vec<T> = self
            .weight
            .value
            .data()
            .chunks_exact(n_out)
            .map(|row| row.iter().zip(g).fold(T::zero(), |acc, (&w, &gj)| acc + w * gj))
            .collect();
        Tensor::from_vec(&[self.n_in()], dx)
    }
}
