use rand::Rng;

use super::{GlorotUniform, Param};
use crate::error::{Error, Result};
use crate::tensor::{col2im, gemm, im2col, transpose_into, valid_extent, Scalar, Tensor};

/// Valid (unpadded), stride-1 2-D convolution over channels-last input.
///
/// Weights are stored `F×kh×kw×C`, so each filter row lines up with an
/// [`im2col`] patch row.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub trainable: bool,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T: Scalar> {
    cols: Tensor<T>,
    input_shape: Vec<usize>,
}

impl<T: Scalar> Conv2d<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let init = GlorotUniform::new(kernel * kernel * in_channels, kernel * kernel * filters)?;
        let weight = Tensor::from_vec(
            &[filters, kernel, kernel, in_channels],
            init.fill(filters * kernel * kernel * in_channels, rng),
        )?;
        Self::from_params(weight, Tensor::zeros(&[filters])?)
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 4 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "conv2d wants F×kh×kw×C weights and F biases, got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            trainable: true,
            cache: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.value.shape()[1], self.weight.value.shape()[2])
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[3]
    }

    fn patch_len(&self) -> usize {
        let (kh, kw) = self.kernel();
        kh * kw * self.in_channels()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (kh, kw) = self.kernel();
        match *input {
            [h, w, c] if c == self.in_channels() => {
                match (valid_extent(h, kh, 1), valid_extent(w, kw, 1)) {
                    (Some(oh), Some(ow)) => Ok(vec![oh, ow, self.filters()]),
                    _ => Err(Error::shape(format!(
                        "{kh}×{kw} kernel does not fit a {h}×{w} input"
                    ))),
                }
            }
            _ => Err(Error::shape(format!(
                "conv2d expects H×W×{} input, got {input:?}",
                self.in_channels()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let (kh, kw) = self.kernel();
        let cols = im2col(x, kh, kw, 1)?;
        let (positions, patch, filters) = (out_shape[0] * out_shape[1], self.patch_len(), self.filters());

        let mut w_t = vec![T::zero(); patch * filters];
        transpose_into(filters, patch, self.weight.value.data(), &mut w_t);
        let mut out = vec![T::zero(); positions * filters];
        gemm(positions, patch, filters, cols.data(), &w_t, &mut out);
        let bias = self.bias.value.data();
        for row in out.chunks_exact_mut(filters) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.cache = Some(ConvCache {
            cols,
            input_shape: x.shape().to_vec(),
        });
        Tensor::from_vec(&out_shape, out)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv2d backward called before forward".into()))?;
        let expected = self.output_shape(&cache.input_shape)?;
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "conv2d upstream gradient {:?} does not match output {expected:?}",
                grad_out.shape()
            )));
        }
        let (positions, patch, filters) = (expected[0] * expected[1], self.patch_len(), self.filters());
        let g = grad_out.data();

        let mut g_t = vec![T::zero(); filters * positions];
        transpose_into(positions, filters, g, &mut g_t);
        let mut dw = vec![T::zero(); filters * patch];
        gemm(filters, positions, patch, &g_t, cache.cols.data(), &mut dw);
        for (acc, d) in self.weight.grad.data_mut().iter_mut().zip(dw) {
            *acc += d;
        }
        let db = self.bias.grad.data_mut();
        for (f, acc) in db.iter_mut().enumerate() {
            let mut s = T::zero();
            for p in 0..positions {
                s += g[p * filters + f];
            }
            *acc += s;
        }

        let mut dcols = vec![T::zero(); positions * patch];
        gemm(positions, filters, patch, g, self.weight.value.data(), &mut dcols);
        let (kh, kw) = self.kernel();
        col2im(
            &Tensor::from_vec(&[positions, patch], dcols)?,
            &cache.input_shape,
            kh,
            kw,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_convolution() {
        let w = Tensor::<f64>::from_vec(&[1, 2, 2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut conv = Conv2d::from_params(w, Tensor::zeros(&[1]).unwrap()).unwrap();
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn paper_first_layer_shape() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let conv = Conv2d::<f32>::new(3, 32, 3, &mut rng).unwrap();
        assert_eq!(conv.output_shape(&[224, 224, 3]).unwrap(), vec![222, 222, 32]);
    }

    #[test]
    fn zero_filters_give_constant_bias() {
        let mut conv = Conv2d::<f64>::from_params(
            Tensor::zeros(&[2, 3, 3, 2]).unwrap(),
            Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap(),
        )
        .unwrap();
        let x = Tensor::filled(&[5, 4, 2], 3.0).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.5, -1.5]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rand::rngs::mock::StepRng::new(1 << 40, 1 << 52);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, &mut rng).unwrap();
        let x = Tensor::filled(&[6, 6, 2], 0.3).unwrap();
        let y = conv.forward(&x).unwrap();
        let dx = conv.backward(&y.zeros_like()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_filter_scales_gradient() {
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap();
        let mut conv = Conv2d::from_params(w, Tensor::zeros(&[1]).unwrap()).unwrap();
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, -1.0, 0.5, 4.0]).unwrap();
        conv.forward(&x).unwrap();
        let g = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, -4.0]).unwrap();
        let dx = conv.backward(&g).unwrap();
        assert_eq!(dx.data(), &[2.5, 5.0, 7.5, -10.0]);
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut conv = Conv2d::<f64>::from_params(
            Tensor::zeros(&[1, 1, 1, 1]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let err = conv.backward(&Tensor::zeros(&[1, 1, 1]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut conv = Conv2d::<f64>::from_params(
            Tensor::zeros(&[1, 1, 1, 3]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let err = conv.forward(&Tensor::zeros(&[4, 4, 2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
