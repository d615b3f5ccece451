use crate::error::{Error, Result};
use crate::tensor::{valid_extent, Scalar, Tensor};

/// Max pooling with floor semantics: trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    input_shape: Vec<usize>,
    // flat input index of each output's maximum
    argmax: Vec<usize>,
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self::new(2, 2)
    }
}

impl MaxPool2d {
    pub fn new(size: usize, stride: usize) -> Self {
        Self {
            size,
            stride,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [h, w, c] = *input else {
            return Err(Error::shape(format!(
                "max pooling expects H×W×C input, got {input:?}"
            )));
        };
        match (
            valid_extent(h, self.size, self.stride),
            valid_extent(w, self.size, self.stride),
        ) {
            (Some(oh), Some(ow)) => Ok(vec![oh, ow, c]),
            _ => Err(Error::shape(format!(
                "{0}×{0} pool window does not fit a {h}×{w} input",
                self.size
            ))),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let (_, w, c) = x.hwc()?;
        let (oh, ow) = (out_shape[0], out_shape[1]);
        let src = x.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for oi in 0..oh {
            for oj in 0..ow {
                for ch in 0..c {
                    let mut best = ((oi * self.stride) * w + oj * self.stride) * c + ch;
                    for di in 0..self.size {
                        for dj in 0..self.size {
                            let idx = ((oi * self.stride + di) * w + oj * self.stride + dj) * c + ch;
                            // strict comparison: first index in row-major order wins ties
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some(PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        });
        Tensor::from_vec(&out_shape, out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("max pool backward called before forward".into()))?;
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::shape(format!(
                "max pool upstream gradient {:?} does not match output of input {:?}",
                grad_out.shape(),
                cache.input_shape
            )));
        }
        let mut dx = Tensor::zeros(&cache.input_shape)?;
        let dst = dx.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            dst[idx] += g;
        }
        Ok(dx)
    }
}
