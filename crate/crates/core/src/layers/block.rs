use rand::Rng;

use super::{backward_seq, build_seq, forward_seq, Conv2d, Layer, LayerSpec, Param, ParamMut};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Residual block: `out = body(x) + shortcut(x)`.
///
/// The shortcut is the identity, or a 1×1 convolution when the block was
/// built with a projection.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub body: Vec<Layer<T>>,
    pub shortcut: Option<Conv2d<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn build<R: Rng + ?Sized>(
        body: &[LayerSpec],
        projection: bool,
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let (layers, out) = build_seq(body, input_shape, "residual body layer ", rng)?;
        let fail = |reason: String| Error::Build {
            stage: format!("residual block on input {input_shape:?}"),
            reason,
        };
        if out.len() != 3 || out[..2] != input_shape[..2] {
            return Err(fail(format!(
                "body output {out:?} does not keep the input's spatial extent"
            )));
        }
        let shortcut = if projection {
            Some(Conv2d::new(input_shape[2], out[2], 1, rng)?)
        } else if out[2] != input_shape[2] {
            return Err(fail(format!(
                "body changes channels {} -> {} but the block has no projection",
                input_shape[2], out[2]
            )));
        } else {
            None
        };
        Ok(Self {
            body: layers,
            shortcut,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Residual {
            body: self.body.iter().map(Layer::spec).collect(),
            projection: self.shortcut.is_some(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for layer in &self.body {
            shape = layer.output_shape(&shape)?;
        }
        let shortcut_shape = match &self.shortcut {
            Some(conv) => conv.output_shape(input)?,
            None => input.to_vec(),
        };
        if shape != shortcut_shape {
            return Err(Error::shape(format!(
                "residual body gives {shape:?} but shortcut gives {shortcut_shape:?}"
            )));
        }
        Ok(shape)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = forward_seq(&mut self.body, x)?;
        match &mut self.shortcut {
            Some(conv) => out.add_assign(&conv.forward(x)?)?,
            None => out.add_assign(x)?,
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut dx = backward_seq(&mut self.body, grad_out)?;
        match &mut self.shortcut {
            Some(conv) => dx.add_assign(&conv.backward(grad_out)?)?,
            None => dx.add_assign(grad_out)?,
        }
        Ok(dx)
    }

    pub(super) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, layer) in self.body.iter().enumerate() {
            layer.params(&format!("{prefix}.body.{i}"), out);
        }
        if let Some(conv) = &self.shortcut {
            out.push((format!("{prefix}.shortcut.weight"), &conv.weight));
            out.push((format!("{prefix}.shortcut.bias"), &conv.bias));
        }
    }

    pub(super) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        for (i, layer) in self.body.iter_mut().enumerate() {
            layer.params_mut(&format!("{prefix}.body.{i}"), out);
        }
        if let Some(conv) = &mut self.shortcut {
            let trainable = conv.trainable;
            out.push(ParamMut {
                name: format!("{prefix}.shortcut.weight"),
                value: &mut conv.weight.value,
                grad: &mut conv.weight.grad,
                trainable,
            });
            out.push(ParamMut {
                name: format!("{prefix}.shortcut.bias"),
                value: &mut conv.bias.value,
                grad: &mut conv.bias.grad,
                trainable,
            });
        }
    }

    pub(super) fn set_trainable(&mut self, trainable: bool) {
        self.body.iter_mut().for_each(|l| l.set_trainable(trainable));
        if let Some(conv) = &mut self.shortcut {
            conv.trainable = trainable;
        }
    }

    pub(super) fn is_trainable(&self) -> bool {
        self.body.iter().all(Layer::is_trainable)
            && self.shortcut.as_ref().is_none_or(|c| c.trainable)
    }
}

/// Inception-style block: every branch sees the same input and the branch
/// outputs are concatenated along channels. All branches must agree on H×W.
#[derive(Debug, Clone)]
pub struct InceptionBlock<T: Scalar> {
    pub branches: Vec<Vec<Layer<T>>>,
    channels: Vec<usize>,
}

impl<T: Scalar> InceptionBlock<T> {
    pub fn build<R: Rng + ?Sized>(
        branches: &[Vec<LayerSpec>],
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let fail = |reason: String| Error::Build {
            stage: format!("inception block on input {input_shape:?}"),
            reason,
        };
        if branches.is_empty() {
            return Err(fail("block has no branches".into()));
        }
        let mut layers = Vec::with_capacity(branches.len());
        let mut channels = Vec::with_capacity(branches.len());
        let mut spatial: Option<Vec<usize>> = None;
        for (b, specs) in branches.iter().enumerate() {
            let (built, out) = build_seq(specs, input_shape, &format!("inception branch {b} layer "), rng)?;
            if out.len() != 3 {
                return Err(fail(format!("branch {b} output {out:?} is not H×W×C")));
            }
            match &spatial {
                Some(hw) if hw[..] != out[..2] => {
                    return Err(fail(format!(
                        "branch {b} yields {}×{} but branch 0 yields {}×{}",
                        out[0], out[1], hw[0], hw[1]
                    )));
                }
                Some(_) => {}
                None => spatial = Some(out[..2].to_vec()),
            }
            channels.push(out[2]);
            layers.push(built);
        }
        Ok(Self {
            branches: layers,
            channels,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Inception {
            branches: self
                .branches
                .iter()
                .map(|b| b.iter().map(Layer::spec).collect())
                .collect(),
        }
    }

    pub fn output_channels(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut hw: Option<Vec<usize>> = None;
        for branch in &self.branches {
            let mut shape = input.to_vec();
            for layer in branch {
                shape = layer.output_shape(&shape)?;
            }
            match &hw {
                Some(prev) if prev[..] != shape[..2] => {
                    return Err(Error::shape("inception branches disagree on H×W"));
                }
                Some(_) => {}
                None => hw = Some(shape[..2].to_vec()),
            }
        }
        let hw = hw.expect("at least one branch");
        Ok(vec![hw[0], hw[1], self.output_channels()])
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let outputs = self
            .branches
            .iter_mut()
            .map(|b| forward_seq(b, x))
            .collect::<Result<Vec<_>>>()?;
        let (h, w, _) = outputs[0].hwc()?;
        let total = self.output_channels();
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for (out, &c) in outputs.iter().zip(&self.channels) {
                data.extend_from_slice(&out.data()[px * c..(px + 1) * c]);
            }
        }
        Tensor::from_vec(&[h, w, total], data)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w, total) = grad_out.hwc()?;
        if total != self.output_channels() {
            return Err(Error::shape(format!(
                "inception upstream gradient has {total} channels, block emits {}",
                self.output_channels()
            )));
        }
        let g = grad_out.data();
        let mut dx: Option<Tensor<T>> = None;
        let mut offset = 0;
        for (branch, &c) in self.branches.iter_mut().zip(&self.channels) {
            let mut part = Vec::with_capacity(h * w * c);
            for px in 0..h * w {
                part.extend_from_slice(&g[px * total + offset..px * total + offset + c]);
            }
            offset += c;
            let d = backward_seq(branch, &Tensor::from_vec(&[h, w, c], part)?)?;
            match &mut dx {
                Some(acc) => acc.add_assign(&d)?,
                None => dx = Some(d),
            }
        }
        Ok(dx.expect("at least one branch"))
    }

    pub(super) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (b, branch) in self.branches.iter().enumerate() {
            for (i, layer) in branch.iter().enumerate() {
                layer.params(&format!("{prefix}.branch{b}.{i}"), out);
            }
        }
    }

    pub(super) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        for (b, branch) in self.branches.iter_mut().enumerate() {
            for (i, layer) in branch.iter_mut().enumerate() {
                layer.params_mut(&format!("{prefix}.branch{b}.{i}"), out);
            }
        }
    }

    pub(super) fn set_trainable(&mut self, trainable: bool) {
        self.branches
            .iter_mut()
            .flatten()
            .for_each(|l| l.set_trainable(trainable));
    }

    pub(super) fn is_trainable(&self) -> bool {
        self.branches.iter().flatten().all(Layer::is_trainable)
    }
}
