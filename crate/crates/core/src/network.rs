use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{backward_seq, build_seq, Layer, LayerSpec, Param, ParamMut};
use crate::tensor::{Scalar, Tensor};

/// Everything needed to rebuild a network's structure (not its weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Indices of top-level layers whose parameters are frozen.
    #[serde(default)]
    pub frozen: Vec<usize>,
}

/// A feed-forward classifier ending in a softmax/cross-entropy layer.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    num_classes: usize,
}

impl<T: Scalar> Network<T> {
    /// Builds the layer stack, propagating shapes so incompatible neighbours
    /// fail here instead of at the first forward pass.
    pub fn from_specs<R: Rng + ?Sized>(
        name: &str,
        input_shape: &[usize],
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let (layers, _) = build_seq(specs, input_shape, "layer ", rng)?;
        Self::from_layers(name, input_shape, layers)
    }

    pub fn from_layers(name: &str, input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let num_classes = match layers.last() {
            Some(Layer::SoftmaxCe(s)) => s.classes(),
            _ => {
                return Err(Error::Build {
                    stage: format!("network '{name}'"),
                    reason: "final layer must be softmax_ce".into(),
                })
            }
        };
        let net = Self {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            num_classes,
        };
        net.shape_chain()?;
        Ok(net)
    }

    /// Rebuilds the structure described by `desc`. Weights are freshly drawn
    /// from `rng` and are normally overwritten by the caller.
    pub fn from_descriptor<R: Rng + ?Sized>(desc: &ArchDescriptor, rng: &mut R) -> Result<Self> {
        let mut net = Self::from_specs(&desc.name, &desc.input_shape, &desc.layers, rng)?;
        for &i in &desc.frozen {
            net.layers
                .get_mut(i)
                .ok_or_else(|| Error::Invalid(format!("frozen layer index {i} out of range")))?
                .set_trainable(false);
        }
        Ok(net)
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::spec).collect(),
            frozen: self
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| !l.is_trainable())
                .map(|(i, _)| i)
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub(crate) fn into_parts(self) -> (String, Vec<usize>, Vec<Layer<T>>) {
        (self.name, self.input_shape, self.layers)
    }

    /// Output shape after every layer, in order.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut chain = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            chain.push(shape.clone());
        }
        Ok(chain)
    }

    /// Class probabilities for one `H×W×C` input.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "network '{}' expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                x.shape()
            )));
        }
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    fn head(&self) -> &crate::layers::SoftmaxCe<T> {
        match self.layers.last() {
            Some(Layer::SoftmaxCe(s)) => s,
            _ => unreachable!("constructors guarantee a softmax head"),
        }
    }

    /// Cross-entropy of the last forward pass against `target`.
    pub fn loss(&self, target: usize) -> Result<T> {
        self.head().loss(target)
    }

    /// Backpropagates the cross-entropy of the last forward pass,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, target: usize) -> Result<Tensor<T>> {
        let g = self.head().loss_gradient(target)?;
        let n = self.layers.len();
        backward_seq(&mut self.layers[..n - 1], &g)
    }

    /// Forward, loss, and backward for one labelled sample.
    pub fn train_sample(&mut self, x: &Tensor<T>, target: usize) -> Result<(T, Tensor<T>)> {
        let probs = self.forward(x)?;
        let loss = self.loss(target)?;
        self.backward(target)?;
        Ok((loss, probs))
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.params(&i.to_string(), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&i.to_string(), &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn trainable_param_count(&mut self) -> usize {
        self.params_mut()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.layers.iter_mut().for_each(|l| l.set_trainable(trainable));
    }

    /// Element-type conversion of every parameter.
    pub fn cast<U: Scalar>(&self) -> Result<Network<U>> {
        let desc = self.descriptor();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut out = Network::<U>::from_descriptor(&desc, &mut rng)?;
        let src = self.params();
        for ((_, from), to) in src.iter().zip(out.params_mut()) {
            *to.value = from.value.cast();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Network<f64> {
        let specs = [
            LayerSpec::conv(2, 3),
            LayerSpec::Relu,
            LayerSpec::pool2(),
            LayerSpec::Flatten,
            LayerSpec::dense(3),
            LayerSpec::SoftmaxCe,
        ];
        Network::from_specs("tiny", &[6, 6, 1], &specs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn shape_chain_and_params() {
        let net = tiny();
        let chain = net.shape_chain().unwrap();
        assert_eq!(chain[0], vec![4, 4, 2]);
        assert_eq!(chain[2], vec![2, 2, 2]);
        assert_eq!(chain[3], vec![8]);
        assert_eq!(net.num_classes(), 3);
        assert_eq!(net.param_count(), 2 * 9 + 2 + 8 * 3 + 3);
        let names: Vec<_> = net.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["0.weight", "0.bias", "4.weight", "4.bias"]);
    }

    #[test]
    fn missing_softmax_head() {
        let specs = [LayerSpec::Flatten, LayerSpec::dense(2)];
        let err = Network::<f32>::from_specs("x", &[2, 2, 1], &specs, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(err, Error::Build { .. }));
    }

    #[test]
    fn dense_without_flatten_is_reported() {
        let specs = [LayerSpec::dense(2), LayerSpec::SoftmaxCe];
        let err = Network::<f32>::from_specs("x", &[2, 2, 1], &specs, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("layer 0 (dense)"), "{err}");
    }

    #[test]
    fn descriptor_round_trip_preserves_structure() {
        let mut net = tiny();
        net.layers_mut()[0].set_trainable(false);
        let desc = net.descriptor();
        assert_eq!(desc.frozen, vec![0]);
        let json = serde_json::to_string(&desc).unwrap();
        let back: ArchDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, desc);
        let rebuilt = Network::<f64>::from_descriptor(&back, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(rebuilt.descriptor(), desc);
    }

    #[test]
    fn input_shape_is_checked() {
        let mut net = tiny();
        assert!(net.forward(&Tensor::zeros(&[5, 6, 1]).unwrap()).is_err());
    }
}
