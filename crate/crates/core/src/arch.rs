//! Network builders: the three-stage land-structure CNN plus scaled
//! residual and inception variants, and head replacement for transfer
//! learning.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Dense, Layer, LayerSpec, SoftmaxCe};
use crate::network::Network;
use crate::tensor::Scalar;

/// Architecture selector used by the CLI and experiment grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "mini-resnet")]
    MiniResnet,
    #[serde(rename = "mini-inception")]
    MiniInception,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Cnn, ArchKind::MiniResnet, ArchKind::MiniInception];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Cnn => "cnn",
            ArchKind::MiniResnet => "mini-resnet",
            ArchKind::MiniInception => "mini-inception",
        }
    }

    /// Builds the default configuration of this architecture.
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        self,
        input_shape: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Network<T>> {
        match self {
            ArchKind::Cnn => build_paper_cnn(input_shape, num_classes, rng),
            ArchKind::MiniResnet => build_mini_resnet(
                &[ResidualStage::new(16), ResidualStage::projected(32)],
                input_shape,
                num_classes,
                rng,
            ),
            ArchKind::MiniInception => build_mini_inception(
                &[
                    InceptionSpec::standard(8, 16, 8),
                    InceptionSpec::standard(16, 32, 16),
                ],
                input_shape,
                num_classes,
                rng,
            ),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown architecture '{s}' (expected cnn, mini-resnet or mini-inception)"
                ))
            })
    }
}

/// Layer specs of the three-stage CNN: conv 32/64/128 filters of 3×3 with no
/// padding, each followed by ReLU and 2×2 max pooling, then flatten,
/// dense-64 + ReLU, and a dense softmax head.
pub fn paper_cnn_specs(num_classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for filters in [32, 64, 128] {
        specs.extend([LayerSpec::conv(filters, 3), LayerSpec::Relu, LayerSpec::pool2()]);
    }
    specs.extend([
        LayerSpec::Flatten,
        LayerSpec::dense(64),
        LayerSpec::Relu,
        LayerSpec::dense(num_classes),
        LayerSpec::SoftmaxCe,
    ]);
    specs
}

/// Smallest square input the three conv/pool stages accept.
pub const PAPER_CNN_MIN_SIDE: usize = 22;

pub fn build_paper_cnn<T: Scalar, R: Rng + ?Sized>(
    input_shape: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    Network::from_specs("cnn", input_shape, &paper_cnn_specs(num_classes), rng)
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Invalid(format!(
            "a classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    Ok(())
}

/// One residual stage of the mini-ResNet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualStage {
    pub channels: usize,
    /// Use a 1×1 projection shortcut instead of the identity.
    pub projection: bool,
}

impl ResidualStage {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            projection: false,
        }
    }

    pub fn projected(channels: usize) -> Self {
        Self {
            channels,
            projection: true,
        }
    }

    /// `conv1×1 → relu → conv1×1`, with the chosen shortcut.
    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Residual {
            body: vec![
                LayerSpec::conv(self.channels, 1),
                LayerSpec::Relu,
                LayerSpec::conv(self.channels, 1),
            ],
            projection: self.projection,
        }
    }
}

/// Stem (3×3 conv with the first stage's width, ReLU, 2×2 pool), one
/// residual block plus ReLU per stage, then flatten → dense-K → softmax.
pub fn build_mini_resnet<T: Scalar, R: Rng + ?Sized>(
    stages: &[ResidualStage],
    input_shape: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    let first = stages
        .first()
        .ok_or_else(|| Error::Invalid("mini-resnet needs at least one stage".into()))?;
    let mut specs = vec![LayerSpec::conv(first.channels, 3), LayerSpec::Relu, LayerSpec::pool2()];
    for stage in stages {
        specs.push(stage.spec());
        specs.push(LayerSpec::Relu);
    }
    specs.extend([LayerSpec::Flatten, LayerSpec::dense(num_classes), LayerSpec::SoftmaxCe]);
    Network::from_specs("mini-resnet", input_shape, &specs, rng)
}

/// Branch layout of one inception block.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionSpec {
    pub branches: Vec<Vec<LayerSpec>>,
}

impl InceptionSpec {
    /// Three branches that all shrink H×W by two so they concatenate:
    /// 1×1 reduction → 3×3 conv, a plain 3×3 conv, and 3×3 max pool
    /// (stride 1) → 1×1 conv. Each conv is followed by ReLU.
    pub fn standard(reduce_then_3x3: usize, conv3x3: usize, pool_proj: usize) -> Self {
        Self {
            branches: vec![
                vec![
                    LayerSpec::conv(reduce_then_3x3, 1),
                    LayerSpec::Relu,
                    LayerSpec::conv(reduce_then_3x3, 3),
                    LayerSpec::Relu,
                ],
                vec![LayerSpec::conv(conv3x3, 3), LayerSpec::Relu],
                vec![
                    LayerSpec::MaxPool2d { size: 3, stride: 1 },
                    LayerSpec::conv(pool_proj, 1),
                    LayerSpec::Relu,
                ],
            ],
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Inception {
            branches: self.branches.clone(),
        }
    }
}

/// Each block followed by 2×2 max pooling, then flatten → dense-K → softmax.
pub fn build_mini_inception<T: Scalar, R: Rng + ?Sized>(
    blocks: &[InceptionSpec],
    input_shape: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    if blocks.is_empty() {
        return Err(Error::Invalid("mini-inception needs at least one block".into()));
    }
    let mut specs = Vec::new();
    for block in blocks {
        specs.push(block.spec());
        specs.push(LayerSpec::pool2());
    }
    specs.extend([LayerSpec::Flatten, LayerSpec::dense(num_classes), LayerSpec::SoftmaxCe]);
    Network::from_specs("mini-inception", input_shape, &specs, rng)
}

/// Swaps the final dense layer for a fresh Glorot-initialized one with
/// `num_classes` outputs. With `freeze_below`, every earlier layer is frozen;
/// otherwise every layer is made trainable. Other parameters are untouched.
pub fn replace_head<T: Scalar, R: Rng + ?Sized>(
    net: Network<T>,
    num_classes: usize,
    freeze_below: bool,
    rng: &mut R,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    let (name, input_shape, mut layers) = net.into_parts();
    let n = layers.len();
    let n_in = match (n.checked_sub(2).map(|i| &layers[i]), layers.last()) {
        (Some(Layer::Dense(d)), Some(Layer::SoftmaxCe(_))) => d.n_in(),
        _ => {
            return Err(Error::Invalid(format!(
                "network '{name}' does not end in dense → softmax_ce"
            )))
        }
    };
    for layer in &mut layers[..n - 2] {
        layer.set_trainable(!freeze_below);
    }
    layers[n - 2] = Layer::Dense(Dense::new(n_in, num_classes, rng)?);
    layers[n - 1] = Layer::SoftmaxCe(SoftmaxCe::new(num_classes));
    Network::from_layers(&name, &input_shape, layers)
}
