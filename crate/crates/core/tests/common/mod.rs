//! Shared oracles for the integration suites.

#![allow(dead_code)]

use landnet::layers::{Layer, LayerSpec};
use landnet::{Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely; central differences
/// in f64 carry roughly 1e-10 of roundoff at this step.
pub const FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in ±1, kept at least 0.01 away from zero so no ReLU sits on
/// its kink.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Central difference of `f` at zero offset. If the forward and backward
/// quotients disagree, the interval straddles a ReLU or max-pool switch point
/// and the step shrinks, since the derivative is only defined off the kink.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let f0 = f(0.0);
    let mut h = STEP;
    loop {
        let (up, down) = (f(h), f(-h));
        let forward = (up - f0) / h;
        let backward = (f0 - down) / h;
        let smooth = (forward - backward).abs() <= 1e-3 * forward.abs().max(backward.abs()).max(1e-3);
        if smooth || h <= STEP * 1e-4 {
            return (up - down) / (2.0 * h);
        }
        h /= 10.0;
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error of one gradient check, with its location.
#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub error: f64,
    pub at: String,
}

impl Worst {
    fn new() -> Self {
        Self { error: 0.0, at: String::new() }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let e = rel_error(analytic, numeric);
        if e > self.error || e.is_nan() {
            self.error = e;
            self.at = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }
}

fn randomize_params(layer: &mut Layer<f64>, rng: &mut ChaCha8Rng) {
    let mut params = Vec::new();
    layer.params_mut("", &mut params);
    for p in params {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn param_slot(layer: &mut Layer<f64>, p: usize, j: usize) -> &mut f64 {
    let mut params = Vec::new();
    layer.params_mut("", &mut params);
    &mut params.swap_remove(p).value.data_mut()[j]
}

/// Checks one layer against central differences of `L = Σ r ⊙ layer(x)`
/// with random `x`, `r` and parameters, over inputs and every parameter.
pub fn check_layer(spec: &LayerSpec, input_shape: &[usize], seed: u64) -> Worst {
    let mut rng = rng(seed);
    let (mut layer, out_shape) = Layer::<f64>::build(spec, input_shape, &mut rng).unwrap();
    randomize_params(&mut layer, &mut rng);
    let x = random_tensor(input_shape, &mut rng);
    let r = random_tensor(&out_shape, &mut rng);
    let loss = |layer: &mut Layer<f64>, x: &Tensor<f64>| layer.forward(x).unwrap().dot(&r).unwrap();

    layer.zero_grad();
    layer.forward(&x).unwrap();
    let dx = layer.backward(&r).unwrap();
    let mut grads = Vec::new();
    {
        let mut params = Vec::new();
        layer.params_mut("", &mut params);
        for p in params {
            grads.push((p.name.clone(), p.grad.clone()));
        }
    }

    let mut worst = Worst::new();
    for i in 0..x.len() {
        let numeric = central_difference(|d| {
            let mut moved = x.clone();
            moved.data_mut()[i] += d;
            loss(&mut layer, &moved)
        });
        worst.record(dx.data()[i], numeric, || format!("input[{i}]"));
    }
    for (p, (name, grad)) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let original = *param_slot(&mut layer, p, j);
            let numeric = central_difference(|d| {
                *param_slot(&mut layer, p, j) = original + d;
                loss(&mut layer, &x)
            });
            *param_slot(&mut layer, p, j) = original;
            worst.record(grad.data()[j], numeric, || format!("{name}[{j}]"));
        }
    }
    worst
}

/// Checks a whole classifier through its cross-entropy loss, over the input
/// and every parameter.
pub fn check_network(mut net: Network<f64>, seed: u64) -> Worst {
    let mut rng = rng(seed);
    for layer in net.layers_mut() {
        randomize_params(layer, &mut rng);
    }
    let x = random_tensor(net.input_shape(), &mut rng);
    let target = rng.gen_range(0..net.num_classes());
    let loss = |net: &mut Network<f64>, x: &Tensor<f64>| {
        net.forward(x).unwrap();
        net.loss(target).unwrap()
    };

    net.zero_grad();
    net.forward(&x).unwrap();
    let dx = net.backward(target).unwrap();
    let grads: Vec<(String, Tensor<f64>)> = net.params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();

    let mut worst = Worst::new();
    for i in 0..x.len() {
        let numeric = central_difference(|d| {
            let mut moved = x.clone();
            moved.data_mut()[i] += d;
            loss(&mut net, &moved)
        });
        worst.record(dx.data()[i], numeric, || format!("input[{i}]"));
    }
    for (p, (name, grad)) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let original = net.params_mut()[p].value.data()[j];
            let numeric = central_difference(|d| {
                net.params_mut()[p].value.data_mut()[j] = original + d;
                loss(&mut net, &x)
            });
            net.params_mut()[p].value.data_mut()[j] = original;
            worst.record(grad.data()[j], numeric, || format!("{name}[{j}]"));
        }
    }
    worst
}

pub const GRADIENT_SEEDS: u64 = 20;

/// A named gradient check, parameterized by seed.
pub struct GradientCase {
    pub name: &'static str,
    pub run: Box<dyn Fn(u64) -> Worst>,
}

fn layer_case(name: &'static str, spec: LayerSpec, shape: &'static [usize]) -> GradientCase {
    GradientCase {
        name,
        run: Box::new(move |seed| check_layer(&spec, shape, seed)),
    }
}

fn network_case(name: &'static str, build: fn(&mut ChaCha8Rng) -> Network<f64>) -> GradientCase {
    GradientCase {
        name,
        run: Box::new(move |seed| check_network(build(&mut rng(seed ^ 0xABCD)), seed)),
    }
}

/// Every layer kind, both block kinds, and small end-to-end classifiers of
/// each architecture family.
pub fn gradient_cases() -> Vec<GradientCase> {
    use landnet::arch::{build_mini_inception, build_mini_resnet, InceptionSpec, ResidualStage};
    vec![
        layer_case("conv2d", LayerSpec::conv(3, 3), &[6, 5, 2]),
        layer_case("conv2d 1x1", LayerSpec::conv(4, 1), &[3, 4, 3]),
        layer_case("maxpool2d 2/2", LayerSpec::pool2(), &[6, 7, 3]),
        layer_case("maxpool2d 3/2", LayerSpec::MaxPool2d { size: 3, stride: 2 }, &[7, 8, 2]),
        layer_case("dense", LayerSpec::dense(5), &[7]),
        layer_case("relu", LayerSpec::Relu, &[4, 4, 3]),
        layer_case("softmax_ce", LayerSpec::SoftmaxCe, &[5]),
        layer_case("residual block", ResidualStage::new(4).spec(), &[5, 5, 4]),
        layer_case("residual block, projection", ResidualStage::projected(6).spec(), &[5, 5, 3]),
        layer_case("inception block", InceptionSpec::standard(2, 3, 2).spec(), &[7, 7, 3]),
        network_case("cnn + cross-entropy", |r| {
            let specs = [
                LayerSpec::conv(4, 3),
                LayerSpec::Relu,
                LayerSpec::pool2(),
                LayerSpec::conv(6, 3),
                LayerSpec::Relu,
                LayerSpec::pool2(),
                LayerSpec::Flatten,
                LayerSpec::dense(8),
                LayerSpec::Relu,
                LayerSpec::dense(4),
                LayerSpec::SoftmaxCe,
            ];
            Network::from_specs("cnn-mini", &[12, 12, 3], &specs, r).unwrap()
        }),
        network_case("mini-resnet + cross-entropy", |r| {
            build_mini_resnet(&[ResidualStage::new(4), ResidualStage::projected(6)], &[10, 10, 3], 4, r).unwrap()
        }),
        network_case("mini-inception + cross-entropy", |r| {
            build_mini_inception(&[InceptionSpec::standard(2, 3, 2)], &[8, 8, 3], 4, r).unwrap()
        }),
    ]
}
