use std::f32::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{purpose, stream_rng, Dataset, LabelEncoder, LabeledImage, Origin};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class names of the synthetic corpus, in id order.
pub const SYNTH_CLASSES: [&str; 4] = ["desert", "farmland", "meadow", "terrace"];

/// Four procedurally distinct texture classes:
///
/// * desert: smooth low-frequency gradient plus faint noise
/// * farmland: periodic stripes at a random orientation
/// * meadow: isotropic mid-frequency lattice noise
/// * terrace: concentric step bands around a random centre
///
/// Every image gets a random brightness and per-channel tint drawn from the
/// same range for all classes, so mean colour carries no label information.
pub fn synth_dataset(n_per_class: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || side < 8 {
        return Err(Error::Invalid(format!(
            "synthetic corpus needs n_per_class ≥ 1 and side ≥ 8, got {n_per_class} and {side}"
        )));
    }
    let encoder = LabelEncoder::new(SYNTH_CLASSES)?;
    let mut items = Vec::with_capacity(4 * n_per_class);
    for label in 0..SYNTH_CLASSES.len() {
        for i in 0..n_per_class {
            let mut rng = stream_rng(seed, purpose::SYNTH, (label * n_per_class + i) as u64);
            items.push(LabeledImage {
                pixels: texture(label, side, &mut rng),
                label,
                origin: Origin::Original,
            });
        }
    }
    Dataset::new(items, encoder)
}

/// Pixel intensity at `(x, y)`, free to draw per-pixel noise.
type Field = Box<dyn Fn(f32, f32, &mut ChaCha8Rng) -> f32>;

fn texture(label: usize, side: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let base: f32 = rng.gen_range(0.35..0.65);
    let tint: [f32; 3] = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)];
    let s = side as f32;
    let field: Field = match label {
        0 => {
            let theta = rng.gen_range(0.0..TAU);
            let slope: f32 = rng.gen_range(0.15..0.35);
            let (sin, cos) = theta.sin_cos();
            Box::new(move |y, x, r: &mut ChaCha8Rng| {
                slope * ((x - s / 2.0) * cos + (y - s / 2.0) * sin) / s + r.gen_range(-0.03..0.03)
            })
        }
        1 => {
            let theta = rng.gen_range(0.0..TAU);
            let period: f32 = rng.gen_range(4.0..8.0);
            let phase = rng.gen_range(0.0..TAU);
            let amp: f32 = rng.gen_range(0.15..0.25);
            let (sin, cos) = theta.sin_cos();
            Box::new(move |y, x, r: &mut ChaCha8Rng| {
                amp * (TAU * (x * cos + y * sin) / period + phase).sin() + r.gen_range(-0.03..0.03)
            })
        }
        2 => {
            let cell: f32 = rng.gen_range(2.5..4.0);
            let n = (s / cell).ceil() as usize + 2;
            let lattice: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-0.22..0.22)).collect();
            Box::new(move |y, x, r: &mut ChaCha8Rng| {
                let (gy, gx) = (y / cell, x / cell);
                let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                let (ty, tx) = (gy - y0 as f32, gx - x0 as f32);
                let at = |a: usize, b: usize| lattice[a * n + b];
                let top = at(y0, x0) + (at(y0, x0 + 1) - at(y0, x0)) * tx;
                let bottom = at(y0 + 1, x0) + (at(y0 + 1, x0 + 1) - at(y0 + 1, x0)) * tx;
                top + (bottom - top) * ty + r.gen_range(-0.03..0.03)
            })
        }
        _ => {
            let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
            let band: f32 = rng.gen_range(3.0..6.0);
            let amp: f32 = rng.gen_range(0.15..0.25);
            Box::new(move |y, x, r: &mut ChaCha8Rng| {
                let radius = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                let step = if (radius / band).floor() as i64 % 2 == 0 { 1.0 } else { -1.0 };
                amp * step + r.gen_range(-0.03..0.03)
            })
        }
    };
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let v = base + field(y as f32, x as f32, rng);
            data.extend(tint.iter().map(|t| (v + t).clamp(0.0, 1.0)));
        }
    }
    Tensor::from_vec(&[side, side, 3], data).expect("side×side×3")
}
