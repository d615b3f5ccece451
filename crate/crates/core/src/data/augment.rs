use rand::Rng;

use super::image_ops::remap;
use super::{purpose, stream_rng, Dataset, LabeledImage, Origin};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_ROTATION_DEG: f32 = 30.0;
const MAX_SHEAR: f32 = 0.2;

/// Geometric augmentation applied to one image. Resampling is bilinear and
/// pixels that map outside the source take the nearest edge value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Rotate { degrees: f32 },
    FlipHorizontal,
    FlipVertical,
    /// Horizontal shear: `x_src = x + factor·(y − centre)`.
    Shear { factor: f32 },
}

impl Transform {
    /// Draws a transform kind uniformly, then its parameter:
    /// rotation in ±30°, shear in ±0.2.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.gen_range(0..4) {
            0 => Transform::Rotate {
                degrees: rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            },
            1 => Transform::FlipHorizontal,
            2 => Transform::FlipVertical,
            _ => Transform::Shear {
                factor: rng.gen_range(-MAX_SHEAR..=MAX_SHEAR),
            },
        }
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Tensor<f32> {
        let [h, w, c] = img.shape()[..] else {
            unreachable!("images are H×W×C")
        };
        let cy = (h as f32 - 1.0) / 2.0;
        let cx = (w as f32 - 1.0) / 2.0;
        match *self {
            Transform::FlipHorizontal | Transform::FlipVertical => {
                let src = img.data();
                let mut out = Vec::with_capacity(src.len());
                for y in 0..h {
                    for x in 0..w {
                        let (sy, sx) = if *self == Transform::FlipHorizontal {
                            (y, w - 1 - x)
                        } else {
                            (h - 1 - y, x)
                        };
                        let at = (sy * w + sx) * c;
                        out.extend_from_slice(&src[at..at + c]);
                    }
                }
                Tensor::from_vec(img.shape(), out).expect("same shape")
            }
            Transform::Rotate { degrees } => {
                let (sin, cos) = degrees.to_radians().sin_cos();
                remap(img, h, w, |y, x| {
                    let (dy, dx) = (y - cy, x - cx);
                    (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
                })
            }
            Transform::Shear { factor } => remap(img, h, w, |y, x| (y, x + factor * (y - cy))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Transform::Rotate { degrees } => format!("rotate({degrees:.2}deg)"),
            Transform::FlipHorizontal => "hflip".into(),
            Transform::FlipVertical => "vflip".into(),
            Transform::Shear { factor } => format!("shear({factor:.3})"),
        }
    }
}

/// Tops every class up to exactly `target` images by transforming randomly
/// chosen originals of that class. Originals are kept, in order, followed by
/// the new images grouped by class. Each new image draws from its own
/// generator keyed by `(seed, output index)`.
pub fn augment_to_count(ds: &Dataset, target: usize, seed: u64) -> Result<Dataset> {
    let groups = ds.indices_by_class();
    for (label, members) in groups.iter().enumerate() {
        let name = ds.encoder().decode(label).unwrap_or("?");
        if members.is_empty() {
            return Err(Error::Data(format!("class '{name}' has no images to augment from")));
        }
        if members.len() > target {
            return Err(Error::Data(format!(
                "class '{name}' already has {} images, above the target of {target}",
                members.len()
            )));
        }
    }
    let mut items: Vec<LabeledImage> = ds.items().to_vec();
    for (label, members) in groups.iter().enumerate() {
        for _ in members.len()..target {
            let mut rng = stream_rng(seed, purpose::AUGMENT, items.len() as u64);
            let source = members[rng.gen_range(0..members.len())];
            let transform = Transform::random(&mut rng);
            items.push(LabeledImage {
                pixels: transform.apply(&ds.items()[source].pixels),
                label,
                origin: Origin::Augmented { source, transform },
            });
        }
    }
    Dataset::new(items, ds.encoder().clone())
}
