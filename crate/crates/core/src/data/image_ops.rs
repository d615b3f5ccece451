use super::LabeledImage;
use crate::tensor::Tensor;

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear sample at fractional `(y, x)`. Coordinates outside the image
/// are clamped, which replicates the border pixels.
pub(crate) fn sample(img: &Tensor<f32>, y: f32, x: f32, out: &mut Vec<f32>) {
    let [h, w, c] = img.shape()[..] else {
        unreachable!("images are H×W×C")
    };
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f32, x - x0 as f32);
    let d = img.data();
    for ch in 0..c {
        let at = |r: usize, col: usize| d[(r * w + col) * c + ch];
        let top = lerp(at(y0, x0), at(y0, x1), tx);
        let bottom = lerp(at(y1, x0), at(y1, x1), tx);
        out.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
    }
}

/// Resamples an image by mapping each output pixel through `source`, which
/// returns the fractional source coordinate `(y, x)`.
pub(crate) fn remap(img: &Tensor<f32>, out_h: usize, out_w: usize, source: impl Fn(f32, f32) -> (f32, f32)) -> Tensor<f32> {
    let c = img.shape()[2];
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (sy, sx) = source(oy as f32, ox as f32);
            sample(img, sy, sx, &mut data);
        }
    }
    Tensor::from_vec(&[out_h, out_w, c], data).expect("remap output shape")
}

/// Bilinear resize with half-pixel centres. Aspect ratio is not preserved.
/// Resizing to the same size returns the input exactly.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if (h, w) == (out_h, out_w) {
        return img.map(|v| v.clamp(0.0, 1.0));
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    remap(img, out_h, out_w, |oy, ox| ((oy + 0.5) * sy - 0.5, (ox + 0.5) * sx - 0.5))
}

pub fn resize(img: &LabeledImage, out_h: usize, out_w: usize) -> LabeledImage {
    LabeledImage {
        pixels: resize_bilinear(&img.pixels, out_h, out_w),
        label: img.label,
        origin: img.origin.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(&[h, w, 3], v.iter().flat_map(|&x| [x, x, x]).collect()).unwrap()
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = Tensor::from_vec(
            &[224, 224, 3],
            (0..224 * 224 * 3).map(|i| ((i * 7919) % 1000) as f32 / 999.0).collect(),
        )
        .unwrap();
        assert_eq!(resize_bilinear(&img, 224, 224), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::filled(&[256, 256, 3], 0.37f32).unwrap();
        let out = resize_bilinear(&img, 224, 224);
        assert_eq!(out.shape(), &[224, 224, 3]);
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn checkerboard_upscale() {
        let img = gray(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let out = resize_bilinear(&img, 4, 4);
        // source coordinates per axis: 0, 0.25, 0.75, 1 (clamped);
        // value = (1-sy)(1-sx) + sy·sx
        let expected = [
            1.0, 0.75, 0.25, 0.0, //
            0.75, 0.625, 0.375, 0.25, //
            0.25, 0.375, 0.625, 0.75, //
            0.0, 0.25, 0.75, 1.0,
        ];
        for (px, e) in out.data().chunks(3).zip(expected) {
            for &v in px {
                assert!((v - e).abs() < 1e-6, "{v} vs {e}");
            }
        }
    }

    #[test]
    fn downscale_shape_and_range() {
        let img = gray(3, 5, &[0.0, 1.0, 0.5, 0.2, 0.9, 0.3, 0.3, 0.3, 1.0, 0.0, 0.1, 0.7, 0.6, 0.4, 0.8]);
        let out = resize_bilinear(&img, 2, 2);
        assert_eq!(out.shape(), &[2, 2, 3]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
