use std::fs;
use std::path::{Path, PathBuf};

use super::{resize_bilinear, Dataset, LabelEncoder, LabeledImage, Origin};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn decode(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    // grayscale and palette images broadcast to three channels here
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Tensor::from_vec(&[h as usize, w as usize, 3], rgb.into_raw())
}

/// Loads `<root>/<label>/<file>.{png,jpg,jpeg}` at native resolution.
/// Items are ordered by label name, then file name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_resized(root, None)
}

/// As [`load_dataset`], resizing each image right after decoding so large
/// corpora never sit in memory at full resolution.
pub fn load_dataset_resized(root: impl AsRef<Path>, size: Option<(usize, usize)>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} has no label directories", root.display())));
    }
    if class_dirs.len() < 2 {
        return Err(Error::Data(format!(
            "{} has a single label directory; at least two classes are needed",
            root.display()
        )));
    }
    let names: Vec<String> = class_dirs
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let encoder = LabelEncoder::new(names.iter().cloned())?;

    let mut items = Vec::new();
    for (dir, name) in class_dirs.iter().zip(&names) {
        let label = encoder.encode(name).expect("encoder built from these names");
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_image(p)).collect();
        if files.is_empty() {
            return Err(Error::Data(format!("label directory {} holds no images", dir.display())));
        }
        for file in files {
            let mut pixels = decode(&file)?;
            if let Some((h, w)) = size {
                pixels = resize_bilinear(&pixels, h, w);
            }
            items.push(LabeledImage {
                pixels,
                label,
                origin: Origin::Original,
            });
        }
    }
    Dataset::new(items, encoder)
}
