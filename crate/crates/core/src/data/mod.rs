//! Labelled image collections and the preprocessing pipeline: loading,
//! resizing, augmentation to balanced class counts, stratified splitting,
//! batching, and a synthetic texture corpus.

mod augment;
mod image_ops;
mod load;
mod split;
mod synth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment_to_count, Transform};
pub use image_ops::{resize, resize_bilinear};
pub use load::{load_dataset, load_dataset_resized};
pub use split::{batches, split_first_then_augment, stratified_split, SplitSpec};
pub use synth::{synth_dataset, SYNTH_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bijective label name ↔ id map. Ids follow lexicographic name order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoder {
    names: Vec<String>,
}

impl LabelEncoder {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate label '{}'", w[0])));
        }
        Ok(Self { names })
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Where an image came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Original,
    /// Derived from item `source` of the dataset it was augmented from.
    Augmented { source: usize, transform: Transform },
}

/// One `H×W×3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
    encoder: LabelEncoder,
}

impl Dataset {
    pub fn new(items: Vec<LabeledImage>, encoder: LabelEncoder) -> Result<Self> {
        if let Some((i, item)) = items.iter().enumerate().find(|(_, it)| it.label >= encoder.len()) {
            return Err(Error::Data(format!(
                "item {i} has label {} but only {} classes exist",
                item.label,
                encoder.len()
            )));
        }
        Ok(Self { items, encoder })
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledImage> {
        self.items
    }

    pub fn encoder(&self) -> &LabelEncoder {
        &self.encoder
    }

    pub fn num_classes(&self) -> usize {
        self.encoder.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.encoder.len()];
        for it in &self.items {
            counts[it.label] += 1;
        }
        counts
    }

    /// Item indices grouped by class, each list in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.encoder.len()];
        for (i, it) in self.items.iter().enumerate() {
            groups[it.label].push(i);
        }
        groups
    }

    /// New dataset holding the items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            encoder: self.encoder.clone(),
        }
    }

    /// Resizes every image.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Dataset {
        Dataset {
            items: self.items.iter().map(|it| resize(it, out_h, out_w)).collect(),
            encoder: self.encoder.clone(),
        }
    }
}

/// Independent generator for one `(purpose, index)` pair under `seed`.
/// Each pipeline stage uses its own purpose so streams never collide.
pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 finalizer
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(index);
    rng
}

pub(crate) mod purpose {
    pub const AUGMENT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const SYNTH: u64 = 4;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexicographic_ids() {
        let enc = LabelEncoder::new(["terrace", "desert", "meadow", "farmland"]).unwrap();
        assert_eq!(enc.encode("desert"), Some(0));
        assert_eq!(enc.encode("farmland"), Some(1));
        assert_eq!(enc.encode("meadow"), Some(2));
        assert_eq!(enc.encode("terrace"), Some(3));
        assert_eq!(enc.encode("forest"), None);
        assert_eq!(enc.decode(4), None);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(LabelEncoder::new(["a", "b", "a"]).is_err());
    }

    #[test]
    fn dataset_validates_labels() {
        let enc = LabelEncoder::new(["a", "b"]).unwrap();
        let item = LabeledImage {
            pixels: Tensor::zeros(&[1, 1, 3]).unwrap(),
            label: 2,
            origin: Origin::Original,
        };
        assert!(Dataset::new(vec![item], enc).is_err());
    }

    proptest! {
        #[test]
        fn encoder_is_bijective(names in prop::collection::btree_set("[a-z]{1,8}", 1..12)) {
            let enc = LabelEncoder::new(names.iter().cloned()).unwrap();
            for name in &names {
                let id = enc.encode(name).unwrap();
                prop_assert_eq!(enc.decode(id), Some(name.as_str()));
            }
            for id in 0..enc.len() {
                prop_assert_eq!(enc.encode(enc.decode(id).unwrap()), Some(id));
            }
        }
    }
}
