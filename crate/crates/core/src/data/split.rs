use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{augment_to_count, purpose, stream_rng, Dataset};
use crate::error::{Error, Result};

/// Train/test/validation fractions, each positive, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            test: 0.3,
            val: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, test: f64, val: f64) -> Result<Self> {
        let spec = Self { train, test, val };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.val];
        if parts.iter().any(|&f| !(f > 0.0 && f.is_finite())) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Cut points `(round(n·train), round(n·(train+test)))`.
    pub fn cuts(&self, n: usize) -> (usize, usize) {
        let a = (n as f64 * self.train).round() as usize;
        let b = (n as f64 * (self.train + self.test)).round() as usize;
        (a.min(n), b.min(n))
    }
}

/// Per class: seeded shuffle, then contiguous cuts at `round(n·train)` and
/// `round(n·(train+test))`. Every split receives at least one item of every
/// class. Within each split, items keep their dataset order.
pub fn stratified_split(ds: &Dataset, spec: SplitSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (label, mut members) in ds.indices_by_class().into_iter().enumerate() {
        let n = members.len();
        let (a, b) = spec.cuts(n);
        if a == 0 || b == a || b == n {
            return Err(Error::Invalid(format!(
                "class '{}' with {n} items cannot be split {:?} with every split non-empty",
                ds.encoder().decode(label).unwrap_or("?"),
                [spec.train, spec.test, spec.val]
            )));
        }
        members.shuffle(&mut stream_rng(seed, purpose::SPLIT, label as u64));
        parts[0].extend_from_slice(&members[..a]);
        parts[1].extend_from_slice(&members[a..b]);
        parts[2].extend_from_slice(&members[b..]);
    }
    let [train, test, val] = parts.map(|mut idx| {
        idx.sort_unstable();
        ds.subset(&idx)
    });
    Ok((train, test, val))
}

/// Leakage-free variant of the pipeline: splits the originals first, then
/// augments each split on its own to `round(target·fraction)` per class.
pub fn split_first_then_augment(
    ds: &Dataset,
    spec: SplitSpec,
    target_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, test, val) = stratified_split(ds, spec, seed)?;
    let target = |f: f64| (target_per_class as f64 * f).round() as usize;
    Ok((
        augment_to_count(&train, target(spec.train), seed)?,
        augment_to_count(&test, target(spec.test), seed.wrapping_add(1))?,
        augment_to_count(&val, target(spec.val), seed.wrapping_add(2))?,
    ))
}

/// Index batches over a dataset of `len` items. With `shuffle`, the order
/// is a fresh permutation for every `(seed, epoch)`; the final partial batch
/// is kept.
pub fn batches(len: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, purpose::BATCH, epoch as u64));
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use proptest::prelude::*;

    #[test]
    fn thirds_on_three_per_class() {
        let ds = synth_dataset(3, 8, 0).unwrap();
        let third = 1.0 / 3.0;
        let (a, b, c) = stratified_split(&ds, SplitSpec::new(third, third, third).unwrap(), 4).unwrap();
        for part in [&a, &b, &c] {
            assert_eq!(part.class_counts(), vec![1; 4]);
        }
    }

    #[test]
    fn paper_counts_per_class() {
        assert_eq!(SplitSpec::default().cuts(3500), (2100, 3150));
    }

    #[test]
    fn invalid_specs() {
        assert!(SplitSpec::new(0.5, 0.5, 0.0).is_err());
        assert!(SplitSpec::new(0.6, 0.3, 0.2).is_err());
        let ds = synth_dataset(2, 8, 0).unwrap();
        assert!(stratified_split(&ds, SplitSpec::default(), 0).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = synth_dataset(10, 8, 1).unwrap();
        let first = stratified_split(&ds, SplitSpec::default(), 12).unwrap();
        let second = stratified_split(&ds, SplitSpec::default(), 12).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn batch_layout() {
        let b = batches(14_000, 64, true, 3, 0);
        assert_eq!(b.len(), 219);
        assert_eq!(b.last().unwrap().len(), 48);
        let plain = batches(10, 4, false, 3, 0);
        assert_eq!(plain, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
        assert_eq!(batches(100, 7, true, 5, 2), batches(100, 7, true, 5, 2));
        assert_ne!(batches(100, 7, true, 5, 2), batches(100, 7, true, 5, 3));
    }

    #[test]
    fn split_first_keeps_sources_inside_each_split() {
        let ds = synth_dataset(10, 8, 2).unwrap();
        let (train, test, val) = split_first_then_augment(&ds, SplitSpec::default(), 20, 5).unwrap();
        assert_eq!(train.class_counts(), vec![12; 4]);
        assert_eq!(test.class_counts(), vec![6; 4]);
        assert_eq!(val.class_counts(), vec![2; 4]);
    }

    proptest! {
        #[test]
        fn split_partitions(n in 3usize..40, seed in any::<u64>()) {
            let ds = synth_dataset(n, 8, 7).unwrap();
            // tag every image with its index through the first pixel
            let mut items = ds.clone().into_items();
            for (i, it) in items.iter_mut().enumerate() {
                it.pixels.data_mut()[0] = i as f32;
            }
            let ds = Dataset::new(items, ds.encoder().clone()).unwrap();
            match stratified_split(&ds, SplitSpec::default(), seed) {
                Ok((a, b, c)) => {
                    let mut seen: Vec<usize> = [a, b, c]
                        .iter()
                        .flat_map(|d| d.items().iter().map(|it| it.pixels.data()[0] as usize))
                        .collect();
                    seen.sort_unstable();
                    prop_assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
                }
                Err(_) => {
                    let (x, y) = SplitSpec::default().cuts(n);
                    prop_assert!(x == 0 || y == x || y == n);
                }
            }
        }

        #[test]
        fn batches_cover_every_index_once(len in 1usize..300, size in 1usize..70, seed in any::<u64>()) {
            let mut all: Vec<usize> = batches(len, size, true, seed, 0).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }
    }
}
