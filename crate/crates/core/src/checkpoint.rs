//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    b"LNCK"
//! version  u16
//! header   u32 length + UTF-8 JSON (architecture descriptor, optional class names)
//! count    u32
//! tensor   u32 length + UTF-8 name, u8 rank, rank × u32 dims,
//!          u8 precision tag (4 = f32, 8 = f64), raw IEEE-754 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArchDescriptor, Network};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"LNCK";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    arch: ArchDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<String>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `net` and, when given, the class names its outputs stand for.
pub fn encode<T: Scalar>(net: &Network<T>, classes: Option<&[String]>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        arch: net.descriptor(),
        classes: classes.map(<[String]>::to_vec),
    })
    .map_err(|e| Error::Invalid(format!("cannot serialize descriptor: {e}")))?;
    let params = net.params();
    let mut out = Vec::with_capacity(64 + header.len() + net.param_count() * T::BYTES as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, header.len(), "header length")?;
    out.extend_from_slice(&header);
    put_u32(&mut out, params.len(), "tensor count")?;
    for (name, p) in params {
        put_u32(&mut out, name.len(), "name length")?;
        out.extend_from_slice(name.as_bytes());
        let shape = p.value.shape();
        out.push(u8::try_from(shape.len()).map_err(|_| Error::Invalid(format!("rank of {name} exceeds 255")))?);
        for &d in shape {
            put_u32(&mut out, d, "dimension")?;
        }
        out.push(T::BYTES);
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn defect(&self, at: usize, defect: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: at as u64,
            defect: defect.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(self.defect(
                self.pos,
                format!("truncated: {what} needs {n} bytes, {left} remain"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn utf8(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(&format!("{what} length"))?;
        let at = self.pos;
        let raw = self.take(len, what)?;
        std::str::from_utf8(raw).map_err(|e| self.defect(at, format!("{what} is not UTF-8: {e}")))
    }
}

/// Parses a checkpoint. Nothing is returned unless every byte checks out.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Network<T>, Option<Vec<String>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.defect(0, "bad magic, not a checkpoint"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.defect(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_at = r.pos + 4;
    let header: Header = serde_json::from_str(r.utf8("header")?)
        .map_err(|e| r.defect(header_at, format!("malformed header: {e}")))?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut net = Network::<T>::from_descriptor(&header.arch, &mut rng)
        .map_err(|e| r.defect(header_at, format!("header describes an unbuildable network: {e}")))?;

    let count_at = r.pos;
    let count = r.u32("tensor count")?;
    let mut params = net.params_mut();
    if count != params.len() {
        return Err(r.defect(
            count_at,
            format!("{count} tensors stored, architecture has {}", params.len()),
        ));
    }
    for p in &mut params {
        let name_at = r.pos;
        let name = r.utf8("tensor name")?;
        if name != p.name {
            return Err(r.defect(name_at, format!("tensor '{name}' where '{}' was expected", p.name)));
        }
        let shape_at = r.pos;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(r.defect(
                shape_at,
                format!("tensor '{name}' has shape {shape:?}, expected {:?}", p.value.shape()),
            ));
        }
        let tag_at = r.pos;
        let tag = r.u8("precision tag")?;
        let width = match tag {
            4 | 8 => tag as usize,
            other => return Err(r.defect(tag_at, format!("unknown precision tag {other}"))),
        };
        let raw = r.take(width * p.value.len(), &format!("values of '{name}'"))?;
        let values: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::from_f64_lossy(f32::read_le(c).to_f64_lossless()),
                _ => T::from_f64_lossy(f64::read_le(c)),
            })
            .collect();
        *p.value = Tensor::from_vec(&shape, values)?;
    }
    drop(params);
    if r.pos != bytes.len() {
        return Err(r.defect(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((net, header.classes))
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with_classes(net, None, path)
}

pub fn save_checkpoint_with_classes<T: Scalar>(
    net: &Network<T>,
    classes: Option<&[String]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net, classes)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    load_checkpoint_with_classes(path).map(|(net, _)| net)
}

pub fn load_checkpoint_with_classes<T: Scalar>(path: impl AsRef<Path>) -> Result<(Network<T>, Option<Vec<String>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_paper_cnn, replace_head, ArchKind};
    use crate::data::synth_dataset;
    use crate::optim::OptimizerKind;
    use crate::train::{evaluate, train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cnn(seed: u64) -> Network<f32> {
        build_paper_cnn(&[24, 24, 3], 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn probs(net: &mut Network<f32>) -> Vec<u32> {
        let ds = synth_dataset(2, 24, 9).unwrap();
        ds.items()
            .iter()
            .flat_map(|it| net.forward(&it.pixels).unwrap().into_vec())
            .map(f32::to_bits)
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets = [
            small_cnn(0),
            ArchKind::MiniResnet.build(&[12, 12, 3], 4, &mut rng).unwrap(),
            ArchKind::MiniInception.build(&[14, 14, 3], 3, &mut rng).unwrap(),
        ];
        for net in nets {
            let bytes = encode(&net, None).unwrap();
            let (back, classes) = decode::<f32>(&bytes).unwrap();
            assert_eq!(classes, None);
            assert_eq!(back.descriptor(), net.descriptor());
            for ((na, a), (nb, b)) in net.params().iter().zip(back.params()) {
                assert_eq!(na, &nb);
                assert_eq!(a.value, b.value);
            }
            assert_eq!(encode(&back, None).unwrap(), bytes);
        }
    }

    #[test]
    fn predictions_survive_a_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut net = small_cnn(2);
        let names: Vec<String> = ["desert", "farmland", "meadow", "terrace"].map(String::from).to_vec();
        save_checkpoint_with_classes(&net, Some(&names), &path).unwrap();
        let (mut back, classes) = load_checkpoint_with_classes::<f32>(&path).unwrap();
        assert_eq!(classes.as_deref(), Some(&names[..]));
        assert_eq!(probs(&mut net), probs(&mut back));
    }

    #[test]
    fn f32_checkpoint_loads_exactly_into_f64() {
        let net = small_cnn(3);
        let wide = decode::<f64>(&encode(&net, None).unwrap()).unwrap().0;
        assert_eq!(wide.params()[0].1.value, net.params()[0].1.value.cast());
    }

    #[test]
    fn every_truncation_is_rejected_with_its_offset() {
        let bytes = encode(&small_cnn(4), None).unwrap();
        let cuts = [0, 3, 5, 7, 40, bytes.len() / 2, bytes.len() - 1];
        for cut in cuts {
            match decode::<f32>(&bytes[..cut]) {
                Err(Error::Checkpoint { offset, defect }) => {
                    assert!(offset as usize <= cut, "offset {offset} beyond cut {cut}");
                    assert!(defect.contains("truncated"), "{defect}");
                }
                other => panic!("cut at {cut}: expected checkpoint error, got {:?}", other.map(|_| ())),
            }
        }
    }

    #[test]
    fn header_defects_are_named() {
        let mut bytes = encode(&small_cnn(5), None).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let err = decode::<f32>(&bad_magic).unwrap_err().to_string();
        assert!(err.contains("magic") && err.contains("byte 0"), "{err}");

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        let err = decode::<f32>(&bad_version).unwrap_err().to_string();
        assert!(err.contains("version 9") && err.contains("byte 4"), "{err}");

        bytes.push(0);
        let err = decode::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_checkpoint::<f32>("/nonexistent/model.ckpt").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn frozen_backbone_survives_head_swap_and_retraining() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.ckpt");
        save_checkpoint(&small_cnn(6), &path).unwrap();
        let base = load_checkpoint::<f32>(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let swapped = replace_head(base.clone(), 4, true, &mut rng).unwrap();
        let ds = synth_dataset(6, 24, 8).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let (mut tuned, _) = train(swapped, &ds, &ds, &cfg).unwrap();
        let before = base.params();
        let after = tuned.params();
        let n = before.len();
        for ((name, a), (_, b)) in before.iter().zip(&after).take(n - 2) {
            assert_eq!(a.value, b.value, "{name} moved");
        }
        assert_ne!(before[n - 2].1.value, after[n - 2].1.value, "head must train");
        // the frozen flags travel with the checkpoint
        let reloaded = decode::<f32>(&encode(&tuned, None).unwrap()).unwrap().0;
        assert_eq!(reloaded.descriptor().frozen, tuned.descriptor().frozen);
        evaluate::<f32, _>(&mut tuned, &ds).unwrap();
    }
}
