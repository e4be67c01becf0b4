//! Binary checkpoint format.
//!
//! ```text
//! magic           8 bytes   "SCDMODEL"
//! header_len      u32 LE
//! header          header_len bytes of JSON (CheckpointHeader)
//! payload         f32 LE values, tensors in header order
//! digest          32 bytes, SHA-256 of payload
//! ```
//!
//! Tensors are listed slot by slot (encoder A, encoder B when untied,
//! decoder blocks, head), each as weight `[out, in, k, k]` then bias `[out]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::Conv2d;
use super::{BackboneSpec, ChangeModel, Decoder, Encoder, WeightTying};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SCDMODEL";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    backbone: BackboneSpec,
    weight_tying: WeightTying,
    trainable_tail_k: usize,
    decoder_widths: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

fn slot_names(model: &ChangeModel) -> Vec<String> {
    let mut names = Vec::new();
    for l in &model.backbone.layers {
        names.push(format!("encoder_a.{}", l.name));
    }
    if model.encoder_b.is_some() {
        for l in &model.backbone.layers {
            names.push(format!("encoder_b.{}", l.name));
        }
    }
    for j in 0..model.decoder.blocks.len() {
        names.push(format!("decoder.block{j}"));
    }
    names.push("decoder.head".into());
    names
}

/// Serializes a model into the checkpoint byte format.
pub fn write_checkpoint(model: &ChangeModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    for (name, conv) in slot_names(model).into_iter().zip(model.conv_slots()) {
        tensors.push(TensorEntry {
            name: format!("{name}.weight"),
            shape: vec![
                conv.out_channels,
                conv.in_channels,
                conv.kernel,
                conv.kernel,
            ],
        });
        tensors.push(TensorEntry {
            name: format!("{name}.bias"),
            shape: vec![conv.out_channels],
        });
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        backbone: model.backbone.clone(),
        weight_tying: model.weight_tying,
        trainable_tail_k: model.trainable_tail_k,
        decoder_widths: model
            .decoder
            .blocks
            .iter()
            .map(|c| c.out_channels)
            .collect(),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut payload = Vec::with_capacity(model.parameter_count() * 4);
    for conv in model.conv_slots() {
        for v in conv.weight.iter().chain(&conv.bias) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + header.len() + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

pub fn save_checkpoint(model: &ChangeModel, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ChangeModel> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    read_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { msg, .. } => Error::format(path, msg),
        other => other,
    })
}

/// Parses checkpoint bytes. Errors carry an empty path; [`load_checkpoint`] fills it in.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ChangeModel> {
    let bad = |msg: &str| Error::format("<checkpoint>", msg.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .ok_or_else(|| bad("header length overflow"))?;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| bad(&format!("header: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("header lacks format_version"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: CheckpointHeader =
        serde_json::from_value(raw).map_err(|e| bad(&format!("header: {e}")))?;
    header.backbone.validate()?;

    let expected_values: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let payload_end = header_end + expected_values * 4;
    if bytes.len() != payload_end + 32 {
        return Err(bad(&format!(
            "expected {} bytes, found {} (truncated or trailing data)",
            payload_end + 32,
            bytes.len()
        )));
    }
    let payload = &bytes[header_end..payload_end];
    if Sha256::digest(payload).as_slice() != &bytes[payload_end..] {
        return Err(bad("payload digest mismatch"));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut tensors = header.tensors.iter();

    let mut take_conv =
        |in_c: usize, out_c: usize, kernel: usize, stride: usize| -> Result<Conv2d> {
            let w = tensors.next().ok_or_else(|| bad("missing tensor"))?;
            let b = tensors.next().ok_or_else(|| bad("missing tensor"))?;
            if w.shape != [out_c, in_c, kernel, kernel] || b.shape != [out_c] {
                return Err(bad(&format!(
                    "tensor {} has unexpected shape {:?}",
                    w.name, w.shape
                )));
            }
            let weight: Vec<f32> = values
                .by_ref()
                .take(out_c * in_c * kernel * kernel)
                .collect();
            let bias: Vec<f32> = values.by_ref().take(out_c).collect();
            Ok(Conv2d {
                in_channels: in_c,
                out_channels: out_c,
                kernel,
                stride,
                weight,
                bias,
            })
        };

    let spec = &header.backbone;
    let read_encoder =
        |take: &mut dyn FnMut(usize, usize, usize, usize) -> Result<Conv2d>| -> Result<Encoder> {
            let mut layers = Vec::new();
            for (i, l) in spec.layers.iter().enumerate() {
                layers.push(take(spec.in_channels_of(i), l.out_channels, 3, l.stride)?);
            }
            Ok(Encoder { layers })
        };
    let encoder_a = read_encoder(&mut take_conv)?;
    let encoder_b = match header.weight_tying {
        WeightTying::Tied => None,
        WeightTying::Untied => Some(read_encoder(&mut take_conv)?),
    };
    let mut blocks = Vec::new();
    let mut c = 2 * spec.tap_channels();
    for &w in &header.decoder_widths {
        blocks.push(take_conv(c, w, 3, 1)?);
        c = w;
    }
    let head = take_conv(c, 1, 1, 1)?;
    ChangeModel::from_parts(
        header.backbone,
        header.weight_tying,
        header.trainable_tail_k,
        encoder_a,
        encoder_b,
        Decoder { blocks, head },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use crate::synthlab::generate_scene;

    #[test]
    fn roundtrip_is_bit_exact() {
        for tying in [WeightTying::Tied, WeightTying::Untied] {
            let model = ChangeModel::tiny(tying, 3)
                .unwrap()
                .set_trainable_tail(5)
                .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.scdm");
            save_checkpoint(&model, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.weight_tying(), tying);
            assert_eq!(back.trainable_tail_k(), 5);
            let pair = generate_scene(&mut rng(0), (32, 64)).unwrap();
            assert_eq!(back.forward(&pair).unwrap(), model.forward(&pair).unwrap());
        }
    }

    #[test]
    fn truncated_and_corrupt_files_error() {
        let model = ChangeModel::tiny(WeightTying::Tied, 0).unwrap();
        let bytes = write_checkpoint(&model);
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_checkpoint(&bytes[..cut]), Err(Error::Format { .. })),
                "cut at {cut}"
            );
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 100] ^= 0x40;
        assert!(matches!(
            read_checkpoint(&flipped),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/x.scdm")),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let model = ChangeModel::tiny(WeightTying::Tied, 0).unwrap();
        let bytes = write_checkpoint(&model);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        let patched = header.replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert_eq!(patched.len(), header.len());
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        assert!(matches!(
            read_checkpoint(&out),
            Err(Error::Version {
                found: 7,
                expected: 1
            })
        ));
    }
}
