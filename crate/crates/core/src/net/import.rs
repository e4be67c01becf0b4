//! Pretrained-weight import for the `external` backbone family.
//!
//! The manifest is JSON; weight paths are relative to the manifest file:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "tap_layer": 4,
//!   "layers": [
//!     { "name": "block1_conv1", "out_channels": 32, "stride": 2,
//!       "weights": "block1_conv1.weight.f32", "bias": "block1_conv1.bias.f32" }
//!   ]
//! }
//! ```
//!
//! Weight files hold raw little-endian f32 in `[out][in][3][3]` order, bias
//! files `[out]`. A missing `bias` means zeros. Every layer is a 3x3
//! convolution with "same" padding followed by ReLU.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv2d;
use super::{BackboneFamily, BackboneSpec, ChangeModel, Decoder, Encoder, LayerSpec, WeightTying};
use crate::error::{Error, Result};
use crate::types::CHANNELS;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub format_version: u32,
    pub tap_layer: usize,
    pub layers: Vec<ImportedLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportedLayer {
    pub name: String,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: PathBuf,
    #[serde(default)]
    pub bias: Option<PathBuf>,
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} f32 values, found {} bytes",
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite weight"));
    }
    Ok(values)
}

/// Builds a model whose encoders start from imported weights. The decoder is
/// freshly initialized from `seed`; untied encoders get identical copies.
pub fn import_backbone(
    manifest_path: &Path,
    weight_tying: WeightTying,
    seed: u64,
) -> Result<ChangeModel> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(manifest_path.to_path_buf()),
        _ => Error::io(manifest_path, e),
    })?;
    let manifest: BackboneManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if manifest.format_version != 1 {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: 1,
        });
    }
    let spec = BackboneSpec {
        family: BackboneFamily::External,
        in_channels: CHANNELS,
        layers: manifest
            .layers
            .iter()
            .map(|l| LayerSpec {
                name: l.name.clone(),
                out_channels: l.out_channels,
                stride: l.stride,
            })
            .collect(),
        tap_layer: manifest.tap_layer,
    };
    spec.validate()?;

    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, l) in manifest.layers.iter().enumerate() {
        let in_c = spec.in_channels_of(i);
        let weight = read_f32(&root.join(&l.weights), l.out_channels * in_c * 9)?;
        let bias = match &l.bias {
            Some(p) => read_f32(&root.join(p), l.out_channels)?,
            None => vec![0.0; l.out_channels],
        };
        layers.push(Conv2d {
            in_channels: in_c,
            out_channels: l.out_channels,
            kernel: 3,
            stride: l.stride,
            weight,
            bias,
        });
    }
    let encoder_a = Encoder { layers };
    let encoder_b = (weight_tying == WeightTying::Untied).then(|| encoder_a.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoder = Decoder::init(2 * spec.tap_channels(), spec.tap_stride(), &mut rng);
    let tail = spec.tap_layer;
    ChangeModel::from_parts(spec, weight_tying, tail, encoder_a, encoder_b, decoder)
}
