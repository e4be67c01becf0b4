//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/t0/<id>.png      8-bit RGB
//! <root>/t1/<id>.png      8-bit RGB
//! <root>/masks/<id>.png   8-bit gray, values {0, 255}
//! ```
//!
//! Manifest paths are relative to `<root>`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{ChangeMask, Image, ImagePair, LabeledSample, Provenance, Split, CHANNELS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub t0_path: PathBuf,
    pub t1_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub split: Split,
    #[serde(default)]
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut ids = HashSet::new();
        for rec in &manifest.records {
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::format(
                    path,
                    format!("duplicate record id {:?}", rec.id),
                ));
            }
            if rec.split == Split::Train && rec.mask_path.is_none() {
                return Err(Error::format(
                    path,
                    format!("train record {:?} has no mask", rec.id),
                ));
            }
        }
        Ok(manifest)
    }
}

/// Resolves a manifest argument that may name either the file or its directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads every record of a manifest, in manifest order.
///
/// Every record must carry a mask; unlabeled pairs are not representable as
/// [`LabeledSample`].
pub fn load_dataset(manifest: &Path) -> Result<Vec<LabeledSample>> {
    let manifest_file = manifest_path(manifest);
    let root = manifest_file
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let m = DatasetManifest::read(&manifest_file)?;

    // Check all paths up front so a missing file is reported before any decode work.
    for rec in &m.records {
        for rel in [
            Some(&rec.t0_path),
            Some(&rec.t1_path),
            rec.mask_path.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            let p = root.join(rel);
            if !p.is_file() {
                return Err(Error::Missing(p));
            }
        }
    }

    m.records
        .iter()
        .map(|rec| {
            let t0 = read_image(&root.join(&rec.t0_path))?;
            let t1 = read_image(&root.join(&rec.t1_path))?;
            let mask_rel = rec.mask_path.as_ref().ok_or_else(|| {
                Error::format(&manifest_file, format!("record {:?} has no mask", rec.id))
            })?;
            let mask = read_mask(&root.join(mask_rel))?;
            let pair = ImagePair::new(t0, t1, rec.id.clone())?;
            Ok(LabeledSample::new(pair, mask, rec.provenance)?.with_split(rec.split))
        })
        .collect()
}

/// Writes `samples` under `out_dir` and returns the manifest that was written.
pub fn save_dataset(samples: &[LabeledSample], out_dir: &Path) -> Result<DatasetManifest> {
    let mut seen = HashSet::new();
    for s in samples {
        validate_id(s.id())?;
        if !seen.insert(s.id()) {
            return Err(Error::Config(format!("duplicate sample id {:?}", s.id())));
        }
    }
    for sub in ["t0", "t1", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let file = format!("{}.png", s.id());
        let rec = ManifestRecord {
            id: s.id().to_string(),
            t0_path: Path::new("t0").join(&file),
            t1_path: Path::new("t1").join(&file),
            mask_path: Some(Path::new("masks").join(&file)),
            split: s.split(),
            provenance: s.provenance(),
        };
        write_image(s.pair().t0(), &out_dir.join(&rec.t0_path))?;
        write_image(s.pair().t1(), &out_dir.join(&rec.t1_path))?;
        write_mask(s.mask(), &out_dir.join(rec.mask_path.as_ref().unwrap()))?;
        records.push(rec);
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        records,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// SHA-256 over the manifest and every referenced file, in manifest order.
pub fn dataset_hash(root: &Path) -> Result<String> {
    let manifest_file = manifest_path(root);
    let root = manifest_file.parent().unwrap_or(Path::new("."));
    let m = DatasetManifest::read(&manifest_file)?;
    let mut hasher = Sha256::new();
    hasher.update(fs::read(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?);
    for rec in &m.records {
        for rel in [
            Some(&rec.t0_path),
            Some(&rec.t1_path),
            rec.mask_path.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            let p = root.join(rel);
            hasher.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "sample id {id:?} is not a safe file name"
        )))
    }
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn decode_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::Missing(path.to_path_buf())
        }
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| decode_err(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Image::new(h as usize, w as usize, data)
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    debug_assert_eq!(raw.len(), img.height() * img.width() * CHANNELS);
    let buf: RgbImage =
        ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer size matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

/// Reads a {0, 255} mask. Any other gray level is a format error.
pub fn read_mask(path: &Path) -> Result<ChangeMask> {
    let img = image::open(path)
        .map_err(|e| decode_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for v in img.into_raw() {
        match v {
            0 => data.push(0),
            255 => data.push(1),
            other => {
                return Err(Error::format(
                    path,
                    format!("mask value {other} is neither 0 nor 255"),
                ))
            }
        }
    }
    ChangeMask::new(h as usize, w as usize, data)
}

pub fn write_mask(mask: &ChangeMask, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let buf: GrayImage =
        ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, raw)
            .expect("buffer size matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

/// Reads a single-channel raster as floats in [0, 1].
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| decode_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((
        h as usize,
        w as usize,
        img.into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    ))
}

/// Reads an RGBA raster as (rgb image, alpha plane).
pub fn read_rgba(path: &Path) -> Result<(Image, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| decode_err(path, e))?
        .to_rgba8();
    let (w, h) = img.dimensions();
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    let mut alpha = Vec::with_capacity((w * h) as usize);
    for px in img.pixels() {
        rgb.extend(px.0[..3].iter().map(|&v| v as f32 / 255.0));
        alpha.push(px.0[3] as f32 / 255.0);
    }
    Ok((Image::new(h as usize, w as usize, rgb)?, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, h: usize, w: usize, seed: u8) -> LabeledSample {
        let n = h * w * 3;
        let t0: Vec<f32> = (0..n)
            .map(|i| ((i as u32 * 7 + seed as u32) % 256) as f32 / 255.0)
            .collect();
        let t1: Vec<f32> = (0..n)
            .map(|i| ((i as u32 * 13 + seed as u32) % 256) as f32 / 255.0)
            .collect();
        let mask: Vec<u8> = (0..h * w)
            .map(|i| ((i + seed as usize) % 3 == 0) as u8)
            .collect();
        let pair = ImagePair::new(
            Image::new(h, w, t0).unwrap(),
            Image::new(h, w, t1).unwrap(),
            id,
        )
        .unwrap();
        LabeledSample::new(
            pair,
            ChangeMask::new(h, w, mask).unwrap(),
            Provenance::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn empty_dataset_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let m = save_dataset(&[], dir.path()).unwrap();
        assert!(m.records.is_empty());
        for sub in ["t0", "t1", "masks"] {
            assert!(dir.path().join(sub).is_dir());
        }
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn one_sample_writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = save_dataset(&[sample("a", 4, 5, 1)], dir.path()).unwrap();
        assert_eq!(m.records.len(), 1);
        let count = ["t0", "t1", "masks"]
            .iter()
            .map(|s| fs::read_dir(dir.path().join(s)).unwrap().count())
            .sum::<usize>();
        assert_eq!(count, 3);
        assert!(dir.path().join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn two_records_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[sample("zz", 3, 3, 1), sample("aa", 3, 3, 2)], dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        let ids: Vec<_> = loaded.iter().map(|s| s.id()).collect();
        assert_eq!(ids, ["zz", "aa"]);
    }

    #[test]
    fn missing_mask_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[sample("a", 3, 3, 1)], dir.path()).unwrap();
        let mask = dir.path().join("masks/a.png");
        fs::remove_file(&mask).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Missing(p)) => assert_eq!(p, mask),
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }

    #[test]
    fn non_binary_mask_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[sample("a", 3, 3, 1)], dir.path()).unwrap();
        let buf: GrayImage =
            ImageBuffer::from_raw(3, 3, vec![0, 255, 128, 0, 0, 0, 0, 0, 0]).unwrap();
        buf.save(dir.path().join("masks/a.png")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn manifest_version_and_duplicates_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        fs::write(&path, r#"{"format_version": 2, "records": []}"#).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Version { found: 2, .. })
        ));
        let rec = r#"{"id":"a","t0_path":"t0/a.png","t1_path":"t1/a.png","mask_path":"masks/a.png","split":"train"}"#;
        fs::write(
            &path,
            format!(r#"{{"format_version": 1, "records": [{rec},{rec}]}}"#),
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn unsafe_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample("../evil", 2, 2, 0);
        assert!(matches!(
            save_dataset(&[s], dir.path()),
            Err(Error::Config(_))
        ));
    }
}
