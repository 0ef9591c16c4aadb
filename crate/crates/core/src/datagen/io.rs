//! Binary dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SFSD" | version: u32 | width: u32 | height: u32
//! then per image: width*height f32 pixels (row-major), width*height u8 labels
//! ```
//!
//! The image count is implied by the file length.

use std::fs;
use std::path::Path;

use super::LabeledImage;
use crate::error::{Result, SfsError};

pub const DATASET_MAGIC: &[u8; 4] = b"SFSD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn write_dataset(path: &Path, images: &[LabeledImage]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| SfsError::InvalidInput("cannot write an empty dataset".into()))?;
    let (w, h) = (first.width, first.height);
    let n = w * h;
    let mut buf = Vec::with_capacity(HEADER_LEN + images.len() * n * 5);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    for img in images {
        if img.width != w || img.height != h {
            return Err(SfsError::Dimension(format!(
                "dataset mixes {w}x{h} and {}x{} images",
                img.width, img.height
            )));
        }
        for &p in &img.pixels {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        buf.extend_from_slice(&img.mask);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SfsError::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| SfsError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledImage>> {
    let bytes = fs::read(path).map_err(|e| SfsError::io(path, e))?;
    let bad = |reason: String| SfsError::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != DATASET_MAGIC {
        return Err(bad("missing SFSD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (w, h) = (word(8) as usize, word(12) as usize);
    let n = w * h;
    let record = n * 5;
    let body = bytes.len() - HEADER_LEN;
    if n == 0 || body == 0 || body % record != 0 {
        return Err(bad(format!(
            "body of {body} bytes is not a whole number of {w}x{h} records"
        )));
    }
    bytes[HEADER_LEN..]
        .chunks_exact(record)
        .map(|rec| {
            let pixels = rec[..4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            LabeledImage::new(w, h, pixels, rec[4 * n..].to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, ModalitySpec, SceneSpec};

    #[test]
    fn container_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.sfsd");
        let data = generate_dataset(&SceneSpec::default(), &ModalitySpec::identity(), 3).unwrap();
        write_dataset(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SFSD");
        assert_eq!(bytes.len(), 16 + 3 * 32 * 32 * 5);
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.mask, b.mask);
            for (p, q) in a.pixels.iter().zip(&b.pixels) {
                assert_eq!(*p as f32 as f64, *q);
            }
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sfsd");
        let data = generate_dataset(&SceneSpec::default(), &ModalitySpec::identity(), 1).unwrap();
        write_dataset(&path, &data).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(SfsError::Format { .. })));
    }
}
