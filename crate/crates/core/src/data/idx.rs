//! MNIST IDX reader (and a writer, used for fixtures).

use std::fs;
use std::io::{Error as IoError, ErrorKind};
use std::path::Path;

use crate::data::{Dataset, LabeledImage, Split, NUM_CLASSES};
use crate::error::{PsaError, Result};
use crate::linalg::Vector;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(path, "header"))
}

fn truncated(path: &Path, what: &str) -> PsaError {
    PsaError::io(
        path,
        IoError::new(ErrorKind::UnexpectedEof, format!("truncated IDX {what}")),
    )
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` by `byte / 255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| PsaError::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| PsaError::io(labels_path, e))?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(PsaError::Format(format!(
            "{}: image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(PsaError::Format(format!(
            "{}: label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}",
            labels_path.display()
        )));
    }

    let n_images = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(PsaError::Consistency(format!(
            "{} images but {} labels",
            n_images, n_labels
        )));
    }
    let d = rows * cols;
    if d == 0 || n_images == 0 {
        return Err(PsaError::Consistency("IDX files contain no pixels".into()));
    }
    let pixel_bytes = &images[16..];
    if pixel_bytes.len() < n_images * d {
        return Err(truncated(images_path, "pixel block"));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(truncated(labels_path, "label block"));
    }

    let samples = pixel_bytes
        .chunks_exact(d)
        .take(n_images)
        .zip(label_bytes)
        .enumerate()
        .map(|(i, (px, &label))| {
            if usize::from(label) >= NUM_CLASSES {
                return Err(PsaError::Consistency(format!(
                    "label {label} of sample {i} is outside 0..{NUM_CLASSES}"
                )));
            }
            // Routed through f32 so the dataset cache round-trips bit-exactly.
            let pixels = px
                .iter()
                .map(|&b| f64::from(f32::from(b) / 255.0))
                .collect();
            Ok(LabeledImage {
                pixels: Vector::from_vec_unchecked(pixels),
                label: usize::from(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, split)
}

/// Writes an IDX pair; pixels are quantized as `round(255 * clamp(v, 0, 1))`.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    samples: &[LabeledImage],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + samples.len() * rows * cols);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [samples.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + samples.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for s in samples {
        if s.pixels.len() != rows * cols {
            return Err(PsaError::dim("sample length differs from rows * cols"));
        }
        img.extend(
            s.pixels
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        lab.push(s.label as u8);
    }
    fs::write(images_path, img).map_err(|e| PsaError::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| PsaError::io(labels_path, e))?;
    Ok(())
}
