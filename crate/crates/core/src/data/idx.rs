//! Big-endian IDX files (MNIST layout), optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let got = be_u32(bytes, 0, what)?;
    if got != want {
        return Err(Error::Format(format!("{what}: bad magic {got} (expected {want})")));
    }
    Ok(())
}

/// Decodes an image file (magic 2051, dims N x rows x cols) and a label file
/// (magic 2049, N labels). Pixels are scaled to `[0, 1]` by `/255`.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Dataset> {
    check_magic(image_bytes, IMAGE_MAGIC, "image file")?;
    check_magic(label_bytes, LABEL_MAGIC, "label file")?;
    let n = be_u32(image_bytes, 4, "image file")? as usize;
    let rows = be_u32(image_bytes, 8, "image file")? as usize;
    let cols = be_u32(image_bytes, 12, "image file")? as usize;
    let n_labels = be_u32(label_bytes, 4, "label file")? as usize;
    if n != n_labels {
        return Err(Error::Data(format!("count mismatch: {n} images, {n_labels} labels")));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX dimensions {n}x{rows}x{cols}")));
    }
    let pixels = image_bytes
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Format(format!("image file: truncated, expected {} pixel bytes", n * rows * cols)))?;
    let labels = label_bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Format(format!("label file: truncated, expected {n} labels")))?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    let images = Tensor::new(vec![n, 1, rows, cols], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    Dataset::new(images, labels, n_classes, split)
}

pub fn load_idx(image_path: &Path, label_path: &Path, split: Split) -> Result<Dataset> {
    parse_idx(&read_maybe_gz(image_path)?, &read_maybe_gz(label_path)?, split)
}

/// Encodes a single-channel dataset with pixels in `[0, 1]` (rounded to 8 bits).
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = dataset.example_shape();
    if shape[0] != 1 || dataset.normalization.is_some() {
        return Err(Error::Usage("IDX export needs single-channel, unnormalized pixels".into()));
    }
    if dataset.labels.iter().any(|&l| l > 255) {
        return Err(Error::Usage("IDX labels must fit in a byte".into()));
    }
    let mut img = Vec::with_capacity(16 + dataset.images.len());
    for v in [IMAGE_MAGIC, dataset.len() as u32, shape[1] as u32, shape[2] as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.images.values().iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [LABEL_MAGIC, dataset.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    Ok((img, lab))
}

pub fn write_idx(dataset: &Dataset, image_path: &Path, label_path: &Path) -> Result<()> {
    let (img, lab) = encode_idx(dataset)?;
    fs::write(image_path, img)?;
    fs::write(label_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> (Vec<u8>, Vec<u8>) {
        let img = vec![
            0, 0, 8, 3, // magic 2051
            0, 0, 0, 2, // N
            0, 0, 0, 2, // rows
            0, 0, 0, 2, // cols
            0, 255, 51, 102, // image 0
            255, 0, 0, 204, // image 1
        ];
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn hand_built_bytes() {
        let (img, lab) = two_by_two();
        let ds = parse_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.example_shape(), &[1, 2, 2]);
        assert_eq!(ds.image(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.image(1), &[1.0, 0.0, 0.0, 0.8]);
        assert_eq!(ds.labels, vec![7, 3]);
    }

    #[test]
    fn label_file_with_image_magic() {
        let (img, mut lab) = two_by_two();
        lab[3] = 3;
        let err = parse_idx(&img, &lab, Split::Train).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let (mut img, lab) = two_by_two();
        img[7] = 3;
        img.extend_from_slice(&[1, 2, 3, 4]);
        assert!(matches!(parse_idx(&img, &lab, Split::Train), Err(Error::Data(_))));
    }

    #[test]
    fn truncated_pixels() {
        let (mut img, lab) = two_by_two();
        img.pop();
        assert!(matches!(parse_idx(&img, &lab, Split::Train), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&img[..6], &lab, Split::Train), Err(Error::Format(_))));
    }

    #[test]
    fn gzip_files_are_accepted() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = two_by_two();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&img).unwrap();
        fs::write(dir.path().join("i.gz"), enc.finish().unwrap()).unwrap();
        fs::write(dir.path().join("l"), &lab).unwrap();
        let ds = load_idx(&dir.path().join("i.gz"), &dir.path().join("l"), Split::Test).unwrap();
        assert_eq!(ds.image(1), &[1.0, 0.0, 0.0, 0.8]);
    }
}
