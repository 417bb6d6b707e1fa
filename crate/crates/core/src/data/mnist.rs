//! IDX files as published for MNIST: big-endian magic (2051 images, 2049
//! labels), big-endian dimension sizes, then raw unsigned bytes.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "file truncated inside header"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// `(count, rows, cols, pixels)` from an IDX3 image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("bad magic {magic}, expected {IMAGE_MAGIC}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: {need} bytes expected"),
        ));
    }
    Ok((n, rows, cols, bytes[16..need].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("bad magic {magic}, expected {LABEL_MAGIC}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: {} bytes expected", 8 + n),
        ));
    }
    let labels = bytes[8..8 + n].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(format_err(path, 8 + pos, format!("label {} out of range", labels[pos])));
    }
    Ok(labels)
}

/// Images as `N × 1 × rows × cols` scaled to `[0, 1]`.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let y = read_idx_labels(labels)?;
    if y.len() != n {
        return Err(format_err(labels, 4, format!("{} labels for {} images", y.len(), n)));
    }
    let x = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    Dataset::new(
        Tensor::new(&[n, 1, rows, cols], x)?,
        y.into_iter().map(usize::from).collect(),
        split,
        10,
    )
}

/// Splits the official training file into train/val: the last sixth (10K of
/// 60K) becomes validation.
pub fn split_train_val(full: &Dataset) -> (Dataset, Dataset) {
    let n = full.len();
    let cut = n - n / 6;
    (full.slice(0, cut, Split::Train), full.slice(cut, n, Split::Val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(px);
        v
    }

    fn idx_labels(ls: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        v.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        v.extend_from_slice(ls);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = (0..2 * 2 * 3).map(|i| if i == 5 { 255 } else { i as u8 }).collect();
        let img = write(dir.path(), "img", &idx_images(2, 2, 3, &px));
        let lab = write(dir.path(), "lab", &idx_labels(&[7, 0]));
        let d = load_mnist_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(d.inputs.shape(), &[2, 1, 2, 3]);
        assert_eq!(d.inputs.data()[5], 1.0);
        assert_eq!(d.labels, vec![7, 0]);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = idx_images(1, 2, 2, &[0; 4]);
        bytes[3] = 0x01;
        let p = write(dir.path(), "bad", &bytes);
        match read_idx_images(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let short = idx_images(3, 2, 2, &[0; 5]);
        let p = write(dir.path(), "short", &short);
        match read_idx_images(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "hdr", &[0, 0, 8]);
        assert!(matches!(read_idx_images(&p), Err(Error::Format { .. })));
        let p = write(dir.path(), "labels_as_images", &idx_labels(&[1, 2]));
        assert!(matches!(read_idx_images(&p), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let x = Tensor::from_fn(&[12, 1, 1, 1], |i| i as f32);
        let d = Dataset::new(x, (0..12).map(|i| i % 10).collect(), Split::Train, 10).unwrap();
        let (tr, va) = split_train_val(&d);
        assert_eq!(tr.len(), 10);
        assert_eq!(va.len(), 2);
        let mut all: Vec<f32> = tr.inputs.data().to_vec();
        all.extend_from_slice(va.inputs.data());
        assert_eq!(all, d.inputs.data());
        assert_eq!(va.split, Split::Val);
    }
}
