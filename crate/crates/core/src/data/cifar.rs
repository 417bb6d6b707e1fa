//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32×32).

use std::path::PathBuf;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 32 * 32;

/// Loads and concatenates batch files, pixels scaled to `[0, 1]`.
pub fn load_cifar10_bin(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Format {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % RECORD) as u64,
                msg: format!("size {} is not a multiple of the {RECORD}-byte record", bytes.len()),
            });
        }
        for (r, rec) in bytes.chunks(RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (r * RECORD) as u64,
                    msg: format!("label byte {} out of range", rec[0]),
                });
            }
            y.push(usize::from(rec[0]));
            x.extend(rec[1..].iter().map(|&p| f32::from(p) / 255.0));
        }
    }
    if y.is_empty() {
        return Err(Error::Input("no CIFAR batch files given".into()));
    }
    let n = y.len();
    Dataset::new(Tensor::new(&[n, 3, 32, 32], x)?, y, split, 10)
}

/// Per-channel mean and standard deviation of an image dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn of(data: &Dataset) -> Self {
        let c = data.example_shape()[0];
        let plane: usize = data.example_shape()[1..].iter().product();
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for img in data.inputs.data().chunks(c * plane) {
            for ch in 0..c {
                for &v in &img[ch * plane..(ch + 1) * plane] {
                    sum[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (data.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / count - m * m).max(1e-12).sqrt())
            .collect();
        ChannelStats { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let c = self.mean.len();
        let plane: usize = data.example_shape()[1..].iter().product();
        for img in data.inputs.data_mut().chunks_mut(c * plane) {
            for ch in 0..c {
                let (m, s) = (self.mean[ch], self.std[ch]);
                for v in &mut img[ch * plane..(ch + 1) * plane] {
                    *v = ((f64::from(*v) - m) / s) as f32;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const PLANE: usize = 32 * 32;

    fn records(n: usize) -> Vec<u8> {
        let mut v = Vec::new();
        for r in 0..n {
            v.push((r % 10) as u8);
            for p in 0..3 * PLANE {
                v.push(((p * 7 + r * 13) % 256) as u8);
            }
        }
        v
    }

    #[test]
    fn parses_planar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        std::fs::File::create(&p).unwrap().write_all(&records(5)).unwrap();
        let d = load_cifar10_bin(&[p], Split::Train).unwrap();
        assert_eq!(d.inputs.shape(), &[5, 3, 32, 32]);
        assert_eq!(d.labels, vec![0, 1, 2, 3, 4]);
        // record 1, green plane first pixel = byte 1 + 1024 of that record
        let want = ((1024 * 7 + 13) % 256) as f32 / 255.0;
        assert_eq!(d.inputs.data()[3 * PLANE + PLANE], want);
    }

    #[test]
    fn record_size_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        let mut bytes = records(2);
        bytes.pop();
        std::fs::File::create(&p).unwrap().write_all(&bytes).unwrap();
        match load_cifar10_bin(&[p], Split::Train) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, RECORD),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalized_channel_means_vanish() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        std::fs::File::create(&p).unwrap().write_all(&records(20)).unwrap();
        let mut d = load_cifar10_bin(&[p], Split::Train).unwrap();
        let stats = ChannelStats::of(&d);
        stats.apply(&mut d);
        let after = ChannelStats::of(&d);
        for (m, s) in after.mean.iter().zip(&after.std) {
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((s - 1.0).abs() < 1e-4, "std {s}");
        }
    }
}
