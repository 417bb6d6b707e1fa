//! `metrics.csv`: one row per epoch or evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dsc_core::prune::EpochRecord;
use dsc_core::{Error, Result};

pub fn header(spaces: &[String]) -> String {
    let mut h = String::from("epoch,phase,lr,train_loss,val_error,test_error");
    for s in spaces {
        h.push_str(",support_");
        h.push_str(s);
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Row for a training or pruning epoch; spaces the record does not know are
/// left blank.
pub fn epoch_row(rec: &EpochRecord, spaces: &[String]) -> String {
    let mut row = format!(
        "{},{},{},{:.6},{},{}",
        rec.epoch,
        rec.phase,
        rec.lr,
        rec.train_loss,
        opt(rec.val_error),
        opt(rec.test_error)
    );
    for name in spaces {
        row.push(',');
        if let Some((_, n)) = rec.supports.iter().find(|(s, _)| s == name) {
            row.push_str(&n.to_string());
        }
    }
    row
}

/// Row for a stand-alone evaluation.
pub fn eval_row(epoch: usize, val: Option<f64>, test: f64, spaces: &[String]) -> String {
    let mut row = format!("{epoch},eval,,,{},{}", opt(val), opt(Some(test)));
    row.push_str(&",".repeat(spaces.len()));
    row
}

pub struct MetricsFile {
    path: PathBuf,
    file: File,
}

impl MetricsFile {
    /// Starts a fresh file.
    pub fn create(path: &Path, spaces: &[String]) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        writeln!(file, "{}", header(spaces)).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Ok(MetricsFile {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Appends to an existing file whose header matches, or starts one.
    pub fn append(path: &Path, spaces: &[String]) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, spaces);
        }
        let existing = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut first = String::new();
        BufReader::new(existing)
            .read_line(&mut first)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let want = header(spaces);
        if first.trim_end() != want {
            return Err(Error::Config(format!(
                "{} has header `{}`, this config writes `{want}`",
                path.display(),
                first.trim_end()
            )));
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Ok(MetricsFile {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write_row(&mut self, row: &str) -> Result<()> {
        writeln!(self.file, "{row}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::Input(format!("{}: {e}", self.path.display())))
    }
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::Input(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_line_up_with_header() {
        let spaces = vec!["fc".to_string(), "conv".to_string()];
        assert_eq!(
            header(&spaces),
            "epoch,phase,lr,train_loss,val_error,test_error,support_fc,support_conv"
        );
        let rec = EpochRecord {
            epoch: 3,
            phase: "fc".into(),
            lr: 0.01,
            train_loss: 0.25,
            val_error: None,
            test_error: Some(0.125),
            supports: vec![("fc".into(), 17)],
        };
        assert_eq!(epoch_row(&rec, &spaces), "3,fc,0.01,0.250000,,0.125000,17,");
        let e = eval_row(3, Some(0.5), 0.25, &spaces);
        assert_eq!(e, "3,eval,,,0.500000,0.250000,,");
        assert_eq!(e.split(',').count(), header(&spaces).split(',').count());
    }

    #[test]
    fn append_checks_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        MetricsFile::create(&p, &["a".into()])
            .unwrap()
            .write_row("1,x,,,,,5")
            .unwrap();
        MetricsFile::append(&p, &["a".into()])
            .unwrap()
            .write_row("2,x,,,,,4")
            .unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
        assert!(matches!(MetricsFile::append(&p, &["b".into()]), Err(Error::Config(_))));
    }
}
