use std::path::{Path, PathBuf};

use dasr_core::resample::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Failure;

/// One scored unit: a whole image (`bicubic` mode) or one patch (patch modes,
/// `file` is then `name:r{row}c{col}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub file: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub pb_patch_fraction: f64,
}

impl ReportRow {
    pub fn mean(rows: &[ReportRow]) -> ReportRow {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        ReportRow {
            file: "mean".into(),
            psnr_db: avg(|r| r.psnr_db),
            ssim: avg(|r| r.ssim),
            pb_patch_fraction: avg(|r| r.pb_patch_fraction),
        }
    }
}

/// Patches on one side of the bicubic-PSNR threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSide {
    pub count: usize,
    /// Mean PSNR of the evaluated mode; absent when the side is empty.
    pub psnr_db: Option<f64>,
    pub pb_psnr_db: Option<f64>,
    /// Also absent when no complex branch was run.
    pub cb_psnr_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub threshold_db: f64,
    /// Patches whose bicubic PSNR exceeds the threshold.
    pub easy: SplitSide,
    pub hard: SplitSide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    pub scale: usize,
    pub mode: String,
    /// `whole-image` or `patch`.
    pub protocol: String,
    pub shave: usize,
    pub images: usize,
    pub rows: Vec<ReportRow>,
    pub mean: ReportRow,
    pub split: Option<SplitReport>,
    pub seconds_per_frame: f64,
    pub kernel: KernelSpec,
    pub config: RunConfig,
}

impl BenchmarkReport {
    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> BenchmarkReport {
        BenchmarkReport {
            seconds_per_frame: 0.0,
            ..self.clone()
        }
    }

    pub fn file_stem(&self) -> String {
        format!("{}_x{}_{}", self.dataset, self.scale, self.mode)
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), Failure> {
        create_dir(dir)?;
        let json = dir.join(format!("{}.json", self.file_stem()));
        write_json(&json, self)?;
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        let mut w = csv::Writer::from_path(&csv).map_err(|e| Failure::io(&csv, e))?;
        for row in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.serialize(row).map_err(|e| Failure::io(&csv, e))?;
        }
        w.flush().map_err(|e| Failure::io(&csv, e))?;
        Ok((json, csv))
    }
}

/// Reads the rows of a report CSV; the last row is the mean.
pub fn read_csv_rows(path: &Path) -> Result<Vec<ReportRow>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Failure::io(path, e)))
        .collect()
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

pub(crate) fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| Failure::io(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_row_is_arithmetic_mean() {
        let rows: Vec<ReportRow> = (0..7)
            .map(|i| ReportRow {
                file: i.to_string(),
                psnr_db: 20.0 + i as f64 * 1.3,
                ssim: 0.5 + i as f64 * 0.01,
                pb_patch_fraction: (i % 2) as f64,
            })
            .collect();
        let m = ReportRow::mean(&rows);
        assert!((m.psnr_db - 23.9).abs() < 1e-9);
        assert!((m.ssim - 0.53).abs() < 1e-9);
        assert!((m.pb_patch_fraction - 3.0 / 7.0).abs() < 1e-9);
    }
}
