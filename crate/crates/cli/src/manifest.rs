//! Expected image counts of the standard benchmark and training sets.

use std::path::Path;

pub const EXPECTED_COUNTS: [(&str, usize); 6] = [
    ("Set5", 5),
    ("Set14", 14),
    ("B100", 100),
    ("BSDS100", 100),
    ("Urban100", 100),
    ("DIV2K", 800),
];

pub fn expected_count(dataset: &str) -> Option<usize> {
    EXPECTED_COUNTS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(dataset))
        .map(|&(_, n)| n)
}

/// Dataset name from a directory path (its last component).
pub fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Compares the PNG count in `dir` with the manifest; logs and returns a
/// message when a known dataset is incomplete.
pub fn verify(dir: &Path, found: usize) -> Option<String> {
    let name = dataset_name(dir);
    let expected = expected_count(&name)?;
    if found == expected {
        return None;
    }
    let msg = format!("{name}: found {found} images, the standard set has {expected}");
    log::warn!("{msg}");
    Some(msg)
}
