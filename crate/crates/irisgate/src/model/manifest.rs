//! Dataset manifest: CSV with one row per capture, paths relative to the
//! manifest directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{
    read_masks, read_pgm, validate_labels, CaptureRecord, DilationState, EyeSide, LidState,
};

pub const MANIFEST_HEADER: [&str; 7] = [
    "capture_id",
    "identity_id",
    "eye_side",
    "lid_state",
    "dilation_state",
    "image_path",
    "mask_path",
];

/// One manifest row: labels plus resolved file paths. Image and mask data
/// load lazily via [`ManifestEntry::load_record`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub capture_id: String,
    pub identity_id: String,
    pub eye_side: EyeSide,
    pub lid_state: LidState,
    pub dilation_state: DilationState,
    /// Path as written in the manifest, relative to the manifest directory.
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    /// Directory the manifest was loaded from; joined with the relative
    /// paths when loading pixel data.
    pub base_dir: PathBuf,
}

impl ManifestEntry {
    pub fn image_file(&self) -> PathBuf {
        self.base_dir.join(&self.image_path)
    }

    pub fn mask_file(&self) -> PathBuf {
        self.base_dir.join(&self.mask_path)
    }

    pub fn load_record(&self) -> Result<CaptureRecord> {
        Ok(CaptureRecord {
            capture_id: self.capture_id.clone(),
            identity_id: self.identity_id.clone(),
            eye_side: self.eye_side,
            lid_state: self.lid_state,
            dilation_state: self.dilation_state,
            image: read_pgm(&self.image_file())?,
            masks: read_masks(&self.mask_file())?,
            metrics: None,
        })
    }
}

/// Load a manifest, checking labels and capture-id uniqueness. Images and
/// masks are not touched.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;

    let headers = reader.headers()?.clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::format(
            path,
            format!(
                "manifest header must be `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut seen: HashSet<String> = HashSet::new();
    let mut entries = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let rownum = idx + 2; // 1-based, counting the header line
        let row = row?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::ManifestRow {
                row: rownum,
                message: format!("expected {} fields, got {}", MANIFEST_HEADER.len(), row.len()),
            });
        }
        let defects = validate_labels(&row[2], &row[3], &row[4]);
        if let Some(defect) = defects.first() {
            return Err(Error::ManifestRow {
                row: rownum,
                message: defect.to_string(),
            });
        }
        let capture_id = row[0].to_string();
        if !seen.insert(capture_id.clone()) {
            return Err(Error::DuplicateCaptureId(capture_id));
        }
        entries.push(ManifestEntry {
            capture_id,
            identity_id: row[1].to_string(),
            eye_side: EyeSide::from_str(&row[2])?,
            lid_state: LidState::from_str(&row[3])?,
            dilation_state: DilationState::from_str(&row[4])?,
            image_path: PathBuf::from(&row[5]),
            mask_path: PathBuf::from(&row[6]),
            base_dir: base_dir.clone(),
        });
    }
    Ok(entries)
}

/// Write a manifest. Paths are written as stored in each entry (relative to
/// the manifest directory).
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    writer.write_record(MANIFEST_HEADER)?;
    for e in entries {
        writer.write_record([
            e.capture_id.as_str(),
            e.identity_id.as_str(),
            e.eye_side.as_str(),
            e.lid_state.as_str(),
            e.dilation_state.as_str(),
            &e.image_path.to_string_lossy(),
            &e.mask_path.to_string_lossy(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
