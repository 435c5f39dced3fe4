//! CSV manifests: `image_path,score_total,score_left,score_right,score_kind`.
//! Image paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{check_scores, CxrSample, ScoreKind, LUNG_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::image::png;

pub const MANIFEST_HEADER: [&str; 5] = [
    "image_path",
    "score_total",
    "score_left",
    "score_right",
    "score_kind",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_path: String,
    pub score_total: f64,
    pub score_left: Option<f64>,
    pub score_right: Option<f64>,
    pub score_kind: ScoreKind,
}

/// Parse and validate a manifest without decoding images. Row numbers in
/// errors count data rows from 1.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| Error::ingest(None, format!("{}: {e}", path.display())))?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::ingest(
            None,
            format!(
                "{}: header must be `{}`",
                path.display(),
                MANIFEST_HEADER.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = rec.map_err(|e| Error::ingest(Some(row_no), e.to_string()))?;
        if row.score_left.is_some() != row.score_right.is_some() {
            return Err(Error::ingest(
                Some(row_no),
                "per-lung scores must be given together",
            ));
        }
        check_scores(
            row.score_total,
            row.score_left,
            row.score_right,
            row.score_kind,
            LUNG_SUM_TOLERANCE,
        )
        .map_err(|m| Error::ingest(Some(row_no), m))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    for row in rows {
        w.serialize(row).map_err(io_err)?;
    }
    if rows.is_empty() {
        w.write_record(MANIFEST_HEADER).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Read a manifest and decode every image it references.
pub fn load_manifest(path: &Path) -> Result<Vec<CxrSample>> {
    let base = base_dir(path);
    read_manifest(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let img_path = base.join(&row.image_path);
            if !img_path.is_file() {
                return Err(Error::ingest(
                    Some(i + 1),
                    format!("image {} not found", img_path.display()),
                ));
            }
            let image = png::read(&img_path).map_err(|e| Error::ingest(Some(i + 1), e.to_string()))?;
            Ok(CxrSample {
                image,
                score_total: row.score_total,
                score_left: row.score_left,
                score_right: row.score_right,
                kind: row.score_kind,
                source_id: row.image_path,
            })
        })
        .collect()
}

/// Write each sample as `images/<stem>.png` under `dir` plus a manifest named
/// `manifest_name`. Returns the manifest rows.
pub fn save_samples(dir: &Path, manifest_name: &str, samples: &[CxrSample]) -> Result<Vec<ManifestRow>> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rel = format!("images/{}", file_stem(i, &s.source_id));
            png::write(&dir.join(&rel), &s.image)?;
            Ok(ManifestRow {
                image_path: rel,
                score_total: s.score_total,
                score_left: s.score_left,
                score_right: s.score_right,
                score_kind: s.kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&dir.join(manifest_name), &rows)?;
    Ok(rows)
}

fn file_stem(index: usize, source_id: &str) -> String {
    let clean: String = Path::new(source_id)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sample")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(48)
        .collect();
    format!("{index:05}_{clean}.png")
}
