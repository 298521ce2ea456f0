//! Dataset manifests: one CSV row per image with optional ratings and
//! precomputed segmentation counts.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub image_path: String,
    #[serde(default)]
    pub complexity: Option<f64>,
    #[serde(default)]
    pub num_seg: Option<u64>,
    #[serde(default)]
    pub num_class: Option<u64>,
    #[serde(default)]
    pub surprise: Option<f64>,
}

impl ManifestRow {
    pub fn new(image_id: impl Into<String>, image_path: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            image_path: image_path.into(),
            complexity: None,
            num_seg: None,
            num_class: None,
            surprise: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative image paths are resolved against.
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// Manifest columns that can feed a model or a target.
pub const OPTIONAL_COLUMNS: [&str; 4] = ["complexity", "num_seg", "num_class", "surprise"];

impl DatasetManifest {
    pub fn new(dir: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self, CliError> {
        let m = Self { dir: dir.into(), rows };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| read_error(path, e))?;
        let mut rows = Vec::new();
        for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
            // Header is line 1.
            rows.push(row.map_err(|e| CliError::Validation(format!("{}: row {}: {e}", path.display(), i + 2)))?);
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(dir, rows).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CliError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if row.image_id.is_empty() {
                return Err(CliError::Validation("empty image_id".into()));
            }
            if !seen.insert(row.image_id.as_str()) {
                return Err(CliError::Validation(format!("duplicate image_id {}", row.image_id)));
            }
            for (name, v) in [("complexity", row.complexity), ("surprise", row.surprise)] {
                if v.is_some_and(|v| !v.is_finite()) {
                    return Err(CliError::Validation(format!("{}: {name} is not finite", row.image_id)));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.image_id.clone()).collect()
    }

    /// Values of an optional column, failing if any row lacks one.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let get = |r: &ManifestRow| match name {
            "complexity" => r.complexity,
            "surprise" => r.surprise,
            "num_seg" => r.num_seg.map(|v| v as f64),
            "num_class" => r.num_class.map(|v| v as f64),
            _ => None,
        };
        if !OPTIONAL_COLUMNS.contains(&name) {
            return Err(CliError::Validation(format!("manifest has no column {name}")));
        }
        let missing: Vec<&str> = self.rows.iter().filter(|r| get(r).is_none()).map(|r| r.image_id.as_str()).collect();
        if !missing.is_empty() {
            let shown = missing.iter().take(5).copied().collect::<Vec<_>>().join(", ");
            let more = if missing.len() > 5 { format!(" and {} more", missing.len() - 5) } else { String::new() };
            return Err(CliError::Validation(format!("column {name} is empty for {shown}{more}")));
        }
        Ok(self.rows.iter().map(|r| get(r).expect("checked above")).collect())
    }
}

fn read_error(path: &Path, e: csv::Error) -> CliError {
    if let csv::ErrorKind::Io(io) = e.kind() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return CliError::Validation(format!("{}: not found", path.display()));
        }
    }
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// Reads one numeric column from any CSV file with a header row.
pub fn read_numeric_column(path: impl AsRef<Path>, column: &str) -> Result<Vec<f64>, CliError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| read_error(path, e))?;
    let headers = reader.headers().map_err(|e| read_error(path, e))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Validation(format!("{}: no column {column}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| read_error(path, e))?;
        let cell = rec.get(idx).unwrap_or("");
        let v: f64 = cell.trim().parse().map_err(|_| {
            CliError::Validation(format!("{}: row {}: {column} = {cell:?} is not a number", path.display(), i + 2))
        })?;
        if !v.is_finite() {
            return Err(CliError::Validation(format!("{}: row {}: {column} is not finite", path.display(), i + 2)));
        }
        out.push(v);
    }
    Ok(out)
}
