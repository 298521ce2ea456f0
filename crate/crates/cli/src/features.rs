//! Feature tables and corpus-wide extraction.

use std::path::Path;

use rayon::prelude::*;
use viscomp_core::baselines::{canny_edge_density, patch_symmetry, CannyParams};
use viscomp_core::{colorfulness, load_image, msg_score, msg_score_grayscale, muc_score, BitPrecision, RgbImage, ScaleSchedule};

use crate::manifest::DatasetManifest;
use crate::CliError;

/// One row per image: `image_id` followed by numeric columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, image_id: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.image_id == image_id)
    }

    /// Serializes with the shortest decimal form that parses back to the
    /// same `f64`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("image_id").chain(self.columns.iter().map(String::as_str)).collect();
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.image_id.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CliError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| CliError::Validation(e.to_string()))?.clone();
        if headers.get(0) != Some("image_id") {
            return Err(CliError::Validation("first column must be image_id".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Validation(e.to_string()))?;
            let line = i + 2;
            let values = rec
                .iter()
                .skip(1)
                .zip(&columns)
                .map(|(cell, col)| match cell.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::Validation(format!("row {line}: {col} = {cell:?} is not a finite number"))),
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(FeatureRow {
                image_id: rec[0].to_string(),
                values,
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOptions {
    pub canny: CannyParams,
    pub patch: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            patch: 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtractOptions {
    pub bits: Vec<BitPrecision>,
    pub schedule: ScaleSchedule,
    pub baselines: Option<BaselineOptions>,
    pub jobs: usize,
    pub skip_bad: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            bits: vec![BitPrecision::default()],
            schedule: ScaleSchedule::default(),
            baselines: None,
            jobs: 1,
            skip_bad: false,
        }
    }
}

impl ExtractOptions {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["msg".to_string(), "msg_gray".to_string()];
        cols.extend(self.bits.iter().map(|b| format!("muc_b{}", b.bits())));
        cols.extend(self.bits.iter().map(|b| format!("colorfulness_b{}", b.bits())));
        if self.baselines.is_some() {
            cols.push("edge_density".into());
            cols.push("patch_symmetry".into());
        }
        cols
    }

    /// All features of one image, in [`ExtractOptions::columns`] order.
    pub fn features(&self, img: &RgbImage) -> Result<Vec<f64>, CliError> {
        let mut v = vec![msg_score(img, &self.schedule).value(), msg_score_grayscale(img, &self.schedule).value()];
        v.extend(self.bits.iter().map(|&b| muc_score(img, b, &self.schedule).value()));
        v.extend(self.bits.iter().map(|&b| colorfulness(img, b).value()));
        if let Some(bl) = &self.baselines {
            let edges = canny_edge_density(img, &bl.canny).map_err(|e| CliError::Validation(e.to_string()))?;
            let sym = patch_symmetry(img, bl.patch).map_err(|e| CliError::Validation(e.to_string()))?;
            v.push(edges.0);
            v.push(sym.0);
        }
        Ok(v)
    }
}

/// Images that could not be read, with the reason.
pub type Failures = Vec<(String, String)>;

/// Extracts features for every manifest row on `opts.jobs` threads. Rows
/// keep manifest order, and the result does not depend on the thread count.
pub fn extract(manifest: &DatasetManifest, opts: &ExtractOptions) -> Result<(FeatureTable, Failures), CliError> {
    if opts.bits.is_empty() {
        return Err(CliError::Validation("at least one bit precision is required".into()));
    }
    if let Some(bl) = &opts.baselines {
        bl.canny.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if bl.patch < 2 {
            return Err(CliError::Validation(format!("patch size {} is below 2", bl.patch)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<f64>, String>> = pool.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let img = load_image(manifest.resolve(row)).map_err(|e| e.to_string())?;
                opts.features(&img).map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (row, res) in manifest.rows.iter().zip(results) {
        match res {
            Ok(values) => rows.push(FeatureRow {
                image_id: row.image_id.clone(),
                values,
            }),
            Err(e) => failures.push((row.image_id.clone(), e)),
        }
    }
    if !failures.is_empty() && !opts.skip_bad {
        let list: Vec<String> = failures.iter().map(|(id, e)| format!("{id}: {e}")).collect();
        return Err(CliError::Runtime(format!(
            "{} image(s) failed (use --skip-bad to continue):\n  {}",
            failures.len(),
            list.join("\n  ")
        )));
    }
    Ok((
        FeatureTable {
            columns: opts.columns(),
            rows,
        },
        failures,
    ))
}
