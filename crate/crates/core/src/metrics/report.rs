use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{write_ppm, Palette};
use crate::error::{Error, Result};
use crate::metrics::{overall_metrics, per_class_metrics, ConfusionMatrix};

/// Side length in pixels of one cell of `confusion.ppm`.
pub const HEAT_MAP_CELL: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

/// The contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub mean_f1: f64,
    pub miou: f64,
    pub per_class: Vec<ClassReport>,
}

impl MetricsReport {
    pub fn from_matrix(cm: &ConfusionMatrix, names: &[String]) -> Result<Self> {
        if names.len() != cm.num_classes() {
            return Err(Error::Usage(format!("{} class names for a {}-class matrix", names.len(), cm.num_classes())));
        }
        let o = overall_metrics(cm)?;
        let p = per_class_metrics(cm)?;
        let per_class = names
            .iter()
            .enumerate()
            .map(|(c, name)| ClassReport {
                class: c + 1,
                name: name.clone(),
                support: cm.row_sum(c),
                precision: p.precision[c],
                recall: p.recall[c],
                f1: p.f1[c],
                iou: p.iou[c],
            })
            .collect();
        Ok(MetricsReport { oa: o.oa, aa: o.aa, kappa: o.kappa, mean_f1: p.mean_f1, miou: p.miou, per_class })
    }
}

impl ConfusionMatrix {
    /// Header of class names, then one row of counts per true class.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        w.write_record(names).map_err(csv_err)?;
        for t in 0..self.num_classes() {
            w.write_record((0..self.num_classes()).map(|p| self.get(t, p).to_string())).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Parses the `to_csv` layout back into class names and counts.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, ConfusionMatrix)> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let csv_err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        let names: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut counts = Vec::with_capacity(names.len() * names.len());
        let mut rows = 0;
        for record in r.records() {
            for field in record.map_err(csv_err)?.iter() {
                counts.push(field.trim().parse::<u64>().map_err(|_| Error::Parse(format!("csv: bad count {field:?}")))?);
            }
            rows += 1;
        }
        if rows != names.len() {
            return Err(Error::Parse(format!("csv: {} classes but {rows} rows", names.len())));
        }
        Ok((names.clone(), ConfusionMatrix::from_counts(names.len(), counts)?))
    }
}

/// Grey-level row-normalised heat map: each non-empty row's largest count
/// maps to 255. One `HEAT_MAP_CELL`-pixel square per matrix entry.
pub fn heat_map(cm: &ConfusionMatrix) -> (usize, Vec<u8>) {
    let k = cm.num_classes();
    let side = k * HEAT_MAP_CELL;
    let mut rgb = vec![0u8; side * side * 3];
    for t in 0..k {
        let max = (0..k).map(|p| cm.get(t, p)).max().unwrap_or(0);
        for p in 0..k {
            let v = if max == 0 { 0 } else { (255.0 * cm.get(t, p) as f64 / max as f64).round() as u8 };
            for y in t * HEAT_MAP_CELL..(t + 1) * HEAT_MAP_CELL {
                let row = y * side * 3;
                rgb[row + p * HEAT_MAP_CELL * 3..row + (p + 1) * HEAT_MAP_CELL * 3].fill(v);
            }
        }
    }
    (side, rgb)
}

/// Writes `confusion.csv`, `metrics.json`, `confusion.ppm` and, when a
/// predicted map is given, `classmap.ppm`.
pub fn emit_reports(
    cm: &ConfusionMatrix,
    report: &MetricsReport,
    names: &[String],
    classmap: Option<(&[i32], usize, usize, &Palette)>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let csv_path = out_dir.join("confusion.csv");
    fs::write(&csv_path, cm.to_csv(names)?).map_err(|e| Error::io(&csv_path, e))?;
    files.push(csv_path);
    let json_path = out_dir.join("metrics.json");
    fs::write(&json_path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    files.push(json_path);
    let heat_path = out_dir.join("confusion.ppm");
    let (side, rgb) = heat_map(cm);
    write_ppm(&heat_path, side, side, &rgb)?;
    files.push(heat_path);
    if let Some((labels, h, w, palette)) = classmap {
        let map_path = out_dir.join("classmap.ppm");
        write_ppm(&map_path, w, h, &palette.render(labels))?;
        files.push(map_path);
    }
    Ok(files)
}
