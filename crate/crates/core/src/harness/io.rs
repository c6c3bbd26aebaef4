//! CSV tables written by the harness and read back by the plotter.
//!
//! | file | columns |
//! |---|---|
//! | `metrics.csv` | run_id, step, rrmse, ssim, total_variance |
//! | `trajectory.csv` | step, range, depth, pitch, steering |
//! | `belief.csv` | step, theta_0 … theta_n, var_0 … var_n |
//! | `measurements.csv` | time_index, range, depth, ctd, tl |
//! | `planner.csv` | step, best_cost, straight_cost, evaluations, reseeded, outside_queries, jacobian_flags |
//! | `field_true.csv`, `field_est.csv` | range, depth, speed |
//! | `tl_field.csv` | range, depth, tl |
//! | `summary.csv` | step, mean_rrmse, mean_ssim, mean_total_variance, runs |
//!
//! Angles are radians. Absent channels are empty cells. Floats use Rust's
//! shortest round-trip formatting, so identical inputs give identical bytes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::episode::RunRecord;
use crate::error::{Error, Result};
use crate::field::SspField;
use crate::metrics::FieldRaster;
use crate::propagation::{tl_field, RayFanModel};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a RunRecord>,
{
    let mut w = writer(path)?;
    w.write_record(["run_id", "step", "rrmse", "ssim", "total_variance"])?;
    for rec in records {
        for s in &rec.steps {
            w.write_record([
                rec.run_id.to_string(),
                s.step.to_string(),
                s.rrmse.to_string(),
                s.ssim.to_string(),
                s.total_variance.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "range", "depth", "pitch", "steering"])?;
    for s in &rec.steps {
        let p = s.state.point();
        w.write_record([
            s.step.to_string(),
            p.range.to_string(),
            p.depth.to_string(),
            s.state.pitch.to_string(),
            s.steering.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_belief(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    let n = rec.true_theta.len();
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((0..n).map(|i| format!("theta_{i}")))
        .chain((0..n).map(|i| format!("var_{i}")))
        .collect();
    w.write_record(&header)?;
    for s in &rec.steps {
        let row: Vec<String> = std::iter::once(s.step.to_string())
            .chain(s.mean.iter().map(f64::to_string))
            .chain(s.variances.iter().map(f64::to_string))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measurements(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["time_index", "range", "depth", "ctd", "tl"])?;
    for m in rec.steps.iter().filter_map(|s| s.measurement.as_ref()) {
        w.write_record([
            m.time_index.to_string(),
            m.position.range.to_string(),
            m.position.depth.to_string(),
            opt(m.ctd),
            opt(m.tl),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_planner(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "step",
        "best_cost",
        "straight_cost",
        "evaluations",
        "reseeded",
        "outside_queries",
        "jacobian_flags",
    ])?;
    for s in &rec.steps {
        if let Some(p) = &s.plan {
            w.write_record([
                s.step.to_string(),
                p.best_cost.to_string(),
                p.straight_cost.to_string(),
                p.evaluations.to_string(),
                (p.reseeded as u8).to_string(),
                p.outside_queries.to_string(),
                p.jacobian_flags.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raster as long-format rows at the cell midpoints.
pub fn write_raster(path: &Path, raster: &FieldRaster, value: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["range", "depth", value])?;
    let (rows, cols) = raster.shape();
    for i in 0..rows {
        for j in 0..cols {
            w.write_record([
                ((j as f64 + 0.5) * raster.cell_range).to_string(),
                ((i as f64 + 0.5) * raster.cell_depth).to_string(),
                raster.values[(i, j)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Transmission loss over the region, one row per receiver.
pub fn write_tl_field(
    path: &Path,
    model: &RayFanModel,
    field: &SspField,
    range_samples: usize,
    depth_samples: usize,
) -> Result<()> {
    let tl = tl_field(&model.env, field, &model.cfg, range_samples, depth_samples)?;
    let mut w = writer(path)?;
    w.write_record(["range", "depth", "tl"])?;
    for (p, v) in tl {
        w.write_record([p.range.to_string(), p.depth.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A CSV table held as text, with typed column access.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Table {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_reader(file, path)
    }

    /// Parses CSV with a header row. `path` only labels errors.
    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let table_err = |message: String| Error::Table {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| table_err(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.iter().all(String::is_empty) {
            return Err(table_err("empty table".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| table_err(e.to_string()))?;
            rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        if rows.is_empty() {
            return Err(table_err("empty table".into()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    /// Numeric column; empty cells are rejected.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row[j].parse::<f64>().map_err(|_| Error::Table {
                    path: self.path.clone(),
                    message: format!("row {}: column `{name}` holds `{}`, not a number", i + 1, row[j]),
                })
            })
            .collect()
    }

    /// Numeric column where empty cells read as `None`.
    pub fn optional_column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row[j].is_empty() {
                    return Ok(None);
                }
                row[j].parse::<f64>().map(Some).map_err(|_| Error::Table {
                    path: self.path.clone(),
                    message: format!("row {}: column `{name}` holds `{}`, not a number", i + 1, row[j]),
                })
            })
            .collect()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_named_columns() {
        let t = Table::from_reader("a,b\n1,2\n3,\n".as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.optional_column("b").unwrap(), vec![Some(2.0), None]);
        assert_eq!(t.column("a").unwrap(), vec![1.0, 3.0]);
        assert!(t.column("b").is_err());
    }

    #[test]
    fn missing_column_names_the_column_and_file() {
        let t = Table::from_reader("a\n1\n".as_bytes(), Path::new("x/metrics.csv")).unwrap();
        let msg = t.column("ssim").unwrap_err().to_string();
        assert!(msg.contains("ssim") && msg.contains("metrics.csv"), "{msg}");
    }

    #[test]
    fn empty_table_names_the_file() {
        for text in ["", "a,b\n"] {
            let msg = Table::from_reader(text.as_bytes(), Path::new("empty.csv"))
                .unwrap_err()
                .to_string();
            assert!(msg.contains("empty.csv"), "{msg}");
        }
    }

    #[test]
    fn ragged_rows_are_errors() {
        assert!(Table::from_reader("a,b\n1\n".as_bytes(), Path::new("r.csv")).is_err());
    }
}
