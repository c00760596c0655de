//! CSV tables for trajectories, diagnostics and basis dumps.
//!
//! Every file is comma-separated with a header row and LF line endings.
//! Lines starting with `#` before the header carry metadata such as the
//! scenario hash.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::coupling::CoupledMatrices;
use crate::diagnostics::EnergyReport;
use crate::error::{Error, Result};
use crate::evolution::{GalerkinState, Trajectory};
use crate::recovery::RecoveryFields;
use crate::spectral::{FluidModeCheck, SolidModeCheck};

/// A numeric table with optional `key=value` metadata lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            metadata: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}").map_err(|e| Error::io(path, e))?;
        }
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let csv_err = |e: csv::Error| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        writer.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|v| format_number(*v)))
                .map_err(csv_err)?;
        }
        writer
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .flush()
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format_err = |line: usize, message: String| Error::Format {
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut metadata = Vec::new();
        let mut body_start = 0;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            body_start += 1;
            if let Some((k, v)) = rest.trim().split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let body: String = text
            .lines()
            .skip(body_start)
            .flat_map(|l| [l, "\n"])
            .collect();
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| format_err(body_start + 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(format_err(body_start + 1, "missing header row".into()));
        }
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let line = body_start + k + 2;
            let record = record.map_err(|e| format_err(line, e.to_string()))?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| format_err(line, format!("not a number: {field:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table {
            metadata,
            header,
            rows,
        })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:e}")
}

pub const HASH_KEY: &str = "scenario_sha256";

pub fn trajectory_table(traj: &Trajectory, hash: &str) -> Table {
    let m = traj.lambda_f.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("alpha_{j}")));
    header.extend((1..=m).map(|j| format!("beta_{j}")));
    let mut table = Table {
        metadata: vec![(HASH_KEY.to_string(), hash.to_string())],
        header,
        rows: Vec::new(),
    };
    for s in &traj.states {
        let mut row = vec![s.t];
        row.extend(s.alpha.iter());
        row.extend(s.beta.iter());
        table.push(row);
    }
    table
}

/// States stored in a trajectory table.
pub fn states_from_table(table: &Table, path: &str) -> Result<Vec<GalerkinState>> {
    let cols = table.header.len();
    if cols < 3 || cols % 2 == 0 || table.header[0] != "t" {
        return Err(Error::Format {
            path: path.to_string(),
            message: "expected columns t, alpha_1..alpha_m, beta_1..beta_m".into(),
        });
    }
    let m = (cols - 1) / 2;
    Ok(table
        .rows
        .iter()
        .map(|row| GalerkinState {
            t: row[0],
            alpha: DVector::from_column_slice(&row[1..=m]),
            beta: DVector::from_column_slice(&row[m + 1..]),
        })
        .collect())
}

pub fn energy_table(reports: &[EnergyReport]) -> Table {
    let mut table = Table::new(&[
        "t",
        "kinetic",
        "solid_excess",
        "elastic",
        "total",
        "dissipation",
        "balance_excess",
    ]);
    for r in reports {
        table.push(vec![
            r.t,
            r.kinetic,
            r.solid_excess,
            r.elastic,
            r.total,
            r.dissipation,
            r.balance_excess(),
        ]);
    }
    table
}

pub fn recovery_table(recs: &[RecoveryFields]) -> Table {
    let mut table = Table::new(&[
        "t",
        "multiplier_h1_norm",
        "pressure_l2_norm",
        "pressure_mean",
        "split_residual",
        "divergence_free_residual",
        "pressure_dual_residual",
        "beta_h",
    ]);
    for r in recs {
        table.push(vec![
            r.t,
            r.multiplier_norm,
            r.pressure_norm,
            r.pressure_mean,
            r.split_residual,
            r.divergence_free_residual,
            r.pressure_dual_residual,
            r.beta_h,
        ]);
    }
    table
}

pub fn fluid_eigen_table(checks: &[FluidModeCheck]) -> Table {
    let mut table = Table::new(&[
        "index",
        "eigenvalue",
        "l2_norm_error",
        "a_norm_error",
        "divergence",
        "residual",
    ]);
    for c in checks {
        table.push(vec![
            c.index as f64,
            c.eigenvalue,
            c.l2_error,
            c.a_error,
            c.divergence,
            c.residual,
        ]);
    }
    table
}

pub fn solid_eigen_table(checks: &[SolidModeCheck]) -> Table {
    let mut table = Table::new(&[
        "index",
        "eigenvalue",
        "c_norm_error",
        "l2_norm_error",
        "c_r",
        "d_r",
        "residual",
    ]);
    for c in checks {
        table.push(vec![
            c.index as f64,
            c.eigenvalue,
            c.c_error,
            c.l2_error,
            c.c_r,
            c.d_r,
            c.residual,
        ]);
    }
    table
}

/// Long format: one row per matrix entry, `matrix` coded 0..3 for B, C, D, E.
pub fn matrices_table(mats: &[CoupledMatrices]) -> Table {
    let mut table = Table::new(&["t", "matrix", "i", "j", "value"])
        .with_meta("matrix_codes", "0:B 1:C 2:D 3:E");
    for m in mats {
        for (code, a) in [&m.b, &m.c, &m.d, &m.e].into_iter().enumerate() {
            for j in 0..a.ncols() {
                for i in 0..a.nrows() {
                    table.push(vec![
                        m.t,
                        code as f64,
                        (i + 1) as f64,
                        (j + 1) as f64,
                        a[(i, j)],
                    ]);
                }
            }
        }
    }
    table
}

/// Long-format `series,t,value` rows from tables whose first column is `t`.
pub fn plot_series(tables: &[&Table]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for table in tables {
        for (k, name) in table.header.iter().enumerate().skip(1) {
            for row in &table.rows {
                out.push((name.clone(), row[0], row[k]));
            }
        }
    }
    out
}

pub fn write_plotdata(path: impl AsRef<Path>, series: &[(String, f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    writer
        .write_record(["series", "t", "value"])
        .map_err(csv_err)?;
    for (name, t, v) in series {
        writer
            .write_record([name.as_str(), &format_number(*t), &format_number(*v)])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
