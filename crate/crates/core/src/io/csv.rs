use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{SweepResult, SweepRow};

pub const CSV_HEADER: &str = "value,rep,seed,survival_total,survival_peak,r_axial_m,r_radial_m,temperature_K,n_alive,converged";

// nine digits after the leading one, so a parse-back is good to 5e-10
fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9e}")
    } else {
        format!("{x}")
    }
}

/// The CSV text of a sweep, one row per (value, repetition).
pub fn sweep_csv_string(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::invalid("cli-io", "cannot write an empty sweep"));
    }
    let mut w = ::csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: ::csv::Error| Error::invalid("cli-io", e.to_string());
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in &result.rows {
        w.write_record([
            num(r.value),
            r.rep.to_string(),
            r.seed.to_string(),
            num(r.survival_total),
            num(r.survival_peak),
            num(r.r_axial),
            num(r.r_radial),
            num(r.temperature),
            r.n_alive.to_string(),
            r.converged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("cli-io", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii"))
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    super::write_file(path, &sweep_csv_string(result)?)
}

/// Read rows back. Failed points come back as rows with NaN values; their
/// error text is not stored in the file.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = super::read_file(path)?;
    let bad = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut rdr = ::csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(bad(1, format!("unexpected header, want {CSV_HEADER}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(line, format!("column {}: {e}", k + 1)));
        let u = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(line, format!("column {}: {e}", k + 1)));
        let converged = rec[9].parse::<bool>().map_err(|e| bad(line, format!("column 10: {e}")))?;
        rows.push(SweepRow {
            value: f(0)?,
            rep: u(1)? as usize,
            seed: u(2)?,
            survival_total: f(3)?,
            survival_peak: f(4)?,
            r_axial: f(5)?,
            r_radial: f(6)?,
            temperature: f(7)?,
            n_alive: u(8)? as usize,
            converged,
            error: None,
        });
    }
    Ok(rows)
}
