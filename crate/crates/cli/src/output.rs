//! Versioned CSV reports and numeric matrix input.
//!
//! Every report starts with a metadata comment `# schema=<name>/<version> seed=<seed>`
//! followed by a mandatory header row.

use std::fs;
use std::path::Path;

use diffmem::SampleSet;

use crate::error::{CliError, CliResult};

/// One report: schema tag, column names and rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: &[&str]) -> Self {
        Self { schema, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, seed: u64) -> CliResult<Vec<u8>> {
        let mut buf = format!("# schema={} seed={seed}\n", self.schema).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).map_err(csv_err)?;
            for row in &self.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path, seed: u64) -> CliResult<()> {
        write_file(path, &self.render(seed)?)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime_io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| runtime_io(path, e))
}

pub fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Reads a flat numeric matrix: one point per line, comma-separated.
/// Lines starting with `#` are skipped and a non-numeric first row is taken
/// as a header, so report files written by this tool can be read back.
pub fn read_matrix(path: &Path) -> CliResult<SampleSet> {
    let bytes = fs::read(path).map_err(|e| runtime_io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut points = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Runtime(format!("{}: record {}: {e}", path.display(), i + 1))),
        };
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(CliError::Runtime(format!("{}: record {} has {} columns, expected {d}", path.display(), i + 1, row.len())))
            }
            _ => {}
        }
        points.extend(row);
    }
    let d = dim.ok_or_else(|| CliError::Runtime(format!("{}: no numeric rows", path.display())))?;
    SampleSet::new(points, d).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn matrix_table(schema: &'static str, set: &SampleSet) -> Table {
    let header: Vec<String> = (0..set.dim()).map(|k| format!("x{k}")).collect();
    let mut t = Table { schema, header, rows: Vec::with_capacity(set.len()) };
    for row in set.rows() {
        t.push(row.iter().copied().map(num).collect());
    }
    t
}
