//! Record CSV, state snapshots and checkpoints.
//!
//! Floats are written with `ryu` (shortest string that round-trips), so a
//! `--reproducible` run is byte-identical across repeats.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsRecord, RecordLayout, RecordSink};
use crate::grid::{Grid, GridKind};
use crate::operator::SpectrumState;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("checkpoint does not match this run: {0}")]
    Mismatch(String),
}

impl IoError {
    fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn data(path: &Path, message: impl Into<String>) -> Self {
        IoError::Data {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    ryu::Buffer::new().format(x).to_string()
}

/// Column names of the record CSV for `layout`.
pub fn record_header(layout: &RecordLayout) -> Vec<String> {
    let mut h: Vec<String> = ["t", "E_total", "E_inf", "mass", "entropy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(layout.radii.iter().map(|r| format!("tail@{r}")));
    h.extend(layout.phir_values.iter().map(|r| format!("Wphi@{r}")));
    h.push("effective_dt".into());
    h.push("step_count".into());
    h
}

fn record_row(r: &DiagnosticsRecord) -> Vec<String> {
    let mut row: Vec<String> = [r.t, r.e_total, r.e_inf, r.mass, r.entropy]
        .iter()
        .map(|&x| fmt_f64(x))
        .collect();
    row.extend(r.tails.iter().map(|&x| fmt_f64(x)));
    row.extend(r.wphi.iter().map(|&x| fmt_f64(x)));
    row.push(fmt_f64(r.effective_dt));
    row.push(r.step_count.to_string());
    row
}

fn generated_line() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!(
        "# generated unix_time={secs} by wavecascade {}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Streams records as CSV rows.
pub struct CsvRecordWriter<W: Write> {
    out: csv::Writer<W>,
}

impl CsvRecordWriter<BufWriter<File>> {
    /// Create (or, when `append`, extend) the CSV at `path`.
    pub fn create(
        path: &Path,
        layout: &RecordLayout,
        reproducible: bool,
        append: bool,
    ) -> Result<Self, IoError> {
        let file = if append {
            std::fs::OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| IoError::io(path, e))?;
        let w = BufWriter::new(file);
        if append {
            Ok(Self {
                out: csv::WriterBuilder::new().from_writer(w),
            })
        } else {
            Self::new(w, layout, reproducible).map_err(|e| IoError::io(path, e))
        }
    }
}

impl<W: Write> CsvRecordWriter<W> {
    pub fn new(mut w: W, layout: &RecordLayout, reproducible: bool) -> io::Result<Self> {
        if !reproducible {
            w.write_all(generated_line().as_bytes())?;
        }
        let mut out = csv::WriterBuilder::new().from_writer(w);
        out.write_record(record_header(layout))?;
        Ok(Self { out })
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.out.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> RecordSink for CsvRecordWriter<W> {
    fn record(&mut self, record: &DiagnosticsRecord, _: &SpectrumState) -> io::Result<()> {
        self.out.write_record(record_row(record))?;
        Ok(())
    }
}

/// Wide CSV of full states: `t, E_inf, e@p_1, …, e@p_N`.
pub struct StatesWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> StatesWriter<W> {
    pub fn new(w: W, grid: &Grid) -> io::Result<Self> {
        let mut out = csv::WriterBuilder::new().from_writer(w);
        let mut h = vec!["t".to_string(), "E_inf".to_string()];
        h.extend(grid.nodes().iter().map(|p| format!("e@{}", fmt_f64(*p))));
        out.write_record(h)?;
        Ok(Self { out })
    }

    /// Append to a file that already has its header.
    pub fn continuing(w: W) -> Self {
        Self {
            out: csv::WriterBuilder::new().from_writer(w),
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl<W: Write> RecordSink for StatesWriter<W> {
    fn record(&mut self, _: &DiagnosticsRecord, state: &SpectrumState) -> io::Result<()> {
        let row = [state.t, state.e_inf]
            .into_iter()
            .chain(state.e.iter().copied())
            .map(fmt_f64);
        self.out.write_record(row)?;
        Ok(())
    }
}

/// Read the record CSV written by [`CsvRecordWriter`]: header and rows of
/// numbers, `#` lines skipped.
pub fn read_record_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| IoError::data(path, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| IoError::data(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| IoError::data(path, e.to_string()))?;
        let vals = row
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    IoError::data(path, format!("row {}: `{s}` is not a number", k + 1))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(vals);
    }
    Ok((header, rows))
}

/// `(t, E_inf)` pairs from a record CSV.
pub fn read_reservoir_series(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let (header, rows) = read_record_csv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::data(path, format!("missing column `{name}`")))
    };
    let (ti, ei) = (col("t")?, col("E_inf")?);
    Ok(rows.iter().map(|r| (r[ti], r[ei])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub p_min: f64,
    pub p_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub kind: GridKind,
}

impl GridSpec {
    pub fn of(grid: &Grid) -> Self {
        Self {
            p_min: grid.p_min(),
            p_max: grid.p_max(),
            n: grid.len(),
            kind: grid.kind(),
        }
    }
}

/// Restartable snapshot of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub e: Vec<f64>,
    #[serde(rename = "E_inf")]
    pub e_inf: f64,
    pub grid: GridSpec,
    pub config_hash: String,
    pub step_count: u64,
}

impl Checkpoint {
    pub fn new(state: &SpectrumState, grid: &Grid, config_hash: &str, step_count: u64) -> Self {
        Self {
            t: state.t,
            e: state.e.clone(),
            e_inf: state.e_inf,
            grid: GridSpec::of(grid),
            config_hash: config_hash.to_string(),
            step_count,
        }
    }

    pub fn state(&self) -> SpectrumState {
        SpectrumState {
            t: self.t,
            e: self.e.clone(),
            e_inf: self.e_inf,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| IoError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let c: Checkpoint =
            serde_json::from_str(&text).map_err(|e| IoError::data(path, e.to_string()))?;
        c.state()
            .validate(c.grid.n)
            .map_err(|e| IoError::data(path, e.to_string()))?;
        Ok(c)
    }

    /// Refuse to resume under a different configuration or grid.
    pub fn verify(&self, grid: &Grid, config_hash: &str) -> Result<(), IoError> {
        if self.config_hash != config_hash {
            return Err(IoError::Mismatch(format!(
                "config hash {} != {}",
                self.config_hash, config_hash
            )));
        }
        if self.grid != GridSpec::of(grid) {
            return Err(IoError::Mismatch(format!("grid {:?}", self.grid)));
        }
        Ok(())
    }
}

/// Saves a checkpoint whenever a record lands on a multiple of `every`
/// steps.
pub struct CheckpointSink<'a> {
    pub path: PathBuf,
    pub every: u64,
    pub grid: &'a Grid,
    pub config_hash: String,
}

impl RecordSink for CheckpointSink<'_> {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> io::Result<()> {
        if record.step_count > 0 && record.step_count.is_multiple_of(self.every) {
            Checkpoint::new(state, self.grid, &self.config_hash, record.step_count)
                .save(&self.path)
                .map_err(io::Error::other)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> DiagnosticsRecord {
        DiagnosticsRecord {
            t: 0.1,
            e_total: 1.0,
            e_inf: 1e-300,
            mass: 0.3333333333333333,
            entropy: -2.5,
            tails: vec![0.5],
            wphi: vec![0.25, 0.125],
            effective_dt: 5e-5,
            step_count: 42,
        }
    }

    #[test]
    fn header_layout() {
        let layout = RecordLayout {
            radii: vec![25.0],
            phir_values: vec![0.1, 1.0],
        };
        assert_eq!(
            record_header(&layout).join(","),
            "t,E_total,E_inf,mass,entropy,tail@25,Wphi@0.1,Wphi@1,effective_dt,step_count"
        );
    }

    #[test]
    fn csv_round_trips_floats() {
        let layout = RecordLayout {
            radii: vec![25.0],
            phir_values: vec![0.1, 1.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let mut w = CsvRecordWriter::create(&path, &layout, false, false).unwrap();
        let r = rec();
        w.record(&r, &SpectrumState::zeros(1)).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# generated"));
        let (header, rows) = read_record_csv(&path).unwrap();
        assert_eq!(header.len(), 10);
        assert_eq!(rows[0][2], 1e-300);
        assert_eq!(rows[0][3], 0.3333333333333333);
        assert_eq!(rows[0][9], 42.0);
        assert_eq!(read_reservoir_series(&path).unwrap(), vec![(0.1, 1e-300)]);
    }

    #[test]
    fn reproducible_output_has_no_timestamp() {
        let layout = RecordLayout::default();
        let mut w = CsvRecordWriter::new(Vec::new(), &layout, true).unwrap();
        let r = DiagnosticsRecord {
            tails: vec![],
            wphi: vec![],
            ..rec()
        };
        w.record(&r, &SpectrumState::zeros(1)).unwrap();
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "t,E_total,E_inf,mass,entropy,effective_dt,step_count\n\
             0.1,1.0,1e-300,0.3333333333333333,-2.5,0.00005,42\n"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let g = Grid::geometric(0.01, 1000.0, 8).unwrap();
        let s = SpectrumState {
            t: 0.1 + 0.2,
            e: vec![0.1, 1.0 / 3.0, 0.0, 1e-310, 2.0, 0.0, 7.0, 1e300],
            e_inf: std::f64::consts::PI,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(&s, &g, "abc", 17).save(&path).unwrap();
        let c = Checkpoint::load(&path).unwrap();
        assert_eq!(c.state(), s);
        assert_eq!(c.step_count, 17);
        assert!(c.verify(&g, "abc").is_ok());
        assert!(matches!(c.verify(&g, "abd"), Err(IoError::Mismatch(_))));
        let other = Grid::geometric(0.01, 1000.0, 9).unwrap();
        assert!(c.verify(&other, "abc").is_err());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, "{\"t\": 0}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(IoError::Data { .. })));
    }
}
