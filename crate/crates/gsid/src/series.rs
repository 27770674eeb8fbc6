use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One source's sampled trajectory: uniformly spaced times and an ℓ×n state
/// matrix, tagged with a 1-based source id.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSeries {
    dt: f64,
    times: Vec<f64>,
    states: DMatrix<f64>,
    source_id: usize,
}

impl SourceSeries {
    /// Validates the structural requirements: at least 3 samples (central
    /// differencing needs interior points) and uniform spacing `dt` (relative
    /// deviation below 1e-12).
    pub fn new(dt: f64, times: Vec<f64>, states: DMatrix<f64>, source_id: usize) -> Result<Self> {
        if states.nrows() < 3 {
            return Err(Error::InvalidSeries(format!(
                "need at least 3 samples, got {}",
                states.nrows()
            )));
        }
        if times.len() != states.nrows() {
            return Err(Error::InvalidSeries(format!(
                "{} times but {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::InvalidSeries(format!(
                "dt must be positive, got {dt}"
            )));
        }
        for (k, w) in times.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if gap <= 0.0 || (gap - dt).abs() > 1e-12 * dt {
                return Err(Error::InvalidSeries(format!(
                    "samples {k} and {} are spaced {gap} apart, expected dt = {dt}",
                    k + 1
                )));
            }
        }
        Ok(SourceSeries {
            dt,
            times,
            states,
            source_id,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    /// Number of samples ℓ.
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// State dimension n.
    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    /// Write as CSV with header `t,x1,...,xn` at full double precision
    /// (17 significant digits, round-trip exact).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = std::io::BufWriter::new(file);
        let mut res = || -> std::io::Result<()> {
            write!(w, "t")?;
            for j in 0..self.dim() {
                write!(w, ",x{}", j + 1)?;
            }
            writeln!(w)?;
            for (k, t) in self.times.iter().enumerate() {
                write!(w, "{t:.16e}")?;
                for j in 0..self.dim() {
                    write!(w, ",{:.16e}", self.states[(k, j)])?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        res().map_err(io_err)
    }

    /// Read a CSV produced by [`write_csv`](Self::write_csv) (or any file with
    /// a `t,x1,...,xn` header and numeric rows).
    pub fn read_csv(path: &Path, source_id: usize) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err("empty file".into()))?
            .map_err(|e| parse_err(e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.is_empty() || cols[0] != "t" || cols.len() < 2 {
            return Err(parse_err(format!(
                "expected header t,x1,...,xn, got {header:?}"
            )));
        }
        let n = cols.len() - 1;
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(parse_err(format!(
                    "row {}: expected {} fields, got {}",
                    lineno + 2,
                    n + 1,
                    fields.len()
                )));
            }
            let mut parsed = fields.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: {e} in {f:?}", lineno + 2)))
            });
            times.push(parsed.next().unwrap()?);
            for v in parsed {
                flat.push(v?);
            }
        }
        if times.len() < 3 {
            return Err(parse_err(format!(
                "need at least 3 data rows, got {}",
                times.len()
            )));
        }
        let dt = times[1] - times[0];
        let states = DMatrix::from_row_slice(times.len(), n, &flat);
        SourceSeries::new(dt, times, states, source_id)
    }
}
