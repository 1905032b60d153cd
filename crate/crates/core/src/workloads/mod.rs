//! Traces, CSV ingestion and synthetic signal generators.

mod generators;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use generators::{
    add_noise_snr, gen_count_series, gen_cpu_synthetic, gen_loss_signal, gen_mackey_glass, gen_poisson_arrivals,
    CountProfile, CpuSpec, CpuTrace, LossSpec, MgSpec, PoissonSpec, SignalPair,
};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Timestamped measurement vectors, timestamps strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    points: Vec<(f64, Vector)>,
}

impl Trace {
    pub fn new(points: Vec<(f64, Vector)>) -> Result<Self> {
        let dim = points.first().map(|(_, v)| v.len());
        for (i, (t, v)) in points.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Validation(format!("timestamp at index {i} is not finite")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("value at index {i} is not finite")));
            }
            if Some(v.len()) != dim || v.is_empty() {
                return Err(Error::dimension("trace value", dim.unwrap_or(1), v.len()));
            }
            if i > 0 && *t <= points[i - 1].0 {
                return Err(Error::Validation(format!(
                    "timestamps must increase strictly: {} then {t} at index {i}",
                    points[i - 1].0
                )));
            }
        }
        Ok(Trace { points })
    }

    /// One-dimensional trace.
    pub fn from_scalars(timestamps: &[f64], values: &[f64]) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::dimension("trace columns", timestamps.len(), values.len()));
        }
        Trace::new(
            timestamps
                .iter()
                .zip(values)
                .map(|(t, v)| (*t, Vector::from_element(1, *v)))
                .collect(),
        )
    }

    /// Scalars at unit spacing from zero.
    pub fn from_series(values: &[f64]) -> Result<Self> {
        let ts: Vec<f64> = (0..values.len()).map(|k| k as f64).collect();
        Trace::from_scalars(&ts, values)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |(_, v)| v.len())
    }

    pub fn points(&self) -> &[(f64, Vector)] {
        &self.points
    }

    pub fn timestamps(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.points.iter().map(|(t, _)| *t)
    }

    pub fn values(&self) -> impl ExactSizeIterator<Item = &Vector> {
        self.points.iter().map(|(_, v)| v)
    }

    /// Column `j` of the values.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|(_, v)| v[j]).collect()
    }

    pub fn map_values(&self, mut f: impl FnMut(usize, &Vector) -> Vector) -> Result<Trace> {
        Trace::new(self.points.iter().enumerate().map(|(i, (t, v))| (*t, f(i, v))).collect())
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// CSV text of a trace; floats use the shortest round-trip representation.
pub fn trace_to_csv(trace: &Trace) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let d = trace.dim().max(1);
    let mut header = vec!["timestamp".to_string()];
    if d == 1 {
        header.push("value".into());
    } else {
        header.extend((0..d).map(|j| format!("v{j}")));
    }
    w.write_record(&header).map_err(csv_io)?;
    for (t, v) in trace.points() {
        let mut row = vec![format!("{t}")];
        row.extend(v.iter().map(|x| format!("{x}")));
        w.write_record(&row).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn save_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    write_atomic(path, trace_to_csv(trace)?.as_bytes())
}

/// Parses `timestamp,value` or `timestamp,v0,v1,...` CSV text.
pub fn parse_trace_csv(text: &str) -> Result<Trace> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(&e, 1))?.clone();
    if header.is_empty() || header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `timestamp,value` or `timestamp,v0,...`".into(),
        });
    }
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let named_ok = cols[0] == "timestamp"
        && ((cols.len() == 2 && cols[1] == "value") || cols[1..].iter().enumerate().all(|(j, c)| *c == format!("v{j}")));
    if !named_ok {
        return Err(Error::Parse {
            line: 1,
            message: format!("unrecognised header `{}`", cols.join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(&e, line))?;
        let mut fields = rec.iter().map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("`{f}`: {e}"),
            })
        });
        let t = fields.next().transpose()?.ok_or(Error::Parse {
            line,
            message: "empty row".into(),
        })?;
        let v: Vec<f64> = fields.collect::<Result<_>>()?;
        points.push((t, Vector::from_vec(v)));
    }
    if points.is_empty() {
        return Err(Error::InsufficientData {
            context: "trace CSV rows",
            needed: 1,
            got: 0,
        });
    }
    Trace::new(points)
}

fn parse_err(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn load_trace_csv(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: format!("{} is empty", path.display()),
        });
    }
    parse_trace_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_increasing() {
        assert!(Trace::from_scalars(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(Trace::from_scalars(&[1.0, 0.5], &[1.0, 2.0]).is_err());
        assert!(Trace::from_scalars(&[0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = Trace::new(vec![
            (0.0, Vector::from_vec(vec![0.1, -2.5e-17])),
            (0.25, Vector::from_vec(vec![1.0 / 3.0, 1e300])),
            (1.5, Vector::from_vec(vec![-0.0, 7.0])),
        ])
        .unwrap();
        let text = trace_to_csv(&t).unwrap();
        assert!(text.starts_with("timestamp,v0,v1\n"));
        assert_eq!(parse_trace_csv(&text).unwrap(), t);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_trace_csv("timestamp,value\n0,1\n1,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_trace_csv("timestamp,value\n0,1\n1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn single_row_and_empty() {
        let t = parse_trace_csv("timestamp,value\n3.5,2\n").unwrap();
        assert_eq!(t.len(), 1);
        assert!(parse_trace_csv("timestamp,value\n").is_err());
        assert!(matches!(
            parse_trace_csv("timestamp,value\n1,1\n0,1\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Trace::from_series(&[1.0, 2.5, -3.0]).unwrap();
        save_trace_csv(&t, &path).unwrap();
        assert_eq!(load_trace_csv(&path).unwrap(), t);
        fs::write(&path, "").unwrap();
        assert!(load_trace_csv(&path).is_err());
    }
}
