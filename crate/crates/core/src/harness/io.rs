//! Long-format CSV reading and writing.
//!
//! Truth and training files carry `window_id,t,time_value,var_0..var_{D-1}`;
//! sample files add `sample_id` after `window_id`.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::paths::RawTrajectory;

/// One window of a truth or training file.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub id: String,
    pub traj: RawTrajectory,
    /// Line of the window's first row, for error context.
    pub line: usize,
}

/// All sample trajectories of one window, ordered by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub id: String,
    pub sample_ids: Vec<String>,
    pub samples: Vec<RawTrajectory>,
    pub line: usize,
}

struct Row {
    t: usize,
    time: f64,
    values: Vec<f64>,
    line: usize,
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Checks the leading key columns and returns the variate count.
fn check_header(path: &Path, headers: &csv::StringRecord, keys: &[&str]) -> Result<usize> {
    for (i, key) in keys.iter().enumerate() {
        if headers.get(i) != Some(*key) {
            return Err(parse_err(
                path,
                1,
                format!("expected column {} to be '{key}', found '{}'", i + 1, headers.get(i).unwrap_or("")),
            ));
        }
    }
    let dim = headers.len() - keys.len();
    if dim == 0 {
        return Err(parse_err(path, 1, "no var_ columns"));
    }
    for j in 0..dim {
        let want = format!("var_{j}");
        let got = &headers[keys.len() + j];
        if got != want {
            return Err(parse_err(path, 1, format!("expected column '{want}', found '{got}'")));
        }
    }
    Ok(dim)
}

fn parse_f64(path: &Path, line: usize, field: &str, name: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("{name} '{field}' is not a number")))
}

fn parse_row(path: &Path, rec: &csv::StringRecord, offset: usize, dim: usize, window: &str) -> Result<Row> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    if rec.len() != offset + 2 + dim {
        return Err(parse_err(
            path,
            line,
            format!("expected {} fields, found {}", offset + 2 + dim, rec.len()),
        ));
    }
    let t = rec[offset]
        .parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("step index '{}' is not a non-negative integer", &rec[offset])))?;
    let time = parse_f64(path, line, &rec[offset + 1], "time_value")?;
    let values = (0..dim)
        .map(|j| parse_f64(path, line, &rec[offset + 2 + j], "value"))
        .collect::<Result<Vec<f64>>>()?;
    if !time.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(path, line, format!("non-finite value in window '{window}'")));
    }
    Ok(Row { t, time, values, line })
}

/// Orders the rows of one trajectory by step and checks completeness and
/// time monotonicity.
fn assemble(path: &Path, label: &str, mut rows: Vec<Row>, dim: usize) -> Result<RawTrajectory> {
    rows.sort_by_key(|r| r.t);
    for (k, r) in rows.iter().enumerate() {
        if r.t != k {
            let message = if r.t < k {
                format!("duplicate step {} in {label}", r.t)
            } else {
                format!("missing step {k} in {label}")
            };
            return Err(parse_err(path, r.line, message));
        }
        if k > 0 && !(r.time > rows[k - 1].time) {
            return Err(parse_err(
                path,
                r.line,
                format!("time_value not strictly increasing at step {k} in {label}"),
            ));
        }
    }
    let times = rows.iter().map(|r| r.time).collect();
    let values = rows.into_iter().flat_map(|r| r.values).collect();
    RawTrajectory::new(values, times, dim)
}

/// Reads a truth or training file. All windows must share one horizon.
pub fn read_windows(path: &Path) -> Result<Vec<Window>> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = check_header(path, &headers, &["window_id", "t", "time_value"])?;
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let row = parse_row(path, &rec, 1, dim, &id)?;
        let entry = groups.entry(id.clone()).or_default();
        if entry.is_empty() {
            order.push((id, row.line));
        }
        entry.push(row);
    }
    if order.is_empty() {
        return Err(parse_err(path, 1, "file has no rows"));
    }
    let mut out = Vec::with_capacity(order.len());
    for (id, line) in order {
        let rows = groups.remove(&id).unwrap_or_default();
        let traj = assemble(path, &format!("window '{id}'"), rows, dim)?;
        out.push(Window { id, traj, line });
    }
    check_horizon(path, out.iter().map(|w| (&w.id, w.traj.len(), w.line)))?;
    Ok(out)
}

/// Reads a sample file, grouping rows by window and then by sample.
pub fn read_samples(path: &Path) -> Result<Vec<SampleWindow>> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = check_header(path, &headers, &["window_id", "sample_id", "t", "time_value"])?;
    let mut windows: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: HashMap<(String, String), Vec<Row>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let sample = rec.get(1).unwrap_or("").to_string();
        let row = parse_row(path, &rec, 2, dim, &id)?;
        let w = *index.entry(id.clone()).or_insert_with(|| {
            windows.push((id.clone(), row.line, Vec::new()));
            windows.len() - 1
        });
        let entry = groups.entry((id, sample.clone())).or_default();
        if entry.is_empty() {
            windows[w].2.push(sample);
        }
        entry.push(row);
    }
    if windows.is_empty() {
        return Err(parse_err(path, 1, "file has no rows"));
    }
    let mut out = Vec::with_capacity(windows.len());
    for (id, line, sample_ids) in windows {
        let mut samples = Vec::with_capacity(sample_ids.len());
        for s in &sample_ids {
            let rows = groups.remove(&(id.clone(), s.clone())).unwrap_or_default();
            samples.push(assemble(path, &format!("window '{id}' sample '{s}'"), rows, dim)?);
        }
        check_horizon(path, samples.iter().map(|s| (&id, s.len(), line)))?;
        out.push(SampleWindow {
            id,
            sample_ids,
            samples,
            line,
        });
    }
    check_horizon(path, out.iter().map(|w| (&w.id, w.samples[0].len(), w.line)))?;
    Ok(out)
}

fn check_horizon<'a>(path: &Path, mut items: impl Iterator<Item = (&'a String, usize, usize)>) -> Result<()> {
    let Some((_, first, _)) = items.next() else {
        return Ok(());
    };
    for (id, len, line) in items {
        if len != first {
            return Err(parse_err(
                path,
                line,
                format!("window '{id}' has horizon {len}, expected {first}"),
            ));
        }
    }
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn var_headers(dim: usize) -> impl Iterator<Item = String> {
    (0..dim).map(|j| format!("var_{j}"))
}

/// Writes windows in the truth/train layout.
pub fn write_windows(path: &Path, windows: &[(String, RawTrajectory)]) -> Result<()> {
    let mut w = writer(path)?;
    let dim = windows.first().map_or(1, |(_, t)| t.dim());
    let header: Vec<String> = ["window_id", "t", "time_value"]
        .into_iter()
        .map(String::from)
        .chain(var_headers(dim))
        .collect();
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (id, traj) in windows {
        for t in 0..traj.len() {
            let mut rec = vec![id.clone(), t.to_string(), traj.times()[t].to_string()];
            rec.extend(traj.row(t).iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes sample sets in the sample layout, with sample ids `0..S`.
pub fn write_samples(path: &Path, windows: &[(String, Vec<RawTrajectory>)]) -> Result<()> {
    let mut w = writer(path)?;
    let dim = windows
        .first()
        .and_then(|(_, s)| s.first())
        .map_or(1, RawTrajectory::dim);
    let header: Vec<String> = ["window_id", "sample_id", "t", "time_value"]
        .into_iter()
        .map(String::from)
        .chain(var_headers(dim))
        .collect();
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (id, samples) in windows {
        for (s, traj) in samples.iter().enumerate() {
            for t in 0..traj.len() {
                let mut rec = vec![id.clone(), s.to_string(), t.to_string(), traj.times()[t].to_string()];
                rec.extend(traj.row(t).iter().map(f64::to_string));
                w.write_record(&rec).map_err(|e| write_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolves `file` against `base` unless it is absolute.
pub fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_out_of_order_rows() {
        let f = file("window_id,t,time_value,var_0,var_1\nw0,1,1.0,3,4\nw0,0,0.0,1,2\nw1,0,0,5,6\nw1,1,2,7,8\n");
        let w = read_windows(f.path()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].traj.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w[1].traj.times(), &[0.0, 2.0]);
    }

    #[test]
    fn reports_file_and_line() {
        let f = file("window_id,t,time_value,var_0\nw0,0,0,1\nw0,1,1,NaN\n");
        let msg = read_windows(f.path()).unwrap_err().to_string();
        assert!(msg.contains(":3:") && msg.contains("w0"), "{msg}");

        let f = file("window_id,t,time_value,var_0\nw0,0,1,1\nw0,1,1,2\n");
        let msg = read_windows(f.path()).unwrap_err().to_string();
        assert!(msg.contains("strictly increasing"), "{msg}");

        let f = file("window_id,t,time_value,var_0\nw0,0,0,1\nw0,2,1,2\n");
        assert!(read_windows(f.path()).unwrap_err().to_string().contains("missing step 1"));

        let f = file("window_id,t,time_value,var_0\nw0,0,0,1\nw0,1,1,2\nw1,0,0,1\n");
        assert!(read_windows(f.path()).unwrap_err().to_string().contains("horizon 1"));

        let f = file("window,t,time_value,var_0\n");
        assert!(read_windows(f.path()).unwrap_err().to_string().contains("window_id"));
    }

    #[test]
    fn round_trips_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let a = RawTrajectory::on_unit_grid(vec![0.5, -1.0, 2.25, 3.0], 2).unwrap();
        let b = RawTrajectory::on_unit_grid(vec![1.0, 1.0, 0.1, 0.2], 2).unwrap();
        write_samples(&path, &[("x".into(), vec![a.clone(), b.clone()])]).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].samples, vec![a, b]);
        assert_eq!(back[0].sample_ids, vec!["0", "1"]);
    }
}
