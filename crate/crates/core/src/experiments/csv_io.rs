//! CSV schemas. Floats are written in shortest round-trip form, so every
//! file parses back to the same bits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{ClosedLoopTrace, StepRecord, TimingRow};

/// Columns that carry wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 3] = ["prepare_ms", "feedback_ms", "total_ms"];

/// One closed-loop CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub max_violation: f64,
    pub predicted_violation: f64,
    pub peak_rows: usize,
    pub prepare_ms: f64,
    pub feedback_ms: f64,
    pub total_ms: f64,
}

impl From<&StepRecord> for TraceRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            k: s.k,
            x: s.x.clone(),
            u: s.u.clone(),
            max_violation: s.state_violation.max(s.input_violation),
            predicted_violation: s.predicted_violation,
            peak_rows: s.peak_rows,
            prepare_ms: s.prepare_ms,
            feedback_ms: s.feedback_ms,
            total_ms: s.total_ms,
        }
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse {what} from {s:?}")))
}

pub fn write_trace<W: Write>(w: W, trace: &ClosedLoopTrace) -> Result<()> {
    let rows: Vec<TraceRow> = trace.steps.iter().map(TraceRow::from).collect();
    write_trace_rows(w, &rows)
}

pub fn write_trace_rows<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let (nx, nu) = rows.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
    let mut header = vec!["k".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    header.extend(["max_violation", "predicted_violation", "peak_rows"].map(String::from));
    header.extend(TIMING_COLUMNS.map(String::from));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.x.iter().chain(&r.u).map(f64::to_string));
        rec.push(r.max_violation.to_string());
        rec.push(r.predicted_violation.to_string());
        rec.push(r.peak_rows.to_string());
        rec.extend([r.prepare_ms, r.feedback_ms, r.total_ms].map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let nx = header.iter().filter(|h| h.starts_with('x')).count();
    let nu = header.iter().filter(|h| h.starts_with('u')).count();
    if header.len() != 1 + nx + nu + 6 {
        return Err(Error::InvalidArgument("unexpected trace CSV header".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize, what: &str| parse::<f64>(&rec[i], what);
        let b = 1 + nx + nu;
        rows.push(TraceRow {
            k: parse(&rec[0], "k")?,
            x: (1..=nx).map(|i| f(i, "x")).collect::<Result<_>>()?,
            u: (1 + nx..b).map(|i| f(i, "u")).collect::<Result<_>>()?,
            max_violation: f(b, "max_violation")?,
            predicted_violation: f(b + 1, "predicted_violation")?,
            peak_rows: parse(&rec[b + 2], "peak_rows")?,
            prepare_ms: f(b + 3, "prepare_ms")?,
            feedback_ms: f(b + 4, "feedback_ms")?,
            total_ms: f(b + 5, "total_ms")?,
        });
    }
    Ok(rows)
}

/// Sampled predictions `(k, sample, stage, x...)` of a closed-loop run.
pub fn write_predictions<W: Write>(w: W, trace: &ClosedLoopTrace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let nx = trace.steps.first().map_or(0, |s| s.x.len());
    let mut header = vec!["k".to_string(), "sample".into(), "stage".into()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    for s in &trace.steps {
        for (n, traj) in s.predictions.iter().enumerate() {
            for (i, x) in traj.iter().enumerate() {
                let mut rec = vec![s.k.to_string(), n.to_string(), i.to_string()];
                rec.extend(x.iter().map(f64::to_string));
                out.write_record(&rec)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// One vertex of a per-stage set in the plot plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub method: String,
    pub stage: usize,
    pub vertex: usize,
    pub x: f64,
    pub y: f64,
}

pub fn write_geometry<W: Write>(w: W, rows: &[GeometryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_geometry<R: Read>(r: R) -> Result<Vec<GeometryRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_timing<W: Write>(w: W, rows: &[TimingRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timing<R: Read>(r: R) -> Result<Vec<TimingRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Plain-text table with samples as rows and iterations as columns,
/// entries `mean ± std` in ms.
pub fn timing_table(rows: &[TimingRow]) -> String {
    let mut ls: Vec<usize> = rows.iter().map(|r| r.iterations).collect();
    ls.sort_unstable();
    ls.dedup();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.samples).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut s = String::from("| N \\ L |");
    for l in &ls {
        s.push_str(&format!(" L = {l} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(ls.len()));
    s.push('\n');
    for n in &ns {
        s.push_str(&format!("| N = {n} |"));
        for l in &ls {
            match rows.iter().find(|r| r.samples == *n && r.iterations == *l) {
                Some(r) => s.push_str(&format!(" {:.2} ± {:.2} |", r.total_mean_ms, r.total_std_ms)),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip_is_lossless() {
        let rows = vec![TraceRow {
            k: 3,
            x: vec![0.1 + 0.2, -1e-300, 1.0 / 3.0],
            u: vec![f64::MIN_POSITIVE],
            max_violation: -0.7,
            predicted_violation: f64::NEG_INFINITY,
            peak_rows: 45,
            prepare_ms: 1.25,
            feedback_ms: 2.0,
            total_ms: 3.5,
        }];
        let mut buf = Vec::new();
        write_trace_rows(&mut buf, &rows).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn geometry_round_trip_is_lossless() {
        let rows = vec![GeometryRow {
            method: "mc".into(),
            stage: 2,
            vertex: 0,
            x: std::f64::consts::PI,
            y: -2.0 / 7.0,
        }];
        let mut buf = Vec::new();
        write_geometry(&mut buf, &rows).unwrap();
        assert_eq!(read_geometry(&buf[..]).unwrap(), rows);
    }
}
