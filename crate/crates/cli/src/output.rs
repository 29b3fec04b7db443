//! Serialization of traces and reports.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rabin_mutex::engine::ExecutionTrace;
use serde::Serialize;

use crate::config::Format;
use crate::CliError;

#[derive(Serialize)]
struct Shared {
    #[serde(rename = "S")]
    s: u8,
    #[serde(rename = "B")]
    b: u32,
    #[serde(rename = "R")]
    r: u32,
}

#[derive(Serialize)]
struct StepLine<'a> {
    t: u64,
    pid: u32,
    old: &'a str,
    new: &'a str,
    redraw: bool,
    drawn: Option<u32>,
    #[serde(rename = "V")]
    v: Shared,
}

/// Line-delimited JSON: `header`, then one object per step.
pub fn write_trace_to(w: &mut impl Write, header: &impl Serialize, trace: &ExecutionTrace) -> io::Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    writeln!(w)?;
    for (t, m) in trace.steps.iter().enumerate() {
        let line = StepLine {
            t: t as u64 + 1,
            pid: m.transition.pid.get(),
            old: m.transition.old.as_str(),
            new: m.transition.new.as_str(),
            redraw: m.redraw,
            drawn: m.drawn,
            v: Shared { s: u8::from(m.after.occupied), b: m.after.lottery, r: m.after.round },
        };
        serde_json::to_writer(&mut *w, &line)?;
        writeln!(w)?;
    }
    w.flush()
}

/// [`write_trace_to`] a file.
pub fn write_trace(trace: &ExecutionTrace, header: &impl Serialize, path: &Path) -> Result<(), CliError> {
    let io_err = |e| CliError::Io { path: path.to_owned(), source: e };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_trace_to(&mut w, header, trace).map_err(io_err)
}

/// A result that can also be laid out as a table.
pub trait Tabular: Serialize {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

fn render(value: &impl Tabular, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
            v.push(b'\n');
            Ok(v)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let run = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
                w.write_record(value.header())?;
                for row in value.rows() {
                    w.write_record(row)?;
                }
                w.flush()?;
                Ok(())
            };
            run(&mut w).map_err(|e| CliError::Runtime(e.to_string()))?;
            w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

/// Writes `value` to `out` or stdout.
pub fn emit(value: &impl Tabular, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = render(value, format)?;
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::Io { path: path.to_owned(), source: e }),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(&bytes).and_then(|_| stdout.flush()).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rabin_mutex::adversary::RoundRobin;
    use rabin_mutex::experiment::run_trial;
    use rabin_mutex::protocol::{ProtocolParams, Variant};

    fn lines(n: u32, horizon: u64) -> Vec<serde_json::Value> {
        let q = ProtocolParams::with_defaults(n, Variant::RabinOptimized).unwrap();
        let tr = run_trial(&q, &mut RoundRobin::new(n), horizon, 3).unwrap();
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &serde_json::json!({"params": q, "seed": 3}), &tr).unwrap();
        String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    #[test]
    fn entry_and_exit_lines() {
        let v = lines(1, 4);
        assert_eq!(v.len(), 5);
        assert_eq!(v[2]["new"], "Crit");
        assert_eq!(v[2]["V"]["S"], 1);
        assert_eq!(v[2]["V"]["B"], 0);
        assert_eq!(v[4]["new"], "Rem");
        assert_eq!(v[4]["V"]["S"], 0);
        assert_eq!(v[1]["redraw"], true);
        assert!(v[1]["drawn"].is_u64());
        assert!(v[3]["drawn"].is_null());
    }

    #[test]
    fn empty_trace_is_header_only() {
        let v = lines(3, 0);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0]["seed"], 3);
    }
}
