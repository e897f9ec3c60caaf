//! File formats and atomic writes.
//!
//! Event logs: CSV `time_ns,setting,result`. Count tables: CSV with one
//! row per experiment, metadata columns then the 24 counts `a_ij`, `b_kl`,
//! `c_ijkl`. Floats are written in shortest round-trip form.

use std::io::Write;
use std::path::Path;

use eprb_core::counts::CountTable;
use eprb_core::fit::ChannelResidual;
use eprb_core::sim::{Event, EventLog};
use eprb_core::coinc_labels;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(sha256_hex(&bytes))
}

/// Write to a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let ctx = |e| CliError::io(format!("writing {}", path.display()), e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(ctx)?;
    tmp.write_all(bytes).map_err(ctx)?;
    tmp.persist(path).map_err(|e| ctx(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_bytes(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w).map_err(|e| CliError::Data(e.to_string()))?;
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Data(format!("{}: {e}", path.display())),
        _ => CliError::Data(format!("malformed CSV {}: {e}", path.display())),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::Reader::from_reader(f))
}

pub fn write_events(path: &Path, log: &EventLog) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["time_ns", "setting", "result"])?;
        for e in &log.events {
            w.write_record([e.time_ns.to_string(), e.setting.to_string(), e.result.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn read_events(path: &Path) -> Result<EventLog> {
    let mut r = open_csv(path)?;
    let events = r.deserialize::<Event>().collect::<csv::Result<Vec<_>>>().map_err(|e| csv_error(path, e))?;
    let log = EventLog { events };
    log.validate().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(log)
}

/// One experiment's counts with the settings used to tabulate them.
#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub experiment: String,
    /// Alice's bias angle, radians.
    pub theta: f64,
    pub window_ns: f64,
    pub delta_ns: f64,
    pub duration_ns: f64,
    pub table: CountTable,
}

const META: [&str; 6] = ["experiment", "theta", "window_ns", "delta_ns", "duration_ns", "empty"];

pub fn count_columns() -> Vec<String> {
    let mut cols: Vec<String> = META.iter().map(|s| s.to_string()).collect();
    for n in 0..4 {
        cols.push(format!("a_{}{}", n / 2, n % 2));
    }
    for n in 0..4 {
        cols.push(format!("b_{}{}", n / 2, n % 2));
    }
    for idx in 0..16 {
        let (i, j, k, l) = coinc_labels(idx);
        cols.push(format!("c_{i}{j}{k}{l}"));
    }
    cols
}

pub fn write_counts(path: &Path, rows: &[CountRow]) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(count_columns())?;
        for r in rows {
            let mut rec = vec![
                r.experiment.clone(),
                r.theta.to_string(),
                r.window_ns.to_string(),
                r.delta_ns.to_string(),
                r.duration_ns.to_string(),
                r.table.is_empty().to_string(),
            ];
            rec.extend(r.table.a.iter().chain(&r.table.b).chain(&r.table.c).map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn read_counts(path: &Path) -> Result<Vec<CountRow>> {
    let mut r = open_csv(path)?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = count_columns();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Data(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |col: usize| -> Result<f64> {
            rec[col].parse::<f64>().map_err(|e| {
                CliError::Data(format!("{} row {}: column {}: {e}", path.display(), n + 1, expected[col]))
            })
        };
        let mut table = CountTable::default();
        for k in 0..4 {
            table.a[k] = num(META.len() + k)?;
            table.b[k] = num(META.len() + 4 + k)?;
        }
        for k in 0..16 {
            table.c[k] = num(META.len() + 8 + k)?;
        }
        table.validate().map_err(|e| CliError::Data(format!("{} row {}: {e}", path.display(), n + 1)))?;
        rows.push(CountRow {
            experiment: rec[0].to_string(),
            theta: num(1)?,
            window_ns: num(2)?,
            delta_ns: num(3)?,
            duration_ns: num(4)?,
            table,
        });
    }
    Ok(rows)
}

pub fn write_residuals(path: &Path, channels: &[ChannelResidual]) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["experiment", "channel", "observed", "predicted", "std_error"])?;
        for c in channels {
            w.write_record([
                c.experiment.clone(),
                c.channel.clone(),
                c.observed.to_string(),
                c.predicted.to_string(),
                c.std_error.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Per-experiment window overrides: CSV `experiment,window_ns`.
pub fn read_windows(path: &Path) -> Result<Vec<(String, f64)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        experiment: String,
        window_ns: f64,
    }
    let mut r = open_csv(path)?;
    r.deserialize::<Row>()
        .map(|row| row.map(|r| (r.experiment, r.window_ns)).map_err(|e| csv_error(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let log = EventLog {
            events: vec![Event { time_ns: -3, setting: 1, result: 0 }, Event { time_ns: 12, setting: 0, result: 1 }],
        };
        write_events(&path, &log).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "time_ns,setting,result\n-3,1,0\n12,0,1\n");
        assert_eq!(read_events(&path).unwrap(), log);
    }

    #[test]
    fn unsorted_event_file_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "time_ns,setting,result\n5,0,0\n4,0,0\n").unwrap();
        assert!(matches!(read_events(&path), Err(CliError::Data(_))));
        std::fs::write(&path, "time_ns,setting,result\nx,0,0\n").unwrap();
        assert!(matches!(read_events(&path), Err(CliError::Data(_))));
    }

    #[test]
    fn counts_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        let mut table = CountTable::default();
        table.a = [10.0, 11.0, 12.0, 13.0];
        table.b = [9.0, 8.0, 7.0, 6.0];
        table.c[0] = 3.0;
        table.c[5] = 2.0;
        let row = CountRow {
            experiment: "scanblue110".into(),
            theta: 0.1 * std::f64::consts::PI,
            window_ns: 30.0,
            delta_ns: 15.0,
            duration_ns: 5e9,
            table,
        };
        write_counts(&path, std::slice::from_ref(&row)).unwrap();
        assert_eq!(read_counts(&path).unwrap(), vec![row]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("experiment,theta,window_ns,delta_ns,duration_ns,empty,a_00,"));
        assert_eq!(text.lines().next().unwrap().split(',').count(), 30);
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        let mut table = CountTable::default();
        table.c[0] = 5.0;
        let row = CountRow {
            experiment: "x".into(),
            theta: 0.0,
            window_ns: 30.0,
            delta_ns: 15.0,
            duration_ns: 1.0,
            table,
        };
        write_counts(&path, &[row]).unwrap();
        assert!(matches!(read_counts(&path), Err(CliError::Data(_))));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("f.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
