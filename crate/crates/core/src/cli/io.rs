//! File formats: trajectory CSV with a commented header, weak-limit series,
//! and `key = value` reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::diagnostics::WeakLimitEstimate;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Scientific notation with 17 significant digits, enough for exact round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    let s = s.trim();
    match s {
        "nan" | "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| Error::Parse(format!("not a number: '{s}'"))),
    }
}

pub fn trajectory_columns(dim: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=dim).map(|i| format!("x{i}")));
    cols.extend((1..=dim).map(|i| format!("v{i}")));
    cols.extend(["H", "r", "rdot", "Tperp", "Uperp", "hr"].map(String::from));
    cols
}

/// One numeric row per output sample; masked quantities become NaN.
pub fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.states
        .iter()
        .zip(&traj.diagnostics)
        .map(|(s, d)| {
            let mut row = Vec::with_capacity(2 * s.x.len() + 7);
            row.push(s.t);
            row.extend(s.x.iter());
            row.extend(s.v.iter());
            row.extend([
                d.energy,
                d.r,
                d.rdot,
                d.t_perp.unwrap_or(f64::NAN),
                d.u_perp,
                d.h_r.unwrap_or(f64::NAN),
            ]);
            row
        })
        .collect()
}

fn timestamp_line() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# created_unix = {secs}")
}

fn write_meta<W: Write>(
    out: &mut W,
    title: &str,
    meta: &[(String, String)],
    timestamp: bool,
) -> Result<()> {
    writeln!(out, "# {title}")?;
    if timestamp {
        writeln!(out, "{}", timestamp_line())?;
    }
    for (k, v) in meta {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

fn write_table<W: Write>(out: W, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for row in rows {
        w.write_record(row.iter().map(|x| fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_meta(traj: &Trajectory, scenario: &str) -> Vec<(String, String)> {
    let mut meta = vec![
        ("scenario".to_string(), scenario.to_string()),
        ("kind".to_string(), traj.kind.as_str().to_string()),
    ];
    if let Some(eps) = traj.epsilon {
        meta.push(("epsilon".into(), fmt_f64(eps)));
    }
    meta.extend([
        ("alpha".to_string(), fmt_f64(traj.alpha)),
        ("energy_drift".to_string(), fmt_f64(traj.energy_drift)),
        ("energy_tol".to_string(), fmt_f64(traj.energy_tol)),
        (
            "energy_failed".to_string(),
            traj.energy_failed().to_string(),
        ),
        (
            "projection_distance".to_string(),
            fmt_f64(traj.projection_distance),
        ),
        (
            "critical_masked".to_string(),
            traj.critical_masked.to_string(),
        ),
        ("steps".to_string(), traj.steps.to_string()),
    ]);
    meta
}

pub fn write_trajectory<W: Write>(
    mut out: W,
    traj: &Trajectory,
    scenario: &str,
    timestamp: bool,
) -> Result<()> {
    let dim = traj.states.first().map(|s| s.x.len()).unwrap_or(0);
    let columns = trajectory_columns(dim);
    write_meta(
        &mut out,
        "stifflab trajectory",
        &trajectory_meta(traj, scenario),
        timestamp,
    )?;
    writeln!(out, "# {}", columns.join(","))?;
    write_table(out, &trajectory_rows(traj))
}

pub fn write_trajectory_file(
    path: &Path,
    traj: &Trajectory,
    scenario: &str,
    timestamp: bool,
) -> Result<()> {
    write_trajectory(
        BufWriter::new(File::create(path)?),
        traj,
        scenario,
        timestamp,
    )
}

pub fn weak_limit_columns() -> Vec<String> {
    ["t", "sigma_hat", "pi_hat", "Tperp_avg", "adiabatic"]
        .map(String::from)
        .to_vec()
}

/// Rows of `t, σ̂, π̂, h_r²π̂/2, h_r^{2+2/(2α+1)}π̂`; masked samples carry NaN.
pub fn weak_limit_rows(est: &WeakLimitEstimate, traj: &Trajectory) -> Vec<Vec<f64>> {
    let power = 2.0 + 2.0 / (2.0 * traj.alpha + 1.0);
    (0..est.len())
        .map(|k| {
            let h = est.h_r_hat[k].unwrap_or(f64::NAN);
            vec![
                est.times[k],
                est.sigma_hat[k],
                est.pi_hat[k],
                0.5 * h * h * est.pi_hat[k],
                h.powf(power) * est.pi_hat[k],
            ]
        })
        .collect()
}

pub fn write_weak_limits_file(
    path: &Path,
    est: &WeakLimitEstimate,
    traj: &Trajectory,
    scenario: &str,
    timestamp: bool,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let meta = vec![
        ("scenario".to_string(), scenario.to_string()),
        ("window".to_string(), fmt_f64(est.window)),
        ("alpha".to_string(), fmt_f64(traj.alpha)),
    ];
    let columns = weak_limit_columns();
    write_meta(&mut out, "stifflab weak limits", &meta, timestamp)?;
    writeln!(out, "# {}", columns.join(","))?;
    write_table(out, &weak_limit_rows(est, traj))
}

/// A CSV file written by this module, parsed back.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut meta = Vec::new();
    let mut columns = Vec::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line[1..].trim();
        if let Some((k, v)) = body.split_once(" = ") {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        } else if body.contains(',') || body == "t" {
            columns = body.split(',').map(|c| c.trim().to_string()).collect();
        }
    }
    if columns.is_empty() {
        return Err(Error::Parse("missing column header".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?;
        if row.len() != columns.len() {
            return Err(Error::Parse(format!(
                "row has {} fields, expected {}",
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table {
        meta,
        columns,
        rows,
    })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_table(File::open(path)?)
}

/// Ordered `key = value` report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt_f64(value))
    }

    pub fn list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let body: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        self.set(key, format!("[{}]", body.join(", ")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| parse_f64(v).ok())
    }

    pub fn get_list(&self, key: &str) -> Option<Vec<f64>> {
        let v = self.get(key)?.trim();
        let inner = v.strip_prefix('[')?.strip_suffix(']')?;
        if inner.trim().is_empty() {
            return Some(Vec::new());
        }
        inner.split(',').map(|s| parse_f64(s).ok()).collect()
    }

    pub fn write<W: Write>(&self, mut out: W, title: &str, timestamp: bool) -> Result<()> {
        writeln!(out, "# {title}")?;
        if timestamp {
            writeln!(out, "{}", timestamp_line())?;
        }
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path, title: &str, timestamp: bool) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?), title, timestamp)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut report = Report::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Parse(format!("expected 'key = value', got '{line}'")))?;
            report.set(k.trim(), v.trim());
        }
        Ok(report)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}
