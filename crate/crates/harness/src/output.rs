//! CSV tables with JSON sidecars and gnuplot scripts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::error::{HarnessError, Result};

/// Writes every artifact of one command invocation into a directory.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    config: Value,
    started: Instant,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>, command: &str, config: Value) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            config,
            started: Instant::now(),
            written: Vec::new(),
        })
    }

    /// Artifacts in a subdirectory, sharing the clock and configuration.
    pub fn child(&self, name: &str) -> Result<Self> {
        let mut c = Self::new(self.dir.join(name), &self.command, self.config.clone())?;
        c.started = self.started;
        Ok(c)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// `name.csv` with a header row, plus `name.json` describing it.
    pub fn csv<I, R>(
        &mut self,
        name: &str,
        columns: &[&str],
        rows: I,
        extra: Value,
    ) -> Result<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let path = self.dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        w.write_record(columns).map_err(|e| csv_io(&path, e))?;
        let mut count = 0usize;
        let mut buf = Vec::with_capacity(columns.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != columns.len() {
                return Err(HarnessError::Check(format!(
                    "{name}.csv: row {count} has {} fields, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            buf.clear();
            buf.extend(row.iter().map(|v| format_float(*v)));
            w.write_record(&buf).map_err(|e| csv_io(&path, e))?;
            count += 1;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        self.written.push(format!("{name}.csv"));
        let sidecar = json!({
            "file": format!("{name}.csv"),
            "columns": columns,
            "rows": count,
            "extra": extra,
        });
        self.sidecar(name, sidecar)?;
        Ok(path)
    }

    /// Metadata for one artifact: the payload plus version, configuration
    /// and elapsed wall time.
    pub fn sidecar(&mut self, name: &str, payload: Value) -> Result<PathBuf> {
        let mut v = json!({
            "generator": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        if let (Value::Object(dst), Value::Object(src)) = (&mut v, payload) {
            dst.extend(src);
        }
        self.json(name, &v)
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<PathBuf> {
        let path = self.dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(value).expect("json values serialise");
        std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
        self.written.push(format!("{name}.json"));
        Ok(path)
    }

    pub fn script(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(format!("{name}.gp"));
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        self.written.push(format!("{name}.gp"));
        Ok(path)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::io(path, std::io::Error::other(e.to_string()))
}

/// Shortest representation that parses back to the same `f64`; exponent
/// notation outside `[1e-5, 1e16)`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Reads a CSV written by [`Artifacts::csv`] back into its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Check(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Line plot of `y` columns against column `x` of one CSV.
pub fn line_plot(
    csv: &str,
    title: &str,
    x: (usize, &str),
    ys: &[(usize, &str)],
    logscale_y: bool,
) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel '{}'\n",
        x.1
    );
    if logscale_y {
        s.push_str("set logscale y\n");
    }
    let series: Vec<String> = ys
        .iter()
        .map(|(col, label)| format!("'{csv}' using {}:{} with lines title '{label}'", x.0, col))
        .collect();
    s.push_str(&format!("plot {}\n", series.join(", \\\n     ")));
    s
}

/// Heat map of column `c` over columns `a`, `b` of a long-format CSV.
pub fn surface_plot(csv: &str, title: &str, a: &str, b: &str, c: usize) -> String {
    format!(
        "set datafile separator ','\nset title '{title}'\nset xlabel '{a}'\nset ylabel '{b}'\nset view map\n\
         set pm3d at b\nsplot '{csv}' using 1:2:{c} with points palette pointsize 1 pointtype 5 notitle\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, 123456789.12345679] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_reads_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path(), "test", Value::Null).unwrap();
        let rows = vec![vec![0.1, 2.0 / 3.0], vec![1e-17, -4.0]];
        let path = a.csv("t", &["a", "b"], &rows, Value::Null).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["a", "b"]);
        assert_eq!(back, rows);
        assert!(dir.path().join("t.json").exists());
    }
}
