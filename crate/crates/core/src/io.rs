//! Deterministic CSV output, experiment manifests and trajectory storage.
//!
//! Every CSV starts with one `#`-prefixed JSON line. Floats are written with
//! 17 significant digits so that a read-back reproduces them exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{numeric, Result};
use crate::flow_core::{FlowConfig, FlowState, Termination, Trajectory};

/// Crate version recorded in manifests.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` with 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Render a CSV with a JSON header line.
pub fn csv_string(meta: &Value, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    s.push('#');
    s.push_str(&serde_json::to_string(meta).expect("JSON values serialize"));
    s.push('\n');
    s.push_str(&columns.join(","));
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, meta: &Value, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    fs::write(path, csv_string(meta, columns, rows))?;
    Ok(())
}

/// A CSV file read back: header metadata, column names and rows.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub meta: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines();
    let head = lines.next().unwrap_or("");
    let Some(json) = head.strip_prefix('#') else {
        return numeric("CSV is missing its '#' header line");
    };
    let meta: Value = serde_json::from_str(json)?;
    let columns: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        match row {
            Ok(r) if r.len() == columns.len() => rows.push(r),
            _ => return numeric(format!("malformed CSV row {}", k + 3)),
        }
    }
    Ok(CsvTable { meta, columns, rows })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub config: Value,
    pub parameters: Value,
    /// Output file names relative to the manifest directory.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub version: String,
    /// SHA-256 of the command name, resolved config and version.
    pub input_hash: String,
    /// Exit status the command finished with.
    pub status: i32,
}

impl ExperimentManifest {
    pub fn new(command: &str, config: Value, parameters: Value) -> Self {
        let key = serde_json::json!({ "command": command, "config": config, "version": ARTIFACT_VERSION });
        let input_hash = content_hash(key.to_string().as_bytes());
        Self {
            command: command.to_string(),
            config,
            parameters,
            outputs: Vec::new(),
            wall_clock_s: 0.0,
            version: ARTIFACT_VERSION.to_string(),
            input_hash,
            status: 0,
        }
    }

    /// Header metadata for output files: the manifest hash plus `extra`.
    pub fn header(&self, extra: Value) -> Value {
        let mut m = serde_json::json!({
            "manifest_hash": self.input_hash,
            "command": self.command,
            "version": self.version,
        });
        if let (Value::Object(dst), Value::Object(src)) = (&mut m, extra) {
            dst.extend(src);
        }
        m
    }

    /// Write a CSV into `dir` and register it.
    pub fn write_csv(
        &mut self,
        dir: &Path,
        name: &str,
        extra: Value,
        columns: &[&str],
        rows: &[Vec<f64>],
    ) -> Result<PathBuf> {
        let p = dir.join(name);
        write_csv(&p, &self.header(extra), columns, rows)?;
        self.outputs.push(name.to_string());
        Ok(p)
    }

    /// Write a JSON document into `dir` (with the manifest hash) and register it.
    pub fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, body: &T) -> Result<PathBuf> {
        let p = dir.join(name);
        let doc = serde_json::json!({ "manifest_hash": self.input_hash, "body": body });
        fs::write(&p, serde_json::to_string_pretty(&doc)?)?;
        self.outputs.push(name.to_string());
        Ok(p)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(self)?)?;
        Ok(p)
    }
}

/// Per-run summary stored next to the snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub snapshots: Vec<String>,
    pub termination: String,
    pub admissible: bool,
    pub steps: usize,
    pub regrids: Vec<(f64, usize)>,
}

/// Write `config.txt`, `trajectory.json` and one CSV per snapshot into `dir`.
pub fn save_trajectory(tr: &Trajectory, dir: &Path, manifest: &mut ExperimentManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = format!("# manifest_hash = {}\n{}", manifest.input_hash, tr.config.to_text());
    fs::write(dir.join("config.txt"), text)?;
    manifest.outputs.push("config.txt".into());
    let mut names = Vec::new();
    for (k, st) in tr.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.csv");
        let rows: Vec<Vec<f64>> = (0..st.x.len())
            .map(|j| vec![st.x[j], st.d[j], st.velocity.get(j).copied().unwrap_or(f64::NAN)])
            .collect();
        let extra = serde_json::json!({ "t": fmt_f64(st.t), "revision": st.revision });
        manifest.write_csv(dir, &name, extra, &["x", "offset", "velocity"], &rows)?;
        names.push(name);
    }
    let idx = TrajectoryIndex {
        snapshots: names,
        termination: tr.termination.to_string(),
        admissible: tr.termination.is_admissible(),
        steps: tr.steps,
        regrids: tr.regrids.clone(),
    };
    manifest.write_json(dir, "trajectory.json", &idx)?;
    Ok(())
}

/// Read back a directory written by [`save_trajectory`].
///
/// The termination is restored as `Completed` or `Stopped` for admissible
/// runs; other reasons survive only as text in the index.
pub fn load_trajectory(dir: &Path) -> Result<(Trajectory, TrajectoryIndex)> {
    let config = FlowConfig::parse(&fs::read_to_string(dir.join("config.txt"))?)?;
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.join("trajectory.json"))?)?;
    let idx: TrajectoryIndex = serde_json::from_value(doc["body"].clone())?;
    let mut snapshots = Vec::with_capacity(idx.snapshots.len());
    for name in &idx.snapshots {
        let tab = read_csv(&dir.join(name))?;
        let t: f64 = tab.meta["t"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| crate::Error::Numeric(format!("{name}: header lacks t")))?;
        let revision = tab.meta["revision"].as_u64().unwrap_or(0) as usize;
        let col = |c: &str| {
            tab.column(c)
                .ok_or_else(|| crate::Error::Numeric(format!("{name}: missing column {c}")))
        };
        snapshots.push(FlowState {
            t,
            x: col("x")?,
            d: col("offset")?,
            velocity: col("velocity")?,
            revision,
        });
    }
    let termination = if idx.termination == Termination::Completed.to_string() {
        Termination::Completed
    } else {
        Termination::Stopped
    };
    Ok((
        Trajectory {
            config,
            snapshots,
            termination,
            regrids: idx.regrids.clone(),
            steps: idx.steps,
        },
        idx,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE, -0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let meta = serde_json::json!({"a": 1});
        let rows = vec![vec![1.0, 2.5], vec![-3.0, 1e-17]];
        let tab = parse_csv(&csv_string(&meta, &["p", "q"], &rows)).unwrap();
        assert_eq!(tab.meta, meta);
        assert_eq!(tab.rows, rows);
        assert_eq!(tab.column("q").unwrap(), vec![2.5, 1e-17]);
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn missing_header_rejected() {
        assert!(parse_csv("x,y\n1,2\n").is_err());
    }
}
