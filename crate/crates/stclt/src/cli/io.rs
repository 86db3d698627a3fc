//! File formats: CSV for bulk numeric data, JSON for configs, estimates and
//! reports. Every output file begins with a `#`-prefixed metadata block
//! (tool version, config hash, seed) so a run can be reproduced exactly from
//! its artifacts; readers skip those lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::birthdeath::{BdPath, BdPoint, PointLabel, PointPattern};
use crate::car::CarPath;
use crate::harness::CltReport;
use nalgebra::DVector;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("malformed data in {path}: {detail}")]
    Malformed {
        path: std::path::PathBuf,
        detail: String,
    },
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> IoError {
    IoError::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reproducibility metadata stamped on every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new<C: Serialize>(effective_config: &C, seed: u64) -> Self {
        let canonical =
            serde_json::to_vec(effective_config).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let config_hash = digest[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        Meta {
            tool: "stclt".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
        }
    }

    fn header_lines(&self) -> String {
        format!(
            "# {} v{}\n# config_hash: {}\n# seed: {}\n",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// JSON document wrapper putting the metadata block first.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub meta: &'a Meta,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: T) -> Result<(), IoError> {
    let doc = Document { meta, body };
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(write_err(path))
}

fn open_csv(path: &Path, meta: &Meta, header: &str) -> Result<BufWriter<File>, IoError> {
    let file = File::create(path).map_err(write_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(meta.header_lines().as_bytes())
        .map_err(write_err(path))?;
    w.write_all(header.as_bytes()).map_err(write_err(path))?;
    w.write_all(b"\n").map_err(write_err(path))?;
    Ok(w)
}

/// One autoregressive path as `k,node,value` rows, `k = 1..=K` in lattice
/// order (the initial field is reproducible from config and seed).
pub fn write_car_path_csv(path: &Path, meta: &Meta, car: &CarPath) -> Result<(), IoError> {
    let mut w = open_csv(path, meta, "k,node,value")?;
    for (k, state) in car.states.iter().enumerate() {
        for (node, value) in state.iter().enumerate() {
            writeln!(w, "{},{},{}", k + 1, node, fmt_f64(*value)).map_err(write_err(path))?;
        }
    }
    w.flush().map_err(write_err(path))
}

/// Shortest representation that parses back to the identical f64.
fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 is the shortest round-trippable decimal in Rust
    format!("{v}")
}

pub fn read_car_path_csv(
    path: &Path,
    nodes: usize,
    horizon: usize,
    x0: DVector<f64>,
) -> Result<CarPath, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut states = vec![DVector::<f64>::zeros(nodes); horizon];
    let mut seen = vec![vec![false; nodes]; horizon];
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(malformed(path, format!("expected 3 columns, got {}", record.len())));
        }
        let k: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("bad k {:?}", &record[0])))?;
        let node: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("bad node {:?}", &record[1])))?;
        let value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("bad value {:?}", &record[2])))?;
        if k == 0 || k > horizon {
            return Err(malformed(path, format!("k = {k} outside 1..={horizon}")));
        }
        if node >= nodes {
            return Err(malformed(path, format!("node {node} outside 0..{nodes}")));
        }
        states[k - 1][node] = value;
        seen[k - 1][node] = true;
    }
    for (k, row) in seen.iter().enumerate() {
        if let Some(node) = row.iter().position(|s| !s) {
            return Err(malformed(path, format!("missing value at k={}, node={node}", k + 1)));
        }
    }
    Ok(CarPath {
        x0,
        states,
        origin: None,
    })
}

/// Point pattern path as `id,parent_id,x,y,k,label` rows for every
/// generation (k = 0 is the initial pattern; survivors reappear at each k).
pub fn write_bd_path_csv(path: &Path, meta: &Meta, bd: &BdPath) -> Result<(), IoError> {
    let mut w = open_csv(path, meta, "id,parent_id,x,y,k,label")?;
    for k in 0..=bd.horizon() {
        for p in bd.generation(k).points() {
            let parent = p.parent.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.id,
                parent,
                fmt_f64(p.x),
                fmt_f64(p.y),
                k,
                p.label.as_str()
            )
            .map_err(write_err(path))?;
        }
    }
    w.flush().map_err(write_err(path))
}

pub fn read_bd_path_csv(path: &Path, horizon: usize) -> Result<BdPath, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut generations: Vec<Vec<BdPoint>> = vec![Vec::new(); horizon + 1];
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 6 {
            return Err(malformed(path, format!("expected 6 columns, got {}", record.len())));
        }
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("bad id {:?}", &record[0])))?;
        let parent = if record[1].trim().is_empty() {
            None
        } else {
            Some(
                record[1]
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| malformed(path, format!("bad parent {:?}", &record[1])))?,
            )
        };
        let x: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| malformed(path, "bad x"))?;
        let y: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| malformed(path, "bad y"))?;
        let k: usize = record[4]
            .trim()
            .parse()
            .map_err(|_| malformed(path, "bad k"))?;
        let label = PointLabel::parse(record[5].trim())
            .ok_or_else(|| malformed(path, format!("bad label {:?}", &record[5])))?;
        if k > horizon {
            return Err(malformed(path, format!("k = {k} beyond horizon {horizon}")));
        }
        generations[k].push(BdPoint {
            id,
            parent,
            x,
            y,
            birth_time: if label == PointLabel::Survivor || label == PointLabel::Initial {
                0
            } else {
                k as u32
            },
            label,
        });
    }
    let mut gens = generations.into_iter();
    let x0 = PointPattern::new(gens.next().unwrap_or_default());
    Ok(BdPath {
        x0,
        generations: gens.map(PointPattern::new).collect(),
    })
}

/// Initial pattern file: `id,x,y` rows.
pub fn read_initial_pattern_csv(path: &Path) -> Result<PointPattern, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(malformed(path, format!("expected 3 columns, got {}", record.len())));
        }
        let id: u64 = record[0].trim().parse().map_err(|_| malformed(path, "bad id"))?;
        let x: f64 = record[1].trim().parse().map_err(|_| malformed(path, "bad x"))?;
        let y: f64 = record[2].trim().parse().map_err(|_| malformed(path, "bad y"))?;
        points.push(BdPoint {
            id,
            parent: None,
            x,
            y,
            birth_time: 0,
            label: PointLabel::Initial,
        });
    }
    Ok(PointPattern::new(points))
}

/// Covariate grid file: `x,y,z` rows on a regular grid.
pub fn read_covariate_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut triples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(malformed(path, format!("expected 3 columns, got {}", record.len())));
        }
        let x: f64 = record[0].trim().parse().map_err(|_| malformed(path, "bad x"))?;
        let y: f64 = record[1].trim().parse().map_err(|_| malformed(path, "bad y"))?;
        let z: f64 = record[2].trim().parse().map_err(|_| malformed(path, "bad z"))?;
        triples.push((x, y, z));
    }
    Ok(triples)
}

/// State file for explicit initial fields: `node,value` rows in lattice
/// order.
pub fn read_state_csv(path: &Path) -> Result<Vec<f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(malformed(path, format!("expected 2 columns, got {}", record.len())));
        }
        let node: usize = record[0].trim().parse().map_err(|_| malformed(path, "bad node"))?;
        let value: f64 = record[1].trim().parse().map_err(|_| malformed(path, "bad value"))?;
        rows.push((node, value));
    }
    rows.sort_by_key(|r| r.0);
    for (expect, (node, _)) in rows.iter().enumerate() {
        if *node != expect {
            return Err(malformed(path, format!("node indices must be 0..n, missing {expect}")));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

/// Per-level summary rows: one line per (level, component).
pub fn write_clt_summary_csv(path: &Path, meta: &Meta, report: &CltReport) -> Result<(), IoError> {
    let mut w = open_csv(
        path,
        meta,
        "regime,level,component,ks_d,ks_p,mardia_skew,mardia_kurt,var_ratio,decay_slope",
    )?;
    for level in &report.levels {
        for c in &level.components {
            let var_ratio = c
                .var_ratio
                .map(|v| fmt_f64(v))
                .unwrap_or_default();
            let decay_slope = level
                .decay
                .as_ref()
                .map(|d| fmt_f64(d.slope))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                report.regime,
                level.level,
                c.component,
                fmt_f64(c.ks_d),
                fmt_f64(c.ks_p),
                fmt_f64(level.mardia_skewness),
                fmt_f64(level.mardia_kurtosis),
                var_ratio,
                decay_slope,
            )
            .map_err(write_err(path))?;
        }
    }
    w.flush().map_err(write_err(path))
}

/// QQ rows: `level,component,theoretical_q,empirical_q`.
pub fn write_clt_qq_csv(path: &Path, meta: &Meta, report: &CltReport) -> Result<(), IoError> {
    let mut w = open_csv(path, meta, "level,component,theoretical_q,empirical_q")?;
    for level in &report.levels {
        for series in &level.qq {
            for (t, e) in series.theoretical.iter().zip(&series.empirical) {
                writeln!(
                    w,
                    "{},{},{},{}",
                    level.level,
                    series.component,
                    fmt_f64(*t),
                    fmt_f64(*e)
                )
                .map_err(write_err(path))?;
            }
        }
    }
    w.flush().map_err(write_err(path))
}
