//! File formats: path and surface CSVs, the binary grid container and the
//! run manifest.
//!
//! # Grid container
//!
//! All integers and floats are little-endian.
//!
//! | field | type |
//! |-------|------|
//! | magic `LITDARK1` | 8 bytes |
//! | schema version (currently 1) | u32 |
//! | kind: 1 value, 2 policy | u32 |
//! | `n_t`, `n_x`, `n_s`, `n_d` | 4 x u32 |
//! | horizon, control cap (0 for values) | 2 x f64 |
//! | x, s_b and delta node coordinates | `n_x + n_s + n_d` x f64 |
//! | array count | u32 |
//! | per array: name length, UTF-8 name, `n_t n_x n_s n_d` values | u32, bytes, f64... |
//!
//! Arrays are row-major over `(t, x, s_b, delta)`; stored times are
//! `k T / (n_t - 1)`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use litdark_core::grid::{GridSpec, PolicyGrid, ValueGrid};
use litdark_core::sim::PathRecord;
use serde::Serialize;

use crate::error::CliError;
use crate::scenario::Scenario;

pub const MAGIC: &[u8; 8] = b"LITDARK1";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Value = 1,
    Policy = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub shape: [usize; 4],
    pub horizon: f64,
    pub control_cap: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub d: Vec<f64>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn from_value(v: &ValueGrid) -> Self {
        Self::new(ContainerKind::Value, &v.grid, 0.0, vec![("u".into(), v.u.clone())])
    }

    pub fn from_policy(p: &PolicyGrid) -> Self {
        Self::new(
            ContainerKind::Policy,
            &p.grid,
            p.control_cap,
            vec![("nu".into(), p.nu.clone()), ("eta".into(), p.eta.clone())],
        )
    }

    fn new(kind: ContainerKind, g: &GridSpec, control_cap: f64, arrays: Vec<(String, Vec<f64>)>) -> Self {
        Self {
            kind,
            shape: g.shape(),
            horizon: g.horizon,
            control_cap,
            x: g.x.nodes().to_vec(),
            s: g.s.nodes().to_vec(),
            d: g.d.nodes().to_vec(),
            arrays,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        for n in self.shape {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in [self.horizon, self.control_cap].iter().chain(&self.x).chain(&self.s).chain(&self.d) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::Schema("not a grid container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(CliError::Schema(format!("unsupported container version {version}")));
        }
        let kind = match r.u32()? {
            1 => ContainerKind::Value,
            2 => ContainerKind::Policy,
            k => return Err(CliError::Schema(format!("unknown container kind {k}"))),
        };
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let horizon = r.f64()?;
        let control_cap = r.f64()?;
        let x = r.f64s(shape[1])?;
        let s = r.f64s(shape[2])?;
        let d = r.f64s(shape[3])?;
        let count = r.u32()? as usize;
        let len: usize = shape.iter().product();
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CliError::Schema("array name is not UTF-8".into()))?;
            arrays.push((name, r.f64s(len)?));
        }
        if r.pos != bytes.len() {
            return Err(CliError::Schema("trailing bytes after the last array".into()));
        }
        Ok(Self {
            kind,
            shape,
            horizon,
            control_cap,
            x,
            s,
            d,
            arrays,
        })
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Schema("truncated grid container".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub const PATH_HEADER: [&str; 9] = ["time", "x", "s_b", "delta", "mid", "ask", "w", "nu", "eta"];

fn path_row(rec: &PathRecord, k: usize) -> [String; 9] {
    let st = &rec.states[k];
    let c = rec.controls[k];
    [
        rec.times[k],
        st.x,
        st.s_b,
        st.delta,
        st.mid(),
        st.ask(),
        st.w,
        c.nu,
        c.eta,
    ]
    .map(|v| v.to_string())
}

/// Writes paths as CSV: one long-format file with a leading `path_id` column,
/// or one file per path under `dir/paths/`. Returns the files written.
pub fn write_paths(dir: &Path, stem: &str, paths: &[PathRecord], long_format: bool) -> Result<Vec<PathBuf>, CliError> {
    if long_format {
        let file = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&file)?;
        let mut header = vec!["path_id"];
        header.extend(PATH_HEADER);
        w.write_record(&header)?;
        for (p, rec) in paths.iter().enumerate() {
            for k in 0..rec.times.len() {
                let row = path_row(rec, k);
                w.write_record(std::iter::once(p.to_string()).chain(row))?;
            }
        }
        w.flush()?;
        return Ok(vec![file]);
    }
    let sub = dir.join(stem);
    std::fs::create_dir_all(&sub)?;
    let mut out = Vec::with_capacity(paths.len());
    for (p, rec) in paths.iter().enumerate() {
        let file = sub.join(format!("path_{p:05}.csv"));
        let mut w = csv::Writer::from_path(&file)?;
        w.write_record(PATH_HEADER)?;
        for k in 0..rec.times.len() {
            w.write_record(path_row(rec, k))?;
        }
        w.flush()?;
        out.push(file);
    }
    Ok(out)
}

/// Writes a table of floats with the given header.
pub fn write_table(file: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(file)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    T,
    X,
    S,
    D,
}

impl SliceAxis {
    fn name(self) -> &'static str {
        match self {
            SliceAxis::T => "t",
            SliceAxis::X => "x",
            SliceAxis::S => "s_b",
            SliceAxis::D => "delta",
        }
    }

    fn coord(self, g: &GridSpec, idx: usize) -> f64 {
        match self {
            SliceAxis::T => g.time(idx),
            SliceAxis::X => g.x.nodes()[idx],
            SliceAxis::S => g.s.nodes()[idx],
            SliceAxis::D => g.d.nodes()[idx],
        }
    }

    fn len(self, g: &GridSpec) -> usize {
        g.shape()[self as usize]
    }
}

/// Rows `(a, b, arrays...)` of a 2-D cut through 4-D arrays, holding the two
/// axes not in `free` at the given indices.
pub fn surface_rows(
    g: &GridSpec,
    free: [SliceAxis; 2],
    fixed: [(SliceAxis, usize); 2],
    arrays: &[&[f64]],
) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut header = vec![free[0].name().to_string(), free[1].name().to_string()];
    header.extend((0..arrays.len()).map(|k| format!("v{k}")));
    let mut rows = Vec::new();
    for a in 0..free[0].len(g) {
        for b in 0..free[1].len(g) {
            let mut idx = [0usize; 4];
            idx[free[0] as usize] = a;
            idx[free[1] as usize] = b;
            for (axis, i) in fixed {
                idx[axis as usize] = i;
            }
            let flat = g.index(idx[0], idx[1], idx[2], idx[3]);
            let mut row = vec![free[0].coord(g, a), free[1].coord(g, b)];
            row.extend(arrays.iter().map(|arr| arr[flat]));
            rows.push(row);
        }
    }
    (header, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    /// Fully resolved scenario, as TOML.
    pub resolved_scenario: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, scenario: &Scenario) -> Self {
        Self {
            tool: "litdark",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            scenario: scenario.name().into(),
            scenario_sha256: scenario.hash.clone(),
            seed: scenario.sim.as_ref().map(|s| s.seed),
            paths: scenario.sim.as_ref().map(|s| s.n_paths),
            resolved_scenario: toml::to_string(&scenario.file).unwrap_or_default(),
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, dir: &Path, file: &Path) {
        let rel = file.strip_prefix(dir).unwrap_or(file);
        self.outputs.push(rel.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let file = dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&file)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(file)
    }
}
