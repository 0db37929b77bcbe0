//! Plain-text persistence of grid snapshots, agent trajectories and tumour
//! layouts.
//!
//! A snapshot file holds one field at one time:
//!
//! ```text
//! # t=2.0000000000000001e-1 nx=51 ny=51 dx=2.0000000000000000e-2
//! v(0,0),v(1,0),...,v(nx-1,0)
//! ...
//! ```
//!
//! Rows run along `x`, one row per `y` index. Values carry 17 significant
//! digits so a read reproduces the written field bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::models::TumorLayout;

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

/// `{field}_{index:04}.csv`.
pub fn snapshot_file_name(field: &str, index: usize) -> String {
    format!("{field}_{index:04}.csv")
}

pub fn write_snapshot(path: &Path, time: f64, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# t={time:.16e} nx={} ny={} dx={:.16e}", g.nx, g.ny, g.dx)?;
    for row in field.values().chunks(g.nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot back as `(t, field)`. The grid side length is
/// recovered as `dx·(nx − 1)`.
pub fn read_snapshot(path: &Path) -> Result<(f64, ScalarField)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header =
        header.trim().strip_prefix('#').ok_or_else(|| data_err(path, "missing '# t=.. nx=.. ny=.. dx=..' header"))?;
    let (mut t, mut nx, mut ny, mut dx) = (None, None, None, None);
    for item in header.split_whitespace() {
        let (key, value) = item.split_once('=').ok_or_else(|| data_err(path, format!("bad header item '{item}'")))?;
        let bad = |_| data_err(path, format!("bad value for '{key}'"));
        match key {
            "t" => t = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "nx" => nx = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "ny" => ny = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "dx" => dx = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(data_err(path, format!("unknown header key '{key}'"))),
        }
    }
    let (Some(t), Some(nx), Some(ny), Some(dx)) = (t, nx, ny, dx) else {
        return Err(data_err(path, "header needs t, nx, ny and dx"));
    };
    let grid = Grid2D::new(dx * (nx - 1).max(1) as f64, nx, ny)?;
    let mut csv = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut values = Vec::with_capacity(grid.len());
    for (row, record) in csv.records().enumerate() {
        let record = record.map_err(|e| data_err(path, e))?;
        if record.len() != nx {
            return Err(data_err(path, format!("row {row} has {} values, expected {nx}", record.len())));
        }
        for v in &record {
            values.push(v.trim().parse::<f64>().map_err(|e| data_err(path, format!("row {row}: {e}")))?);
        }
    }
    if values.len() != grid.len() {
        return Err(data_err(path, format!("{} values, expected {}", values.len(), grid.len())));
    }
    Ok((t, ScalarField::from_values(grid, values)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    time: f64,
    agent_id: usize,
    x: f64,
    y: f64,
}

/// Agent positions at a sequence of times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl Trajectories {
    /// Positions recorded at `t`, if any (to within `1e-9`).
    pub fn at_time(&self, t: f64) -> Option<&[[f64; 2]]> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9).map(|k| self.positions[k].as_slice())
    }
}

/// CSV with columns `time,agent_id,x,y`, grouped by time.
pub fn write_trajectories(path: &Path, traj: &Trajectories) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e))?;
    for (t, ps) in traj.times.iter().zip(&traj.positions) {
        for (id, p) in ps.iter().enumerate() {
            w.serialize(TrajectoryRow { time: *t, agent_id: id, x: p[0], y: p[1] }).map_err(|e| data_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Trajectories> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let mut traj = Trajectories { times: Vec::new(), positions: Vec::new() };
    for (line, row) in r.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| data_err(path, e))?;
        if traj.times.last() != Some(&row.time) {
            if traj.times.last().is_some_and(|&t| row.time < t) {
                return Err(data_err(path, format!("record {line}: times must be non-decreasing")));
            }
            traj.times.push(row.time);
            traj.positions.push(Vec::new());
        }
        let ps = traj.positions.last_mut().expect("pushed above");
        if row.agent_id != ps.len() {
            return Err(data_err(path, format!("record {line}: agent ids must run 0, 1, .. within each time")));
        }
        ps.push([row.x, row.y]);
    }
    if traj.times.is_empty() {
        return Err(data_err(path, "no trajectory records"));
    }
    let n = traj.positions[0].len();
    if traj.positions.iter().any(|p| p.len() != n) {
        return Err(data_err(path, "agent count changes between times"));
    }
    Ok(traj)
}

#[derive(Debug, Serialize, Deserialize)]
struct TumorRow {
    x: f64,
    y: f64,
    radius: f64,
}

/// CSV with columns `x,y,radius`, one tumour cell per row.
pub fn write_tumors(path: &Path, layout: &TumorLayout) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e))?;
    for c in &layout.centers {
        w.serialize(TumorRow { x: c[0], y: c[1], radius: layout.r_tum }).map_err(|e| data_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Tumour centres and radii, as `(centres, radii)`.
pub fn read_tumors(path: &Path) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let mut centers = Vec::new();
    let mut radii = Vec::new();
    for row in r.deserialize::<TumorRow>() {
        let row = row.map_err(|e| data_err(path, e))?;
        centers.push([row.x, row.y]);
        radii.push(row.radius);
    }
    Ok((centers, radii))
}
