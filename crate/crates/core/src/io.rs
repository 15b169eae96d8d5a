//! File formats: radial fields and trajectories as CSV, bundles as JSON.
//!
//! A field file carries a `# N=<dim> r_max=<val>` header followed by
//! `r,u` rows, one per cell-centered node. A trajectory file carries the
//! same header plus the y extent, then a matrix whose first row lists the
//! radii and whose first column lists the y ordinates.

use crate::error::{Result, SolverError};
use crate::grid::{RadialField, RadialGrid};
use crate::trajectory::{CylinderGrid, EnergyProfile, Trajectory};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

fn fmt(x: f64) -> String {
    // shortest representation that round-trips f64
    let mut s = format!("{x:e}");
    if s.parse::<f64>() != Ok(x) {
        s = format!("{x:.17e}");
    }
    s
}

fn bad(path: &Path, reason: impl Into<String>) -> SolverError {
    SolverError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_field_csv(path: &Path, u: &RadialField) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# N={} r_max={}", u.grid.dim, fmt(u.grid.r_max));
    for (r, v) in u.grid.nodes.iter().zip(&u.values) {
        let _ = writeln!(out, "{},{}", fmt(*r), fmt(*v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<RadialField> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(path, "empty file"))?;
    let (dim, r_max) = parse_header(path, header)?;
    let mut values = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let col = line
            .split(',')
            .nth(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(path, "expected r,u rows"))?;
        values.push(col);
    }
    let grid = RadialGrid::new(dim, r_max, values.len())?;
    RadialField::new(grid, values)
}

fn parse_header(path: &Path, header: &str) -> Result<(usize, f64)> {
    let mut dim = None;
    let mut r_max = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("N=") {
            dim = v.parse::<usize>().ok();
        }
        if let Some(v) = tok.strip_prefix("r_max=") {
            r_max = v.parse::<f64>().ok();
        }
    }
    match (dim, r_max) {
        (Some(d), Some(r)) => Ok((d, r)),
        _ => Err(bad(path, "missing N= or r_max= in header")),
    }
}

pub fn write_trajectory_csv(path: &Path, v: &Trajectory) -> Result<()> {
    let g = &v.grid;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# N={} r_max={} y_min={} y_max={}",
        g.radial.dim,
        fmt(g.radial.r_max),
        fmt(g.y_min),
        fmt(g.y_max)
    );
    let mut first = String::from("y\\r");
    for r in &g.radial.nodes {
        let _ = write!(first, ",{}", fmt(*r));
    }
    let _ = writeln!(out, "{first}");
    for (j, row) in v.values.iter().enumerate() {
        let mut line = fmt(g.y(j));
        for x in row {
            let _ = write!(line, ",{}", fmt(*x));
        }
        let _ = writeln!(out, "{line}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(path, "empty file"))?;
    let (dim, r_max) = parse_header(path, header)?;
    let mut y_min = None;
    let mut y_max = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("y_min=") {
            y_min = v.parse::<f64>().ok();
        }
        if let Some(v) = tok.strip_prefix("y_max=") {
            y_max = v.parse::<f64>().ok();
        }
    }
    let (y_min, y_max) = match (y_min, y_max) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(bad(path, "missing y_min= or y_max= in header")),
    };
    let radii_row = lines.next().ok_or_else(|| bad(path, "missing radii row"))?;
    let n_r = radii_row.split(',').count() - 1;
    let mut values: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Option<Vec<f64>> = line
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<f64>().ok())
            .collect();
        let row = row.ok_or_else(|| bad(path, "non-numeric matrix entry"))?;
        if row.len() != n_r {
            return Err(bad(path, "ragged matrix row"));
        }
        values.push(row);
    }
    let radial = RadialGrid::new(dim, r_max, n_r)?;
    let grid = CylinderGrid::new(Arc::clone(&radial), y_min, y_max, values.len())?;
    Trajectory::new(grid, values)
}

pub fn write_energy_profile_csv(path: &Path, prof: &EnergyProfile) -> Result<()> {
    let mut out = String::from("y,kinetic,potential,energy\n");
    for i in 0..prof.y.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt(prof.y[i]),
            fmt(prof.kinetic[i]),
            fmt(prof.potential[i]),
            fmt(prof.energy[i])
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| bad(path, format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| bad(path, e.to_string()))
}
