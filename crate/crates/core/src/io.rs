//! Field files: a JSON metadata sidecar plus a flat little-endian binary of
//! 64-bit floats in row-major, component-major order, and a CSV export for
//! plotting.

use crate::error::{Error, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Sidecar metadata stored as `<name>.json` next to `<name>.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMeta {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub components: usize,
    pub name: String,
}

fn write_planes(dir: &Path, name: &str, grid: &Grid, planes: &[&[f64]]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = FieldMeta {
        nx: grid.nx,
        ny: grid.ny,
        h: grid.h,
        components: planes.len(),
        name: name.to_string(),
    };
    fs::write(
        dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    let mut buf = Vec::with_capacity(planes.len() * grid.len() * 8);
    for plane in planes {
        for v in *plane {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(format!("{name}.bin")), buf)?;
    Ok(())
}

fn read_planes(dir: &Path, name: &str) -> Result<(FieldMeta, Vec<Vec<f64>>)> {
    let meta: FieldMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{name}.bin")))?;
    let expected = meta.components * meta.nx * meta.ny * 8;
    if bytes.len() != expected {
        return Err(Error::Grid(format!(
            "field '{name}': binary holds {} bytes, metadata implies {expected}",
            bytes.len()
        )));
    }
    let n = meta.nx * meta.ny;
    let mut planes = Vec::with_capacity(meta.components);
    for c in 0..meta.components {
        let mut plane = Vec::with_capacity(n);
        for k in 0..n {
            let off = (c * n + k) * 8;
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Grid(format!(
                    "field '{name}': non-finite value at component {c}, node {k}"
                )));
            }
            plane.push(v);
        }
        planes.push(plane);
    }
    Ok((meta, planes))
}

pub fn write_scalar(dir: &Path, name: &str, field: &ScalarField) -> Result<()> {
    write_planes(dir, name, &field.grid, &[&field.values])
}

pub fn read_scalar(dir: &Path, name: &str) -> Result<ScalarField> {
    let (meta, mut planes) = read_planes(dir, name)?;
    if meta.components != 1 {
        return Err(Error::DimensionMismatch(format!(
            "field '{name}' has {} components, expected 1",
            meta.components
        )));
    }
    Ok(ScalarField {
        grid: Grid::new(meta.nx, meta.ny)?,
        values: planes.pop().unwrap(),
    })
}

pub fn write_vector(dir: &Path, name: &str, field: &VectorField) -> Result<()> {
    let planes: Vec<&[f64]> = field.comps.iter().map(|p| p.as_slice()).collect();
    write_planes(dir, name, &field.grid, &planes)
}

pub fn read_vector(dir: &Path, name: &str) -> Result<VectorField> {
    let (meta, planes) = read_planes(dir, name)?;
    if !(2..=3).contains(&meta.components) {
        return Err(Error::DimensionMismatch(format!(
            "field '{name}' has {} components, expected 2 or 3",
            meta.components
        )));
    }
    Ok(VectorField {
        grid: Grid::new(meta.nx, meta.ny)?,
        ncomp: meta.components,
        comps: planes,
    })
}

pub fn write_matrix(dir: &Path, name: &str, field: &MatrixField) -> Result<()> {
    let planes: Vec<&[f64]> = field.planes.iter().map(|p| p.as_slice()).collect();
    write_planes(dir, name, &field.grid, &planes)
}

pub fn read_matrix(dir: &Path, name: &str) -> Result<MatrixField> {
    let (meta, planes) = read_planes(dir, name)?;
    let dim = (meta.components as f64).sqrt().round() as usize;
    if dim * dim != meta.components {
        return Err(Error::DimensionMismatch(format!(
            "field '{name}' has {} components, not a square count",
            meta.components
        )));
    }
    Ok(MatrixField {
        grid: Grid::new(meta.nx, meta.ny)?,
        dim,
        planes,
    })
}

/// CSV export: header row `x,y,<labels...>`, one node per line, row-major.
pub fn write_csv(path: &Path, grid: &Grid, planes: &[&[f64]], labels: &[&str]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "x,y,{}", labels.join(","))?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.coords(i, j);
            write!(f, "{x},{y}")?;
            let k = grid.idx(i, j);
            for plane in planes {
                write!(f, ",{}", plane[k])?;
            }
            writeln!(f)?;
        }
    }
    Ok(())
}

pub fn write_scalar_csv(path: &Path, field: &ScalarField, label: &str) -> Result<()> {
    write_csv(path, &field.grid, &[&field.values], &[label])
}
