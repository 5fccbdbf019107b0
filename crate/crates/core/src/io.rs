//! Binary field files and velocity models.
//!
//! Field file layout, all little-endian:
//!
//! | bytes | content                              |
//! |-------|--------------------------------------|
//! | 4     | magic `GIHF`                         |
//! | 2     | version (u16)                        |
//! | 8     | nz, nx (u32 each)                    |
//! | 32    | dz, dx, z0, x0 (f64 each)            |
//! | 8·N   | (Re, Im) f32 pairs, row-major, N = nz·nx |
//!
//! A velocity model is a raw little-endian f32 array (row-major) with a JSON
//! sidecar at `<path>.json` holding the grid, `v0` and `omega`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{file_error, Error, Result};
use crate::grid::{ComplexField, Grid2D, Medium};
use crate::Complex64;

pub const FIELD_MAGIC: &[u8; 4] = b"GIHF";
pub const FIELD_VERSION: u16 = 1;
pub const FIELD_HEADER_LEN: usize = 46;

/// A field as stored on disk: single precision, interleaved (Re, Im).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub grid: Grid2D,
    pub data: Vec<f32>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

impl FieldFile {
    pub fn from_field(field: &ComplexField) -> Self {
        let data = field.values().iter().flat_map(|v| [v.re as f32, v.im as f32]).collect();
        Self {
            grid: *field.grid(),
            data,
        }
    }

    pub fn to_field(&self) -> Result<ComplexField> {
        let values = self
            .data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
            .collect();
        ComplexField::new(self.grid, values)
    }

    pub fn payload_len(&self) -> usize {
        8 * self.grid.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FIELD_MAGIC);
        out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
        out.extend_from_slice(&(g.nz as u32).to_le_bytes());
        out.extend_from_slice(&(g.nx as u32).to_le_bytes());
        for v in [g.dz, g.dx, g.z0, g.x0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIELD_HEADER_LEN {
            return Err(format_err(
                bytes.len(),
                format!("header needs {FIELD_HEADER_LEN} bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..4] != FIELD_MAGIC {
            return Err(format_err(0, "bad magic, expected GIHF"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FIELD_VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (nz, nx) = (u32_at(6), u32_at(10));
        if nz == 0 {
            return Err(format_err(6, "nz must be positive"));
        }
        if nx == 0 {
            return Err(format_err(10, "nx must be positive"));
        }
        let grid = Grid2D {
            nz,
            nx,
            dz: f64_at(14),
            dx: f64_at(22),
            z0: f64_at(30),
            x0: f64_at(38),
        };
        grid.validate().map_err(|e| format_err(6, e.to_string()))?;
        let expected = FIELD_HEADER_LEN + 8 * grid.len();
        if bytes.len() < expected {
            return Err(format_err(
                bytes.len(),
                format!(
                    "truncated payload: expected {expected} bytes in total, found {}",
                    bytes.len()
                ),
            ));
        }
        if bytes.len() > expected {
            return Err(format_err(expected, "trailing bytes after payload"));
        }
        let data = bytes[FIELD_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { grid, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_field(path: &Path, field: &ComplexField) -> Result<()> {
    std::fs::write(path, FieldFile::from_field(field).to_bytes()).map_err(file_error(path))
}

pub fn read_field_file(path: &Path) -> Result<FieldFile> {
    FieldFile::from_bytes(&std::fs::read(path).map_err(file_error(path))?)
}

pub fn read_field(path: &Path) -> Result<ComplexField> {
    read_field_file(path)?.to_field()
}

/// Sidecar describing a raw velocity array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityHeader {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    pub z0: f64,
    pub x0: f64,
    pub v0: f64,
    pub omega: f64,
}

pub fn velocity_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_velocity(path: &Path, medium: &Medium) -> Result<()> {
    let g = medium.grid();
    let header = VelocityHeader {
        nz: g.nz,
        nx: g.nx,
        dz: g.dz,
        dx: g.dx,
        z0: g.z0,
        x0: g.x0,
        v0: medium.v0(),
        omega: medium.omega(),
    };
    let bytes: Vec<u8> = medium
        .velocity()
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    std::fs::write(path, bytes).map_err(file_error(path))?;
    let side = velocity_sidecar(path);
    std::fs::write(&side, serde_json::to_string_pretty(&header)?).map_err(file_error(&side))
}

pub fn read_velocity(path: &Path) -> Result<Medium> {
    let side = velocity_sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(file_error(&side))?;
    let h: VelocityHeader = serde_json::from_str(&text)?;
    let grid = Grid2D::new(h.nz, h.nx, h.dz, h.dx, h.z0, h.x0)?;
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    if bytes.len() != 4 * grid.len() {
        return Err(format_err(
            bytes.len().min(4 * grid.len()),
            format!(
                "{}: expected {} bytes of f32 velocity, found {}",
                path.display(),
                4 * grid.len(),
                bytes.len()
            ),
        ));
    }
    let velocity = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Medium::new(grid, velocity, h.v0, h.omega)
}
