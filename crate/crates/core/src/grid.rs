//! Regular 2D grids, velocity media, point sources and complex fields.
//!
//! All sampled arrays are stored row-major with depth (`z`) as the slow axis:
//! sample `(iz, ix)` lives at index `iz * nx + ix`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::greens::{green0, self_term, SelfTermMode};

/// Regular rectangular discretization. Spacing and origin are in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    #[serde(default)]
    pub z0: f64,
    #[serde(default)]
    pub x0: f64,
}

impl Grid2D {
    pub fn new(nz: usize, nx: usize, dz: f64, dx: f64, z0: f64, x0: f64) -> Result<Self> {
        let grid = Self { nz, nx, dz, dx, z0, x0 };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz < 2 || self.nx < 2 {
            return Err(invalid(format!("grid needs nz, nx >= 2, got {}x{}", self.nz, self.nx)));
        }
        if !(self.dz > 0.0 && self.dx > 0.0) || !self.dz.is_finite() || !self.dx.is_finite() {
            return Err(invalid(format!(
                "grid spacing must be positive, got dz={} dx={}",
                self.dz, self.dx
            )));
        }
        if !self.z0.is_finite() || !self.x0.is_finite() {
            return Err(invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nz * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one cell.
    pub fn cell_area(&self) -> f64 {
        self.dz * self.dx
    }

    /// Radius of the disk with the same area as one cell.
    pub fn equivalent_radius(&self) -> f64 {
        (self.cell_area() / PI).sqrt()
    }

    pub fn index(&self, iz: usize, ix: usize) -> usize {
        iz * self.nx + ix
    }

    pub fn z(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.dz
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    /// `(z, x)` of every sample in storage order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.len());
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                pts.push((self.z(iz), self.x(ix)));
            }
        }
        pts
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.nz - 1)
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn contains(&self, z: f64, x: f64) -> bool {
        z >= self.z0 && z <= self.z_max() && x >= self.x0 && x <= self.x_max()
    }

    /// True when both grids sample the same nodes.
    pub fn same_as(&self, other: &Grid2D) -> bool {
        self == other
    }

    pub(crate) fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(invalid(format!("{what}: grid mismatch ({self:?} vs {other:?})")))
        }
    }

    /// Grid enlarged by `pad` cells on every side, keeping the spacing.
    pub fn padded(&self, pad: usize) -> Grid2D {
        Grid2D {
            nz: self.nz + 2 * pad,
            nx: self.nx + 2 * pad,
            dz: self.dz,
            dx: self.dx,
            z0: self.z0 - pad as f64 * self.dz,
            x0: self.x0 - pad as f64 * self.dx,
        }
    }

    /// Bilinear interpolation of a node-sampled real array at `(z, x)`.
    /// Points outside the grid are clamped to the boundary.
    pub fn interpolate(&self, values: &[f64], z: f64, x: f64) -> f64 {
        let fz = ((z - self.z0) / self.dz).clamp(0.0, (self.nz - 1) as f64);
        let fx = ((x - self.x0) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let iz = (fz.floor() as usize).min(self.nz - 2);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let tz = fz - iz as f64;
        let tx = fx - ix as f64;
        let v00 = values[self.index(iz, ix)];
        let v01 = values[self.index(iz, ix + 1)];
        let v10 = values[self.index(iz + 1, ix)];
        let v11 = values[self.index(iz + 1, ix + 1)];
        (1.0 - tz) * ((1.0 - tx) * v00 + tx * v01) + tz * ((1.0 - tx) * v10 + tx * v11)
    }
}

/// Wavelength-normalized coordinate: one background wavelength maps to unit length.
pub fn normalize(coord: f64, omega: f64, v0: f64) -> f64 {
    omega * coord / (2.0 * PI * v0)
}

/// Per-axis normalized coordinates of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAxes {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn normalize_coords(grid: &Grid2D, omega: f64, v0: f64) -> Result<NormalizedAxes> {
    check_positive("omega", omega)?;
    check_positive("v0", v0)?;
    Ok(NormalizedAxes {
        z: (0..grid.nz).map(|iz| normalize(grid.z(iz), omega, v0)).collect(),
        x: (0..grid.nx).map(|ix| normalize(grid.x(ix), omega, v0)).collect(),
    })
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Velocity model over a grid together with the homogeneous background it is
/// compared against and the angular frequency of the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    grid: Grid2D,
    velocity: Vec<f64>,
    v0: f64,
    omega: f64,
}

impl Medium {
    pub fn new(grid: Grid2D, velocity: Vec<f64>, v0: f64, omega: f64) -> Result<Self> {
        grid.validate()?;
        check_positive("v0", v0)?;
        check_positive("omega", omega)?;
        if velocity.len() != grid.len() {
            return Err(invalid(format!(
                "velocity has {} samples, grid needs {}",
                velocity.len(),
                grid.len()
            )));
        }
        if let Some(bad) = velocity.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(format!(
                "velocity must be positive at sample {bad}, got {}",
                velocity[bad]
            )));
        }
        Ok(Self {
            grid,
            velocity,
            v0,
            omega,
        })
    }

    pub fn homogeneous(grid: Grid2D, v0: f64, omega: f64) -> Result<Self> {
        Self::new(grid, vec![v0; grid.len()], v0, omega)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Background wavenumber ω/v0 in 1/km.
    pub fn k0(&self) -> f64 {
        self.omega / self.v0
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI * self.v0 / self.omega
    }

    pub fn m0(&self) -> f64 {
        1.0 / (self.v0 * self.v0)
    }

    pub fn slowness_squared(&self) -> Vec<f64> {
        self.velocity.iter().map(|v| 1.0 / (v * v)).collect()
    }

    /// δm = 1/v² − 1/v0²; exactly zero where v = v0.
    pub fn delta_m(&self) -> Vec<f64> {
        let m0 = self.m0();
        self.velocity
            .iter()
            .map(|&v| if v == self.v0 { 0.0 } else { 1.0 / (v * v) - m0 })
            .collect()
    }

    /// Diagonal of the scattering operator: ω²·δm·W per node.
    pub fn scattering_weights(&self) -> Vec<f64> {
        let scale = self.omega * self.omega * self.grid.cell_area();
        self.delta_m().into_iter().map(|d| scale * d).collect()
    }

    pub fn max_abs_delta_m(&self) -> f64 {
        self.delta_m().iter().fold(0.0, |acc, d| acc.max(d.abs()))
    }
}

/// Pads the medium by `pad_cells` on every side. The perturbation is carried
/// into the pad by nearest-edge extension and multiplied by a raised-cosine
/// ramp that reaches zero `taper_width_cells` cells past the interior edge.
/// The interior is copied unchanged; the outermost ring is exactly background.
pub fn taper_perturbation(medium: &Medium, pad_cells: usize, taper_width_cells: usize) -> Result<Medium> {
    if taper_width_cells > pad_cells {
        return Err(invalid(format!(
            "taper width {taper_width_cells} exceeds pad {pad_cells}"
        )));
    }
    if pad_cells == 0 {
        return Ok(medium.clone());
    }
    let inner = medium.grid;
    let outer = inner.padded(pad_cells);
    let m0 = medium.m0();
    let dm = medium.delta_m();
    let mut velocity = vec![medium.v0; outer.len()];
    let pad = pad_cells as isize;
    for oz in 0..outer.nz {
        let iz = oz as isize - pad;
        let cz = iz.clamp(0, inner.nz as isize - 1);
        let wz = ramp(cz.abs_diff(iz), taper_width_cells);
        for ox in 0..outer.nx {
            let ix = ox as isize - pad;
            let cx = ix.clamp(0, inner.nx as isize - 1);
            let idx_in = inner.index(cz as usize, cx as usize);
            let idx_out = outer.index(oz, ox);
            if cz == iz && cx == ix {
                velocity[idx_out] = medium.velocity[idx_in];
                continue;
            }
            let w = wz * ramp(cx.abs_diff(ix), taper_width_cells);
            let d = w * dm[idx_in];
            if d != 0.0 {
                velocity[idx_out] = 1.0 / (m0 + d).sqrt();
            }
        }
    }
    Medium::new(outer, velocity, medium.v0, medium.omega)
}

/// Raised-cosine weight `distance` cells outside the interior: 1 at the
/// interior edge, 0 from `width` cells on.
fn ramp(distance: usize, width: usize) -> f64 {
    if distance == 0 {
        1.0
    } else if distance >= width {
        0.0
    } else {
        0.5 * (1.0 + (PI * distance as f64 / width as f64).cos())
    }
}

/// Default pad: one background wavelength worth of cells on each side.
pub fn default_pad_cells(medium: &Medium) -> usize {
    let h = medium.grid.dz.min(medium.grid.dx);
    (medium.wavelength() / h).ceil() as usize
}

/// Point source at `(z, x)` in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub z: f64,
    pub x: f64,
    pub amplitude: Complex64,
}

impl SourceSpec {
    pub fn new(z: f64, x: f64, amplitude: Complex64, grid: &Grid2D) -> Result<Self> {
        let source = Self { z, x, amplitude };
        source.validate(grid)?;
        Ok(source)
    }

    pub fn unit(z: f64, x: f64, grid: &Grid2D) -> Result<Self> {
        Self::new(z, x, Complex64::new(1.0, 0.0), grid)
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !grid.contains(self.z, self.x) {
            return Err(invalid(format!(
                "source ({}, {}) lies outside the grid bounding box",
                self.z, self.x
            )));
        }
        Ok(())
    }

    pub fn distance(&self, z: f64, x: f64) -> f64 {
        (z - self.z).hypot(x - self.x)
    }
}

/// U0(x) = amplitude · G0(|x − x_s|) at arbitrary points. Evaluating exactly
/// at the source is an error; see [`background_on_grid`] for the grid rule.
pub fn background_field(medium: &Medium, source: &SourceSpec, points: &[(f64, f64)]) -> Result<Vec<Complex64>> {
    let k0 = medium.k0();
    points
        .iter()
        .map(|&(z, x)| {
            let r = source.distance(z, x);
            if r == 0.0 {
                return Err(Error::SingularEvaluation(format!(
                    "background field requested at the source location ({z}, {x})"
                )));
            }
            if source.amplitude == Complex64::new(0.0, 0.0) {
                return Ok(Complex64::new(0.0, 0.0));
            }
            Ok(source.amplitude * green0(r, k0)?)
        })
        .collect()
}

/// Background field on the medium grid. A node that coincides with the source
/// takes the cell self-term for `mode` instead of the singular point value.
pub fn background_on_grid(medium: &Medium, source: &SourceSpec, mode: SelfTermMode) -> Result<ComplexField> {
    let grid = *medium.grid();
    let k0 = medium.k0();
    let h = grid.equivalent_radius();
    let tiny = 1e-12 * grid.dz.min(grid.dx);
    let values = grid
        .points()
        .into_iter()
        .map(|(z, x)| {
            let r = source.distance(z, x);
            let g = if r <= tiny {
                self_term(h, k0, mode)?
            } else {
                green0(r, k0)?
            };
            Ok(source.amplitude * g)
        })
        .collect::<Result<Vec<_>>>()?;
    ComplexField::new(grid, values)
}

/// Complex samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "field has {} samples, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid(format!("field sample {bad} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn at(&self, iz: usize, ix: usize) -> Complex64 {
        self.values[self.grid.index(iz, ix)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.norm()))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Synthetic velocity models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticModel {
    Homogeneous,
    /// v = v0·(1 + contrast·exp(−r²/2σ²)); negative contrast gives a slow lens.
    GaussianLens {
        contrast: f64,
        center_z: f64,
        center_x: f64,
        sigma: f64,
    },
    /// Horizontal layers: `velocities[i]` applies below `interfaces[i-1]`.
    Layers {
        interfaces: Vec<f64>,
        velocities: Vec<f64>,
    },
}

impl SyntheticModel {
    pub fn build(&self, grid: Grid2D, v0: f64, omega: f64) -> Result<Medium> {
        grid.validate()?;
        let velocity = match self {
            SyntheticModel::Homogeneous => vec![v0; grid.len()],
            SyntheticModel::GaussianLens {
                contrast,
                center_z,
                center_x,
                sigma,
            } => {
                check_positive("sigma", *sigma)?;
                if *contrast <= -1.0 {
                    return Err(invalid(format!("lens contrast must exceed -1, got {contrast}")));
                }
                grid.points()
                    .into_iter()
                    .map(|(z, x)| {
                        let r2 = (z - center_z).powi(2) + (x - center_x).powi(2);
                        let g = (-r2 / (2.0 * sigma * sigma)).exp();
                        if g == 0.0 {
                            v0
                        } else {
                            v0 * (1.0 + contrast * g)
                        }
                    })
                    .collect()
            }
            SyntheticModel::Layers { interfaces, velocities } => {
                if velocities.len() != interfaces.len() + 1 {
                    return Err(invalid("layers need exactly one more velocity than interfaces"));
                }
                if interfaces.windows(2).any(|w| w[0] > w[1]) {
                    return Err(invalid("layer interfaces must be sorted by depth"));
                }
                grid.points()
                    .into_iter()
                    .map(|(z, _)| velocities[interfaces.iter().take_while(|&&d| z >= d).count()])
                    .collect()
            }
        };
        Medium::new(grid, velocity, v0, omega)
    }
}
