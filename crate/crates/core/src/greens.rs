//! Free-space 2D Helmholtz Green's function and its FFT convolution kernel.
//!
//! Convention: G0(r) = (i/4)·H0⁽²⁾(k0·r). Its small-r behaviour is
//! `(1/2π) ln r + (1/2π)(ln(k0/2) + γ) + i/4`, so this G0 satisfies
//! `(∇² + k0²) G0 = +δ`. The scattered-field residual in
//! [`crate::training::pde_residual`] uses the operator that matches this sign.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::grid::{ComplexField, Grid2D};
use crate::special::{hankel_h0_second, EULER_GAMMA};

/// Treatment of the zero-offset kernel entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelfTermMode {
    /// Drop the self-interaction.
    Zero,
    /// Average of G0 over a disk with the cell's area.
    #[default]
    CellAveraged,
}

/// G0(r) = (i/4)·H0⁽²⁾(k0·r) for r > 0.
pub fn green0(r: f64, k0: f64) -> Result<Complex64> {
    if r == 0.0 {
        return Err(Error::SingularEvaluation(
            "green0 at zero distance; use the self-term".into(),
        ));
    }
    if !(r > 0.0) || !(k0 > 0.0) {
        return Err(invalid(format!("green0 needs r > 0 and k0 > 0, got r={r} k0={k0}")));
    }
    Ok(Complex64::new(0.0, 0.25) * hankel_h0_second(k0 * r)?)
}

/// Zero-offset kernel value for a cell whose equivalent disk has radius `h`:
/// (1/2π)(ln h + ln(k0/2) + γ − 1/2) + i/4 in cell-averaged mode.
pub fn self_term(h: f64, k0: f64, mode: SelfTermMode) -> Result<Complex64> {
    if !(h > 0.0) || !(k0 > 0.0) {
        return Err(invalid(format!("self-term needs h > 0 and k0 > 0, got h={h} k0={k0}")));
    }
    Ok(match mode {
        SelfTermMode::Zero => Complex64::new(0.0, 0.0),
        SelfTermMode::CellAveraged => Complex64::new((h.ln() + (0.5 * k0).ln() + EULER_GAMMA - 0.5) / (2.0 * PI), 0.25),
    })
}

/// Smallest n' ≥ n whose only prime factors are 2, 3 and 5.
pub fn next_smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Forward and inverse 2D transforms of a fixed row-major size.
#[derive(Clone)]
pub struct Fft2 {
    nz: usize,
    nx: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("nz", &self.nz)
            .field("nx", &self.nx)
            .finish()
    }
}

impl Fft2 {
    pub fn new(nz: usize, nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nz,
            nx,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(nz),
            col_inv: planner.plan_fft_inverse(nz),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse; callers divide by `nz * nx`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.nz * self.nx);
        let scratch_len = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        rows.process_with_scratch(data, &mut scratch);
        let mut column = vec![Complex64::new(0.0, 0.0); self.nz];
        for ix in 0..self.nx {
            for iz in 0..self.nz {
                column[iz] = data[iz * self.nx + ix];
            }
            cols.process_with_scratch(&mut column, &mut scratch);
            for iz in 0..self.nz {
                data[iz * self.nx + ix] = column[iz];
            }
        }
    }
}

/// Green's function sampled at every grid offset on a zero-padded grid, in
/// circular (FFT) order, together with its forward transform.
#[derive(Debug, Clone)]
pub struct GreensKernel {
    physical: Grid2D,
    kernel_grid: Grid2D,
    samples: ComplexField,
    spectrum: Vec<Complex64>,
    k0: f64,
    mode: SelfTermMode,
    fft: Fft2,
}

impl GreensKernel {
    pub fn physical_grid(&self) -> &Grid2D {
        &self.physical
    }

    /// Padded grid; node `(iz, ix)` holds offset `(wrap(iz)·dz, wrap(ix)·dx)`
    /// where indices past the midpoint wrap to negative offsets.
    pub fn kernel_grid(&self) -> &Grid2D {
        &self.kernel_grid
    }

    pub fn samples(&self) -> &ComplexField {
        &self.samples
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn mode(&self) -> SelfTermMode {
        self.mode
    }

    /// Kernel value at an integer cell offset.
    pub fn at_offset(&self, dz: isize, dx: isize) -> Complex64 {
        let kz = dz.rem_euclid(self.kernel_grid.nz as isize) as usize;
        let kx = dx.rem_euclid(self.kernel_grid.nx as isize) as usize;
        self.samples.values()[self.kernel_grid.index(kz, kx)]
    }

    /// Zero-offset entry.
    pub fn self_value(&self) -> Complex64 {
        self.at_offset(0, 0)
    }

    /// Linear (non-circular) convolution of a physical-grid array with G0.
    pub fn convolve(&self, source: &[Complex64]) -> Vec<Complex64> {
        self.convolve_with(source, false)
    }

    /// Applies the transpose-conjugate: conj(G · conj(v)). G is symmetric, so
    /// this is Gᴴ·v.
    pub fn convolve_adjoint(&self, source: &[Complex64]) -> Vec<Complex64> {
        self.convolve_with(source, true)
    }

    fn convolve_with(&self, source: &[Complex64], adjoint: bool) -> Vec<Complex64> {
        let (nz, nx) = (self.physical.nz, self.physical.nx);
        assert_eq!(
            source.len(),
            nz * nx,
            "convolution input does not match the kernel's physical grid"
        );
        let (pz, px) = (self.kernel_grid.nz, self.kernel_grid.nx);
        let mut buf = vec![Complex64::new(0.0, 0.0); pz * px];
        for iz in 0..nz {
            for ix in 0..nx {
                let v = source[iz * nx + ix];
                buf[iz * px + ix] = if adjoint { v.conj() } else { v };
            }
        }
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / (pz * px) as f64;
        let mut out = Vec::with_capacity(nz * nx);
        for iz in 0..nz {
            for ix in 0..nx {
                let v = buf[iz * px + ix] * scale;
                out.push(if adjoint { v.conj() } else { v });
            }
        }
        out
    }
}

/// Padded kernel size per axis: at least twice the physical count, rounded up
/// to a 5-smooth length.
pub fn padded_size(n: usize) -> usize {
    next_smooth_size(2 * n)
}

pub fn build_kernel(physical: &Grid2D, k0: f64, mode: SelfTermMode) -> Result<GreensKernel> {
    physical.validate()?;
    if !(k0 > 0.0) {
        return Err(invalid(format!("k0 must be positive, got {k0}")));
    }
    let pz = padded_size(physical.nz);
    let px = padded_size(physical.nx);
    let kernel_grid = Grid2D {
        nz: pz,
        nx: px,
        dz: physical.dz,
        dx: physical.dx,
        z0: 0.0,
        x0: 0.0,
    };
    let self_value = self_term(physical.equivalent_radius(), k0, mode)?;
    let wrap = |i: usize, n: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let mut values = Vec::with_capacity(pz * px);
    for iz in 0..pz {
        let oz = wrap(iz, pz) * physical.dz;
        for ix in 0..px {
            let ox = wrap(ix, px) * physical.dx;
            values.push(if iz == 0 && ix == 0 {
                self_value
            } else {
                green0(oz.hypot(ox), k0)?
            });
        }
    }
    let fft = Fft2::new(pz, px);
    let mut spectrum = values.clone();
    fft.forward(&mut spectrum);
    Ok(GreensKernel {
        physical: *physical,
        kernel_grid,
        samples: ComplexField::new(kernel_grid, values)?,
        spectrum,
        k0,
        mode,
        fft,
    })
}
