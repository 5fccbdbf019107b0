//! Discrete Lippmann–Schwinger map Ûs = G·D with D = ω²·δm·(U0 + Us)·W.
//!
//! The FFT path convolves with the padded kernel; the dense path forms the
//! Green's matrix explicitly and serves as the oracle for small grids. Both
//! observe at the scatterer nodes.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::greens::{green0, self_term, GreensKernel, SelfTermMode};
use crate::grid::{ComplexField, Grid2D, Medium};

/// Default cap on N_y for anything that materializes an N_y × N_y matrix.
pub const DEFAULT_DENSE_CAP: usize = 16_384;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Scattering source D(y) = ω²·δm(y)·[U0(y) + Us(y)]·W on the physical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSource {
    pub values: Vec<Complex64>,
}

impl ScatterSource {
    pub fn new(medium: &Medium, u0: &ComplexField, us: &ComplexField) -> Result<Self> {
        medium.grid().check_same(u0.grid(), "scatter source (u0)")?;
        medium.grid().check_same(us.grid(), "scatter source (us)")?;
        let values = medium
            .scattering_weights()
            .iter()
            .zip(u0.values().iter().zip(us.values()))
            .map(|(&w, (&a, &b))| if w == 0.0 { ZERO } else { (a + b) * w })
            .collect();
        Ok(Self { values })
    }
}

fn check_kernel(kernel: &GreensKernel, medium: &Medium) -> Result<()> {
    medium.grid().check_same(kernel.physical_grid(), "kernel")?;
    let rel = (kernel.k0() - medium.k0()).abs() / medium.k0();
    if rel > 1e-12 {
        return Err(invalid(format!(
            "kernel wavenumber {} does not match medium {}",
            kernel.k0(),
            medium.k0()
        )));
    }
    Ok(())
}

/// Ûs = IFFT(FFT(G0)·FFT(D)) restricted to the physical grid.
pub fn gi_reconstruct_fft(
    kernel: &GreensKernel,
    medium: &Medium,
    u0: &ComplexField,
    us: &ComplexField,
) -> Result<ComplexField> {
    check_kernel(kernel, medium)?;
    let d = ScatterSource::new(medium, u0, us)?;
    ComplexField::new(*medium.grid(), kernel.convolve(&d.values))
}

/// Explicit Green's matrix G_jk = G0(|y_j − y_k|), G_jj = self-term, row-major.
pub fn green_matrix(grid: &Grid2D, k0: f64, mode: SelfTermMode, cap: usize) -> Result<Vec<Complex64>> {
    let n = grid.len();
    if n > cap {
        return Err(Error::ResourceLimit {
            what: "dense Green's matrix (N_y)",
            requested: n,
            cap,
        });
    }
    // G depends on |Δiz|, |Δix| only; evaluate each offset once.
    let mut table = vec![ZERO; grid.nz * grid.nx];
    for az in 0..grid.nz {
        for ax in 0..grid.nx {
            table[az * grid.nx + ax] = if az == 0 && ax == 0 {
                self_term(grid.equivalent_radius(), k0, mode)?
            } else {
                green0((az as f64 * grid.dz).hypot(ax as f64 * grid.dx), k0)?
            };
        }
    }
    let mut g = vec![ZERO; n * n];
    for j in 0..n {
        let (jz, jx) = (j / grid.nx, j % grid.nx);
        let row = &mut g[j * n..(j + 1) * n];
        for (k, entry) in row.iter_mut().enumerate() {
            let (kz, kx) = (k / grid.nx, k % grid.nx);
            *entry = table[jz.abs_diff(kz) * grid.nx + jx.abs_diff(kx)];
        }
    }
    Ok(g)
}

/// Σ_k G_jk·d_k evaluated by explicit summation.
pub fn gi_reconstruct_dense(
    medium: &Medium,
    kernel: &GreensKernel,
    u0: &ComplexField,
    us: &ComplexField,
    cap: usize,
) -> Result<ComplexField> {
    check_kernel(kernel, medium)?;
    let d = ScatterSource::new(medium, u0, us)?;
    let g = green_matrix(medium.grid(), medium.k0(), kernel.mode(), cap)?;
    let n = d.values.len();
    let out = (0..n)
        .map(|j| g[j * n..(j + 1) * n].iter().zip(&d.values).map(|(a, b)| a * b).sum())
        .collect();
    ComplexField::new(*medium.grid(), out)
}

/// (1/N_y)·Σ_j |Ûs(y_j) − Us(y_j)|².
pub fn gi_mismatch(kernel: &GreensKernel, medium: &Medium, u0: &ComplexField, us: &ComplexField) -> Result<f64> {
    let rec = gi_reconstruct_fft(kernel, medium, u0, us)?;
    let n = us.values().len() as f64;
    Ok(rec
        .values()
        .iter()
        .zip(us.values())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / n)
}

/// The linear system (I − A)·us = b with A = G·M and b = G·M·u0, where M is the
/// diagonal ω²·δm·W. A is applied through the kernel's FFT convolution.
#[derive(Debug, Clone)]
pub struct LinearSystemView<'a> {
    kernel: &'a GreensKernel,
    grid: Grid2D,
    weights: Vec<f64>,
    b: Vec<Complex64>,
}

impl<'a> LinearSystemView<'a> {
    pub fn new(kernel: &'a GreensKernel, medium: &Medium, u0: &ComplexField) -> Result<Self> {
        check_kernel(kernel, medium)?;
        medium.grid().check_same(u0.grid(), "linear system (u0)")?;
        let weights = medium.scattering_weights();
        let mut view = Self {
            kernel,
            grid: *medium.grid(),
            weights,
            b: Vec::new(),
        };
        view.b = view.apply_a(u0.values());
        Ok(view)
    }

    /// Builds a view with an explicit diagonal M and right-hand side.
    pub fn from_parts(kernel: &'a GreensKernel, weights: Vec<f64>, b: Vec<Complex64>) -> Result<Self> {
        let grid = *kernel.physical_grid();
        if weights.len() != grid.len() || b.len() != grid.len() {
            return Err(invalid("weights and right-hand side must match the kernel grid"));
        }
        Ok(Self {
            kernel,
            grid,
            weights,
            b,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kernel(&self) -> &GreensKernel {
        self.kernel
    }

    /// Diagonal of M.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    pub fn apply_a(&self, u: &[Complex64]) -> Vec<Complex64> {
        let d: Vec<Complex64> = u.iter().zip(&self.weights).map(|(v, &w)| v * w).collect();
        self.kernel.convolve(&d)
    }

    /// Aᴴ·v = M·Gᴴ·v (M is real).
    pub fn apply_a_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let g = self.kernel.convolve_adjoint(v);
        g.into_iter().zip(&self.weights).map(|(x, &w)| x * w).collect()
    }

    /// (I − A)·u
    pub fn apply_system(&self, u: &[Complex64]) -> Vec<Complex64> {
        let au = self.apply_a(u);
        u.iter().zip(au).map(|(a, b)| a - b).collect()
    }

    /// (I − A)ᴴ·v
    pub fn apply_system_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let av = self.apply_a_adjoint(v);
        v.iter().zip(av).map(|(a, b)| a - b).collect()
    }

    /// r = (I − A)·us − b
    pub fn residual_values(&self, us: &[Complex64]) -> Vec<Complex64> {
        let mut r = self.apply_system(us);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    /// Row-major dense (I − A).
    pub fn assemble_system(&self, cap: usize) -> Result<Vec<Complex64>> {
        let mut m = green_matrix(&self.grid, self.kernel.k0(), self.kernel.mode(), cap)?;
        let n = self.len();
        for j in 0..n {
            let row = &mut m[j * n..(j + 1) * n];
            for (entry, &w) in row.iter_mut().zip(&self.weights) {
                *entry *= -w;
            }
            row[j] += 1.0;
        }
        Ok(m)
    }
}

/// r = (I − A)·us − b as a field.
pub fn residual(view: &LinearSystemView<'_>, us: &ComplexField) -> Result<ComplexField> {
    view.grid().check_same(us.grid(), "residual")?;
    ComplexField::new(*view.grid(), view.residual_values(us.values()))
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::build_kernel;
    use crate::grid::{background_on_grid, SourceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(n: usize, seed: u64) -> (Medium, ComplexField, ComplexField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid2D::new(n, n + 1, 0.02, 0.025, 0.1, -0.2).unwrap();
        let v: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(1.6..2.6)).collect();
        let medium = Medium::new(grid, v, 2.0, 2.0 * std::f64::consts::PI * 8.0).unwrap();
        let mut field = || {
            let vals = (0..grid.len())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            ComplexField::new(grid, vals).unwrap()
        };
        let u0 = field();
        let us = field();
        (medium, u0, us)
    }

    #[test]
    fn fft_matches_dense() {
        let (m, u0, us) = random_setup(8, 1);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let a = gi_reconstruct_fft(&k, &m, &u0, &us).unwrap();
        let b = gi_reconstruct_dense(&m, &k, &u0, &us, DEFAULT_DENSE_CAP).unwrap();
        let err: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-12 * b.norm(), "rel err {}", err / b.norm());
    }

    #[test]
    fn dense_entry_matches_hand_summation() {
        let (m, u0, us) = random_setup(4, 2);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let b = gi_reconstruct_dense(&m, &k, &u0, &us, DEFAULT_DENSE_CAP).unwrap();
        let g = *m.grid();
        let dm = m.delta_m();
        let w2 = m.omega() * m.omega() * g.cell_area();
        let (jz, jx) = (1usize, 2usize);
        let mut sum = Complex64::new(0.0, 0.0);
        for kz in 0..g.nz {
            for kx in 0..g.nx {
                let kk = g.index(kz, kx);
                let r = (g.z(jz) - g.z(kz)).hypot(g.x(jx) - g.x(kx));
                let gjk = if r == 0.0 {
                    k.self_value()
                } else {
                    green0(r, m.k0()).unwrap()
                };
                sum += gjk * w2 * dm[kk] * (u0.values()[kk] + us.values()[kk]);
            }
        }
        assert!((sum - b.at(jz, jx)).norm() < 1e-13 * sum.norm());
    }

    #[test]
    fn homogeneous_medium_gives_zero() {
        let (m, u0, us) = random_setup(6, 3);
        let h = Medium::homogeneous(*m.grid(), m.v0(), m.omega()).unwrap();
        let k = build_kernel(h.grid(), h.k0(), SelfTermMode::CellAveraged).unwrap();
        let rec = gi_reconstruct_fft(&k, &h, &u0, &us).unwrap();
        assert!(rec.values().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn impulse_reproduces_green_function() {
        let grid = Grid2D::new(7, 9, 0.03, 0.02, 0.0, 0.0).unwrap();
        let omega = 40.0;
        let v0 = 2.0;
        let mut v = vec![v0; grid.len()];
        let star = grid.index(2, 5);
        v[star] = 1.8;
        let m = Medium::new(grid, v, v0, omega).unwrap();
        let k = build_kernel(&grid, m.k0(), SelfTermMode::CellAveraged).unwrap();
        let mut u0 = ComplexField::zeros(grid);
        u0.values_mut()[star] = Complex64::new(0.3, -1.1);
        let us = ComplexField::zeros(grid);
        let c = u0.values()[star] * m.scattering_weights()[star];
        let rec = gi_reconstruct_fft(&k, &m, &u0, &us).unwrap();
        for iz in 0..grid.nz {
            for ix in 0..grid.nx {
                let r = (grid.z(iz) - grid.z(2)).hypot(grid.x(ix) - grid.x(5));
                let expect = if r == 0.0 {
                    c * k.self_value()
                } else {
                    c * green0(r, m.k0()).unwrap()
                };
                assert!((rec.at(iz, ix) - expect).norm() <= 1e-12 * c.norm());
            }
        }
    }

    #[test]
    fn total_field_zero_means_no_scattering() {
        let (m, u0, _) = random_setup(5, 4);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let neg = u0.scaled(Complex64::new(-1.0, 0.0));
        let rec = gi_reconstruct_dense(&m, &k, &u0, &neg, DEFAULT_DENSE_CAP).unwrap();
        assert!(rec.values().iter().all(|v| v.norm() == 0.0));
        let mismatch = gi_mismatch(&k, &m, &u0, &neg).unwrap();
        let expect = u0.norm_sqr() / u0.values().len() as f64;
        assert!((mismatch - expect).abs() <= 1e-14 * expect);
    }

    #[test]
    fn single_cell_closed_form() {
        let grid = Grid2D::new(2, 2, 0.05, 0.05, 0.0, 0.0).unwrap();
        let mut v = vec![2.0; 4];
        v[0] = 1.7;
        let m = Medium::new(grid, v, 2.0, 30.0).unwrap();
        let k = build_kernel(&grid, m.k0(), SelfTermMode::CellAveraged).unwrap();
        let u0 = ComplexField::new(grid, vec![Complex64::new(0.4, 0.2); 4]).unwrap();
        let us = ComplexField::new(grid, vec![Complex64::new(-0.1, 0.5); 4]).unwrap();
        let rec = gi_reconstruct_dense(&m, &k, &u0, &us, 16).unwrap();
        let dm = m.delta_m()[0];
        let expect = k.self_value() * m.omega().powi(2) * dm * grid.cell_area() * (u0.at(0, 0) + us.at(0, 0));
        assert!((rec.at(0, 0) - expect).norm() < 1e-15 * expect.norm());
    }

    #[test]
    fn dense_cap_enforced() {
        let (m, u0, us) = random_setup(8, 5);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        assert!(matches!(
            gi_reconstruct_dense(&m, &k, &u0, &us, 10),
            Err(Error::ResourceLimit { .. })
        ));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (m, u0, _) = random_setup(6, 6);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let other = ComplexField::zeros(Grid2D::new(6, 6, 0.02, 0.025, 0.1, -0.2).unwrap());
        assert!(gi_reconstruct_fft(&k, &m, &u0, &other).is_err());
    }

    #[test]
    fn residual_identities() {
        let (m, u0, us) = random_setup(6, 7);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let view = LinearSystemView::new(&k, &m, &u0).unwrap();
        let zero = ComplexField::zeros(*m.grid());
        let r0 = residual(&view, &zero).unwrap();
        for (a, b) in r0.values().iter().zip(view.b()) {
            assert_eq!(*a, -*b);
        }
        // r(u + v) − r(u) = (I − A)v
        let (_, _, v) = random_setup(6, 8);
        let sum: Vec<Complex64> = us.values().iter().zip(v.values()).map(|(a, b)| a + b).collect();
        let lhs: Vec<Complex64> = view
            .residual_values(&sum)
            .iter()
            .zip(view.residual_values(us.values()))
            .map(|(a, b)| a - b)
            .collect();
        let rhs = view.apply_system(v.values());
        let err: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-12 * norm(&rhs));
    }

    #[test]
    fn adjoint_identity() {
        let (m, u0, us) = random_setup(7, 9);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let view = LinearSystemView::new(&k, &m, &u0).unwrap();
        let (_, v, _) = random_setup(7, 10);
        let lhs: Complex64 = view
            .apply_a(us.values())
            .iter()
            .zip(v.values())
            .map(|(a, b)| a.conj() * b)
            .sum();
        let rhs: Complex64 = us
            .values()
            .iter()
            .zip(view.apply_a_adjoint(v.values()))
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
    }

    #[test]
    fn dense_system_matches_operator() {
        let (m, u0, us) = random_setup(5, 11);
        let k = build_kernel(m.grid(), m.k0(), SelfTermMode::CellAveraged).unwrap();
        let view = LinearSystemView::new(&k, &m, &u0).unwrap();
        let mat = view.assemble_system(DEFAULT_DENSE_CAP).unwrap();
        let n = view.len();
        let fast = view.apply_system(us.values());
        for j in 0..n {
            let row: Complex64 = mat[j * n..(j + 1) * n]
                .iter()
                .zip(us.values())
                .map(|(a, b)| a * b)
                .sum();
            assert!((row - fast[j]).norm() < 1e-12 * norm(&fast));
        }
    }

    #[test]
    fn background_source_gives_born_rhs() {
        let grid = Grid2D::new(6, 6, 0.03, 0.03, 0.0, 0.0).unwrap();
        let model = crate::grid::SyntheticModel::GaussianLens {
            contrast: -0.1,
            center_z: 0.08,
            center_x: 0.08,
            sigma: 0.04,
        };
        let m = model.build(grid, 2.0, 50.0).unwrap();
        let k = build_kernel(&grid, m.k0(), SelfTermMode::CellAveraged).unwrap();
        let src = SourceSpec::unit(0.0151, 0.0149, &grid).unwrap();
        let u0 = background_on_grid(&m, &src, SelfTermMode::CellAveraged).unwrap();
        let view = LinearSystemView::new(&k, &m, &u0).unwrap();
        let zero = ComplexField::zeros(grid);
        let rec = gi_reconstruct_fft(&k, &m, &u0, &zero).unwrap();
        for (a, b) in rec.values().iter().zip(view.b()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}
