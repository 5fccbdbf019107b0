//! Classical solvers for (I − A)·us = b: dense LU, Born–Neumann fixed point,
//! Landweber gradient iteration, and power-iteration spectral estimates.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::Instant;

use crate::error::{invalid, Error, Result};
use crate::operator::{norm, LinearSystemView};

/// Residual growth factor (relative to ‖b‖) that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Consecutive steps above the divergence threshold before giving up.
pub const DIVERGENCE_PATIENCE: usize = 10;
/// Pivots below this magnitude make the direct solve fail.
pub const PIVOT_FLOOR: f64 = 1e-14;

const POWER_SEED: u64 = 0x5eed_cafe;

/// Operator access needed by the solvers. Implemented by the FFT-backed
/// [`LinearSystemView`] and by [`DenseSystem`] for explicit small matrices.
pub trait LinearSystem {
    fn dim(&self) -> usize;
    fn apply_a(&self, u: &[Complex64]) -> Vec<Complex64>;
    fn apply_a_adjoint(&self, v: &[Complex64]) -> Vec<Complex64>;
    fn b(&self) -> &[Complex64];
    /// Row-major A, refusing when dim exceeds `cap`.
    fn dense_a(&self, cap: usize) -> Result<Vec<Complex64>>;

    fn apply_system(&self, u: &[Complex64]) -> Vec<Complex64> {
        let au = self.apply_a(u);
        u.iter().zip(au).map(|(x, y)| x - y).collect()
    }

    fn apply_system_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let av = self.apply_a_adjoint(v);
        v.iter().zip(av).map(|(x, y)| x - y).collect()
    }

    fn residual_values(&self, us: &[Complex64]) -> Vec<Complex64> {
        let mut r = self.apply_system(us);
        for (ri, bi) in r.iter_mut().zip(self.b()) {
            *ri -= bi;
        }
        r
    }
}

impl LinearSystem for LinearSystemView<'_> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply_a(&self, u: &[Complex64]) -> Vec<Complex64> {
        LinearSystemView::apply_a(self, u)
    }

    fn apply_a_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        LinearSystemView::apply_a_adjoint(self, v)
    }

    fn b(&self) -> &[Complex64] {
        LinearSystemView::b(self)
    }

    fn dense_a(&self, cap: usize) -> Result<Vec<Complex64>> {
        let mut m = self.assemble_system(cap)?;
        let n = self.len();
        for (i, entry) in m.iter_mut().enumerate() {
            *entry = -*entry;
            if i / n == i % n {
                *entry += 1.0;
            }
        }
        Ok(m)
    }
}

/// Explicit matrix A with right-hand side b.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystem {
    n: usize,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
}

impl DenseSystem {
    pub fn new(n: usize, a: Vec<Complex64>, b: Vec<Complex64>) -> Result<Self> {
        if a.len() != n * n || b.len() != n {
            return Err(invalid(format!(
                "dense system of size {n} needs {} matrix entries and {n} rhs entries",
                n * n
            )));
        }
        Ok(Self { n, a, b })
    }

    pub fn scalar(a: Complex64, b: Complex64) -> Self {
        Self {
            n: 1,
            a: vec![a],
            b: vec![b],
        }
    }

    pub fn diagonal(diag: &[Complex64], b: Vec<Complex64>) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for (i, d) in diag.iter().enumerate() {
            a[i * n + i] = *d;
        }
        Self::new(n, a, b)
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.a
    }
}

impl LinearSystem for DenseSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_a(&self, u: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(u)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect()
    }

    fn apply_a_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (row, vi) in self.a.chunks_exact(self.n).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * vi;
            }
        }
        out
    }

    fn b(&self) -> &[Complex64] {
        &self.b
    }

    fn dense_a(&self, cap: usize) -> Result<Vec<Complex64>> {
        if self.n > cap {
            return Err(Error::ResourceLimit {
                what: "dense system",
                requested: self.n,
                cap,
            });
        }
        Ok(self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationStatus {
    Converged,
    Diverged,
    MaxIters,
}

impl IterationStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            IterationStatus::Converged => "converged",
            IterationStatus::Diverged => "diverged",
            IterationStatus::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub residual_norm: f64,
    pub elapsed_ms: f64,
}

/// Residual history of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    pub status: IterationStatus,
    /// Spectral radius estimate of A reported alongside Born runs.
    pub rho_estimate: Option<f64>,
}

impl IterationTrace {
    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.residual_norm)
    }

    pub fn residual_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_norm).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.step)
    }

    /// CSV with header `step,residual_norm,elapsed_ms` and CRLF line ends.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "step,residual_norm,elapsed_ms\r\n")?;
        for r in &self.records {
            write!(w, "{},{:e},{:.3}\r\n", r.step, r.residual_norm, r.elapsed_ms)?;
        }
        Ok(())
    }
}

struct Monitor {
    start: Instant,
    records: Vec<TraceRecord>,
    threshold: f64,
    target: f64,
    above: usize,
}

enum Verdict {
    Continue,
    Stop(IterationStatus),
}

impl Monitor {
    fn new(b_norm: f64, tol: f64) -> Self {
        Self {
            start: Instant::now(),
            records: Vec::new(),
            threshold: DIVERGENCE_FACTOR * b_norm,
            target: tol * b_norm,
            above: 0,
        }
    }

    fn record(&mut self, step: usize, residual_norm: f64) -> Verdict {
        self.records.push(TraceRecord {
            step,
            residual_norm,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        if !residual_norm.is_finite() {
            return Verdict::Stop(IterationStatus::Diverged);
        }
        if residual_norm <= self.target {
            return Verdict::Stop(IterationStatus::Converged);
        }
        if residual_norm > self.threshold {
            self.above += 1;
            if self.above >= DIVERGENCE_PATIENCE {
                return Verdict::Stop(IterationStatus::Diverged);
            }
        } else {
            self.above = 0;
        }
        Verdict::Continue
    }

    fn finish(self, status: IterationStatus, rho: Option<f64>) -> IterationTrace {
        IterationTrace {
            records: self.records,
            status,
            rho_estimate: rho,
        }
    }
}

/// Dense LU with partial pivoting on the assembled (I − A).
pub fn solve_direct<S: LinearSystem + ?Sized>(system: &S, cap: usize) -> Result<Vec<Complex64>> {
    let n = system.dim();
    let a = system.dense_a(cap)?;
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for (i, v) in a.iter().enumerate() {
        let diag = if i / n == i % n { 1.0 } else { 0.0 };
        re[i] = diag - v.re;
        im[i] = -v.im;
    }
    drop(a);
    let mut rhs: Vec<Complex64> = system.b().to_vec();
    lu_solve_in_place(n, &mut re, &mut im, &mut rhs)?;
    Ok(rhs)
}

/// Gaussian elimination with partial pivoting on split real/imaginary storage.
fn lu_solve_in_place(n: usize, re: &mut [f64], im: &mut [f64], rhs: &mut [Complex64]) -> Result<()> {
    for k in 0..n {
        let (mut best, mut best_mag) = (k, -1.0);
        for i in k..n {
            let mag = re[i * n + k].hypot(im[i * n + k]);
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag < PIVOT_FLOOR {
            return Err(Error::SingularSystem {
                column: k,
                pivot: best_mag,
            });
        }
        if best != k {
            for j in 0..n {
                re.swap(k * n + j, best * n + j);
                im.swap(k * n + j, best * n + j);
            }
            rhs.swap(k, best);
        }
        let pivot = Complex64::new(re[k * n + k], im[k * n + k]);
        let inv = pivot.inv();
        let (re_top, re_rest) = re.split_at_mut((k + 1) * n);
        let (im_top, im_rest) = im.split_at_mut((k + 1) * n);
        let pr = &re_top[k * n + k + 1..(k + 1) * n];
        let pi = &im_top[k * n + k + 1..(k + 1) * n];
        let rhs_k = rhs[k];
        for (row, (rr, ri)) in re_rest.chunks_exact_mut(n).zip(im_rest.chunks_exact_mut(n)).enumerate() {
            let l = Complex64::new(rr[k], ri[k]) * inv;
            if l.re == 0.0 && l.im == 0.0 {
                continue;
            }
            rr[k] = 0.0;
            ri[k] = 0.0;
            let (lr, li) = (l.re, l.im);
            for ((xr, xi), (&yr, &yi)) in rr[k + 1..]
                .iter_mut()
                .zip(ri[k + 1..].iter_mut())
                .zip(pr.iter().zip(pi))
            {
                *xr -= lr * yr - li * yi;
                *xi -= lr * yi + li * yr;
            }
            rhs[k + 1 + row] -= l * rhs_k;
        }
    }
    for k in (0..n).rev() {
        let mut acc = rhs[k];
        for j in k + 1..n {
            acc -= Complex64::new(re[k * n + j], im[k * n + j]) * rhs[j];
        }
        rhs[k] = acc / Complex64::new(re[k * n + k], im[k * n + k]);
    }
    Ok(())
}

/// Born–Neumann fixed point u ← A·u + b from u = 0.
pub fn born_iterate<S: LinearSystem + ?Sized>(
    system: &S,
    max_iters: usize,
    tol: f64,
) -> (Vec<Complex64>, IterationTrace) {
    let n = system.dim();
    let b = system.b().to_vec();
    let mut monitor = Monitor::new(norm(&b), tol);
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    let mut step = 0;
    let status = loop {
        let au = system.apply_a(&u);
        let r: Vec<Complex64> = u.iter().zip(&au).zip(&b).map(|((x, y), z)| x - y - z).collect();
        if let Verdict::Stop(status) = monitor.record(step, norm(&r)) {
            break status;
        }
        if step == max_iters {
            break IterationStatus::MaxIters;
        }
        for ((ui, ai), bi) in u.iter_mut().zip(au).zip(&b) {
            *ui = ai + bi;
        }
        step += 1;
    };
    (u, monitor.finish(status, None))
}

/// Born iteration with the spectral radius estimate attached to the trace.
pub fn born_iterate_with_rho<S: LinearSystem + ?Sized>(
    system: &S,
    max_iters: usize,
    tol: f64,
    rho_iters: usize,
) -> Result<(Vec<Complex64>, IterationTrace)> {
    let rho = estimate_rho(system, rho_iters)?;
    let (u, mut trace) = born_iterate(system, max_iters, tol);
    trace.rho_estimate = Some(rho);
    Ok((u, trace))
}

/// Landweber iteration u ← u − η·(I − A)ᴴ·r from u = 0.
pub fn landweber_iterate<S: LinearSystem + ?Sized>(
    system: &S,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<Complex64>, IterationTrace)> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid(format!("Landweber step must be non-negative, got {eta}")));
    }
    let n = system.dim();
    let mut monitor = Monitor::new(norm(system.b()), tol);
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    let mut step = 0;
    let status = loop {
        let r = system.residual_values(&u);
        if let Verdict::Stop(status) = monitor.record(step, norm(&r)) {
            break status;
        }
        if step == max_iters {
            break IterationStatus::MaxIters;
        }
        let g = system.apply_system_adjoint(&r);
        for (ui, gi) in u.iter_mut().zip(g) {
            *ui -= gi * eta;
        }
        step += 1;
    };
    Ok((u, monitor.finish(status, None)))
}

fn seeded_unit_vector(n: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let s = 1.0 / norm(&v);
    v.into_iter().map(|x| x * s).collect()
}

/// Largest singular value of (I − A) by power iteration on (I − A)ᴴ(I − A).
/// The Rayleigh quotient error decays like (σ₂/σ₁)^{2k}.
pub fn estimate_sigma_max<S: LinearSystem + ?Sized>(system: &S, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(invalid("power iteration needs at least one step"));
    }
    let mut v = seeded_unit_vector(system.dim());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = system.apply_system_adjoint(&system.apply_system(&v));
        lambda = v.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Dominant eigenvalue magnitude of A. Uses the geometric mean growth over the
/// second half of the iterations so a rotating dominant pair still converges.
pub fn estimate_rho<S: LinearSystem + ?Sized>(system: &S, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(invalid("power iteration needs at least one step"));
    }
    let mut v = seeded_unit_vector(system.dim());
    let burn = iters / 2;
    let mut log_growth = 0.0;
    for k in 0..iters {
        let w = system.apply_a(&v);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        if k >= burn {
            log_growth += nw.ln();
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok((log_growth / (iters - burn) as f64).exp())
}

/// Smallest contrast in `[lo, hi]` (to within `steps` bisections) whose
/// spectral radius reaches `target`. `rho_of` must be increasing in contrast.
pub fn bisect_contrast(
    mut lo: f64,
    mut hi: f64,
    target: f64,
    steps: usize,
    mut rho_of: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut rho_hi = rho_of(hi)?;
    if rho_hi < target {
        return Err(invalid(format!(
            "contrast {hi} only reaches rho {rho_hi:.3} < {target}"
        )));
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let rho = rho_of(mid)?;
        if rho >= target {
            hi = mid;
            rho_hi = rho;
        } else {
            lo = mid;
        }
    }
    Ok((hi, rho_hi))
}
