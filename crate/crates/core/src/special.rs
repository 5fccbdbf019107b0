//! Bessel functions of order zero and the second-kind Hankel function.
//!
//! The power series is used up to [`SERIES_LIMIT`]; beyond it the Hankel
//! asymptotic expansion is summed until its terms stop decreasing. At the
//! switch-over the smallest asymptotic term is about `e^{-2x}` ≈ 4e-11, so
//! both branches agree to roughly eleven digits there.

use num_complex::Complex64;
use std::f64::consts::{FRAC_2_PI, FRAC_PI_4, PI};

use crate::error::{invalid, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments at or below this use the power series.
pub const SERIES_LIMIT: f64 = 12.0;

/// Returns `(J0(x), Y0(x))` for `x > 0`.
pub fn bessel_j0_y0(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x <= SERIES_LIMIT {
        series(x)
    } else {
        asymptotic(x)
    }
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel_j0_y0(x.abs().max(f64::MIN_POSITIVE)).0
}

/// J0(x) = Σ (-1)^k (x²/4)^k / (k!)²
/// Y0(x) = (2/π)(ln(x/2) + γ) J0(x) + (2/π) Σ_{k≥1} (-1)^{k+1} H_k (x²/4)^k / (k!)²
fn series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut j0 = 1.0;
    let mut harmonic = 0.0;
    let mut tail = 0.0;
    let mut k = 1.0;
    loop {
        term *= -q / (k * k);
        harmonic += 1.0 / k;
        j0 += term;
        tail -= harmonic * term;
        if term.abs() < 1e-18 * j0.abs().max(1e-300) && k > q {
            break;
        }
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    let y0 = FRAC_2_PI * (((0.5 * x).ln() + EULER_GAMMA) * j0 + tail);
    (j0, y0)
}

/// Hankel expansion J0 = sqrt(2/πx)(P cos χ − Q sin χ), Y0 = sqrt(2/πx)(P sin χ + Q cos χ),
/// χ = x − π/4, with the series truncated at its smallest term.
fn asymptotic(x: f64) -> (f64, f64) {
    let eight_x = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    // term_n = Π_{j=1..n} (-(2j-1)²) / (j · 8x)
    let mut term: f64 = 1.0;
    let mut last = f64::INFINITY;
    let mut n = 1.0_f64;
    loop {
        let odd = 2.0 * n - 1.0;
        let next = term * (-(odd * odd)) / (n * eight_x);
        if next.abs() >= last || next.abs() < 1e-17 {
            if next.abs() < last {
                add_term(&mut p, &mut q, n as usize, next);
            }
            break;
        }
        add_term(&mut p, &mut q, n as usize, next);
        last = next.abs();
        term = next;
        n += 1.0;
    }
    let chi = x - FRAC_PI_4;
    let (s, c) = chi.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

// t_n = Π_{j≤n} -(2j-1)²/(8jx); P = Σ (-1)^k t_{2k}, Q = Σ (-1)^k t_{2k+1}.
fn add_term(p: &mut f64, q: &mut f64, n: usize, t: f64) {
    match n % 4 {
        0 => *p += t,
        1 => *q += t,
        2 => *p -= t,
        _ => *q -= t,
    }
}

/// H0⁽²⁾(x) = J0(x) − i·Y0(x) for `x > 0`.
pub fn hankel_h0_second(x: f64) -> Result<Complex64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(invalid(format!("hankel argument must be positive and finite, got {x}")));
    }
    let (j0, y0) = bessel_j0_y0(x);
    Ok(Complex64::new(j0, -y0))
}
