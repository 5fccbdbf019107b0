//! Losses, collocation sampling and the training loop for the neural field.
//!
//! The GI loss compares the network's field on the grid with its own
//! Green-integral reconstruction. The PDE loss evaluates the differential form
//! at scattered collocation points. Both live in wavelength-normalized
//! coordinates, where the physical Laplacian is `s²·∇̃²` with `s = k0/2π`, so
//! dividing the physical residual by `s²` gives
//!
//! ```text
//! R̃ = ∇̃²Us + (2π)²·Us − (2π)²·(δm/m0)·(U0 + Us)
//! ```
//!
//! The sign of the scattering term matches the Green's function
//! `(i/4)·H0⁽²⁾`, which satisfies `(∇² + k0²)G0 = +δ`: the discrete GI
//! solution and the PDE residual then share the same zero.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::greens::GreensKernel;
use crate::grid::{background_field, normalize, ComplexField, Grid2D, Medium, SourceSpec};
use crate::nn::{AdamState, Architecture, NeuralField};
use crate::operator::LinearSystemView;
use crate::Complex64;

const TWO_PI_SQ: f64 = 4.0 * PI * PI;

/// Grid nodes in normalized `(z̃, x̃)`, row-major like [`ComplexField`].
pub fn normalized_grid_points(grid: &Grid2D, omega: f64, v0: f64) -> Vec<(f64, f64)> {
    grid.points()
        .into_iter()
        .map(|(z, x)| (normalize(z, omega, v0), normalize(x, omega, v0)))
        .collect()
}

/// A scalar loss with its gradient over the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `(1/N)·‖(I − A)·us − b‖²` together with its adjoint
/// `(2/N)·(I − A)ᴴ·r` with respect to `us`.
pub fn gi_loss_values(view: &LinearSystemView<'_>, us: &[Complex64]) -> (f64, Vec<Complex64>) {
    let r = view.residual_values(us);
    let n = r.len() as f64;
    let loss = r.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
    let mut adj = view.apply_system_adjoint(&r);
    adj.iter_mut().for_each(|a| *a *= 2.0 / n);
    (loss, adj)
}

/// GI loss of the network evaluated on the grid nodes `points`.
pub fn gi_loss(field: &NeuralField, view: &LinearSystemView<'_>, points: &[(f64, f64)]) -> Result<LossEval> {
    if points.len() != view.len() {
        return Err(invalid("GI points must cover the system grid"));
    }
    let (us, cache) = field.forward_cached(points);
    let (loss, adj) = gi_loss_values(view, &us);
    let grad = field.param_gradient(&cache, &adj, None)?;
    Ok(LossEval { loss, grad })
}

/// Points with the per-point data the PDE residual needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    /// Normalized `(z̃, x̃)`.
    pub points: Vec<(f64, f64)>,
    /// `δm/m0` at each point.
    pub contrast: Vec<f64>,
    pub u0: Vec<Complex64>,
}

impl CollocationBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Normalized residual at one point, scaled by `scale`.
pub fn pde_residual(laplacian: Complex64, value: Complex64, contrast: f64, u0: Complex64, scale: f64) -> Complex64 {
    scale * (laplacian + TWO_PI_SQ * value - TWO_PI_SQ * contrast * (u0 + value))
}

/// Mean squared PDE residual over the batch.
pub fn pde_loss(field: &NeuralField, batch: &CollocationBatch, scale: f64) -> Result<LossEval> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("PDE loss needs at least one collocation point"));
    }
    let (d, cache) = field.forward_with_derivatives(&batch.points);
    let mut loss = 0.0;
    let mut adj_value = Vec::with_capacity(n);
    let mut adj_lap = Vec::with_capacity(n);
    for i in 0..n {
        let r = pde_residual(d.laplacian[i], d.value[i], batch.contrast[i], batch.u0[i], scale);
        loss += r.norm_sqr();
        // ∂|r|²/∂(Re, Im) of the Laplacian and value inputs
        let g = 2.0 * r * scale / n as f64;
        adj_lap.push(g);
        adj_value.push(g * TWO_PI_SQ * (1.0 - batch.contrast[i]));
    }
    let grad = field.param_gradient(&cache, &adj_value, Some(&adj_lap))?;
    Ok(LossEval {
        loss: loss / n as f64,
        grad,
    })
}

/// `λ(t) = λ_max·σ(s·(t/T − t_mid))`.
pub fn lambda_at(epoch: usize, total: usize, lambda_max: f64, midpoint: f64, steepness: f64) -> f64 {
    if lambda_max == 0.0 {
        return 0.0;
    }
    let frac = if total == 0 { 1.0 } else { epoch as f64 / total as f64 };
    lambda_max / (1.0 + (-steepness * (frac - midpoint)).exp())
}

/// Importance `I = |δm|^α + ε` with `ε = ε_fraction·max|δm|`, or `I ≡ 1` when
/// the perturbation vanishes.
pub fn importance(abs_dm: &[f64], alpha: f64, eps_fraction: f64) -> Vec<f64> {
    let max = abs_dm.iter().fold(0.0f64, |m, v| m.max(*v));
    if max == 0.0 {
        return vec![1.0; abs_dm.len()];
    }
    let eps = eps_fraction * max;
    abs_dm.iter().map(|d| d.powf(alpha) + eps).collect()
}

/// Selection probabilities `P = I / ΣI`.
pub fn selection_probabilities(abs_dm: &[f64], alpha: f64, eps_fraction: f64) -> Vec<f64> {
    let w = importance(abs_dm, alpha, eps_fraction);
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws `amount` distinct indices with probability proportional to
/// `weights` at each successive draw.
pub fn weighted_selection<R: Rng + ?Sized>(weights: &[f64], amount: usize, rng: &mut R) -> Result<Vec<usize>> {
    if amount > weights.len() {
        return Err(invalid("cannot select more candidates than exist"));
    }
    index::sample_weighted(rng, weights.len(), |i| weights[i], amount)
        .map(|iv| iv.into_vec())
        .map_err(|e| invalid(format!("weighted selection: {e}")))
}

/// Collocation points selected once by importance, then drawn uniformly each
/// epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationPool {
    /// Physical `(z, x)` in km.
    pub physical: Vec<(f64, f64)>,
    pub batch: CollocationBatch,
    /// δm at each point.
    pub delta_m: Vec<f64>,
    pub draw_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub n_pool: usize,
    pub n_raw: usize,
    pub n_x: usize,
    pub alpha: f64,
    pub eps_fraction: f64,
    /// Candidates closer than this many background wavelengths to the source
    /// are discarded.
    pub source_exclusion: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_pool: 8192,
            n_raw: 65536,
            n_x: 1024,
            alpha: 1.0,
            eps_fraction: 0.01,
            source_exclusion: 0.25,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pool == 0 || self.n_x == 0 {
            return Err(invalid("pool and draw sizes must be positive"));
        }
        if self.n_raw < self.n_pool {
            return Err(invalid("n_raw must be at least n_pool"));
        }
        if self.n_x > self.n_pool {
            return Err(invalid("n_x must not exceed n_pool"));
        }
        if !(self.alpha >= 0.0) || !(self.eps_fraction >= 0.0) || !(self.source_exclusion >= 0.0) {
            return Err(invalid("alpha, eps_fraction and source_exclusion must be non-negative"));
        }
        Ok(())
    }
}

pub fn build_pool<R: Rng + ?Sized>(
    medium: &Medium,
    source: &SourceSpec,
    config: &PoolConfig,
    rng: &mut R,
) -> Result<CollocationPool> {
    config.validate()?;
    let grid = medium.grid();
    let exclusion = config.source_exclusion * medium.wavelength();
    let mut raw = Vec::with_capacity(config.n_raw);
    let mut attempts = 0usize;
    while raw.len() < config.n_raw {
        attempts += 1;
        if attempts > 100 * config.n_raw {
            return Err(invalid("source exclusion leaves no room for collocation points"));
        }
        let z = grid.z0 + rng.random::<f64>() * (grid.z_max() - grid.z0);
        let x = grid.x0 + rng.random::<f64>() * (grid.x_max() - grid.x0);
        if source.distance(z, x) > exclusion {
            raw.push((z, x));
        }
    }
    let dm_grid = medium.delta_m();
    let dm_raw: Vec<f64> = raw.iter().map(|&(z, x)| grid.interpolate(&dm_grid, z, x)).collect();
    let abs: Vec<f64> = dm_raw.iter().map(|v| v.abs()).collect();
    let chosen = weighted_selection(&importance(&abs, config.alpha, config.eps_fraction), config.n_pool, rng)?;
    let physical: Vec<(f64, f64)> = chosen.iter().map(|&i| raw[i]).collect();
    let delta_m: Vec<f64> = chosen.iter().map(|&i| dm_raw[i]).collect();
    let (omega, v0, m0) = (medium.omega(), medium.v0(), medium.m0());
    let batch = CollocationBatch {
        points: physical
            .iter()
            .map(|&(z, x)| (normalize(z, omega, v0), normalize(x, omega, v0)))
            .collect(),
        contrast: delta_m.iter().map(|d| d / m0).collect(),
        u0: background_field(medium, source, &physical)?,
    };
    Ok(CollocationPool {
        physical,
        batch,
        delta_m,
        draw_size: config.n_x,
    })
}

impl CollocationPool {
    pub fn len(&self) -> usize {
        self.physical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.physical.is_empty()
    }

    /// `draw_size` distinct pool entries, uniformly.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CollocationBatch {
        let idx = index::sample(rng, self.len(), self.draw_size);
        let mut b = CollocationBatch {
            points: Vec::with_capacity(self.draw_size),
            contrast: Vec::with_capacity(self.draw_size),
            u0: Vec::with_capacity(self.draw_size),
        };
        for i in idx.iter() {
            b.points.push(self.batch.points[i]);
            b.contrast.push(self.batch.contrast[i]);
            b.u0.push(self.batch.u0[i]);
        }
        b
    }

    /// `z,x,delta_m,u0_re,u0_im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "z,x,delta_m,u0_re,u0_im\r\n")?;
        for (i, &(z, x)) in self.physical.iter().enumerate() {
            let u = self.batch.u0[i];
            write!(w, "{z},{x},{},{},{}\r\n", self.delta_m[i], u.re, u.im)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Gi,
    Hybrid,
    PdeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub seed: u64,
    pub architecture: Architecture,
    /// Scale of the output layer's initial weights.
    pub output_gain: f64,
    pub lr0: f64,
    /// `lr(T)/lr(0)`.
    pub lr_decay: f64,
    pub lambda_max: f64,
    pub lambda_midpoint: f64,
    pub lambda_steepness: f64,
    pub pool: PoolConfig,
    pub pde_scale: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Gi,
            epochs: 2000,
            seed: 0,
            architecture: Architecture::default(),
            output_gain: 0.01,
            lr0: 1e-3,
            lr_decay: 0.34,
            lambda_max: 0.01,
            lambda_midpoint: 0.5,
            lambda_steepness: 20.0,
            pool: PoolConfig::default(),
            pde_scale: 1.0,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lr0", self.lr0)?;
        positive("lr_decay", self.lr_decay)?;
        positive("pde_scale", self.pde_scale)?;
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(invalid("lambda_max must be finite and non-negative"));
        }
        if !self.output_gain.is_finite() || !self.lambda_midpoint.is_finite() || !self.lambda_steepness.is_finite() {
            return Err(invalid("schedule and gain parameters must be finite"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be positive"));
        }
        if self.mode != TrainMode::Gi {
            self.pool.validate()?;
        }
        Ok(())
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        lambda_at(
            epoch,
            self.epochs,
            self.lambda_max,
            self.lambda_midpoint,
            self.lambda_steepness,
        )
    }
}

/// `Σ|pred − ref|² / Σ|ref|²`.
pub fn nmse(pred: &ComplexField, reference: &ComplexField) -> Result<f64> {
    pred.grid().check_same(reference.grid(), "nmse")?;
    nmse_values(pred.values(), reference.values())
}

pub fn nmse_values(pred: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(invalid("nmse inputs differ in length"));
    }
    let den: f64 = reference.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(invalid("nmse reference is identically zero"));
    }
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r).norm_sqr()).sum();
    Ok(num / den)
}

/// Mean absolute error.
pub fn mae(pred: &[Complex64], reference: &[Complex64]) -> f64 {
    pred.iter().zip(reference).map(|(p, r)| (p - r).norm()).sum::<f64>() / pred.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub gi: f64,
    pub pde: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub nmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// After the last epoch; `None` without a reference.
    pub nmse: Option<f64>,
    pub mae: Option<f64>,
    pub losses: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "epoch,lambda,gi,pde,total\r\n")?;
        for r in &self.losses {
            write!(w, "{},{},{},{},{}\r\n", r.epoch, r.lambda, r.gi, r.pde, r.total)?;
        }
        Ok(())
    }

    pub fn write_eval_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "epoch,nmse,mae\r\n")?;
        for r in &self.evals {
            write!(w, "{},{},{}\r\n", r.epoch, r.nmse, r.mae)?;
        }
        Ok(())
    }
}

/// Everything a run trains against. `kernel` must be built on the medium grid
/// and `u0` is the background field on that grid.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup<'a> {
    pub medium: &'a Medium,
    pub kernel: &'a GreensKernel,
    pub source: &'a SourceSpec,
    pub u0: &'a ComplexField,
    pub reference: Option<&'a ComplexField>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: NeuralField,
    pub report: EvalReport,
    /// Network prediction on the grid after the last epoch.
    pub prediction: ComplexField,
}

fn init_run(config: &TrainConfig) -> Result<(ChaCha8Rng, NeuralField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let field = NeuralField::init(config.architecture, config.output_gain, &mut rng)?;
    Ok((rng, field))
}

/// The collocation pool a hybrid or PDE-only run with `config` would use.
pub fn training_pool(config: &TrainConfig, medium: &Medium, source: &SourceSpec) -> Result<CollocationPool> {
    let (mut rng, _) = init_run(config)?;
    build_pool(medium, source, &config.pool, &mut rng)
}

/// Runs `config.epochs` Adam steps. All randomness (initialization, pool and
/// per-epoch draws) comes from one ChaCha8 stream seeded by `config.seed`.
pub fn train(config: &TrainConfig, setup: &TrainSetup<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let medium = setup.medium;
    let grid = *medium.grid();
    if let Some(r) = setup.reference {
        grid.check_same(r.grid(), "training reference")?;
    }
    let view = LinearSystemView::new(setup.kernel, medium, setup.u0)?;
    let points = normalized_grid_points(&grid, medium.omega(), medium.v0());

    let (mut rng, mut field) = init_run(config)?;
    let pool = match config.mode {
        TrainMode::Gi => None,
        _ => Some(build_pool(medium, setup.source, &config.pool, &mut rng)?),
    };
    let mut adam = AdamState::new(field.param_count(), config.epochs as u64);
    adam.lr0 = config.lr0;
    adam.decay = config.lr_decay;

    let mut losses = Vec::with_capacity(config.epochs);
    let mut evals = Vec::new();
    let evaluate = |field: &NeuralField, epoch: usize, evals: &mut Vec<EvalRecord>| -> Result<()> {
        if let Some(r) = setup.reference {
            let pred = field.forward(&points);
            evals.push(EvalRecord {
                epoch,
                nmse: nmse_values(&pred, r.values())?,
                mae: mae(&pred, r.values()),
            });
        }
        Ok(())
    };

    for epoch in 0..config.epochs {
        if epoch % config.eval_every == 0 {
            evaluate(&field, epoch, &mut evals)?;
        }
        let lambda = match config.mode {
            TrainMode::Gi => 0.0,
            TrainMode::Hybrid => config.lambda(epoch),
            TrainMode::PdeOnly => 1.0,
        };
        let (gi, mut grad) = if config.mode == TrainMode::PdeOnly {
            (0.0, vec![0.0; field.param_count()])
        } else {
            let e = gi_loss(&field, &view, &points)?;
            (e.loss, e.grad)
        };
        let mut pde = 0.0;
        if lambda != 0.0 {
            let batch = pool.as_ref().expect("pool exists outside gi mode").draw(&mut rng);
            let e = pde_loss(&field, &batch, config.pde_scale)?;
            pde = e.loss;
            grad.iter_mut().zip(&e.grad).for_each(|(g, p)| *g += lambda * p);
        }
        let total = gi + lambda * pde;
        losses.push(LossRecord {
            epoch,
            lambda,
            gi,
            pde,
            total,
        });
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                field: Box::new(field),
            });
        }
        adam.step(field.params_mut(), &grad)?;
        if field.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                field: Box::new(field),
            });
        }
    }
    evaluate(&field, config.epochs, &mut evals)?;
    let prediction = ComplexField::new(grid, field.forward(&points))?;
    let last = evals.last().filter(|e| e.epoch == config.epochs).copied();
    Ok(TrainOutcome {
        field,
        prediction,
        report: EvalReport {
            nmse: last.map(|e| e.nmse),
            mae: last.map(|e| e.mae),
            losses,
            evals,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}
