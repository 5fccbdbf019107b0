//! Sine-activated MLP representing the scattered field over wavelength
//! normalized coordinates.
//!
//! Points are `(z̃, x̃)` pairs. The two linear outputs are `Re(Us)` and
//! `Im(Us)`. Evaluation is batched: every layer is one matrix product over all
//! points, and the derivative pass stacks five streams (value, ∂x, ∂z, ∂xx,
//! ∂zz) into the same product so the Laplacian costs about five forwards.
//!
//! Parameters live in one flat `Vec<f64>`, layer by layer, each layer storing
//! its `fan_out × fan_in` weight matrix row-major followed by its bias.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::Complex64;

pub const DEFAULT_BANDS: usize = 3;
pub const DEFAULT_WIDTH: usize = 128;
pub const DEFAULT_HIDDEN_LAYERS: usize = 5;
/// Largest point count accepted by [`ntk_apply`].
pub const NTK_POINT_CAP: usize = 2000;

/// Number of stacked streams in the derivative pass.
const STREAMS: usize = 5;

/// Sinusoidal positional encoding with frequencies `2^k·π`, `k < bands`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub bands: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { bands: DEFAULT_BANDS }
    }
}

impl EncodingConfig {
    pub fn new(bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(invalid("encoding needs at least one frequency band"));
        }
        Ok(Self { bands })
    }

    pub fn dim(&self) -> usize {
        2 + 4 * self.bands
    }

    pub fn frequency(k: usize) -> f64 {
        (1u64 << k) as f64 * PI
    }

    pub fn max_frequency(&self) -> f64 {
        Self::frequency(self.bands - 1)
    }

    /// `[x̃, z̃, (sin ωx̃, cos ωx̃, sin ωz̃, cos ωz̃) for each band]`.
    pub fn encode(&self, z: f64, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.fill(z, x, &mut out, [None, None, None, None]);
        out
    }

    /// Writes features and, optionally, their ∂x, ∂z, ∂xx, ∂zz derivatives.
    fn fill(&self, z: f64, x: f64, value: &mut [f64], mut derivs: [Option<&mut [f64]>; 4]) {
        value[0] = x;
        value[1] = z;
        if let Some(d) = derivs[0].as_deref_mut() {
            d[0] = 1.0;
        }
        if let Some(d) = derivs[1].as_deref_mut() {
            d[1] = 1.0;
        }
        for k in 0..self.bands {
            let w = Self::frequency(k);
            let (sx, cx) = (w * x).sin_cos();
            let (sz, cz) = (w * z).sin_cos();
            let j = 2 + 4 * k;
            value[j..j + 4].copy_from_slice(&[sx, cx, sz, cz]);
            if let Some(d) = derivs[0].as_deref_mut() {
                d[j] = w * cx;
                d[j + 1] = -w * sx;
            }
            if let Some(d) = derivs[1].as_deref_mut() {
                d[j + 2] = w * cz;
                d[j + 3] = -w * sz;
            }
            if let Some(d) = derivs[2].as_deref_mut() {
                d[j] = -w * w * sx;
                d[j + 1] = -w * w * cx;
            }
            if let Some(d) = derivs[3].as_deref_mut() {
                d[j + 2] = -w * w * sz;
                d[j + 3] = -w * w * cz;
            }
        }
    }

    fn batch(&self, points: &[(f64, f64)], streams: usize) -> Array2<f64> {
        let n = points.len();
        let dim = self.dim();
        let mut out = Array2::zeros((streams * n, dim));
        let buf = out.as_slice_mut().expect("standard layout");
        for (i, &(z, x)) in points.iter().enumerate() {
            if streams == 1 {
                self.fill(z, x, &mut buf[i * dim..(i + 1) * dim], [None, None, None, None]);
                continue;
            }
            let (value, rest) = buf.split_at_mut(n * dim);
            let (dx, rest) = rest.split_at_mut(n * dim);
            let (dz, rest) = rest.split_at_mut(n * dim);
            let (dxx, dzz) = rest.split_at_mut(n * dim);
            let r = i * dim..(i + 1) * dim;
            self.fill(
                z,
                x,
                &mut value[r.clone()],
                [
                    Some(&mut dx[r.clone()]),
                    Some(&mut dz[r.clone()]),
                    Some(&mut dxx[r.clone()]),
                    Some(&mut dzz[r]),
                ],
            );
        }
        out
    }
}

/// Layer sizes of a [`NeuralField`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub bands: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            bands: DEFAULT_BANDS,
            width: DEFAULT_WIDTH,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        EncodingConfig::new(self.bands)?;
        if self.width == 0 || self.hidden_layers == 0 {
            return Err(invalid("width and hidden layer count must be positive"));
        }
        Ok(())
    }

    pub fn encoding(&self) -> EncodingConfig {
        EncodingConfig { bands: self.bands }
    }

    /// Widths from the encoded input through the two outputs.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.encoding().dim()];
        d.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        d.push(2);
        d
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl Layer {
    fn w<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &params[self.weights..self.bias]).expect("layer shape")
    }

    fn b<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias..self.bias + self.fan_out]
    }
}

/// Sine MLP: hidden layers `h = sin(W·h_prev + b)`, identity output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralField {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Value, gradient and Laplacian of the network output at each point, all
/// with respect to normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDerivatives {
    pub value: Vec<Complex64>,
    pub d_x: Vec<Complex64>,
    pub d_z: Vec<Complex64>,
    pub laplacian: Vec<Complex64>,
}

/// Activations retained from a batched forward pass for backpropagation and
/// tangent propagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    points: usize,
    streams: usize,
    /// Input to each layer, stacked by stream.
    inputs: Vec<Array2<f64>>,
    /// Hidden-layer pre-activations, stacked by stream.
    pre: Vec<Array2<f64>>,
    /// `cos` of the value-stream pre-activations.
    cos: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn has_derivatives(&self) -> bool {
        self.streams == STREAMS
    }

    /// Value-stream pre-activations of hidden layer `l`, `points × width`.
    pub fn pre_activations(&self, l: usize) -> ArrayView2<'_, f64> {
        self.pre[l].slice(s![..self.points, ..])
    }
}

fn to_complex(rows: ArrayView2<'_, f64>) -> Vec<Complex64> {
    rows.outer_iter().map(|r| Complex64::new(r[0], r[1])).collect()
}

impl NeuralField {
    /// All parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let dims = arch.dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for p in dims.windows(2) {
            let (fan_in, fan_out) = (p[0], p[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                weights: off,
                bias: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            arch,
            layers,
            params: vec![0.0; off],
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut f = Self::zeros(arch)?;
        if params.len() != f.params.len() {
            return Err(invalid(format!(
                "architecture needs {} parameters, got {}",
                f.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        f.params = params;
        Ok(f)
    }

    /// Uniform initialization: `±1/fan_in` on the first layer, `±sqrt(6/fan_in)`
    /// on deeper layers, with the output layer further scaled by
    /// `output_gain`. Biases share their layer's bound.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, output_gain: f64, rng: &mut R) -> Result<Self> {
        if !output_gain.is_finite() {
            return Err(invalid("output gain must be finite"));
        }
        let mut f = Self::zeros(arch)?;
        let last = f.layers.len() - 1;
        for (l, layer) in f.layers.iter().enumerate() {
            let fan_in = layer.fan_in as f64;
            let mut bound = if l == 0 { 1.0 / fan_in } else { (6.0 / fan_in).sqrt() };
            if l == last {
                bound *= output_gain;
            }
            for p in &mut f.params[layer.weights..layer.bias + layer.fan_out] {
                *p = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        Ok(f)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn encoding(&self) -> EncodingConfig {
        self.arch.encoding()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Parameter index ranges `(weights, bias)` of layer `l`.
    pub fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let layer = &self.layers[l];
        (layer.weights..layer.bias, layer.bias..layer.bias + layer.fan_out)
    }

    pub fn forward(&self, points: &[(f64, f64)]) -> Vec<Complex64> {
        self.forward_cached(points).0
    }

    pub fn forward_single(&self, z: f64, x: f64) -> Complex64 {
        self.forward(&[(z, x)])[0]
    }

    pub fn forward_cached(&self, points: &[(f64, f64)]) -> (Vec<Complex64>, ForwardCache) {
        let (out, cache) = self.run(points, 1);
        (to_complex(out.view()), cache)
    }

    /// Value, first derivatives and Laplacian at every point.
    pub fn forward_with_derivatives(&self, points: &[(f64, f64)]) -> (FieldDerivatives, ForwardCache) {
        let n = points.len();
        let (out, cache) = self.run(points, STREAMS);
        let block = |k: usize| out.slice(s![k * n..(k + 1) * n, ..]);
        let lap = &block(3) + &block(4);
        let d = FieldDerivatives {
            value: to_complex(block(0)),
            d_x: to_complex(block(1)),
            d_z: to_complex(block(2)),
            laplacian: to_complex(lap.view()),
        };
        (d, cache)
    }

    pub fn laplacian(&self, z: f64, x: f64) -> FieldDerivatives {
        self.forward_with_derivatives(&[(z, x)]).0
    }

    fn run(&self, points: &[(f64, f64)], streams: usize) -> (Array2<f64>, ForwardCache) {
        let n = points.len();
        let mut x = self.encoding().batch(points, streams);
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut cos = Vec::with_capacity(hidden);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.w(&self.params).t());
            let b = layer.b(&self.params);
            for mut row in z.slice_mut(s![..n, ..]).outer_iter_mut() {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
            inputs.push(x);
            if l == hidden {
                return (
                    z,
                    ForwardCache {
                        points: n,
                        streams,
                        inputs,
                        pre,
                        cos,
                    },
                );
            }
            let w = layer.fan_out;
            let mut h = Array2::zeros(z.raw_dim());
            let mut c = Array2::zeros((n, w));
            {
                let zs = z.as_slice().expect("standard layout");
                let hs = h.as_slice_mut().expect("standard layout");
                let cs = c.as_slice_mut().expect("standard layout");
                let m = n * w;
                for i in 0..m {
                    let (si, ci) = zs[i].sin_cos();
                    hs[i] = si;
                    cs[i] = ci;
                    if streams == STREAMS {
                        for d in 1..=2 {
                            let ad = zs[d * m + i];
                            let add = zs[(d + 2) * m + i];
                            hs[d * m + i] = ci * ad;
                            hs[(d + 2) * m + i] = -si * ad * ad + ci * add;
                        }
                    }
                }
            }
            pre.push(z);
            cos.push(c);
            x = h;
        }
        unreachable!("network has an output layer")
    }

    /// Reverse-mode gradient of a scalar loss given its adjoints with respect
    /// to the outputs: `∂L/∂Re + i·∂L/∂Im` per point for the value and,
    /// when the cache holds derivative streams, for the Laplacian.
    pub fn param_gradient(
        &self,
        cache: &ForwardCache,
        value_adjoint: &[Complex64],
        laplacian_adjoint: Option<&[Complex64]>,
    ) -> Result<Vec<f64>> {
        let n = cache.points;
        if value_adjoint.len() != n {
            return Err(invalid("value adjoint length must match the cached batch"));
        }
        if let Some(l) = laplacian_adjoint {
            if l.len() != n {
                return Err(invalid("Laplacian adjoint length must match the cached batch"));
            }
            if !cache.has_derivatives() {
                return Err(invalid("Laplacian adjoint needs a derivative forward pass"));
            }
        }
        let streams = cache.streams;
        let mut ybar = Array2::zeros((streams * n, 2));
        for (i, v) in value_adjoint.iter().enumerate() {
            ybar[[i, 0]] = v.re;
            ybar[[i, 1]] = v.im;
        }
        if let Some(lap) = laplacian_adjoint {
            for (i, v) in lap.iter().enumerate() {
                for k in [3, 4] {
                    ybar[[k * n + i, 0]] = v.re;
                    ybar[[k * n + i, 1]] = v.im;
                }
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut zbar = ybar;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gw = zbar.t().dot(&cache.inputs[l]);
            grad[layer.weights..layer.bias].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = zbar.slice(s![..n, ..]).sum_axis(Axis(0));
            grad[layer.bias..layer.bias + layer.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l == 0 {
                break;
            }
            let hbar = zbar.dot(&layer.w(&self.params));
            zbar = self.sine_adjoint(cache, l - 1, hbar);
        }
        Ok(grad)
    }

    /// Maps the adjoint of a hidden layer's output back to its pre-activation.
    fn sine_adjoint(&self, cache: &ForwardCache, l: usize, hbar: Array2<f64>) -> Array2<f64> {
        let n = cache.points;
        let w = self.layers[l].fan_out;
        let m = n * w;
        let c = cache.cos[l].as_slice().expect("standard layout");
        let a = cache.pre[l].as_slice().expect("standard layout");
        let hb = hbar.as_slice().expect("standard layout");
        let mut abar = Array2::zeros(hbar.raw_dim());
        let ab = abar.as_slice_mut().expect("standard layout");
        for i in 0..m {
            let ci = c[i];
            if cache.streams == 1 {
                ab[i] = hb[i] * ci;
                continue;
            }
            let si = a[i].sin();
            let mut acc = hb[i] * ci;
            for d in 1..=2 {
                let (hd, hdd) = (hb[d * m + i], hb[(d + 2) * m + i]);
                let (ad, add) = (a[d * m + i], a[(d + 2) * m + i]);
                acc -= hd * si * ad + hdd * (ci * ad * ad + si * add);
                ab[d * m + i] = hd * ci - 2.0 * hdd * si * ad;
                ab[(d + 2) * m + i] = hdd * ci;
            }
            ab[i] = acc;
        }
        abar
    }

    /// Forward-mode directional derivative of the value outputs along a
    /// parameter tangent: `J·tangent`.
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<Vec<Complex64>> {
        if tangent.len() != self.params.len() {
            return Err(invalid("tangent length must equal the parameter count"));
        }
        let n = cache.points;
        let hidden = self.layers.len() - 1;
        let mut hdot: Option<Array2<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let x = cache.inputs[l].slice(s![..n, ..]);
            let mut adot = x.dot(&layer.w(tangent).t());
            if let Some(hd) = &hdot {
                adot += &hd.dot(&layer.w(&self.params).t());
            }
            let b = layer.b(tangent);
            for mut row in adot.outer_iter_mut() {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
            if l == hidden {
                return Ok(to_complex(adot.view()));
            }
            adot *= &cache.cos[l];
            hdot = Some(adot);
        }
        unreachable!("network has an output layer")
    }

    /// Writes the versioned binary checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [self.arch.bands, self.arch.width, self.arch.hidden_layers] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader { inner: r, offset: 0 };
        let magic: [u8; 4] = r.take()?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let version = u16::from_le_bytes(r.take()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u32::from_le_bytes(r.take()?) as usize;
        }
        let arch = Architecture {
            bands: dims[0],
            width: dims[1],
            hidden_layers: dims[2],
        };
        arch.validate().map_err(|e| Error::Format {
            offset: 6,
            message: e.to_string(),
        })?;
        let count_at = r.offset;
        let count = u64::from_le_bytes(r.take()?) as usize;
        if count != arch.param_count() {
            return Err(Error::Format {
                offset: count_at,
                message: format!(
                    "parameter count {count} does not match architecture ({})",
                    arch.param_count()
                ),
            });
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(r.take()?));
        }
        Self::from_params(arch, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GINF";
pub const CHECKPOINT_VERSION: u16 = 1;

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                offset: self.offset,
                message: "unexpected end of file".into(),
            },
            _ => Error::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }
}

/// Empirical NTK product `J·Re(Jᴴ·v)` over the value outputs at `points`.
///
/// With real parameters the complex Jacobian `J` acts on `θ ∈ ℝⁿ`, so the
/// adjoint pass returns the real part of `Jᴴv`.
pub fn ntk_apply(field: &NeuralField, points: &[(f64, f64)], v: &[Complex64]) -> Result<Vec<Complex64>> {
    if points.len() > NTK_POINT_CAP {
        return Err(Error::ResourceLimit {
            what: "NTK product points",
            requested: points.len(),
            cap: NTK_POINT_CAP,
        });
    }
    if v.len() != points.len() {
        return Err(invalid("vector length must match the point count"));
    }
    let (_, cache) = field.forward_cached(points);
    let jt_v = field.param_gradient(&cache, v, None)?;
    field.jvp(&cache, &jt_v)
}

/// Adam with bias correction and an exponentially decaying step size
/// `lr(t) = lr0·decay^(t/T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
    pub decay: f64,
}

impl AdamState {
    pub fn new(n_params: usize, total_steps: u64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr0: 1e-3,
            decay: 0.34,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr0;
        }
        self.lr0 * self.decay.powf(t as f64 / self.total_steps as f64)
    }

    /// One update in place, using the step size of the current step index.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(format!(
                "Adam state holds {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            bands: 2,
            width: 7,
            hidden_layers: 3,
        }
    }

    fn random_field(arch: Architecture, seed: u64) -> NeuralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NeuralField::init(arch, 1.0, &mut rng).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0)))
            .collect()
    }

    #[test]
    fn encoding_at_origin() {
        let e = EncodingConfig::new(3).unwrap();
        assert_eq!(
            e.encode(0.0, 0.0),
            vec![0., 0., 0., 1., 0., 1., 0., 1., 0., 1., 0., 1., 0., 1.]
        );
        assert_eq!(EncodingConfig::new(1).unwrap().dim(), 6);
        assert!(EncodingConfig::new(0).is_err());
        assert!(e.max_frequency() > 2.0 * PI);
    }

    #[test]
    fn encoding_periodicity() {
        let e = EncodingConfig::new(3).unwrap();
        let (a, b) = (e.encode(0.3, 0.71), e.encode(0.3, 2.71));
        for j in 2..e.dim() {
            assert!((a[j] - b[j]).abs() < 1e-12);
        }
        assert!((a[0] - b[0] - -2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let f = NeuralField::zeros(small_arch()).unwrap();
        for u in f.forward(&random_points(10, 1)) {
            assert_eq!(u, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn batch_matches_single() {
        let f = random_field(Architecture::default(), 3);
        let pts = random_points(100, 4);
        let batch = f.forward(&pts);
        for (p, u) in pts.iter().zip(&batch) {
            assert_eq!(f.forward_single(p.0, p.1), *u);
        }
    }

    #[test]
    fn output_layer_is_linear() {
        let mut f = random_field(small_arch(), 5);
        let last = f.layer_count() - 1;
        let (w, b) = f.layer_ranges(last);
        for p in &mut f.params_mut()[b] {
            *p = 0.0;
        }
        let pts = random_points(5, 6);
        let u1 = f.forward(&pts);
        for p in &mut f.params_mut()[w] {
            *p *= 2.0;
        }
        let u2 = f.forward(&pts);
        for (a, b) in u1.iter().zip(&u2) {
            assert!((2.0 * a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn single_sine_laplacian_closed_form() {
        // Us = sin(a·x̃) via one hidden unit reading the raw x̃ feature.
        let arch = Architecture {
            bands: 1,
            width: 1,
            hidden_layers: 1,
        };
        let mut f = NeuralField::zeros(arch).unwrap();
        let a = 2.0;
        let (w0, _) = f.layer_ranges(0);
        let (w1, _) = f.layer_ranges(1);
        f.params_mut()[w0.start] = a;
        f.params_mut()[w1.start] = 1.0;
        let d = f.laplacian(0.9, 0.3);
        assert!((d.value[0].re - (a * 0.3).sin()).abs() < 1e-15);
        assert!((d.laplacian[0].re + a * a * (a * 0.3).sin()).abs() < 1e-14);
        assert!((d.d_x[0].re - a * (a * 0.3).cos()).abs() < 1e-14);
        assert_eq!(d.d_z[0].re, 0.0);
    }

    #[test]
    fn zero_hidden_weights_have_zero_laplacian() {
        let mut f = random_field(small_arch(), 7);
        for l in 0..f.layer_count() - 1 {
            let (w, _) = f.layer_ranges(l);
            for p in &mut f.params_mut()[w] {
                *p = 0.0;
            }
        }
        let d = f.forward_with_derivatives(&random_points(4, 8)).0;
        for l in d.laplacian {
            assert_eq!(l.norm(), 0.0);
        }
    }

    fn value_at(f: &NeuralField, z: f64, x: f64) -> Complex64 {
        f.forward_single(z, x)
    }

    #[test]
    fn laplacian_matches_finite_differences() {
        let h = 1e-4;
        for seed in 0..10 {
            let f = random_field(small_arch(), 100 + seed);
            let (z, x) = random_points(1, 200 + seed)[0];
            let d = f.laplacian(z, x);
            let u = value_at(&f, z, x);
            let fd =
                (value_at(&f, z, x + h) + value_at(&f, z, x - h) + value_at(&f, z + h, x) + value_at(&f, z - h, x)
                    - 4.0 * u)
                    / (h * h);
            let rel = (fd - d.laplacian[0]).norm() / d.laplacian[0].norm().max(1.0);
            assert!(rel < 1e-5, "seed {seed}: {rel}");
            let gx = (value_at(&f, z, x + h) - value_at(&f, z, x - h)) / (2.0 * h);
            assert!((gx - d.d_x[0]).norm() < 1e-6 * d.d_x[0].norm().max(1.0));
        }
    }

    fn quadratic_loss(f: &NeuralField, pts: &[(f64, f64)], wv: &[Complex64], wl: &[Complex64]) -> f64 {
        let d = f.forward_with_derivatives(pts).0;
        d.value
            .iter()
            .zip(wv)
            .chain(d.laplacian.iter().zip(wl))
            .map(|(u, w)| (u - w).norm_sqr())
            .sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = random_field(small_arch(), 11);
        let pts = random_points(6, 12);
        let wv: Vec<_> = (0..6).map(|i| Complex64::new(0.1 * i as f64, -0.2)).collect();
        let wl: Vec<_> = (0..6).map(|i| Complex64::new(-0.3, 0.05 * i as f64)).collect();
        let (d, cache) = f.forward_with_derivatives(&pts);
        let av: Vec<_> = d.value.iter().zip(&wv).map(|(u, w)| 2.0 * (u - w)).collect();
        let al: Vec<_> = d.laplacian.iter().zip(&wl).map(|(u, w)| 2.0 * (u - w)).collect();
        let g = f.param_gradient(&cache, &av, Some(&al)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let delta = 1e-5;
        for _ in 0..20 {
            let j = rng.random_range(0..f.param_count());
            let mut fp = f.clone();
            fp.params_mut()[j] += delta;
            let mut fm = f.clone();
            fm.params_mut()[j] -= delta;
            let fd = (quadratic_loss(&fp, &pts, &wv, &wl) - quadratic_loss(&fm, &pts, &wv, &wl)) / (2.0 * delta);
            let scale = g[j].abs().max(1e-3);
            assert!((fd - g[j]).abs() / scale < 1e-6, "param {j}: fd {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn value_only_gradient_agrees_with_stream_gradient() {
        let f = random_field(small_arch(), 21);
        let pts = random_points(9, 22);
        let adj: Vec<_> = (0..9).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let (_, c1) = f.forward_cached(&pts);
        let (_, c5) = f.forward_with_derivatives(&pts);
        let g1 = f.param_gradient(&c1, &adj, None).unwrap();
        let g5 = f.param_gradient(&c5, &adj, None).unwrap();
        for (a, b) in g1.iter().zip(&g5) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!(f.param_gradient(&c1, &adj, Some(&adj)).is_err());
    }

    #[test]
    fn zero_adjoint_zero_gradient() {
        let f = random_field(small_arch(), 1);
        let pts = random_points(4, 2);
        let (_, cache) = f.forward_cached(&pts);
        let g = f.param_gradient(&cache, &[Complex64::new(0.0, 0.0); 4], None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_is_stationary_for_output_norm() {
        let f = NeuralField::zeros(small_arch()).unwrap();
        let pts = random_points(4, 2);
        let (u, cache) = f.forward_cached(&pts);
        let adj: Vec<_> = u.iter().map(|v| 2.0 * v).collect();
        let g = f.param_gradient(&cache, &adj, None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let f = random_field(small_arch(), 31);
        let pts = random_points(5, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let t: Vec<f64> = (0..f.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = f.forward_cached(&pts);
        let jv = f.jvp(&cache, &t).unwrap();
        let eps = 1e-6;
        let shifted = |s: f64| {
            let p: Vec<f64> = f.params().iter().zip(&t).map(|(a, b)| a + s * b).collect();
            NeuralField::from_params(f.architecture(), p).unwrap().forward(&pts)
        };
        let (up, um) = (shifted(eps), shifted(-eps));
        for i in 0..pts.len() {
            let fd = (up[i] - um[i]) / (2.0 * eps);
            assert!((fd - jv[i]).norm() < 1e-7 * jv[i].norm().max(1.0));
        }
    }

    #[test]
    fn ntk_rank_one_for_bias_only_network() {
        let f = NeuralField::zeros(small_arch()).unwrap();
        let pts = random_points(6, 40);
        let v: Vec<_> = (0..6).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let sum: Complex64 = v.iter().sum();
        for p in ntk_apply(&f, &pts, &v).unwrap() {
            assert!((p - sum).norm() < 1e-12);
        }
        let zero = ntk_apply(&f, &pts, &[Complex64::new(0.0, 0.0); 6]).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn ntk_is_self_adjoint() {
        let f = random_field(small_arch(), 41);
        let pts = random_points(12, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut rc = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let u: Vec<_> = (0..12).map(|_| rc()).collect();
        let v: Vec<_> = (0..12).map(|_| rc()).collect();
        let pu = ntk_apply(&f, &pts, &u).unwrap();
        let pv = ntk_apply(&f, &pts, &v).unwrap();
        let lhs: f64 = u.iter().zip(&pv).map(|(a, b)| (a.conj() * b).re).sum();
        let rhs: f64 = pu.iter().zip(&v).map(|(a, b)| (a.conj() * b).re).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn ntk_point_cap() {
        let f = NeuralField::zeros(small_arch()).unwrap();
        let pts = vec![(0.0, 0.0); NTK_POINT_CAP + 1];
        let v = vec![Complex64::new(0.0, 0.0); NTK_POINT_CAP + 1];
        assert!(matches!(ntk_apply(&f, &pts, &v), Err(Error::ResourceLimit { .. })));
    }

    #[test]
    fn preactivations_start_in_principal_branch() {
        let f = random_field(Architecture::default(), 50);
        let pts = random_points(256, 51);
        let (_, cache) = f.forward_cached(&pts);
        for l in 0..f.layer_count() - 1 {
            let a = cache.pre_activations(l);
            let inside = a.iter().filter(|v| v.abs() <= PI).count() as f64 / a.len() as f64;
            assert!(inside > 0.99, "layer {l}: {inside}");
        }
    }

    #[test]
    fn adam_schedule() {
        let a = AdamState::new(1, 1000);
        assert!((a.lr_at(0) - 1e-3).abs() < 1e-18);
        assert!((a.lr_at(1000) - 3.4e-4).abs() < 1e-15);
        assert!((a.lr_at(500) - 5.831e-4).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_gradient() {
        let mut a = AdamState::new(2, 10);
        let mut p = vec![1.0, -2.0];
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        a.step(&mut p, &[1.0, 0.0]).unwrap();
        let m = a.first_moment()[0];
        let q = p.clone();
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!((a.first_moment()[0] - 0.9 * m).abs() < 1e-18);
        assert_ne!(p[0], q[0]);
        assert_eq!(p[1], q[1]);
        assert_eq!(a.step_count(), 3);
        assert!(a.step(&mut p, &[0.0]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = AdamState::new(1, 10);
        let mut p = vec![0.0];
        a.step(&mut p, &[5.0]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = random_field(small_arch(), 60);
        let mut buf = Vec::new();
        f.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 12 + 8 + 8 * f.param_count());
        let g = NeuralField::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(f.architecture(), g.architecture());
        for (a, b) in f.params().iter().zip(g.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let cut = buf.len() - 3;
        match NeuralField::read_checkpoint(&buf[..cut]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, cut - 5),
            other => panic!("{other:?}"),
        }
        buf[0] = b'X';
        assert!(matches!(
            NeuralField::read_checkpoint(&buf[..]),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn forward_is_deterministic(seed in 0u64..1000, z in -2.0f64..2.0, x in -2.0f64..2.0) {
            let a = random_field(small_arch(), seed);
            let b = random_field(small_arch(), seed);
            prop_assert_eq!(a.forward_single(z, x), b.forward_single(z, x));
        }

        #[test]
        fn derivative_pass_value_matches_forward(seed in 0u64..1000, z in -2.0f64..2.0, x in -2.0f64..2.0) {
            let f = random_field(small_arch(), seed);
            let d = f.laplacian(z, x);
            prop_assert!((d.value[0] - f.forward_single(z, x)).norm() < 1e-13);
        }
    }
}
