//! Dense feed-forward networks with hand-written backpropagation, an Adam
//! optimizer and a central-difference gradient checker.
//!
//! Layers compute `y = act(x W^T + b)` on row-major batches. All arithmetic
//! is `f64`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{self, LeReader};
use crate::{Error, Result};

const MLP_MAGIC: &[u8; 4] = b"MLP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Builds a layer from explicit parameters; `weights` is `out x in`.
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Contract(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.is_empty() {
            return Err(Error::Contract("layer with zero units".into()));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    /// He-uniform weights for relu layers, Glorot-uniform for linear ones;
    /// zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            Activation::Linear => (6.0 / (input + output) as f64).sqrt(),
        };
        let weights =
            Array2::from_shape_simple_fn((output, input), || rng.random_range(-limit..=limit));
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Gradients for one layer, same shapes as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients for a whole [`Mlp`], layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights *= c;
            l.bias *= c;
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    shapes: Vec<(usize, usize)>,
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Bumped on every parameter mutation so stale caches are detected.
    version: u64,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Contract(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Relu hidden layers of the given widths followed by a linear output.
    pub fn build<R: Rng>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseLayer::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        layers.push(DenseLayer::init(prev, output, Activation::Linear, rng));
        Self { layers, version: 0 }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Contract(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let mut y = acts[acts.len() - 1].dot(&layer.weights.t());
            y += &layer.bias.view().insert_axis(Axis(0));
            if layer.activation == Activation::Relu {
                y.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(y);
        }
        let out = acts[acts.len() - 1].clone();
        let cache = ForwardCache {
            version: self.version,
            shapes: self.layers.iter().map(|l| l.weights.dim()).collect(),
            acts,
        };
        Ok((out, cache))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Contract(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut y = h.dot(&layer.weights.t());
            y += &layer.bias.view().insert_axis(Axis(0));
            if layer.activation == Activation::Relu {
                y.mapv_inplace(|v| v.max(0.0));
            }
            h = y;
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` (gradient of a scalar w.r.t. the network
    /// output) and returns parameter and input gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let shapes: Vec<_> = self.layers.iter().map(|l| l.weights.dim()).collect();
        if cache.version != self.version || cache.shapes != shapes {
            return Err(Error::Contract(
                "forward cache is stale or from a different network".into(),
            ));
        }
        if grad_out.dim() != (cache.batch_size(), self.out_dim()) {
            return Err(Error::Contract(format!(
                "output gradient is {:?}, expected {:?}",
                grad_out.dim(),
                (cache.batch_size(), self.out_dim())
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // output > 0 iff pre-activation > 0
                g.zip_mut_with(&cache.acts[k + 1], |gi, &y| {
                    if y <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            let gw = g.t().dot(&cache.acts[k]);
            let gb = g.sum_axis(Axis(0));
            let gin = g.dot(&layer.weights);
            grads.push(LayerGrads {
                weights: gw,
                bias: gb,
            });
            g = gin;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, g))
    }

    /// All parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[off];
                off += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[off];
                off += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Mutable parameter tensors, named `{prefix}.{layer}.w` / `.b`.
    pub fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (k, l) in self.layers.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("{prefix}.{k}.w"),
                values: l.weights.as_slice_mut().expect("standard layout"),
            });
            out.push(ParamMut {
                name: format!("{prefix}.{k}.b"),
                values: l.bias.as_slice_mut().expect("standard layout"),
            });
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + 8 * self.n_params());
        out.extend_from_slice(MLP_MAGIC);
        io::put_u32(&mut out, io::to_u32(self.layers.len(), "layer count")?);
        for l in &self.layers {
            io::put_u32(&mut out, io::to_u32(l.in_dim(), "layer input")?);
            io::put_u32(&mut out, io::to_u32(l.out_dim(), "layer output")?);
            out.push(l.activation.code());
        }
        for x in self.flat_params() {
            io::put_f64(&mut out, x);
        }
        Ok(out)
    }

    /// Parses one `MLP1` blob; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = LeReader::new(bytes, path);
        if r.take(4)? != MLP_MAGIC {
            return Err(r.error("bad magic, expected MLP1"));
        }
        let n_layers = r.u32()? as usize;
        let mut header = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let input = r.u32()? as usize;
            let output = r.u32()? as usize;
            let act =
                Activation::from_code(r.u8()?).ok_or_else(|| r.error("unknown activation code"))?;
            header.push((input, output, act));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (input, output, act) in header {
            let w: Vec<f64> = (0..input * output)
                .map(|_| r.f64())
                .collect::<Result<_>>()?;
            let b: Vec<f64> = (0..output).map(|_| r.f64()).collect::<Result<_>>()?;
            let w =
                Array2::from_shape_vec((output, input), w).map_err(|e| r.error(e.to_string()))?;
            layers.push(DenseLayer::new(w, Array1::from(b), act)?);
        }
        if r.remaining() != 0 {
            return Err(r.error(format!("{} trailing bytes", r.remaining())));
        }
        Mlp::new(layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

/// A named, mutable parameter tensor handed to the optimizer.
pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. A tensor whose gradient is exactly
    /// zero everywhere is left untouched, moments included. Gradients are
    /// checked for finiteness before anything is modified.
    pub fn step(&mut self, params: &mut [ParamMut<'_>], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.values.len() != g.len() || g.len() != self.first[k].len() {
                return Err(Error::Contract(format!(
                    "shape mismatch for {}: param {}, grad {}, state {}",
                    p.name,
                    p.values.len(),
                    g.len(),
                    self.first[k].len()
                )));
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in {} at index {i}",
                    p.name
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            if let Some(i) = p.values.iter().position(|x| !x.is_finite()) {
                return Err(Error::Training(format!(
                    "parameter {} became non-finite at index {i}",
                    p.name
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates compared, ascending.
    pub coords: Vec<usize>,
    pub max_rel_error: f64,
    /// Coordinate attaining `max_rel_error`.
    pub worst: Option<usize>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Relative error between an analytic and numeric derivative. Values whose
/// magnitude is below `1e-6` are compared on that absolute scale instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` on a random
/// subsample of at least `min(100, len)` coordinates (all coordinates when
/// `sample` is `None`).
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
    sample: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let n = params.len();
    let coords: Vec<usize> = match sample {
        Some(s) if s.max(100) < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = index::sample(&mut rng, n, s.max(100)).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..n).collect(),
    };
    let mut p = params.to_vec();
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for &i in &coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > max_rel_error || err.is_nan() {
            max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            worst = Some(i);
        }
    }
    Ok(GradCheckReport {
        coords,
        max_rel_error,
        worst,
        tol,
    })
}
