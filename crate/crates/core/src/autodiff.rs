//! Sine-activated coordinate MLP with analytic input-Jacobians.
//!
//! The network maps a planar coordinate `x` to `C` channels:
//!
//! ```text
//! x₀ = x,   xᵢ₊₁ = sin(ω₀ (Wᵢ xᵢ + bᵢ)),   Φ(x) = Wₙ xₙ + bₙ
//! ```
//!
//! Input-Jacobians are obtained by carrying a two-column tangent matrix
//! alongside every activation (`Tᵢ₊₁ = diag(ω₀ cos(ω₀ zᵢ)) Wᵢ Tᵢ`). The value
//! rows and the two tangent rows of a batch are stacked into one `3B × width`
//! matrix so each layer costs a single GEMM. Parameter gradients of losses on
//! either the values or the Jacobian are produced by reverse accumulation
//! through that joint propagation, which differentiates through the cosine
//! terms of the tangent update.

use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Mat};
use wide::f64x4;

/// Planar coordinate `(x, y)`; `x` runs along image columns, `y` along rows.
pub type Coord = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`, row-major.
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Mat, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Layer { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            weight: Mat::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Weights, biases and frequency scale of the sine network.
#[derive(Debug, Clone, PartialEq)]
pub struct SirenParams {
    layers: Vec<Layer>,
    omega0: f64,
}

impl SirenParams {
    pub fn new(layers: Vec<Layer>, omega0: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(Error::Config(format!(
                "omega0 must be positive, got {omega0}"
            )));
        }
        let Some(first) = layers.first() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        if first.in_dim() != 2 {
            return Err(Error::Config(format!(
                "network input dimension must be 2, got {}",
                first.in_dim()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Config(format!(
                    "layer {} expects {} inputs but layer {i} produces {}",
                    i + 1,
                    pair[1].in_dim(),
                    pair[0].out_dim()
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!("layer {i}: bias length mismatch")));
            }
            if layer.out_dim() == 0 {
                return Err(Error::Config(format!("layer {i} has zero width")));
            }
        }
        Ok(SirenParams { layers, omega0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// `[2, hidden…, C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Weight then bias of every layer, in layer order.
    pub fn arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }
}

/// Network outputs with their input-Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBatch {
    /// `B × C`.
    pub values: Mat,
    /// `[∂Φ/∂x, ∂Φ/∂y]`, each `B × C`.
    pub jacobian: [Mat; 2],
}

impl JacobianBatch {
    pub fn batch(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn derivative(&self, sample: usize, channel: usize, axis: usize) -> f64 {
        self.jacobian[axis].get(sample, channel)
    }
}

/// `∂L/∂θ`, one array per parameter array of the owning [`SirenParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub layers: Vec<Layer>,
}

impl ParameterGradients {
    pub fn zeros_like(params: &SirenParams) -> Self {
        ParameterGradients {
            layers: params
                .layers()
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &ParameterGradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient array shape mismatch".into()));
            }
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// Elementwise `sin` and `cos`, four lanes at a time.
fn sin_cos_into(x: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    let mut xs = x.chunks_exact(4);
    let mut ss = sin.chunks_exact_mut(4);
    let mut cs = cos.chunks_exact_mut(4);
    for ((x, s), c) in (&mut xs).zip(&mut ss).zip(&mut cs) {
        let (vs, vc) = f64x4::from([x[0], x[1], x[2], x[3]]).sin_cos();
        s.copy_from_slice(&vs.to_array());
        c.copy_from_slice(&vc.to_array());
    }
    let rest = xs.remainder();
    for ((x, s), c) in rest
        .iter()
        .zip(ss.into_remainder())
        .zip(cs.into_remainder())
    {
        (*s, *c) = x.sin_cos();
    }
}

/// Recorded forward pass, reusable for reverse accumulation.
///
/// With tangents enabled, every stacked matrix holds `3B` rows: values
/// first, then the `∂/∂x` tangents, then the `∂/∂y` tangents.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    tangents: bool,
    /// Stacked input of each layer.
    inputs: Vec<Vec<f64>>,
    /// `sin(ω₀ z)` and `cos(ω₀ z)` per hidden layer, `B × N`.
    sines: Vec<Vec<f64>>,
    cosines: Vec<Vec<f64>>,
    /// Tangent pre-activations `W T` per hidden layer, `2B × N`.
    tangent_pre: Vec<Vec<f64>>,
    /// Stacked network output.
    output: Vec<f64>,
    out_dim: usize,
}

impl Tape {
    pub fn record(params: &SirenParams, coords: &[Coord], tangents: bool) -> Tape {
        let batch = coords.len();
        let rows = if tangents { 3 * batch } else { batch };
        let omega = params.omega0();

        let mut input = Vec::with_capacity(rows * 2);
        for c in coords {
            input.extend_from_slice(c);
        }
        if tangents {
            for _ in 0..batch {
                input.extend_from_slice(&[1.0, 0.0]);
            }
            for _ in 0..batch {
                input.extend_from_slice(&[0.0, 1.0]);
            }
        }

        let hidden = params.hidden_count();
        let mut inputs = Vec::with_capacity(params.layers().len());
        let mut sines = Vec::with_capacity(hidden);
        let mut cosines = Vec::with_capacity(hidden);
        let mut tangent_pre = Vec::with_capacity(hidden);

        for layer in &params.layers()[..hidden] {
            let (n, m) = layer.weight.shape();
            let mut pre = vec![0.0; rows * n];
            matmul_nt(&input, layer.weight.as_slice(), rows, m, n, &mut pre);

            let mut next = vec![0.0; rows * n];
            let mut sin = vec![0.0; batch * n];
            let mut cos = vec![0.0; batch * n];
            let mut arg = vec![0.0; batch * n];
            for (a, z) in arg.chunks_exact_mut(n).zip(pre.chunks_exact(n)) {
                for ((a, z), b) in a.iter_mut().zip(z).zip(&layer.bias) {
                    *a = omega * (z + b);
                }
            }
            sin_cos_into(&arg, &mut sin, &mut cos);
            next[..batch * n].copy_from_slice(&sin);
            if tangents {
                for axis in 0..2 {
                    let off = (1 + axis) * batch * n;
                    for (k, (dst, u)) in next[off..off + batch * n]
                        .iter_mut()
                        .zip(&pre[off..off + batch * n])
                        .enumerate()
                    {
                        *dst = omega * cos[k] * u;
                    }
                }
                pre.drain(..batch * n);
                tangent_pre.push(pre);
            }
            sines.push(sin);
            cosines.push(cos);
            inputs.push(std::mem::replace(&mut input, next));
        }

        let last = &params.layers()[hidden];
        let (c_out, m) = last.weight.shape();
        let mut output = vec![0.0; rows * c_out];
        matmul_nt(&input, last.weight.as_slice(), rows, m, c_out, &mut output);
        for r in 0..batch {
            for (o, b) in output[r * c_out..(r + 1) * c_out]
                .iter_mut()
                .zip(&last.bias)
            {
                *o += b;
            }
        }
        inputs.push(input);

        Tape {
            batch,
            tangents,
            inputs,
            sines,
            cosines,
            tangent_pre,
            output,
            out_dim: c_out,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn has_tangents(&self) -> bool {
        self.tangents
    }

    pub fn values(&self) -> Mat {
        let n = self.batch * self.out_dim;
        Mat::from_vec(self.batch, self.out_dim, self.output[..n].to_vec())
            .expect("tape output shape")
    }

    /// `None` when recorded without tangents.
    pub fn jacobian(&self) -> Option<[Mat; 2]> {
        if !self.tangents {
            return None;
        }
        let n = self.batch * self.out_dim;
        let part = |axis: usize| {
            let off = (1 + axis) * n;
            Mat::from_vec(self.batch, self.out_dim, self.output[off..off + n].to_vec())
                .expect("tape jacobian shape")
        };
        Some([part(0), part(1)])
    }

    pub fn jacobian_batch(&self) -> Option<JacobianBatch> {
        Some(JacobianBatch {
            values: self.values(),
            jacobian: self.jacobian()?,
        })
    }

    /// Reverse accumulation for `L(Φ, ∇ₓΦ)` given `∂L/∂Φ` and/or `∂L/∂(∇ₓΦ)`.
    ///
    /// `params` must be the parameters the tape was recorded with.
    pub fn backward(
        &self,
        params: &SirenParams,
        value_adjoint: Option<&Mat>,
        jacobian_adjoint: Option<&[Mat; 2]>,
    ) -> Result<ParameterGradients> {
        let batch = self.batch;
        let c_out = self.out_dim;
        if params.out_dim() != c_out || params.layers().len() != self.inputs.len() {
            return Err(Error::Shape(
                "parameters do not match the recorded tape".into(),
            ));
        }
        if jacobian_adjoint.is_some() && !self.tangents {
            return Err(Error::Config(
                "jacobian loss needs a tape recorded with tangents".into(),
            ));
        }
        let rows = if self.tangents { 3 * batch } else { batch };

        let mut adj = vec![0.0; rows * c_out];
        if let Some(v) = value_adjoint {
            v.ensure_shape(batch, c_out, "value residuals")?;
            if !v.is_finite() {
                return Err(Error::NonFinite("value residuals".into()));
            }
            adj[..batch * c_out].copy_from_slice(v.as_slice());
        }
        if let Some(j) = jacobian_adjoint {
            for (axis, m) in j.iter().enumerate() {
                m.ensure_shape(batch, c_out, "jacobian residuals")?;
                if !m.is_finite() {
                    return Err(Error::NonFinite("jacobian residuals".into()));
                }
                let off = (1 + axis) * batch * c_out;
                adj[off..off + batch * c_out].copy_from_slice(m.as_slice());
            }
        }

        let omega = params.omega0();
        let mut grads = ParameterGradients::zeros_like(params);
        let layers = params.layers();

        for i in (0..layers.len()).rev() {
            let layer = &layers[i];
            let (n, m) = layer.weight.shape();
            let input = &self.inputs[i];

            // `adj` holds ∂L/∂(layer output); turn it into ∂L/∂(pre-activation).
            if i < layers.len() - 1 {
                let sin = &self.sines[i];
                let cos = &self.cosines[i];
                let bn = batch * n;
                if self.tangents {
                    let u = &self.tangent_pre[i];
                    let (head, tail) = adj.split_at_mut(bn);
                    let (tx, ty) = tail.split_at_mut(bn);
                    for k in 0..bn {
                        let c = cos[k];
                        let cos_bar = omega * (tx[k] * u[k] + ty[k] * u[bn + k]);
                        head[k] = omega * (c * head[k] - sin[k] * cos_bar);
                        tx[k] *= omega * c;
                        ty[k] *= omega * c;
                    }
                } else {
                    for k in 0..bn {
                        adj[k] *= omega * cos[k];
                    }
                }
            }

            let g = &mut grads.layers[i];
            matmul_tn(&adj, input, rows, n, m, g.weight.as_mut_slice());
            for r in 0..batch {
                for (gb, a) in g.bias.iter_mut().zip(&adj[r * n..(r + 1) * n]) {
                    *gb += a;
                }
            }

            if i > 0 {
                let mut prev = vec![0.0; rows * m];
                matmul_nn(&adj, layer.weight.as_slice(), rows, n, m, &mut prev);
                adj = prev;
            }
        }
        Ok(grads)
    }
}

/// `Φ(x)` for every coordinate, `B × C`.
pub fn forward(params: &SirenParams, coords: &[Coord]) -> Mat {
    Tape::record(params, coords, false).values()
}

pub fn forward_with_input_jacobian(params: &SirenParams, coords: &[Coord]) -> JacobianBatch {
    Tape::record(params, coords, true)
        .jacobian_batch()
        .expect("recorded with tangents")
}

/// Parameter gradients of a loss on the outputs, given `∂L/∂Φ` (`B × C`).
pub fn backward_value_loss(
    params: &SirenParams,
    coords: &[Coord],
    residuals: &Mat,
) -> Result<ParameterGradients> {
    Tape::record(params, coords, false).backward(params, Some(residuals), None)
}

/// Parameter gradients of a loss on the input-Jacobian, given
/// `∂L/∂(∂Φ/∂x)` and `∂L/∂(∂Φ/∂y)` (each `B × C`).
pub fn backward_jacobian_loss(
    params: &SirenParams,
    coords: &[Coord],
    jac_residuals: &[Mat; 2],
) -> Result<ParameterGradients> {
    Tape::record(params, coords, true).backward(params, None, Some(jac_residuals))
}

/// Central-difference estimate of the input-Jacobian.
pub fn finite_difference_jacobian(
    params: &SirenParams,
    coords: &[Coord],
    step: f64,
) -> Result<JacobianBatch> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let values = forward(params, coords);
    let shifted = |axis: usize, sign: f64| -> Vec<Coord> {
        coords
            .iter()
            .map(|c| {
                let mut c = *c;
                c[axis] += sign * step;
                c
            })
            .collect()
    };
    let mut jacobian = [Mat::zeros(0, 0), Mat::zeros(0, 0)];
    for (axis, slot) in jacobian.iter_mut().enumerate() {
        let plus = forward(params, &shifted(axis, 1.0));
        let minus = forward(params, &shifted(axis, -1.0));
        let data = plus
            .as_slice()
            .iter()
            .zip(minus.as_slice())
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect();
        *slot = Mat::from_vec(values.rows(), values.cols(), data)?;
    }
    Ok(JacobianBatch { values, jacobian })
}
