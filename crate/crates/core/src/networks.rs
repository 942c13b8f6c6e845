//! Plain SIREN construction and the two-stage model `Φ = h ∘ g`, where `g`
//! is the edge-oriented sine network and `h(v) = α ⊙ v + β` a per-channel
//! affine tuner.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    forward, forward_with_input_jacobian, Coord, JacobianBatch, Layer, SirenParams,
};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const DEFAULT_OMEGA0: f64 = 30.0;

/// Seeded SIREN initialization.
///
/// First-layer weights are uniform in `±1/fan_in`, later layers in
/// `±√(6/fan_in)/ω₀`; biases uniform in `±1/√fan_in`.
pub fn siren_init(layer_dims: &[usize], omega0: f64, seed: u64) -> Result<SirenParams> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(
            "layer_dims needs an input and an output size".into(),
        ));
    }
    if layer_dims[0] != 2 {
        return Err(Error::Config(format!(
            "layer_dims must start with 2, got {}",
            layer_dims[0]
        )));
    }
    if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::Config(format!("layer_dims[{pos}] is zero")));
    }
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(Error::Config(format!(
            "omega0 must be positive, got {omega0}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |limit: f64| limit * (2.0 * rng.gen::<f64>() - 1.0);

    let layers = layer_dims
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w_limit = if i == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / omega0
            };
            let weight = Mat::from_fn(fan_out, fan_in, |_, _| uniform(w_limit));
            let b_limit = 1.0 / (fan_in as f64).sqrt();
            let bias = (0..fan_out).map(|_| uniform(b_limit)).collect();
            Layer { weight, bias }
        })
        .collect();
    SirenParams::new(layers, omega0)
}

/// Per-channel `h(v) = α ⊙ v + β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTuner {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ChannelTuner {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return Err(Error::Shape(format!(
                "tuner needs equal, nonzero alpha/beta lengths (got {} and {})",
                alpha.len(),
                beta.len()
            )));
        }
        if !alpha.iter().chain(&beta).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tuner parameters".into()));
        }
        Ok(ChannelTuner { alpha, beta })
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    /// Applies the affine map row by row to a `B × C` matrix.
    pub fn apply(&self, values: &Mat) -> Result<Mat> {
        if values.cols() != self.channels() {
            return Err(Error::Shape(format!(
                "tuner has {} channels, values have {}",
                self.channels(),
                values.cols()
            )));
        }
        let c = self.channels();
        let mut out = values.clone();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            let ch = k % c;
            *v = self.alpha[ch] * *v + self.beta[ch];
        }
        Ok(out)
    }

    /// Chain rule through the affine layer: `∇(h∘g) = α ⊙ ∇g`.
    pub fn apply_to_derivatives(&self, jac: &Mat) -> Result<Mat> {
        if jac.cols() != self.channels() {
            return Err(Error::Shape("jacobian channel count mismatch".into()));
        }
        let c = self.channels();
        let mut out = jac.clone();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v *= self.alpha[k % c];
        }
        Ok(out)
    }
}

/// Identity tuner: `α = 1`, `β = 0`.
pub fn tuner_init(channels: usize) -> Result<ChannelTuner> {
    if channels < 1 {
        return Err(Error::Config("tuner needs at least one channel".into()));
    }
    Ok(ChannelTuner {
        alpha: vec![1.0; channels],
        beta: vec![0.0; channels],
    })
}

/// Edge-oriented network followed by the channel tuner.
#[derive(Debug, Clone, PartialEq)]
pub struct EorenModel {
    pub edge: SirenParams,
    pub tuner: ChannelTuner,
}

impl EorenModel {
    pub fn new(edge: SirenParams, tuner: ChannelTuner) -> Result<Self> {
        if tuner.channels() != edge.out_dim() {
            return Err(Error::Shape(format!(
                "tuner has {} channels but the edge module outputs {}",
                tuner.channels(),
                edge.out_dim()
            )));
        }
        Ok(EorenModel { edge, tuner })
    }

    /// Wraps a plain network with an identity tuner.
    pub fn identity(edge: SirenParams) -> Self {
        let tuner = tuner_init(edge.out_dim()).expect("network has at least one output");
        EorenModel { edge, tuner }
    }

    pub fn channels(&self) -> usize {
        self.tuner.channels()
    }
}

pub fn eoren_forward(model: &EorenModel, coords: &[Coord]) -> Result<Mat> {
    model.tuner.apply(&forward(&model.edge, coords))
}

pub fn eoren_forward_with_input_jacobian(
    model: &EorenModel,
    coords: &[Coord],
) -> Result<JacobianBatch> {
    let g = forward_with_input_jacobian(&model.edge, coords);
    let [dx, dy] = &g.jacobian;
    Ok(JacobianBatch {
        values: model.tuner.apply(&g.values)?,
        jacobian: [
            model.tuner.apply_to_derivatives(dx)?,
            model.tuner.apply_to_derivatives(dy)?,
        ],
    })
}

/// Per-channel least-squares fit of `α·g + β` to `targets`.
///
/// A channel whose `g` values have zero variance yields
/// [`Error::DegenerateChannel`]; see [`closed_form_tuner_or_shift`].
pub fn closed_form_tuner(g_values: &Mat, targets: &Mat) -> Result<ChannelTuner> {
    fit_tuner(g_values, targets, false)
}

/// Like [`closed_form_tuner`], but degenerate channels fall back to
/// `α = 1, β = mean(f) − mean(g)`.
pub fn closed_form_tuner_or_shift(g_values: &Mat, targets: &Mat) -> Result<ChannelTuner> {
    fit_tuner(g_values, targets, true)
}

fn fit_tuner(g_values: &Mat, targets: &Mat, fallback: bool) -> Result<ChannelTuner> {
    if g_values.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "network values {:?} vs targets {:?}",
            g_values.shape(),
            targets.shape()
        )));
    }
    let (b, c) = g_values.shape();
    if b < 2 {
        return Err(Error::Config(
            "least-squares tuner needs at least two samples".into(),
        ));
    }
    if !(g_values.is_finite() && targets.is_finite()) {
        return Err(Error::NonFinite("tuner fit inputs".into()));
    }
    let mut alpha = Vec::with_capacity(c);
    let mut beta = Vec::with_capacity(c);
    for ch in 0..c {
        let g = (0..b).map(|r| g_values.get(r, ch));
        let f = (0..b).map(|r| targets.get(r, ch));
        let mean_g = g.clone().sum::<f64>() / b as f64;
        let mean_f = f.clone().sum::<f64>() / b as f64;
        let (mut var, mut cov) = (0.0, 0.0);
        for (gv, fv) in g.zip(f) {
            var += (gv - mean_g) * (gv - mean_g);
            cov += (gv - mean_g) * (fv - mean_f);
        }
        // Relative threshold: a constant channel leaves only rounding noise.
        let scale = mean_g.abs().max(1.0);
        if var <= (b as f64) * (1e-14 * scale).powi(2) {
            if !fallback {
                return Err(Error::DegenerateChannel { channel: ch });
            }
            alpha.push(1.0);
            beta.push(mean_f - mean_g);
        } else {
            let a = cov / var;
            alpha.push(a);
            beta.push(mean_f - a * mean_g);
        }
    }
    ChannelTuner::new(alpha, beta)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EORENCKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model as
///
/// ```text
/// magic "EORENCKP" | version u32 | n u32 | layer_dims n×u32 | omega0 f64
/// | per layer: weight (out×in, row-major) f64, bias f64
/// | alpha C×f64 | beta C×f64
/// ```
///
/// with every scalar little-endian.
pub fn write_checkpoint(model: &EorenModel, mut w: impl Write) -> std::io::Result<()> {
    let dims = model.edge.layer_dims();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    w.write_all(&model.edge.omega0().to_le_bytes())?;
    for array in model.edge.arrays() {
        for v in array {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in model.tuner.alpha.iter().chain(&model.tuner.beta) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn checkpoint_bytes(model: &EorenModel) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<EorenModel> {
    let mut r = bytes;
    let bad = |what: &str| Error::Decode(format!("checkpoint: {what}"));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
    if !(2..=1024).contains(&n) {
        return Err(bad("implausible layer count"));
    }
    let dims = (0..n)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("truncated layer dims"))?;
    let omega0 = read_f64(&mut r).ok_or_else(|| bad("truncated omega0"))?;

    let expected: usize =
        dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>() + 2 * dims[n - 1];
    if r.len() != expected * 8 {
        return Err(bad(&format!(
            "payload holds {} bytes, layer dims require {}",
            r.len(),
            expected * 8
        )));
    }
    let mut take = |count: usize| -> Vec<f64> {
        (0..count)
            .map(|_| read_f64(&mut r).expect("length checked"))
            .collect()
    };
    let mut layers = Vec::with_capacity(n - 1);
    for pair in dims.windows(2) {
        let weight = Mat::from_vec(pair[1], pair[0], take(pair[0] * pair[1]))?;
        let bias = take(pair[1]);
        layers.push(Layer::new(weight, bias)?);
    }
    let alpha = take(dims[n - 1]);
    let beta = take(dims[n - 1]);
    EorenModel::new(
        SirenParams::new(layers, omega0)?,
        ChannelTuner::new(alpha, beta)?,
    )
}

pub fn save_checkpoint(model: &EorenModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EorenModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Option<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(f64::from_le_bytes(b))
}
