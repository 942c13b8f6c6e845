//! Fitting regimes: pixel supervision, gradient supervision, the two-stage
//! edge-then-tuner model, and gradient-domain composition of two images.
//!
//! All regimes run full-batch Adam over every pixel; one epoch is one
//! optimizer step. Networks are fitted in signed `[-1, 1]` pixel space and
//! reported (PSNR) in unit range.

mod adam;
mod loss;

use std::fmt;
use std::str::FromStr;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{gradient_loss, pixel_loss};

use crate::autodiff::{forward_with_input_jacobian, JacobianBatch, SirenParams, Tape};
use crate::error::{Error, Result};
use crate::gma::{sobel_gma, GradientField};
use crate::imageio::{make_grid, normalize_signed, CoordinateGrid, ImageBuffer, Range};
use crate::linalg::Mat;
use crate::networks::{
    closed_form_tuner_or_shift, siren_init, tuner_init, ChannelTuner, EorenModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pixel,
    Grad,
    Eoren,
    Compose,
}

/// How the channel tuner is fitted in the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TunerFit {
    Adam,
    /// Per-channel least squares in one shot.
    ClosedForm,
}

/// Edge-stage objective when composing two images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeLoss {
    /// MSE against `λ∇f₁ + (1−λ)∇f₂`.
    Blended,
    /// `λ·MSE(∇f₁) + (1−λ)·MSE(∇f₂)`.
    Weighted,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const NAMES: &'static [&'static str] = &[$($name),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}' (expected one of: {})",
                        stringify!($ty),
                        $ty::NAMES.join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Mode { Pixel => "pixel", Grad => "grad", Eoren => "eoren", Compose => "compose" });
keyword_enum!(TunerFit { Adam => "adam", ClosedForm => "closed_form" });
keyword_enum!(ComposeLoss { Blended => "blended", Weighted => "weighted" });

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Total optimizer steps, both stages included.
    pub epochs_total: usize,
    /// Steps of the channel-tuning stage (two-stage modes only).
    pub epochs_tuner: usize,
    pub lr_edge: f64,
    pub lr_tuner: f64,
    /// Weight of the first image when composing.
    pub lambda: f64,
    /// Widths between the 2-d input and the C-channel output.
    pub hidden_dims: Vec<usize>,
    pub omega0: f64,
    pub seed: u64,
    pub log_every: usize,
    pub tuner_fit: TunerFit,
    pub compose_loss: ComposeLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Eoren,
            epochs_total: 1000,
            epochs_tuner: 50,
            lr_edge: 1e-4,
            lr_tuner: 1e-2,
            lambda: 0.5,
            hidden_dims: vec![256, 256, 256],
            omega0: crate::networks::DEFAULT_OMEGA0,
            seed: 0,
            log_every: 50,
            tuner_fit: TunerFit::Adam,
            compose_loss: ComposeLoss::Blended,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_tuner > self.epochs_total {
            return Err(Error::Config(format!(
                "epochs_tuner ({}) exceeds epochs_total ({})",
                self.epochs_tuner, self.epochs_total
            )));
        }
        for (name, lr) in [("lr_edge", self.lr_edge), ("lr_tuner", self.lr_tuner)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims entries must be positive".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::Config(format!(
                "omega0 must be positive, got {}",
                self.omega0
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    /// `[2, hidden…, channels]`.
    pub fn layer_dims(&self, channels: usize) -> Vec<usize> {
        std::iter::once(2)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(channels))
            .collect()
    }

    fn expect_mode(&self, mode: Mode) -> Result<()> {
        self.validate()?;
        if self.mode != mode {
            return Err(Error::Config(format!(
                "configuration is for mode '{}', not '{mode}'",
                self.mode
            )));
        }
        Ok(())
    }

    fn edge_steps(&self) -> usize {
        self.epochs_total - self.epochs_tuner
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    /// Optimizer updates applied when the record was taken.
    pub step: usize,
    pub grad_loss: f64,
    pub pixel_loss: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    pub fn push(&mut self, rec: HistoryRecord) -> Result<()> {
        if let Some(prev) = self.records.last() {
            if rec.step <= prev.step {
                return Err(Error::Config(format!(
                    "history steps must increase ({} after {})",
                    rec.step, prev.step
                )));
            }
        }
        if !(rec.grad_loss.is_finite() && rec.pixel_loss.is_finite()) || rec.psnr.is_nan() {
            return Err(Error::NonFinite(format!("losses at step {}", rec.step)));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,grad_loss,pixel_loss,psnr\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.step, r.grad_loss, r.pixel_loss, r.psnr
            ));
        }
        s
    }
}

/// Losses and PSNR of a model state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_loss: f64,
    pub pixel_loss: f64,
    pub psnr: f64,
}

impl StepReport {
    fn at(self, step: usize) -> HistoryRecord {
        HistoryRecord {
            step,
            grad_loss: self.grad_loss,
            pixel_loss: self.pixel_loss,
            psnr: self.psnr,
        }
    }
}

/// Supervision for the input-Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientTarget {
    Single([Mat; 2]),
    Weighted {
        first: [Mat; 2],
        second: [Mat; 2],
        lambda: f64,
    },
}

impl GradientTarget {
    pub fn from_field(field: &GradientField) -> Self {
        GradientTarget::Single(field.as_jacobian())
    }

    pub fn loss(&self, jac: &[Mat; 2]) -> Result<(f64, [Mat; 2])> {
        match self {
            GradientTarget::Single(t) => gradient_loss(jac, t),
            GradientTarget::Weighted {
                first,
                second,
                lambda,
            } => {
                let (l1, r1) = gradient_loss(jac, first)?;
                let (l2, r2) = gradient_loss(jac, second)?;
                let mix = |a: &Mat, b: &Mat| weighted_sum(a, b, *lambda);
                Ok((
                    lambda * l1 + (1.0 - lambda) * l2,
                    [mix(&r1[0], &r2[0]), mix(&r1[1], &r2[1])],
                ))
            }
        }
    }
}

/// Supervision for the output values, in signed space, plus the unit-range
/// reference used for PSNR.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTarget {
    parts: Vec<(f64, Mat)>,
    reference: Vec<f64>,
}

impl PixelTarget {
    pub fn single(image: &ImageBuffer) -> Result<Self> {
        let signed = signed_matrix(image)?;
        Ok(PixelTarget {
            parts: vec![(1.0, signed)],
            reference: image.pixels().to_vec(),
        })
    }

    /// `λ·L(f₁) + (1−λ)·L(f₂)`; the endpoints reduce to a single target.
    pub fn weighted(first: &ImageBuffer, second: &ImageBuffer, lambda: f64) -> Result<Self> {
        if !first.same_dims(second) {
            return Err(Error::Shape("composed images differ in size".into()));
        }
        if lambda == 1.0 {
            return PixelTarget::single(first);
        }
        if lambda == 0.0 {
            return PixelTarget::single(second);
        }
        let reference = first
            .pixels()
            .iter()
            .zip(second.pixels())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(PixelTarget {
            parts: vec![
                (lambda, signed_matrix(first)?),
                (1.0 - lambda, signed_matrix(second)?),
            ],
            reference,
        })
    }

    pub fn loss(&self, pred: &Mat) -> Result<(f64, Mat)> {
        if let [(_, only)] = self.parts.as_slice() {
            return pixel_loss(pred, only);
        }
        let (w1, t1) = &self.parts[0];
        let (w2, t2) = &self.parts[1];
        let (l1, r1) = pixel_loss(pred, t1)?;
        let (l2, r2) = pixel_loss(pred, t2)?;
        Ok((w1 * l1 + w2 * l2, weighted_sum(&r1, &r2, *w1)))
    }

    /// Least-squares target equivalent to the weighted loss.
    pub fn blended_signed(&self) -> Mat {
        if let [(_, only)] = self.parts.as_slice() {
            return only.clone();
        }
        let (w1, t1) = &self.parts[0];
        weighted_sum(t1, &self.parts[1].1, *w1)
    }

    /// PSNR of signed-space predictions after mapping to unit range and
    /// clamping, against the unit-range reference.
    pub fn psnr(&self, pred: &Mat) -> f64 {
        let mse = pred
            .as_slice()
            .iter()
            .zip(&self.reference)
            .map(|(p, r)| {
                let d = ((p + 1.0) / 2.0).clamp(0.0, 1.0) - r;
                d * d
            })
            .sum::<f64>()
            / self.reference.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }
}

fn weighted_sum(a: &Mat, b: &Mat, lambda: f64) -> Mat {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    Mat::from_vec(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn signed_matrix(image: &ImageBuffer) -> Result<Mat> {
    if image.range() != Range::Unit {
        return Err(Error::Config("training images must be unit range".into()));
    }
    Ok(normalize_signed(image)?.as_matrix())
}

/// GMA targets in the same signed space the network fits.
pub fn signed_gradient_field(image: &ImageBuffer) -> Result<GradientField> {
    if image.range() != Range::Unit {
        return Err(Error::Config("training images must be unit range".into()));
    }
    sobel_gma(&normalize_signed(image)?)
}

fn grid_for(image: &ImageBuffer) -> Result<CoordinateGrid> {
    make_grid(image.width(), image.height())
}

/// Full-batch Adam on the input-Jacobian loss of a sine network.
#[derive(Debug, Clone)]
pub struct EdgeTrainer {
    params: SirenParams,
    adam: AdamState,
    opt: AdamConfig,
    coords: CoordinateGrid,
    target: GradientTarget,
    pixels: PixelTarget,
    steps: usize,
}

impl EdgeTrainer {
    pub fn new(
        params: SirenParams,
        coords: CoordinateGrid,
        target: GradientTarget,
        pixels: PixelTarget,
        lr: f64,
    ) -> Self {
        let adam = AdamState::new(params.arrays().iter().map(|a| a.len()));
        EdgeTrainer {
            params,
            adam,
            opt: AdamConfig::with_lr(lr),
            coords,
            target,
            pixels,
            steps: 0,
        }
    }

    /// Seeded network against the GMA field of `image`.
    pub fn for_image(image: &ImageBuffer, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = siren_init(&cfg.layer_dims(image.channels()), cfg.omega0, cfg.seed)?;
        Ok(EdgeTrainer::new(
            params,
            grid_for(image)?,
            GradientTarget::from_field(&signed_gradient_field(image)?),
            PixelTarget::single(image)?,
            cfg.lr_edge,
        ))
    }

    pub fn params(&self) -> &SirenParams {
        &self.params
    }

    pub fn coords(&self) -> &CoordinateGrid {
        &self.coords
    }

    pub fn target(&self) -> &GradientTarget {
        &self.target
    }

    pub fn pixel_target(&self) -> &PixelTarget {
        &self.pixels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn report(&self, g: &JacobianBatch) -> Result<(StepReport, [Mat; 2])> {
        let (grad_loss, residuals) = self.target.loss(&g.jacobian)?;
        let (pixel_loss, _) = self.pixels.loss(&g.values)?;
        Ok((
            StepReport {
                grad_loss,
                pixel_loss,
                psnr: self.pixels.psnr(&g.values),
            },
            residuals,
        ))
    }

    /// One update; returns the report of the state before it.
    pub fn step(&mut self) -> Result<StepReport> {
        let tape = Tape::record(&self.params, &self.coords, true);
        let g = tape.jacobian_batch().expect("recorded with tangents");
        let (report, residuals) = self.report(&g)?;
        let grads = tape.backward(&self.params, None, Some(&residuals))?;
        adam_step(
            &mut self.params.arrays_mut(),
            &grads.arrays(),
            &mut self.adam,
            &self.opt,
        )?;
        self.steps += 1;
        Ok(report)
    }

    /// Values and Jacobian of the current network with its report.
    pub fn evaluate(&self) -> Result<(JacobianBatch, StepReport)> {
        let g = forward_with_input_jacobian(&self.params, &self.coords);
        let (report, _) = self.report(&g)?;
        Ok((g, report))
    }

    /// Runs `steps` updates, logging every `log_every`-th pre-update state
    /// and the final state.
    pub fn run(
        &mut self,
        steps: usize,
        log_every: usize,
        history: &mut TrainHistory,
    ) -> Result<JacobianBatch> {
        for _ in 0..steps {
            let at = self.steps;
            let report = self.step()?;
            if at.is_multiple_of(log_every) {
                history.push(report.at(at))?;
            }
        }
        let (g, report) = self.evaluate()?;
        if history.last().is_none_or(|r| r.step < self.steps) {
            history.push(report.at(self.steps))?;
        }
        Ok(g)
    }
}

/// Fits the channel tuner on a frozen edge network's outputs `g`.
///
/// Only `α` and `β` are updated; `g` is a plain input here, so no gradient
/// reaches the edge parameters.
pub fn tune_channels(
    g: &JacobianBatch,
    grad_target: &GradientTarget,
    pixels: &PixelTarget,
    cfg: &TrainConfig,
    first_step: usize,
    history: &mut TrainHistory,
) -> Result<ChannelTuner> {
    let channels = g.channels();
    let report = |tuner: &ChannelTuner| -> Result<(StepReport, Mat)> {
        let phi = tuner.apply(&g.values)?;
        let jac = [
            tuner.apply_to_derivatives(&g.jacobian[0])?,
            tuner.apply_to_derivatives(&g.jacobian[1])?,
        ];
        let (grad_loss, _) = grad_target.loss(&jac)?;
        let (pixel_loss, residuals) = pixels.loss(&phi)?;
        Ok((
            StepReport {
                grad_loss,
                pixel_loss,
                psnr: pixels.psnr(&phi),
            },
            residuals,
        ))
    };

    if cfg.epochs_tuner == 0 {
        return tuner_init(channels);
    }

    if cfg.tuner_fit == TunerFit::ClosedForm {
        let tuner = closed_form_tuner_or_shift(&g.values, &pixels.blended_signed())?;
        let (rep, _) = report(&tuner)?;
        history.push(rep.at(first_step + cfg.epochs_tuner))?;
        return Ok(tuner);
    }

    let mut tuner = tuner_init(channels)?;
    let mut adam = AdamState::new([channels, channels]);
    let opt = AdamConfig::with_lr(cfg.lr_tuner);
    for k in 0..cfg.epochs_tuner {
        let (rep, r) = report(&tuner)?;
        if k > 0 && k % cfg.log_every == 0 {
            history.push(rep.at(first_step + k))?;
        }
        let mut d_alpha = vec![0.0; channels];
        let mut d_beta = vec![0.0; channels];
        for (rv, gv) in r
            .as_slice()
            .chunks_exact(channels)
            .zip(g.values.as_slice().chunks_exact(channels))
        {
            for ch in 0..channels {
                d_alpha[ch] += rv[ch] * gv[ch];
                d_beta[ch] += rv[ch];
            }
        }
        let ChannelTuner { alpha, beta } = &mut tuner;
        adam_step(&mut [alpha, beta], &[&d_alpha, &d_beta], &mut adam, &opt)?;
    }
    let (rep, _) = report(&tuner)?;
    history.push(rep.at(first_step + cfg.epochs_tuner))?;
    ChannelTuner::new(tuner.alpha, tuner.beta)
}

/// Network supervised by pixel values only.
pub fn train_pixel(image: &ImageBuffer, cfg: &TrainConfig) -> Result<(SirenParams, TrainHistory)> {
    cfg.expect_mode(Mode::Pixel)?;
    let coords = grid_for(image)?;
    let pixels = PixelTarget::single(image)?;
    let grad_target = GradientTarget::from_field(&signed_gradient_field(image)?);
    let mut params = siren_init(&cfg.layer_dims(image.channels()), cfg.omega0, cfg.seed)?;
    let mut adam = AdamState::new(params.arrays().iter().map(|a| a.len()));
    let opt = AdamConfig::with_lr(cfg.lr_edge);
    let mut history = TrainHistory::default();

    let full_report = |params: &SirenParams| -> Result<StepReport> {
        let g = forward_with_input_jacobian(params, &coords);
        Ok(StepReport {
            grad_loss: grad_target.loss(&g.jacobian)?.0,
            pixel_loss: pixels.loss(&g.values)?.0,
            psnr: pixels.psnr(&g.values),
        })
    };

    for k in 0..cfg.epochs_total {
        if k % cfg.log_every == 0 {
            history.push(full_report(&params)?.at(k))?;
        }
        let tape = Tape::record(&params, &coords, false);
        let (_, residuals) = pixels.loss(&tape.values())?;
        let grads = tape.backward(&params, Some(&residuals), None)?;
        adam_step(&mut params.arrays_mut(), &grads.arrays(), &mut adam, &opt)?;
    }
    if history.last().is_none_or(|r| r.step < cfg.epochs_total) {
        history.push(full_report(&params)?.at(cfg.epochs_total))?;
    }
    Ok((params, history))
}

/// Network supervised by GMA gradients only.
pub fn train_grad(image: &ImageBuffer, cfg: &TrainConfig) -> Result<(SirenParams, TrainHistory)> {
    cfg.expect_mode(Mode::Grad)?;
    let mut trainer = EdgeTrainer::for_image(image, cfg)?;
    let mut history = TrainHistory::default();
    trainer.run(cfg.epochs_total, cfg.log_every, &mut history)?;
    Ok((trainer.params, history))
}

fn two_stage(mut trainer: EdgeTrainer, cfg: &TrainConfig) -> Result<(EorenModel, TrainHistory)> {
    let mut history = TrainHistory::default();
    let g = trainer.run(cfg.edge_steps(), cfg.log_every, &mut history)?;
    let tuner = tune_channels(
        &g,
        &trainer.target,
        &trainer.pixels,
        cfg,
        trainer.steps,
        &mut history,
    )?;
    Ok((EorenModel::new(trainer.params, tuner)?, history))
}

/// Edge stage on the gradient loss, then the channel tuner on the pixel
/// loss with the edge network frozen.
pub fn train_eoren(image: &ImageBuffer, cfg: &TrainConfig) -> Result<(EorenModel, TrainHistory)> {
    cfg.expect_mode(Mode::Eoren)?;
    if cfg.epochs_tuner >= cfg.epochs_total {
        return Err(Error::Config(format!(
            "epochs_tuner ({}) must be below epochs_total ({})",
            cfg.epochs_tuner, cfg.epochs_total
        )));
    }
    two_stage(EdgeTrainer::for_image(image, cfg)?, cfg)
}

/// Gradient-domain composition of two images with the two-stage model.
pub fn train_compose(
    first: &ImageBuffer,
    second: &ImageBuffer,
    cfg: &TrainConfig,
) -> Result<(EorenModel, TrainHistory)> {
    cfg.expect_mode(Mode::Compose)?;
    if !first.same_dims(second) {
        return Err(Error::Shape(format!(
            "composed images differ: {}x{}x{} vs {}x{}x{}",
            first.width(),
            first.height(),
            first.channels(),
            second.width(),
            second.height(),
            second.channels()
        )));
    }
    if cfg.epochs_tuner >= cfg.epochs_total {
        return Err(Error::Config(format!(
            "epochs_tuner ({}) must be below epochs_total ({})",
            cfg.epochs_tuner, cfg.epochs_total
        )));
    }
    let lambda = cfg.lambda;
    let field_a = signed_gradient_field(first)?;
    let field_b = signed_gradient_field(second)?;
    let target = match cfg.compose_loss {
        ComposeLoss::Blended => {
            GradientTarget::from_field(&GradientField::blend(&field_a, &field_b, lambda)?)
        }
        ComposeLoss::Weighted if lambda == 1.0 => GradientTarget::from_field(&field_a),
        ComposeLoss::Weighted if lambda == 0.0 => GradientTarget::from_field(&field_b),
        ComposeLoss::Weighted => GradientTarget::Weighted {
            first: field_a.as_jacobian(),
            second: field_b.as_jacobian(),
            lambda,
        },
    };
    let params = siren_init(&cfg.layer_dims(first.channels()), cfg.omega0, cfg.seed)?;
    let trainer = EdgeTrainer::new(
        params,
        grid_for(first)?,
        target,
        PixelTarget::weighted(first, second, lambda)?,
        cfg.lr_edge,
    );
    two_stage(trainer, cfg)
}
