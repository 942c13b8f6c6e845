use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eoren::gma::{raw_sobel, sobel_gma};
use eoren::imageio::{encode_png, load_png, make_grid, signed_output_to_unit, ImageBuffer, Range};
use eoren::metrics::{evaluate, shared_histograms, MetricsReport, DEFAULT_BINS};
use eoren::networks::{checkpoint_bytes, eoren_forward_with_input_jacobian, EorenModel};
use eoren::training::{
    signed_gradient_field, train_compose, train_eoren, train_grad, train_pixel, Mode, TrainConfig,
    TrainHistory,
};
use serde::Serialize;

use crate::config;
use crate::manifest::{input_record, RunManifest, Staging, MANIFEST_VERSION};
use crate::Failure;

pub const FIT_MANIFEST: &str = "manifest.json";

fn new_manifest(command: &str) -> RunManifest {
    RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: None,
        seed: None,
        options: BTreeMap::new(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
        wall_clock_seconds: 0.0,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::io(format!("serializing JSON: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn png_bytes(image: &ImageBuffer) -> Result<Vec<u8>, Failure> {
    Ok(encode_png(image)?.0)
}

/// `dir/name.ext` → (`dir`, `name`), for single-file outputs.
fn split_output(path: &Path) -> Result<(PathBuf, String), Failure> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::usage(format!("invalid output path {}", path.display())))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok((dir, stem.to_string()))
}

fn file_name(path: &Path) -> Result<String, Failure> {
    path.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Failure::usage(format!("invalid output path {}", path.display())))
}

/// Reconstruction, metrics and histogram artifacts shared by fit and
/// compose.
struct Evaluated {
    image: ImageBuffer,
    clamped: usize,
    output_gradients: Vec<f64>,
}

fn evaluate_model(model: &EorenModel, width: usize, height: usize) -> Result<Evaluated, Failure> {
    let coords = make_grid(width, height)?;
    let out = eoren_forward_with_input_jacobian(model, &coords)?;
    if !out.values.is_finite() || !out.jacobian.iter().all(|m| m.is_finite()) {
        return Err(Failure::numeric("model output is not finite".into()));
    }
    let (image, clamped) = signed_output_to_unit(&out.values, width, height)?;
    let output_gradients = out.jacobian[0]
        .as_slice()
        .iter()
        .zip(out.jacobian[1].as_slice())
        .map(|(x, y)| x.hypot(*y))
        .collect();
    Ok(Evaluated {
        image,
        clamped,
        output_gradients,
    })
}

fn write_histograms(
    staging: &mut Staging,
    kind: &str,
    target: &[f64],
    output: &[f64],
) -> Result<(), Failure> {
    let h = shared_histograms(&[target, output], DEFAULT_BINS)?;
    staging.write(&format!("{kind}_target_hist.csv"), h[0].to_csv().as_bytes())?;
    staging.write(&format!("{kind}_output_hist.csv"), h[1].to_csv().as_bytes())?;
    Ok(())
}

fn write_training_outputs(
    staging: &mut Staging,
    image_name: &str,
    model: &EorenModel,
    history: &TrainHistory,
    ev: &Evaluated,
) -> Result<(), Failure> {
    staging.write(image_name, &png_bytes(&ev.image)?)?;
    staging.write("checkpoint.bin", &checkpoint_bytes(model))?;
    staging.write("history.csv", history.to_csv().as_bytes())?;
    Ok(())
}

fn summary(report: &MetricsReport) -> String {
    format!("psnr {:.4} dB, ssim {:.6}", report.psnr_db, report.ssim)
}

pub fn fit(input: &Path, out: &Path, cfg: &TrainConfig) -> Result<(), Failure> {
    let start = Instant::now();
    let mut manifest = new_manifest("fit");
    manifest.inputs.insert("input".into(), input_record(input)?);
    let image = load_png(input)?;

    let (model, history) = match cfg.mode {
        Mode::Pixel => {
            let (p, h) = train_pixel(&image, cfg)?;
            (EorenModel::identity(p), h)
        }
        Mode::Grad => {
            let (p, h) = train_grad(&image, cfg)?;
            (EorenModel::identity(p), h)
        }
        Mode::Eoren => train_eoren(&image, cfg)?,
        Mode::Compose => {
            return Err(Failure::usage(
                "mode 'compose' is run by the compose command".into(),
            ))
        }
    };
    let ev = evaluate_model(&model, image.width(), image.height())?;
    let report = evaluate(&ev.image, &image, ev.clamped)?;
    let target_gradients = signed_gradient_field(&image)?.magnitude();

    let mut staging = Staging::new(out)?;
    write_training_outputs(&mut staging, "reconstruction.png", &model, &history, &ev)?;
    staging.write("metrics.json", &to_json(&report)?)?;
    write_histograms(&mut staging, "pixels", image.pixels(), ev.image.pixels())?;
    write_histograms(
        &mut staging,
        "gradients",
        &target_gradients,
        &ev.output_gradients,
    )?;

    manifest.config = Some(config::to_pairs(cfg));
    manifest.seed = Some(cfg.seed);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    staging.commit(&mut manifest, FIT_MANIFEST)?;
    println!("{}", summary(&report));
    Ok(())
}

#[derive(Serialize)]
struct ComposeMetrics {
    a: MetricsReport,
    b: MetricsReport,
}

pub fn compose(a: &Path, b: &Path, out: &Path, cfg: &TrainConfig) -> Result<(), Failure> {
    let start = Instant::now();
    let mut manifest = new_manifest("compose");
    manifest.inputs.insert("a".into(), input_record(a)?);
    manifest.inputs.insert("b".into(), input_record(b)?);
    let first = load_png(a)?;
    let second = load_png(b)?;

    let (model, history) = train_compose(&first, &second, cfg)?;
    let ev = evaluate_model(&model, first.width(), first.height())?;
    let metrics = ComposeMetrics {
        a: evaluate(&ev.image, &first, ev.clamped)?,
        b: evaluate(&ev.image, &second, ev.clamped)?,
    };

    let mut staging = Staging::new(out)?;
    write_training_outputs(&mut staging, "composite.png", &model, &history, &ev)?;
    staging.write("metrics.json", &to_json(&metrics)?)?;

    manifest.config = Some(config::to_pairs(cfg));
    manifest.seed = Some(cfg.seed);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    staging.commit(&mut manifest, FIT_MANIFEST)?;
    println!(
        "vs a: {}; vs b: {}",
        summary(&metrics.a),
        summary(&metrics.b)
    );
    Ok(())
}

pub fn eval(pred: &Path, reference: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let start = Instant::now();
    let p = load_png(pred)?;
    let r = load_png(reference)?;
    let report = evaluate(&p, &r, 0)?;
    let json = to_json(&report)?;
    print!("{}", String::from_utf8_lossy(&json));

    if let Some(out) = out {
        let mut manifest = new_manifest("eval");
        manifest.inputs.insert("pred".into(), input_record(pred)?);
        manifest
            .inputs
            .insert("ref".into(), input_record(reference)?);
        let (dir, stem) = split_output(out)?;
        let mut staging = Staging::new(&dir)?;
        staging.write(&file_name(out)?, &json)?;
        manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
        staging.commit(&mut manifest, &format!("{stem}.manifest.json"))?;
    }
    Ok(())
}

/// Gradient magnitudes scaled so the largest is 1.
fn magnitude_image(w: usize, h: usize, c: usize, mag: &[f64]) -> Result<ImageBuffer, Failure> {
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let pixels = mag.iter().map(|m| (m * scale).min(1.0)).collect();
    Ok(ImageBuffer::new(w, h, c, Range::Unit, pixels)?)
}

pub fn grad(input: &Path, out: &Path, raw: bool) -> Result<(), Failure> {
    let start = Instant::now();
    let mut manifest = new_manifest("grad");
    manifest.inputs.insert("input".into(), input_record(input)?);
    manifest.options.insert("raw_sobel".into(), raw.to_string());
    let image = load_png(input)?;
    let field = if raw {
        raw_sobel(&image)?
    } else {
        sobel_gma(&image)?
    };
    let mag = magnitude_image(
        field.width(),
        field.height(),
        field.channels(),
        &field.magnitude(),
    )?;

    let (dir, stem) = split_output(out)?;
    let mut staging = Staging::new(&dir)?;
    staging.write(&file_name(out)?, &field.to_bytes())?;
    staging.write(&format!("{stem}.magnitude.png"), &png_bytes(&mag)?)?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    staging.commit(&mut manifest, &format!("{stem}.manifest.json"))?;
    Ok(())
}

/// Re-executes the run recorded in `manifest_path`, writing to `out`.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<(), Failure> {
    let m = RunManifest::load(manifest_path)?;
    m.verify_inputs()?;
    let path = |role: &str| -> Result<PathBuf, Failure> { Ok(PathBuf::from(&m.input(role)?.path)) };
    let cfg = || -> Result<TrainConfig, Failure> {
        let pairs = m
            .config
            .as_ref()
            .ok_or_else(|| Failure::usage("manifest has no configuration".into()))?;
        config::from_pairs(pairs)
    };
    match m.command.as_str() {
        "fit" => fit(&path("input")?, out, &cfg()?),
        "compose" => compose(&path("a")?, &path("b")?, out, &cfg()?),
        "eval" => eval(&path("pred")?, &path("ref")?, Some(out)),
        "grad" => {
            let raw = m.options.get("raw_sobel").map(String::as_str) == Some("true");
            grad(&path("input")?, out, raw)
        }
        other => Err(Failure::usage(format!(
            "manifest names unknown command '{other}'"
        ))),
    }
}
