//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p eoren-cli --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use eoren::autodiff::{
    backward_jacobian_loss, backward_value_loss, finite_difference_jacobian, forward,
    forward_with_input_jacobian, Coord, SirenParams,
};
use eoren::gma::{raw_sobel, sobel_gma};
use eoren::imageio::{load_png, signed_output_to_unit, ImageBuffer, Range};
use eoren::linalg::Mat;
use eoren::metrics::{psnr, ssim};
use eoren::networks::{
    checkpoint_bytes, closed_form_tuner, eoren_forward_with_input_jacobian, siren_init,
    ChannelTuner, EorenModel,
};
use eoren::training::{
    gradient_loss, pixel_loss, train_compose, train_eoren, tune_channels, ComposeLoss, EdgeTrainer,
    Mode, TrainConfig, TrainHistory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn digits_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/digits")
}

fn digit(d: usize) -> ImageBuffer {
    load_png(&digits_dir().join(format!("digit_{d}.png"))).expect("bundled digit")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---------------------------------------------------------------- 1

fn gma_correctness() -> Verdict {
    let start = Instant::now();
    let (w, h, a) = (256, 8, 0.0035);
    let ramp = ImageBuffer::from_fn(w, h, 1, Range::Unit, |_, c, _| a * c as f64).unwrap();
    let raw = raw_sobel(&ramp).unwrap();
    let adj = sobel_gma(&ramp).unwrap();
    let (mut raw_err, mut gma_err) = (0.0f64, 0.0f64);
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            raw_err = raw_err.max(rel(raw.at(r, c, 0).0, 8.0 * a));
            gma_err = gma_err.max(rel(adj.at(r, c, 0).0, 128.0 * a));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        raw_err < 1e-12 && gma_err < 1e-12 && secs < 1.0,
        format!("raw Sobel vs 8a rel {raw_err:.1e}, GMA vs 128a rel {gma_err:.1e}, {secs:.3} s"),
    )
}

// ---------------------------------------------------------------- 2

/// `‖a − n‖∞ / ‖n‖∞`.
fn norm_rel<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (a, n) in pairs {
        diff = diff.max((a - n).abs());
        scale = scale.max(n.abs());
    }
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn fd_param_grads(params: &SirenParams, loss: impl Fn(&SirenParams) -> f64) -> Vec<f64> {
    let step = 1e-4;
    let mut out = Vec::new();
    let lens: Vec<usize> = params.arrays().iter().map(|a| a.len()).collect();
    let mut p = params.clone();
    for (ai, len) in lens.into_iter().enumerate() {
        for k in 0..len {
            let orig = p.arrays()[ai][k];
            p.arrays_mut()[ai][k] = orig + step;
            let up = loss(&p);
            p.arrays_mut()[ai][k] = orig - step;
            let down = loss(&p);
            p.arrays_mut()[ai][k] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

fn autodiff_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut jac_err, mut val_err, mut jl_err) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..50 {
        let params = siren_init(&[2, 32, 32, 1], 30.0, seed).unwrap();
        let coords: Vec<Coord> = (0..16)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let n = coords.len();

        let a = forward_with_input_jacobian(&params, &coords);
        let fd = finite_difference_jacobian(&params, &coords, 1e-4).unwrap();
        for axis in 0..2 {
            let e = norm_rel(
                a.jacobian[axis]
                    .as_slice()
                    .iter()
                    .zip(fd.jacobian[axis].as_slice()),
            );
            jac_err = jac_err.max(e);
        }

        let target = Mat::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let (_, r) = pixel_loss(&a.values, &target).unwrap();
        let analytic: Vec<f64> = backward_value_loss(&params, &coords, &r)
            .unwrap()
            .arrays()
            .concat();
        let numeric = fd_param_grads(&params, |p| {
            pixel_loss(&forward(p, &coords), &target).unwrap().0
        });
        val_err = val_err.max(norm_rel(analytic.iter().zip(&numeric)));

        let jt = [
            Mat::from_fn(n, 1, |_, _| rng.gen_range(-20.0..20.0)),
            Mat::from_fn(n, 1, |_, _| rng.gen_range(-20.0..20.0)),
        ];
        let (_, r) = gradient_loss(&a.jacobian, &jt).unwrap();
        let analytic: Vec<f64> = backward_jacobian_loss(&params, &coords, &r)
            .unwrap()
            .arrays()
            .concat();
        let numeric = fd_param_grads(&params, |p| {
            gradient_loss(&forward_with_input_jacobian(p, &coords).jacobian, &jt)
                .unwrap()
                .0
        });
        jl_err = jl_err.max(norm_rel(analytic.iter().zip(&numeric)));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        jac_err < 1e-5 && val_err < 1e-4 && jl_err < 1e-4 && secs < 30.0,
        format!(
            "50 nets: jacobian rel {jac_err:.1e}, value-loss grads rel {val_err:.1e}, \
             jacobian-loss grads rel {jl_err:.1e}, {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------- 5, 6, 7 data

/// One digit fitted once: the shared 950-step edge trajectory, the tuner
/// fitted on it, and the same network continued to 1000 steps on the
/// gradient loss alone.
struct DigitRun {
    edge_950: SirenParams,
    tuner: ChannelTuner,
    eoren_psnr: f64,
    eoren_grad_mse: f64,
    grad_psnr: f64,
    grad_grad_mse: f64,
    adam_tuner_loss: f64,
    closed_form_loss: f64,
}

fn unit_psnr(values: &Mat, image: &ImageBuffer) -> f64 {
    let (unit, _) = signed_output_to_unit(values, image.width(), image.height()).unwrap();
    psnr(&unit, image, 1.0).unwrap()
}

fn run_digit(image: &ImageBuffer, cfg: &TrainConfig) -> DigitRun {
    let mut trainer = EdgeTrainer::for_image(image, cfg).unwrap();
    let mut history = TrainHistory::default();
    let edge_steps = cfg.epochs_total - cfg.epochs_tuner;
    let g = trainer
        .run(edge_steps, cfg.log_every, &mut history)
        .unwrap();
    let edge_950 = trainer.params().clone();

    let tuner = tune_channels(
        &g,
        trainer.target(),
        trainer.pixel_target(),
        cfg,
        edge_steps,
        &mut history,
    )
    .unwrap();
    let model = EorenModel::new(edge_950.clone(), tuner.clone()).unwrap();
    let coords = trainer.coords().clone();
    let phi = eoren_forward_with_input_jacobian(&model, &coords).unwrap();
    let eoren_psnr = unit_psnr(&phi.values, image);
    let eoren_grad_mse = trainer.target().loss(&phi.jacobian).unwrap().0;
    let adam_tuner_loss = trainer.pixel_target().loss(&phi.values).unwrap().0;
    let cf = closed_form_tuner(&g.values, &trainer.pixel_target().blended_signed()).unwrap();
    let closed_form_loss = trainer
        .pixel_target()
        .loss(&cf.apply(&g.values).unwrap())
        .unwrap()
        .0;

    let mut rest = TrainHistory::default();
    let g1000 = trainer
        .run(cfg.epochs_tuner, cfg.log_every, &mut rest)
        .unwrap();
    DigitRun {
        edge_950,
        tuner,
        eoren_psnr,
        eoren_grad_mse,
        grad_psnr: unit_psnr(&g1000.values, image),
        grad_grad_mse: trainer.target().loss(&g1000.jacobian).unwrap().0,
        adam_tuner_loss,
        closed_form_loss,
    }
}

struct Sweep {
    runs: Vec<DigitRun>,
    secs: f64,
}

fn sweep() -> Sweep {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let runs = (0..10)
        .map(|d| {
            let t = Instant::now();
            let run = run_digit(&digit(d), &cfg);
            eprintln!(
                "  digit {d}: EoREN {:.2} dB, SIREN+grad {:.2} dB ({:.1} s)",
                run.eoren_psnr,
                run.grad_psnr,
                t.elapsed().as_secs_f64()
            );
            run
        })
        .collect();
    Sweep {
        runs,
        secs: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------- 3

fn gated_backprop(sweep: &Sweep) -> Verdict {
    let cfg = TrainConfig::default();
    let (model, history) = train_eoren(&digit(0), &cfg).unwrap();
    let before = &sweep.runs[0].edge_950;
    let same_edge = checkpoint_bytes(&EorenModel::identity(model.edge.clone()))
        == checkpoint_bytes(&EorenModel::identity(before.clone()));
    let same_tuner = model.tuner == sweep.runs[0].tuner;
    let tuned = model.tuner.alpha.iter().any(|a| *a != 1.0);
    let last = history.last().map(|r| r.step);
    verdict(
        same_edge && same_tuner && tuned && last == Some(cfg.epochs_total),
        format!(
            "digit 0, {} steps: edge bitwise unchanged by tuning: {same_edge}; \
             tuner moved (alpha {:?}): {tuned}",
            cfg.epochs_total, model.tuner.alpha
        ),
    )
}

// ---------------------------------------------------------------- 4

fn alpha_one_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = 0;
    for seed in 0..20 {
        let edge = siren_init(&[2, 32, 32, 3], 30.0, seed).unwrap();
        let beta = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model =
            EorenModel::new(edge.clone(), ChannelTuner::new(vec![1.0; 3], beta).unwrap()).unwrap();
        let coords: Vec<Coord> = (0..64)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let composed = eoren_forward_with_input_jacobian(&model, &coords).unwrap();
        let plain = forward_with_input_jacobian(&edge, &coords);
        let bitwise = (0..2).all(|a| {
            composed.jacobian[a]
                .as_slice()
                .iter()
                .zip(plain.jacobian[a].as_slice())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
        ok += bitwise as usize;
    }
    verdict(
        ok == 20,
        format!("{ok}/20 models with bitwise-equal Jacobians"),
    )
}

// ---------------------------------------------------------------- 5

fn table_ordering(sweep: &Sweep) -> Verdict {
    let wins = sweep
        .runs
        .iter()
        .filter(|r| r.eoren_psnr > r.grad_psnr)
        .count();
    let gaps: Vec<f64> = sweep
        .runs
        .iter()
        .map(|r| r.eoren_psnr - r.grad_psnr)
        .collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let mean =
        |f: fn(&DigitRun) -> f64| sweep.runs.iter().map(f).sum::<f64>() / sweep.runs.len() as f64;
    verdict(
        wins == 10 && mean_gap >= 10.0 && sweep.secs < 600.0,
        format!(
            "EoREN > SIREN+grad on {wins}/10 digits; mean {:.2} vs {:.2} dB, mean gap {mean_gap:.2} dB \
             (need >= 10), min gap {:.2} dB; {:.0} s",
            mean(|r| r.eoren_psnr),
            mean(|r| r.grad_psnr),
            gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            sweep.secs
        ),
    )
}

// ---------------------------------------------------------------- 6

fn ill_posedness(sweep: &Sweep) -> Verdict {
    let holds = sweep
        .runs
        .iter()
        .filter(|r| r.grad_grad_mse < 10.0 * r.eoren_grad_mse && r.grad_psnr < r.eoren_psnr)
        .count();
    let worst_ratio = sweep
        .runs
        .iter()
        .map(|r| r.grad_grad_mse / r.eoren_grad_mse)
        .fold(0.0, f64::max);
    verdict(
        holds == 10,
        format!(
            "{holds}/10 digits: SIREN+grad gradient MSE < 10x EoREN's (max ratio {worst_ratio:.1e}) \
             with lower pixel PSNR"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn tuner_optimality(sweep: &Sweep) -> Verdict {
    let gaps: Vec<f64> = sweep
        .runs
        .iter()
        .map(|r| r.adam_tuner_loss / r.closed_form_loss - 1.0)
        .collect();
    let worst = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        worst <= 0.05,
        format!(
            "worst excess loss of the gradient-descent tuner over closed form: {:.3}%",
            100.0 * worst
        ),
    )
}

// ---------------------------------------------------------------- 8

fn compose_endpoints() -> Verdict {
    let (f1, f2) = (digit(3), digit(8));
    let base = TrainConfig {
        epochs_total: 120,
        epochs_tuner: 20,
        hidden_dims: vec![64, 64],
        log_every: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let single = |img: &ImageBuffer| {
        let cfg = TrainConfig {
            mode: Mode::Eoren,
            ..base.clone()
        };
        train_eoren(img, &cfg).unwrap()
    };
    let (m1, h1) = single(&f1);
    let (m2, h2) = single(&f2);
    let mut checks = BTreeMap::new();
    for loss in [ComposeLoss::Blended, ComposeLoss::Weighted] {
        let cfg = |lambda| TrainConfig {
            mode: Mode::Compose,
            lambda,
            compose_loss: loss,
            ..base.clone()
        };
        let (c1, k1) = train_compose(&f1, &f2, &cfg(1.0)).unwrap();
        let (c0, k0) = train_compose(&f1, &f2, &cfg(0.0)).unwrap();
        let (ch, kh) = train_compose(&f1, &f1, &cfg(0.5)).unwrap();
        let same = |a: &EorenModel, b: &EorenModel| checkpoint_bytes(a) == checkpoint_bytes(b);
        checks.insert(format!("{loss} l=1"), same(&c1, &m1) && k1 == h1);
        checks.insert(format!("{loss} l=0"), same(&c0, &m2) && k0 == h2);
        checks.insert(format!("{loss} l=0.5,f1=f2"), same(&ch, &m1) && kh == h1);
    }
    let failed: Vec<_> = checks
        .iter()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k.clone())
        .collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            format!(
                "{} endpoint runs bitwise equal to single-image runs (models and histories)",
                checks.len()
            )
        } else {
            format!("mismatch: {}", failed.join(", "))
        },
    )
}

// ---------------------------------------------------------------- 9

fn metric_sanity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = |rng: &mut ChaCha8Rng| {
        ImageBuffer::from_fn(32, 32, 3, Range::Unit, |_, _, _| rng.gen::<f64>()).unwrap()
    };
    let img = noise(&mut rng);
    let other = noise(&mut rng);
    let flat = |v| ImageBuffer::from_fn(16, 16, 1, Range::Unit, |_, _, _| v).unwrap();

    let inf = psnr(&img, &img, 1.0).unwrap() == f64::INFINITY;
    let analytic = psnr(&flat(0.0), &flat(0.5), 1.0).unwrap();
    let expected = 10.0 * 4.0f64.log10();
    let analytic_ok = (analytic - expected).abs() < 1e-4 && (analytic - 6.0206).abs() < 1e-4;
    let self_ssim = (ssim(&img, &img, 1.0).unwrap() - 1.0).abs();
    let asym = (ssim(&img, &other, 1.0).unwrap() - ssim(&other, &img, 1.0).unwrap()).abs();
    verdict(
        inf && analytic_ok && self_ssim < 1e-12 && asym < 1e-12,
        format!(
            "psnr(I,I)=inf: {inf}; 0 vs 0.5 -> {analytic:.6} dB; |ssim(I,I)-1| {self_ssim:.1e}; \
             ssim asymmetry {asym:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn eoren(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_eoren"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eoren {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Outputs listed by the manifest at `manifest` (relative to its directory).
fn listed_outputs(manifest: &Path) -> Vec<String> {
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    json["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap().to_string())
        .collect()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    let d3 = digits_dir()
        .join("digit_3.png")
        .to_string_lossy()
        .into_owned();
    let d8 = digits_dir()
        .join("digit_8.png")
        .to_string_lossy()
        .into_owned();
    let small = [
        "--set",
        "epochs_total=60",
        "--set",
        "epochs_tuner=10",
        "--set",
        "hidden_dims=32,32",
        "--set",
        "log_every=10",
    ];

    // (first run's manifest, rerun's output argument, rerun's manifest)
    let mut runs: Vec<(String, String, String)> = Vec::new();
    for mode in ["pixel", "grad", "eoren"] {
        let out = t(&format!("fit_{mode}"));
        let mut args = vec![
            "fit", "--mode", mode, "--input", &d3, "--out", &out, "--seed", "7",
        ];
        args.extend(small);
        eoren(&args);
        let again = t(&format!("fit_{mode}_again"));
        runs.push((
            format!("{out}/manifest.json"),
            again.clone(),
            format!("{again}/manifest.json"),
        ));
    }
    let out = t("compose");
    let mut args = vec![
        "compose", "--a", &d3, "--b", &d8, "--lambda", "0.3", "--out", &out,
    ];
    args.extend(small);
    eoren(&args);
    runs.push((
        format!("{out}/manifest.json"),
        t("compose_again"),
        t("compose_again/manifest.json"),
    ));

    eoren(&["grad", "--input", &d3, "--out", &t("g/field.bin")]);
    runs.push((
        t("g/field.manifest.json"),
        t("g2/field.bin"),
        t("g2/field.manifest.json"),
    ));
    eoren(&[
        "grad",
        "--input",
        &d3,
        "--out",
        &t("r/field.bin"),
        "--raw-sobel",
    ]);
    runs.push((
        t("r/field.manifest.json"),
        t("r2/field.bin"),
        t("r2/field.manifest.json"),
    ));
    eoren(&[
        "eval",
        "--pred",
        &t("fit_eoren/reconstruction.png"),
        "--ref",
        &d3,
        "--out",
        &t("e/report.json"),
    ]);
    runs.push((
        t("e/report.manifest.json"),
        t("e2/report.json"),
        t("e2/report.manifest.json"),
    ));

    let mut files = 0;
    let mut mismatched = Vec::new();
    for (manifest, out, again_manifest) in &runs {
        eoren(&["rerun", "--manifest", manifest, "--out", out]);
        let first_dir = Path::new(manifest).parent().unwrap();
        let second_dir = Path::new(again_manifest).parent().unwrap();
        let names = listed_outputs(Path::new(manifest));
        if names != listed_outputs(Path::new(again_manifest)) {
            mismatched.push(format!("{manifest}: output lists differ"));
        }
        for name in names {
            files += 1;
            if std::fs::read(first_dir.join(&name)).unwrap()
                != std::fs::read(second_dir.join(&name)).unwrap()
            {
                mismatched.push(format!("{}/{name}", first_dir.display()));
            }
        }
    }
    verdict(
        mismatched.is_empty() && files > 0,
        if mismatched.is_empty() {
            format!(
                "{} commands re-run from manifests, {files} output files byte-identical",
                runs.len()
            )
        } else {
            format!("differing outputs: {}", mismatched.join(", "))
        },
    )
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => (v.pass, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "{} [{id}] {name}: {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    let mut results = vec![
        report(1, "GMA correctness", gma_correctness),
        report(2, "autodiff oracles", autodiff_oracles),
    ];

    eprintln!("fitting 10 digits at the default configuration (shared by criteria 3, 5, 6, 7)");
    let sweep = catch_unwind(sweep).ok();
    let with_sweep = |f: fn(&Sweep) -> Verdict| {
        let s = sweep.as_ref();
        move || match s {
            Some(s) => f(s),
            None => verdict(false, "digit sweep panicked".into()),
        }
    };

    results.push(report(3, "gated backprop", with_sweep(gated_backprop)));
    results.push(report(
        4,
        "alpha=1 derivative invariance",
        alpha_one_invariance,
    ));
    results.push(report(5, "digit PSNR ordering", with_sweep(table_ordering)));
    results.push(report(
        6,
        "ill-posedness of gradient fitting",
        with_sweep(ill_posedness),
    ));
    results.push(report(7, "tuner optimality", with_sweep(tuner_optimality)));
    results.push(report(8, "compose endpoints", compose_endpoints));
    results.push(report(9, "metric sanity", metric_sanity));
    results.push(report(10, "determinism from manifests", determinism));

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
