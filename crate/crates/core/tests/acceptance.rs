//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use flowchroma_core::colorspace::{lab_to_rgb, rgb_pixel_to_lab, rgb_to_lab, RgbFrame};
use flowchroma_core::data::{
    generate_clip, LabVideoClip, SceneObject, SceneTemplate, Shape, SyntheticSceneSpec,
};
use flowchroma_core::eval::{compare, EvalOptions};
use flowchroma_core::gradcheck::{self, GradCheckConfig, MODEL_TOLERANCE, OP_TOLERANCE};
use flowchroma_core::inference::{colorize_video, plan_windows};
use flowchroma_core::model::{Checkpoint, FlowChromaModel, ModelConfig};
use flowchroma_core::tensor::Tensor;
use flowchroma_core::training::{
    batch_loss, split_indices, train, video_loss, TrainConfig, TrainSummary, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:.1?}, limit {limit:?}")
    })
}

fn random_lum(shape: [usize; 3], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        &[shape[0], shape[1], shape[2], 1],
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Dimension contract at full width.
fn c1_dimensions() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::full_size();
    let model = FlowChromaModel::new(cfg).map_err(|e| e.to_string())?;
    let trace = model
        .trace(&random_lum([5, 64, 64], 1))
        .map_err(|e| e.to_string())?;
    let got = [
        (
            "encoder",
            trace.encoded.shape().to_vec(),
            vec![5, 8, 8, 256],
        ),
        ("global", trace.global.shape().to_vec(), vec![5, 1000]),
        ("lstm", trace.temporal.shape().to_vec(), vec![5, 256]),
        (
            "fusion concat channels",
            vec![trace.fusion_inputs.len(), trace.fusion_inputs[0].shape()[2]],
            vec![5, 1512],
        ),
        ("decoder", trace.output.shape().to_vec(), vec![5, 64, 64, 2]),
    ];
    for (what, g, e) in &got {
        ensure(g == e, || format!("{what}: got {g:?}, expected {e:?}"))?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "encoder 5×8×8×256, global 5×1000, lstm 5×256, concat 1512, decoder 5×64×64×2 in {:.1?}",
        start.elapsed()
    ))
}

/// Finite-difference gradient checks for every op and the desk model.
fn c2_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig {
        model_config: ModelConfig::desk(3, 16, 8, 16),
        ..GradCheckConfig::default()
    };
    let report = gradcheck::run(&cfg).map_err(|e| e.to_string())?;
    let worst = |model: bool| {
        report
            .results
            .iter()
            .filter(|r| (r.name == "model") == model)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    };
    let (op_worst, model_worst) = (worst(false), worst(true));
    let failed: Vec<_> = report.failures().map(|r| r.name.clone()).collect();
    ensure(failed.is_empty(), || format!("failed checks: {failed:?}"))?;
    ensure(op_worst < OP_TOLERANCE, || format!("op error {op_worst:e}"))?;
    ensure(model_worst < MODEL_TOLERANCE, || {
        format!("model error {model_worst:e}")
    })?;
    ensure(report.results.iter().any(|r| r.name == "model"), || {
        "end-to-end check missing".into()
    })?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "{} checks; worst op error {op_worst:.2e}, model error {model_worst:.2e} in {:.1?}",
        report.results.len(),
        start.elapsed()
    ))
}

/// Video and batch losses against plain nested loops.
fn c3_loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, h, w) = (
            rng.random_range(1..6),
            rng.random_range(1..9),
            rng.random_range(1..9),
        );
        let beta = rng.random_range(1..5);
        let mut losses = Vec::new();
        let mut oracle_sum = 0.0;
        for _ in 0..beta {
            let len = n * h * w * 2;
            let p: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut sq = 0.0;
            for ti in 0..n {
                for k in 0..2 {
                    for i in 0..h {
                        for j in 0..w {
                            let idx = ((ti * h + i) * w + j) * 2 + k;
                            sq += (t[idx] - p[idx]).powi(2);
                        }
                    }
                }
            }
            let oracle = sq / (2 * n * h * w) as f64;
            let shape = [n, h, w, 2];
            let l = video_loss(
                &Tensor::new(&shape, p).unwrap(),
                &Tensor::new(&shape, t).unwrap(),
            )
            .map_err(|e| e.to_string())?;
            worst = worst.max((l.item() - oracle).abs());
            oracle_sum += oracle;
            losses.push(l);
        }
        let b = batch_loss(&losses).map_err(|e| e.to_string())?.item();
        worst = worst.max((b - oracle_sum / beta as f64).abs());
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn cie_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let [r, g, b] = rgb.map(lin);
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    let f = |t: f64| {
        if t > eps {
            t.cbrt()
        } else {
            (kappa * t + 16.0) / 116.0
        }
    };
    [
        116.0 * f(y) - 16.0,
        500.0 * (f(x) - f(y)),
        200.0 * (f(y) - f(z)),
    ]
}

/// sRGB ↔ Lab round trip over the 17³ lattice and spot values.
fn c4_color() -> Outcome {
    let steps: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
    let mut pixels = Vec::new();
    for r in &steps {
        for g in &steps {
            for b in &steps {
                pixels.extend([*r, *g, *b]);
            }
        }
    }
    let frame = RgbFrame::new(17, 289, pixels.clone()).map_err(|e| e.to_string())?;
    let back = lab_to_rgb(&rgb_to_lab(&frame).map_err(|e| e.to_string())?);
    let worst = pixels
        .iter()
        .zip(back.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1.0 / 255.0, || {
        format!("round-trip error {worst:e}")
    })?;
    let mut spot = 0.0f64;
    for (name, rgb, reference) in [
        ("black", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        ("white", [1.0, 1.0, 1.0], [100.0, 0.0, 0.0]),
        ("red", [1.0, 0.0, 0.0], cie_lab([1.0, 0.0, 0.0])),
    ] {
        let got = rgb_pixel_to_lab(rgb);
        let oracle = cie_lab(rgb);
        for k in 0..3 {
            let d = (got[k] - oracle[k])
                .abs()
                .max((got[k] - reference[k]).abs());
            spot = spot.max(d);
            ensure(d < 0.05, || format!("{name}: {got:?} vs {oracle:?}"))?;
        }
    }
    Ok(format!(
        "lattice round-trip error {:.2e} (< {:.2e}); spot checks within {spot:.1e} Lab",
        worst,
        1.0 / 255.0
    ))
}

fn overfit_clip() -> LabVideoClip {
    let size = 32.0;
    let spec = SyntheticSceneSpec {
        height: 32,
        width: 32,
        frames: 5,
        background: [0.2, 0.3, 0.45],
        objects: vec![SceneObject {
            shape: Shape::Disk { radius: size / 6.0 },
            color: [0.9, 0.75, 0.55],
            position: [size / 3.0, size / 2.0],
            velocity: [1.0, 0.0],
        }],
        cuts: vec![],
        noise: 0.0,
        seed: 7,
        fps: 10.0,
    };
    generate_clip(&spec).unwrap()
}

/// Loss target fixed from the first oracle run.
const OVERFIT_TARGET: f64 = 0.002;

fn smoothed(losses: &[f64]) -> Vec<f64> {
    losses
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect()
}

/// 500 Adam steps on one clip.
fn c5_overfit() -> Outcome {
    let start = Instant::now();
    let model =
        FlowChromaModel::new(ModelConfig::desk(5, 32, 32, 32)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 500,
        learning_rate: 1e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let (_, summary) =
        train(model, &[overfit_clip()], cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let losses = summary.train_losses();
    ensure(losses.len() == 500, || {
        format!("{} steps ran", losses.len())
    })?;
    let last = *losses.last().unwrap();
    let sm = smoothed(&losses);
    let rises: Vec<usize> = (1..sm.len()).filter(|&i| sm[i] > sm[i - 1]).collect();
    let early: Vec<usize> = rises.iter().copied().filter(|&i| i + 5 <= 50).collect();
    ensure(last < OVERFIT_TARGET, || {
        format!("final loss {last:.5} ≥ {OVERFIT_TARGET}")
    })?;
    ensure(early.is_empty(), || {
        format!("smoothed loss rises within the first 50 steps at {early:?}")
    })?;
    within(start.elapsed(), Duration::from_secs(600))?;
    let worst_rise = rises
        .iter()
        .map(|&i| sm[i] / sm[i - 1] - 1.0)
        .fold(0.0, f64::max);
    Ok(format!(
        "loss {:.4} → {last:.5} (< {OVERFIT_TARGET}); smoothed curve monotone over first 50 steps, \
         {} later rises (largest {:.1}%) in {:.1?}",
        losses[0],
        rises.len(),
        100.0 * worst_rise,
        start.elapsed()
    ))
}

/// Far above the rounding noise of reordered f64 sums.
const ORDER_TOLERANCE: f64 = 1e-9;

/// Reordering time changes the full model but commutes with the baseline.
fn c6_order() -> Outcome {
    let cfg = ModelConfig::desk(5, 16, 8, 16);
    let lum = random_lum([5, 16, 16], 6);
    let order = [4, 2, 0, 3, 1];
    let permute = |x: &Tensor| Tensor::stack(&order.map(|i| x.select(i).unwrap())).unwrap();
    let full = FlowChromaModel::new(cfg).map_err(|e| e.to_string())?;
    let abl = FlowChromaModel::new(cfg.ablated()).map_err(|e| e.to_string())?;
    let full_out = full.forward(&lum).unwrap();
    let full_diff = full
        .forward(&permute(&lum))
        .unwrap()
        .max_abs_diff(&permute(&full_out));
    let scale = full_out.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let abl_a = abl.forward(&permute(&lum)).unwrap();
    let abl_b = permute(&abl.forward(&lum).unwrap());
    ensure(full_diff > ORDER_TOLERANCE * scale.max(1.0), || {
        format!("full model unchanged by permutation (diff {full_diff:e}, output scale {scale:e})")
    })?;
    ensure(abl_a == abl_b, || {
        format!(
            "baseline not equivariant (diff {:e})",
            abl_a.max_abs_diff(&abl_b)
        )
    })?;
    Ok(format!(
        "full model output moves by {full_diff:.2e} (output scale {scale:.2e}); \
         baseline exactly equivariant"
    ))
}

const AB_CLIPS: usize = 50;
const AB_EPOCHS: usize = 80;

fn ab_template() -> SceneTemplate {
    SceneTemplate {
        height: 32,
        width: 32,
        frames: 10,
        palette: vec![
            [0.2, 0.3, 0.45],
            [0.9, 0.75, 0.55],
            [0.35, 0.6, 0.3],
            [0.8, 0.3, 0.25],
            [0.95, 0.9, 0.4],
            [0.15, 0.2, 0.15],
        ],
        min_objects: 1,
        max_objects: 2,
        min_size: 3.0,
        max_size: 7.0,
        max_speed: 1.5,
        noise: 0.0,
        fps: 10.0,
    }
}

fn last_val(s: &TrainSummary) -> f64 {
    s.records
        .iter()
        .rev()
        .find(|r| r.split == flowchroma_core::training::Split::Val)
        .map_or(f64::NAN, |r| r.loss)
}

/// Identically trained full and baseline models; held-out static-pixel flicker.
fn c7_coherence() -> Outcome {
    let start = Instant::now();
    let tpl = ab_template();
    let clips: Vec<_> = (0..AB_CLIPS as u64)
        .map(|i| generate_clip(&tpl.instantiate(100 + i).unwrap()).unwrap())
        .collect();
    let cfg = TrainConfig {
        batch_size: 20,
        epochs: AB_EPOCHS,
        learning_rate: 1e-3,
        seed: 11,
        ..TrainConfig::default()
    };
    let (_, val) = split_indices(clips.len(), cfg.validation_fraction, cfg.seed);
    let held: Vec<_> = val.iter().map(|&i| clips[i].clone()).collect();
    let base = ModelConfig::desk(5, 32, 32, 32);
    let run = |c: ModelConfig| {
        let model = FlowChromaModel::new(c).map_err(|e| e.to_string())?;
        train(model, &clips, cfg.clone(), &mut std::io::sink()).map_err(|e| e.to_string())
    };
    let (full, sf) = run(base)?;
    let (abl, sa) = run(base.ablated())?;
    let report = compare(
        ("full", &full),
        ("ablated", &abl),
        &held,
        EvalOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let [f, a] = [0, 1].map(|i| report.summary[i].mean_flicker_index);
    let (Some(f), Some(a)) = (f, a) else {
        return Err("flicker undefined on held-out clips".into());
    };
    let detail = format!(
        "held-out flicker full {f:.4} vs baseline {a:.4} ({} clips, {} steps each, \
         val loss {:.4} / {:.4}) in {:.0?}",
        held.len(),
        sf.steps_run,
        last_val(&sf),
        last_val(&sa),
        start.elapsed()
    );
    ensure(f <= a, || detail.clone())?;
    within(start.elapsed(), Duration::from_secs(7200))?;
    Ok(detail)
}

/// Window coverage and determinism for several clip lengths.
fn c8_coverage() -> Outcome {
    let model = FlowChromaModel::new(ModelConfig::desk(5, 16, 8, 16)).map_err(|e| e.to_string())?;
    for n in [1, 3, 5, 7, 100] {
        let s = plan_windows(n, 5, 1);
        let mut count = vec![0; n];
        for (f, a) in s.assignments().iter().enumerate() {
            ensure(s.window_frames(a.window)[a.position] == f, || {
                format!("N={n}: frame {f} mapped to the wrong window slot")
            })?;
            count[f] += 1;
        }
        ensure(count.iter().all(|&c| c == 1), || {
            format!("N={n}: counts {count:?}")
        })?;
        let lum = random_lum([n, 16, 16], n as u64);
        let a = colorize_video(&model, &lum, &s).map_err(|e| e.to_string())?;
        let b = colorize_video(&model, &lum, &s).map_err(|e| e.to_string())?;
        ensure(a.shape() == [n, 16, 16, 2], || {
            format!("N={n}: output {:?}", a.shape())
        })?;
        ensure(
            a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            || format!("N={n}: runs differ"),
        )?;
    }
    Ok("N ∈ {1,3,5,7,100}: each frame colorized once, runs bitwise equal".into())
}

/// Save, load and forward must reproduce the pre-save output bit for bit.
fn c9_checkpoint() -> Outcome {
    let tpl = SceneTemplate {
        height: 16,
        width: 16,
        frames: 5,
        ..ab_template()
    };
    let clips: Vec<_> = (0..4)
        .map(|i| generate_clip(&tpl.instantiate(i).unwrap()).unwrap())
        .collect();
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 2,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(
        FlowChromaModel::new(ModelConfig::desk(5, 16, 8, 16)).unwrap(),
        cfg,
    )
    .map_err(|e| e.to_string())?;
    trainer
        .train(&clips, &mut std::io::sink())
        .map_err(|e| e.to_string())?;
    let lum = random_lum([5, 16, 16], 9);
    let before = trainer.model().forward(&lum).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.fchk");
    trainer
        .checkpoint()
        .save(&path)
        .map_err(|e| e.to_string())?;
    let restored = Checkpoint::load(&path)
        .and_then(|c| c.to_model())
        .map_err(|e| e.to_string())?;
    let after = restored.forward(&lum).unwrap();
    let same = before
        .data()
        .iter()
        .zip(after.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same && before.shape() == after.shape(), || {
        format!("max diff {:e}", before.max_abs_diff(&after))
    })?;
    Ok(format!(
        "{} outputs bitwise identical after save/load at step {}",
        after.numel(),
        trainer.step()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "dimension contract", c1_dimensions),
        (2, "gradient integrity", c2_gradients),
        (3, "loss formula oracle", c3_loss_oracle),
        (4, "color round-trip", c4_color),
        (5, "overfit convergence", c5_overfit),
        (6, "temporal-order sensitivity", c6_order),
        (7, "coherence A/B", c7_coherence),
        (8, "inference coverage", c8_coverage),
        (9, "checkpoint round-trip", c9_checkpoint),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
