use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use flowchroma_core::colorspace::{merge_luminance, split_luminance};
use flowchroma_core::data::{
    frame_file_name, generate_clip, load_clip, save_clip, DatasetManifest, LabVideoClip,
    ManifestEntry, SceneTemplate, SyntheticSceneSpec,
};
use flowchroma_core::eval::{compare, EvalOptions};
use flowchroma_core::gradcheck::{self, GradCheckConfig};
use flowchroma_core::inference::{colorize_video, plan_windows};
use flowchroma_core::model::{Checkpoint, FlowChromaModel, ModelConfig};
use flowchroma_core::tensor::fault::{with_fault, Fault};
use flowchroma_core::training::{split_indices, Trainer};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::{
    ColorizeArgs, EvaluateArgs, Failure, GenerateArgs, GradCheckArgs, InjectedFault, TrainArgs,
    CONFIG_ENV,
};

enum SceneSource {
    Template(SceneTemplate),
    Fixed(SyntheticSceneSpec),
}

impl SceneSource {
    fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))?;
        let source = if value.get("palette").is_some() {
            let t: SceneTemplate = serde_json::from_value(value)?;
            t.validate()?;
            SceneSource::Template(t)
        } else {
            let s: SyntheticSceneSpec = serde_json::from_value(value)?;
            s.validate()?;
            SceneSource::Fixed(s)
        };
        Ok(source)
    }

    fn scene(&self, seed: u64) -> Result<SyntheticSceneSpec, Failure> {
        Ok(match self {
            SceneSource::Template(t) => t.instantiate(seed)?,
            SceneSource::Fixed(s) => SyntheticSceneSpec { seed, ..s.clone() },
        })
    }
}

fn clip_dir_name(i: usize) -> String {
    format!("clip_{i:05}")
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    if a.count == 0 {
        return Err(Failure::new(1, "--count must be at least 1"));
    }
    if !(0.0..1.0).contains(&a.eval_fraction) {
        return Err(Failure::new(1, "--eval-fraction must be in [0, 1)"));
    }
    let source = SceneSource::read(&a.spec)?;
    let clips = (0..a.count)
        .into_par_iter()
        .map(|i| Ok(generate_clip(&source.scene(a.seed + i as u64)?)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    let (_, eval) = split_indices(a.count, a.eval_fraction, a.seed);
    fs::create_dir_all(&a.out)?;
    let mut manifest = DatasetManifest::default();
    for (i, clip) in clips.iter().enumerate() {
        let name = clip_dir_name(i);
        save_clip(clip, &a.out.join(&name))?;
        let tag = if eval.contains(&i) { "eval" } else { "train" };
        manifest.clips.push(ManifestEntry {
            path: name,
            frames: clip.len(),
            height: clip.height(),
            width: clip.width(),
            tags: vec![tag.into()],
        });
    }
    let file = manifest.save(&a.out)?;
    println!(
        "wrote {} clips ({} eval) and {}",
        a.count,
        eval.len(),
        file.display()
    );
    Ok(())
}

/// Loads the manifest's clips carrying `tag`; each clip's id is its manifest path.
fn load_tagged(
    dataset: &Path,
    tag: &str,
    untagged_too: bool,
) -> Result<Vec<LabVideoClip>, Failure> {
    let (manifest, root) = DatasetManifest::load(dataset)?;
    manifest
        .clips
        .par_iter()
        .filter(|c| c.tags.iter().any(|t| t == tag) || (untagged_too && c.tags.is_empty()))
        .map(|entry| {
            let mut clip = load_clip(&root.join(&entry.path))?;
            if (clip.len(), clip.height(), clip.width())
                != (entry.frames, entry.height, entry.width)
            {
                return Err(Failure::new(
                    1,
                    format!(
                        "{}: manifest lists {} frames of {}×{}, found {} of {}×{}",
                        entry.path,
                        entry.frames,
                        entry.height,
                        entry.width,
                        clip.len(),
                        clip.height(),
                        clip.width()
                    ),
                ));
            }
            clip.source_id = entry.path.clone();
            Ok(clip)
        })
        .collect()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(Failure::new(
            2,
            format!("checkpoint {} does not exist", path.display()),
        ));
    }
    Ok(Checkpoint::load(path)?)
}

impl TrainArgs {
    fn as_overrides(&self) -> RunConfig {
        let mut r = RunConfig {
            seed: self.seed,
            dataset: self.dataset.clone(),
            output: self.out.clone(),
            resume: self.resume.clone(),
            log: self.log.clone(),
            ..RunConfig::default()
        };
        let m = &mut r.model;
        m.window = self.window;
        m.encoder_channels = self.channels;
        m.global_dim = self.global_dim;
        m.lstm_hidden = self.lstm_hidden;
        m.desk_scale = self.desk_scale.then_some(true);
        m.ablate_lstm = self.ablate_lstm.then_some(true);
        let t = &mut r.train;
        t.epochs = self.epochs;
        t.max_steps = self.max_steps;
        t.batch_size = self.batch_size;
        t.learning_rate = self.lr;
        t.validation_fraction = self.validation_fraction;
        t.clip_grad_norm = self.clip_grad_norm;
        t.checkpoint_every = self.checkpoint_every;
        t.checkpoint_dir = self.checkpoint_dir.clone();
        t.window_stride = self.window_stride;
        r
    }
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let config_path = a
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let file = match &config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let run = file.overlay(&a.as_overrides());
    let dataset = run
        .dataset
        .clone()
        .ok_or_else(|| Failure::new(1, "no dataset given (--dataset or config `dataset`)"))?;
    let output = run
        .output
        .clone()
        .ok_or_else(|| Failure::new(1, "no output checkpoint given (--out or config `output`)"))?;
    let train_cfg = run.train_config();
    train_cfg.validate()?;

    let clips = load_tagged(&dataset, "train", true)?;
    let first = clips
        .first()
        .ok_or_else(|| Failure::new(1, format!("{}: no train-tagged clips", dataset.display())))?;
    let dims = (first.height(), first.width());

    let (mut trainer, model_cfg) = match &run.resume {
        Some(path) => {
            if run.has_model_settings() {
                return Err(Failure::new(
                    1,
                    "model settings cannot be combined with resume; they come from the checkpoint",
                ));
            }
            let ck = load_checkpoint(path)?;
            (Trainer::resume(&ck, train_cfg.clone())?, ck.config)
        }
        None => {
            let cfg = run.model_config(dims);
            (
                Trainer::new(FlowChromaModel::new(cfg)?, train_cfg.clone())?,
                cfg,
            )
        }
    };

    let mut log: Box<dyn Write> = match &run.log {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stderr()),
    };
    let echo = json!({
        "effective_config": {
            "dataset": dataset,
            "output": output,
            "resume": run.resume,
            "clips": clips.len(),
            "model": model_cfg,
            "train": train_cfg,
        }
    });
    writeln!(log, "{echo}")?;

    let summary = trainer.train(&clips, &mut log)?;
    log.flush()?;
    trainer.checkpoint().save(&output)?;
    println!(
        "trained {} steps (now at step {}); wrote {}",
        summary.steps_run,
        trainer.step(),
        output.display()
    );
    Ok(())
}

fn check_dims(cfg: &ModelConfig, clip: &LabVideoClip) -> Result<(), Failure> {
    if (clip.height(), clip.width()) != (cfg.height, cfg.width) {
        return Err(Failure::new(
            1,
            format!(
                "input frames are {}×{} but the checkpoint expects {}×{} \
                 (frame sides must match the model and be divisible by 8)",
                clip.height(),
                clip.width(),
                cfg.height,
                cfg.width
            ),
        ));
    }
    Ok(())
}

pub fn colorize(a: &ColorizeArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let cfg = *model.config();
    let clip = load_clip(&a.input)?;
    check_dims(&cfg, &clip)?;
    let (lum, _) = split_luminance(&clip)?;
    let schedule = plan_windows(clip.len(), cfg.window, a.stride).with_rule(a.rule.into());
    let chroma = colorize_video(&model, &lum, &schedule)?;
    let out = LabVideoClip::new(
        merge_luminance(&lum, &chroma)?,
        clip.source_id.clone(),
        clip.fps,
    )?;
    save_clip(&out, &a.output)?;
    let sidecar = json!({
        "checkpoint": a.checkpoint,
        "input": a.input,
        "frames": (0..out.len()).map(frame_file_name).collect::<Vec<_>>(),
        "schedule": schedule,
        "assignments": schedule.assignments(),
        "config": cfg,
        "step": ck.step,
    });
    fs::write(
        a.output.join("colorize.json"),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    println!("colorized {} frames into {}", out.len(), a.output.display());
    Ok(())
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let model_a = load_checkpoint(&a.a)?.to_model()?;
    let model_b = load_checkpoint(&a.b)?.to_model()?;
    let clips = load_tagged(&a.dataset, &a.tag, false)?;
    if clips.is_empty() {
        return Err(Failure::new(
            1,
            format!("{}: no clips tagged {:?}", a.dataset.display(), a.tag),
        ));
    }
    for clip in &clips {
        check_dims(model_a.config(), clip)?;
        check_dims(model_b.config(), clip)?;
    }
    let (mut id_a, mut id_b) = (model_id(&a.a), model_id(&a.b));
    if id_a == id_b {
        id_a.push_str("[a]");
        id_b.push_str("[b]");
    }
    let opts = EvalOptions {
        stride: a.stride,
        static_threshold: a.threshold,
        rule: a.rule.into(),
    };
    let report = compare((&id_a, &model_a), (&id_b, &model_b), &clips, opts)?;
    fs::create_dir_all(&a.out)?;
    let table = report.to_table();
    fs::write(a.out.join("report.json"), report.to_json() + "\n")?;
    fs::write(a.out.join("report.txt"), &table)?;
    print!("{table}");
    if report.all_undefined() {
        return Err(Failure::new(
            1,
            "flicker index is undefined for every clip (no static pixels)",
        ));
    }
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs) -> Result<(), Failure> {
    let cfg = GradCheckConfig {
        step: a.step,
        seed: a.seed,
        ops: a.ops.clone(),
        model_config: ModelConfig::desk(a.window, a.size, a.channels, a.global_dim),
    };
    let report = match a.inject_fault {
        Some(InjectedFault::ConvBackwardSignFlip) => {
            with_fault(Fault::ConvBackwardSignFlip, || gradcheck::run(&cfg))
        }
        None => gradcheck::run(&cfg),
    }?;
    for r in &report.results {
        println!(
            "{:<20} {:<4} max_rel_error {:.3e} (tolerance {:.0e})",
            r.name,
            if r.passed { "ok" } else { "FAIL" },
            r.max_rel_error,
            r.tolerance
        );
    }
    let failed: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.results.len());
        Ok(())
    } else {
        Err(Failure::new(
            1,
            format!("gradient check failed: {}", failed.join(", ")),
        ))
    }
}
