use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use r2upp_core::checkpoint;
use r2upp_core::data::{
    load_mask, load_pgm, load_samples, read_manifest, resize, save_pgm, split, synth_dataset, write_manifest,
    Interpolation, ManifestEntry, Sample,
};
use r2upp_core::graph::Preset;
use r2upp_core::inference::predict_image;
use r2upp_core::metrics::{confusion_counts, report_row, summarize, MetricReport, REPORT_HEADER};
use r2upp_core::network::{parameter_breakdown, PredictMode};
use r2upp_core::trainer::{evaluate as evaluate_model, fit};
use r2upp_core::{build_plan, count_parameters, ArchitectureConfig, Error, Network, Result};
use serde::Serialize;

use crate::config::{self, RunConfig};
use crate::{ConfigArgs, Switch};

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("trainer.seed={seed}"));
    }
    if let Some(s) = args.deep_supervision {
        let on = s == Switch::On;
        overrides.push(format!("architecture.deep_supervision={on}"));
        overrides.push(format!("trainer.deep_supervision={on}"));
    }
    config::load(args.config.as_deref(), &overrides)
}

fn preprocess(s: Sample, cfg: &RunConfig) -> Result<Sample> {
    let (mut image, mut mask) = (s.image, s.mask);
    if let Some(c) = cfg.data.crop {
        image = image.crop(c.top, c.left, c.height, c.width)?;
        mask = mask.crop(c.top, c.left, c.height, c.width)?;
    }
    if let Some(r) = cfg.data.resize {
        image = resize(&image, r.height, r.width, r.method)?;
        mask = resize(&mask, r.height, r.width, Interpolation::Nearest)?.threshold();
    }
    Sample::new(s.id, image, mask)
}

fn load_manifest_samples(path: &Path, cfg: &RunConfig) -> Result<Vec<Sample>> {
    load_samples(&read_manifest(path)?)?
        .into_iter()
        .map(|s| preprocess(s, cfg))
        .collect()
}

/// Training and validation samples described by the data section.
fn training_data(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let d = &cfg.data;
    let all = match (&d.synthetic, &d.manifest) {
        (Some(s), None) => synth_dataset(s.seed, s.count, s.size)?,
        (None, Some(m)) => load_manifest_samples(m, cfg)?,
        (Some(_), Some(_)) => return Err(Error::Config("set only one of data.synthetic and data.manifest".into())),
        (None, None) => return Err(Error::Config("data.manifest or data.synthetic is required".into())),
    };
    if all.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let (mut train, val) = if let Some(v) = &d.val_manifest {
        (all, load_manifest_samples(v, cfg)?)
    } else if d.validate_on_train {
        (all.clone(), all)
    } else {
        let (tr, va, _) = split(&all, d.split.unwrap_or([0.8, 0.2, 0.0]), d.split_seed)?;
        (tr, va)
    };
    if val.is_empty() {
        return Err(Error::Data("validation split is empty; adjust data.split".into()));
    }
    if let Some(p) = &d.train_patches {
        let mut patches = Vec::new();
        for s in &train {
            patches.extend(s.patches(p)?);
        }
        train = patches;
    }
    Ok((train, val))
}

pub fn train(args: &ConfigArgs, trials: usize) -> Result<()> {
    let cfg = resolve(args)?;
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let (train_set, val_set) = training_data(&cfg)?;
    eprintln!(
        "training on {} samples, validating on {}, {} parameters",
        train_set.len(),
        val_set.len(),
        count_parameters(&cfg.architecture)?
    );
    for trial in 0..trials {
        let mut tc = cfg.trainer.clone();
        tc.seed = cfg.trainer.seed + trial as u64;
        let dir = if trials == 1 {
            cfg.output_dir.clone()
        } else {
            cfg.output_dir.join(format!("trial{trial}"))
        };
        fs::create_dir_all(&dir)?;
        let mut net = Network::new(cfg.architecture.clone(), tc.seed)?;
        let result = fit(&mut net, &train_set, &val_set, &tc, |e| {
            eprintln!(
                "trial {trial} epoch {:>3}  train {:.5}  val {:.5}  dice {:.4}",
                e.epoch, e.train_loss, e.val_loss, e.val_dice
            );
        })?;
        checkpoint::save(&net, &dir.join("best.ckpt"))?;
        let mut last = net.clone();
        last.restore(&result.final_state)?;
        checkpoint::save(&last, &dir.join("final.ckpt"))?;
        fs::write(dir.join("history.csv"), result.history.to_csv())?;
        println!(
            "trial {trial}: seed {}, {} epochs, best epoch {}, stop {:?}, wrote {}",
            tc.seed,
            result.history.epochs.len(),
            result.best_epoch,
            result.stop,
            dir.display()
        );
    }
    Ok(())
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub out: PathBuf,
    pub prob: Option<PathBuf>,
    pub prob_text: Option<PathBuf>,
    pub mode: String,
    pub cfg: ConfigArgs,
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    let mode: PredictMode = a.mode.parse()?;
    let net = checkpoint::load(&a.checkpoint)?;
    let image = load_pgm(&a.image)?;
    let probs = predict_image(&net, &image, mode, Some(&cfg.patch))?;
    save_pgm(&probs.threshold(), &a.out)?;
    if let Some(p) = &a.prob {
        save_pgm(&probs, p)?;
    }
    if let Some(p) = &a.prob_text {
        let mut s = String::new();
        for row in probs.data.chunks(probs.width) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        fs::write(p, s)?;
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub checkpoint: Option<PathBuf>,
    pub manifest: PathBuf,
    pub mode: String,
    pub dataset: Option<String>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub cfg: ConfigArgs,
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "unnamed".into(), |s| s.to_string_lossy().into_owned())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    let entries = read_manifest(&a.manifest)?;
    let per_image: Vec<(String, MetricReport)> = match &a.checkpoint {
        Some(ck) => {
            let net = checkpoint::load(ck)?;
            let mode: PredictMode = a.mode.parse()?;
            let samples = load_samples(&entries)?;
            evaluate_model(&net, &samples, mode, Some(&cfg.patch))?.per_image
        }
        None => entries.iter().map(score_given_prediction).collect::<Result<_>>()?,
    };
    let dataset = a.dataset.clone().unwrap_or_else(|| stem(&a.manifest));
    let model = a
        .model
        .clone()
        .or_else(|| a.checkpoint.as_deref().map(stem))
        .unwrap_or_else(|| "given".into());
    let mut csv = format!("{REPORT_HEADER}\n");
    for (id, r) in &per_image {
        let _ = writeln!(csv, "{}", report_row(&format!("{dataset}:{id}"), &model, r));
    }
    let reports: Vec<MetricReport> = per_image.iter().map(|(_, r)| *r).collect();
    let summary = summarize(&reports);
    let _ = writeln!(csv, "{}", report_row(&dataset, &model, &summary.mean));
    eprintln!(
        "{} images: dice {:.4} +- {:.4}, iou {:.4} +- {:.4}",
        summary.count, summary.mean.dice, summary.sd.dice, summary.mean.iou, summary.sd.iou
    );
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn score_given_prediction(e: &ManifestEntry) -> Result<(String, MetricReport)> {
    let pred_path = e.prediction.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "manifest entry {} has no prediction column; pass --checkpoint to predict",
            e.id
        ))
    })?;
    let gt = load_mask(&e.mask)?;
    let pred = load_mask(pred_path)?;
    if (gt.height, gt.width) != (pred.height, pred.width) {
        return Err(Error::Shape(format!(
            "{}: mask is {}x{}, prediction is {}x{}",
            e.id, gt.height, gt.width, pred.height, pred.width
        )));
    }
    Ok((e.id.clone(), confusion_counts(&gt.data, &pred.data)?.report()))
}

#[derive(Serialize)]
struct ParamRow {
    model: String,
    params: usize,
    architecture: ArchitectureConfig,
}

fn reference_rows() -> Result<Vec<ParamRow>> {
    let table = [
        (Preset::UNet, 1, "U-Net"),
        (Preset::R2UNet, 2, "R2U-Net (t=2)"),
        (Preset::UNetPlusPlus, 1, "U-Net++"),
        (Preset::R2UPlusPlus, 1, "R2U++ (t=1)"),
        (Preset::R2UPlusPlus, 2, "R2U++ (t=2)"),
    ];
    table
        .iter()
        .map(|&(p, t, name)| {
            let architecture = p.config(t);
            Ok(ParamRow {
                model: name.to_string(),
                params: count_parameters(&architecture)?,
                architecture,
            })
        })
        .collect()
}

pub fn params(args: &ConfigArgs, json: bool) -> Result<()> {
    let mut rows = reference_rows()?;
    let custom = args.config.is_some() || !args.set.is_empty();
    let cfg = resolve(args)?;
    if custom {
        rows.push(ParamRow {
            model: "configured".into(),
            params: count_parameters(&cfg.architecture)?,
            architecture: cfg.architecture.clone(),
        });
    }
    if json {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Config(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    println!("{:<16} {:>12} {:>9}", "model", "params", "millions");
    for r in &rows {
        println!("{:<16} {:>12} {:>9.3}", r.model, r.params, r.params as f64 / 1e6);
    }
    if custom {
        println!();
        let plan = build_plan(&cfg.architecture)?;
        for (name, n) in parameter_breakdown(&cfg.architecture, &plan) {
            println!("  {name:<12} {n:>12}");
        }
    }
    Ok(())
}

pub fn graph(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    print!("{}", build_plan(&cfg.architecture)?.dump());
    Ok(())
}

pub fn synth(seed: u64, count: usize, size: usize, out: &Path) -> Result<()> {
    let samples = synth_dataset(seed, count, size)?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let image = PathBuf::from("images").join(format!("{}.pgm", s.id));
        let mask = PathBuf::from("masks").join(format!("{}.pgm", s.id));
        save_pgm(&s.image, &out.join(&image))?;
        save_pgm(&s.mask, &out.join(&mask))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            mask,
            prediction: None,
        });
    }
    write_manifest(&out.join("manifest.tsv"), &entries)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}
