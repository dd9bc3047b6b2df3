use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempose_core::io::{
    load_model, load_predictions, load_sequence, save_model, save_predictions, save_sequence,
    PredictionSet,
};
use tempose_core::metrics::Subset;
use tempose_core::pipeline::{
    evaluate_predictions, interpolate_predictions, one_euro_predictions, predict_sequences,
    refine_predictions,
};
use tempose_core::synth::generate_sequence;
use tempose_core::tpn::{train_tpn_with, TpnModel, TrainingSample};
use tempose_core::Sequence;

use crate::config::{ExperimentConfig, TEST_SEED_BASE, TRAIN_SEED_BASE, VAL_SEED_BASE};
use crate::plot::{render_svg, Panel, TrajectoryPlot};
use crate::report::{write_comparison, write_json, write_method_report, MethodReport};
use crate::{CliError, RefineMethod};

pub const MODEL_FILE: &str = "tpn.json";
pub const LOSS_FILE: &str = "train_loss.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} not found",
            path.display()
        )))
    }
}

/// Loads one sequence file, or every `.jsonl` file of a directory in name order.
pub fn load_sequences(path: &Path) -> Result<Vec<Sequence>, CliError> {
    require(path, "sequences")?;
    if path.is_file() {
        return Ok(vec![load_sequence(path)?]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| io_err(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no .jsonl sequences in {}",
            path.display()
        )));
    }
    files
        .iter()
        .map(|f| load_sequence(f).map_err(|e| CliError::Usage(format!("{}: {e}", f.display()))))
        .collect()
}

fn default_sequences(cfg: &ExperimentConfig, sequences: Option<&Path>) -> PathBuf {
    sequences.map_or_else(|| cfg.paths.corpus.join("test"), Path::to_path_buf)
}

fn model_path(cfg: &ExperimentConfig, model: Option<&Path>) -> PathBuf {
    model.map_or_else(|| cfg.paths.model.join(MODEL_FILE), Path::to_path_buf)
}

fn raw_predictions_path(cfg: &ExperimentConfig, predictions: Option<&Path>) -> PathBuf {
    predictions.map_or_else(
        || cfg.paths.predictions.join("tpn.jsonl"),
        Path::to_path_buf,
    )
}

fn read_model(path: &Path) -> Result<TpnModel, CliError> {
    require(path, "model")?;
    Ok(load_model(path)?)
}

fn read_predictions(path: &Path) -> Result<PredictionSet, CliError> {
    require(path, "predictions")?;
    Ok(load_predictions(path)?)
}

#[derive(Serialize)]
struct ManifestEntry {
    seq_id: String,
    seed: u64,
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    config_hash: String,
    train: Vec<ManifestEntry>,
    val: Vec<ManifestEntry>,
    test: Vec<ManifestEntry>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Sequence files of a split that a previous, larger run left behind.
fn remove_stale(dir: &Path, split: &str, keep: usize) -> Result<(), CliError> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let index = name
            .strip_prefix(&format!("{split}_"))
            .and_then(|r| r.strip_suffix(".jsonl"))
            .and_then(|i| i.parse::<usize>().ok());
        if index.is_some_and(|i| i >= keep) {
            std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let root = out.unwrap_or(&cfg.paths.corpus);
    let mut written = Vec::new();
    let mut entries: Vec<Vec<ManifestEntry>> = Vec::new();
    for (split, base, n) in [
        ("train", TRAIN_SEED_BASE, cfg.splits.train),
        ("val", VAL_SEED_BASE, cfg.splits.val),
        ("test", TEST_SEED_BASE, cfg.splits.test),
    ] {
        let dir = root.join(split);
        create_dir(&dir)?;
        remove_stale(&dir, split, n)?;
        let mut list = Vec::new();
        for i in 0..n {
            let seq_id = format!("{split}_{i:03}");
            let seed = base + i as u64;
            let seq = generate_sequence(&cfg.synth, &seq_id, seed)?;
            let file = dir.join(format!("{seq_id}.jsonl"));
            save_sequence(&seq, &file)?;
            list.push(ManifestEntry {
                sha256: sha256_file(&file)?,
                file: format!("{split}/{seq_id}.jsonl"),
                seq_id,
                seed,
            });
            written.push(file);
        }
        entries.push(list);
    }
    let test = entries.pop().unwrap_or_default();
    let val = entries.pop().unwrap_or_default();
    let train = entries.pop().unwrap_or_default();
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        train,
        val,
        test,
    };
    let mpath = root.join(MANIFEST_FILE);
    write_json(&mpath, &manifest)?;
    let cpath = root.join("config.json");
    write_json(&cpath, cfg)?;
    written.push(mpath);
    written.push(cpath);
    Ok(written)
}

pub fn train(
    cfg: &ExperimentConfig,
    corpus: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let corpus = corpus.unwrap_or(&cfg.paths.corpus);
    require(corpus, "corpus")?;
    let train_seqs = load_sequences(&corpus.join("train"))?;
    let val_dir = corpus.join("val");
    let val_seqs = if val_dir.exists() && cfg.splits.val > 0 {
        load_sequences(&val_dir)?
    } else {
        Vec::new()
    };
    let train = TrainingSample::from_sequences(&train_seqs)?;
    let val = TrainingSample::from_sequences(&val_seqs)?;
    let (model, report) = train_tpn_with(&train, &val, &cfg.tpn, &cfg.train, |log| {
        eprintln!(
            "epoch {:>3}  lr {:.3e}  train {:.3}  val {}",
            log.epoch,
            log.learning_rate,
            log.train_loss,
            log.val_loss.map_or("-".to_string(), |v| format!("{v:.3}"))
        );
    })?;

    let dir = out.unwrap_or(&cfg.paths.model);
    create_dir(dir)?;
    let mpath = dir.join(MODEL_FILE);
    save_model(&model, &mpath)?;
    let lpath = dir.join(LOSS_FILE);
    let mut w = csv::Writer::from_path(&lpath)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", lpath.display())))?;
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", lpath.display()));
    w.write_record(["epoch", "learning_rate", "train_loss", "val_loss"])
        .map_err(csv_err)?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.learning_rate.to_string(),
            e.train_loss.to_string(),
            e.val_loss.map_or(String::new(), |v| v.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(&lpath, e))?;
    Ok(vec![mpath, lpath])
}

pub fn predict(
    cfg: &ExperimentConfig,
    sequences: Option<&Path>,
    model: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let seqs = load_sequences(&default_sequences(cfg, sequences))?;
    let model = read_model(&model_path(cfg, model))?;
    let set = predict_sequences(&seqs, &model, cfg.refine.median_window)?;
    let dir = out.unwrap_or(&cfg.paths.predictions);
    create_dir(dir)?;
    let path = dir.join(format!("{}.jsonl", set.method));
    save_predictions(&set, &path)?;
    Ok(vec![path])
}

fn apply_method(
    cfg: &ExperimentConfig,
    raw: &PredictionSet,
    method: RefineMethod,
    model: Option<&Path>,
    fps: Option<f64>,
) -> Result<PredictionSet, CliError> {
    Ok(match method {
        RefineMethod::Energy => {
            let model = read_model(&model_path(cfg, model))?;
            refine_predictions(raw, &cfg.refine, &model.norm)?
        }
        RefineMethod::Interpolation => interpolate_predictions(raw)?,
        RefineMethod::OneEuro => {
            one_euro_predictions(raw, fps.unwrap_or(cfg.synth.fps), &cfg.one_euro)?
        }
    })
}

pub fn refine(
    cfg: &ExperimentConfig,
    predictions: Option<&Path>,
    method: RefineMethod,
    model: Option<&Path>,
    fps: Option<f64>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let raw = read_predictions(&raw_predictions_path(cfg, predictions))?;
    let set = apply_method(cfg, &raw, method, model, fps)?;
    let dir = out.unwrap_or(&cfg.paths.predictions);
    create_dir(dir)?;
    let path = dir.join(format!("{}.jsonl", set.method));
    save_predictions(&set, &path)?;
    Ok(vec![path])
}

fn method_report(
    cfg: &ExperimentConfig,
    set: &PredictionSet,
    seqs: &[Sequence],
    subsets: &[Subset],
) -> Result<MethodReport, CliError> {
    let mut reports = Vec::new();
    for &s in subsets {
        match evaluate_predictions(
            set,
            seqs,
            s,
            cfg.refine.visibility_threshold,
            cfg.metrics.pck_threshold,
        )? {
            Some(r) => reports.push(r),
            None => eprintln!("{}: no {} poses to evaluate", set.method, s.name()),
        }
    }
    Ok(MethodReport {
        method: set.method.clone(),
        subsets: reports,
    })
}

fn write_reports(dir: &Path, reports: &[MethodReport]) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for r in reports {
        written.extend(write_method_report(&dir.join(&r.method), r)?);
    }
    if reports.len() > 1 {
        written.extend(write_comparison(dir, reports)?);
    }
    Ok(written)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    predictions: &[PathBuf],
    sequences: Option<&Path>,
    subset: Option<&str>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let subsets = match subset {
        Some(s) => vec![Subset::parse(s)?],
        None => Subset::ALL.to_vec(),
    };
    let seqs = load_sequences(&default_sequences(cfg, sequences))?;
    let mut reports: Vec<MethodReport> = Vec::new();
    for p in predictions {
        let set = read_predictions(p)?;
        if reports.iter().any(|r| r.method == set.method) {
            return Err(CliError::Usage(format!(
                "method {:?} given twice",
                set.method
            )));
        }
        reports.push(method_report(cfg, &set, &seqs, &subsets)?);
    }
    write_reports(out.unwrap_or(&cfg.paths.reports), &reports)
}

pub fn compare(
    cfg: &ExperimentConfig,
    predictions: Option<&Path>,
    sequences: Option<&Path>,
    model: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let seqs = load_sequences(&default_sequences(cfg, sequences))?;
    let raw = read_predictions(&raw_predictions_path(cfg, predictions))?;
    let mut sets = vec![raw.clone()];
    for m in [
        RefineMethod::Interpolation,
        RefineMethod::OneEuro,
        RefineMethod::Energy,
    ] {
        sets.push(apply_method(cfg, &raw, m, model, None)?);
    }
    let reports = sets
        .iter()
        .map(|s| method_report(cfg, s, &seqs, &Subset::ALL))
        .collect::<Result<Vec<_>, _>>()?;
    for s in Subset::ALL {
        println!(
            "{:<14}{:>10}{:>10}{:>8}  ({s:?})",
            "method", "MRPE", "MPJPE", "PCK"
        );
        for r in &reports {
            if let Some(m) = r.subset(s) {
                println!(
                    "{:<14}{:>10.2}{:>10.2}{:>8.2}",
                    r.method, m.mean.mrpe, m.mean.mpjpe, m.mean.pck
                );
            }
        }
    }
    write_reports(out.unwrap_or(&cfg.paths.reports), &reports)
}

#[allow(clippy::too_many_arguments)]
pub fn plot(
    cfg: &ExperimentConfig,
    predictions: Option<&Path>,
    sequences: Option<&Path>,
    seq_id: &str,
    person: u32,
    joint: Option<&str>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let seqs = load_sequences(&default_sequences(cfg, sequences))?;
    let set = read_predictions(&raw_predictions_path(cfg, predictions))?;
    let seq = seqs
        .iter()
        .find(|s| s.seq_id == seq_id)
        .ok_or_else(|| CliError::Usage(format!("unknown sequence {seq_id:?}")))?;
    let track = seq
        .track(person)
        .ok_or_else(|| CliError::Usage(format!("sequence {seq_id:?} has no person {person}")))?;
    let est = set.track(seq_id, person).ok_or_else(|| {
        CliError::Usage(format!(
            "predictions have no track for {seq_id:?} person {person}"
        ))
    })?;
    let sk = &seq.skeleton;
    let j = match joint {
        None => sk.root_index,
        Some(name) => sk
            .joint_index(name)
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i < sk.num_joints()))
            .ok_or_else(|| CliError::Usage(format!("unknown joint {name:?}")))?,
    };
    if est.frames.len() != track.len() {
        return Err(CliError::Usage(
            "predictions and sequence differ in length".into(),
        ));
    }
    let pick = |axis: usize| -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        let pred = est
            .frames
            .iter()
            .map(|f| Some(f.pose.absolute()[j][axis]))
            .collect();
        let gt = track
            .gt
            .iter()
            .map(|g| g.as_ref().map(|g| g.absolute()[j][axis]))
            .collect();
        (pred, gt)
    };
    let (yp, yg) = pick(1);
    let (zp, zg) = pick(2);
    let joint_name = sk.joint_names[j].clone();
    let plot = TrajectoryPlot {
        title: format!("{seq_id} person {person} {joint_name} ({})", set.method),
        panels: vec![
            Panel {
                label: "y (mm)".into(),
                pred: yp,
                gt: yg,
            },
            Panel {
                label: "z (mm)".into(),
                pred: zp,
                gt: zg,
            },
        ],
        occluded: est
            .frames
            .iter()
            .map(|f| f.visibility < cfg.refine.visibility_threshold)
            .collect(),
    };
    let dir = out.unwrap_or(&cfg.paths.reports);
    create_dir(dir)?;
    let path = dir.join(format!("plot_{seq_id}_p{person}_{joint_name}.svg"));
    std::fs::write(&path, render_svg(&plot)).map_err(|e| io_err(&path, e))?;
    Ok(vec![path])
}
