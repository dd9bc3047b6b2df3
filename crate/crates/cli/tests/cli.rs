use std::path::{Path, PathBuf};
use std::process::Command;

use tempose_cli::report::read_comparison;
use tempose_cli::{run_args, CliError};
use tempose_core::io::{
    load_predictions, load_sequence, save_predictions, write_predictions, FrameEstimate,
    PredictionSet, TrackEstimate,
};
use tempose_core::metrics::{MetricValues, Subset};
use tempose_core::refine::visibility_scores;
use tempose_core::Sequence;

const TINY: &str = r#"{
  "splits": {"train": 2, "val": 1, "test": 2},
  "synth": {"num_frames": 60, "num_persons": 2},
  "tpn": {"channels": 8},
  "train": {"epochs": 2},
  "refine": {"iterations": 40}
}"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), TINY).unwrap();
        let paths = format!(
            r#"{{"paths": {{"corpus": "{0}/corpus", "model": "{0}/model", "predictions": "{0}/pred", "reports": "{0}/reports"}}}}"#,
            dir.path().display()
        );
        let mut cfg: serde_json::Value = serde_json::from_str(TINY).unwrap();
        let p: serde_json::Value = serde_json::from_str(&paths).unwrap();
        cfg["paths"] = p["paths"].clone();
        std::fs::write(dir.path().join("config.json"), cfg.to_string()).unwrap();
        Run { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.path("config.json");
        let mut full = vec!["tempose", "--config", cfg.to_str().unwrap()];
        full.extend_from_slice(args);
        run_args(full)
    }

    fn ok(&self, args: &[&str]) -> Vec<PathBuf> {
        self.cmd(args).unwrap_or_else(|e| panic!("{args:?}: {e}"))
    }

    fn through_predict(&self) {
        self.ok(&["generate"]);
        self.ok(&["train"]);
        self.ok(&["predict"]);
    }

    fn test_sequences(&self) -> Vec<Sequence> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(self.path("corpus/test"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files.iter().map(|f| load_sequence(f).unwrap()).collect()
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn frame_count(seqs: &[Sequence]) -> usize {
    seqs.iter().flat_map(|s| &s.tracks).map(|t| t.len()).sum()
}

fn ground_truth_set(seqs: &[Sequence]) -> PredictionSet {
    let mut tracks = Vec::new();
    for s in seqs {
        for tr in &s.tracks {
            let vis = visibility_scores(tr, 5);
            tracks.push(TrackEstimate {
                seq_id: s.seq_id.clone(),
                person: tr.person_id,
                frames: (0..tr.len())
                    .map(|t| FrameEstimate {
                        t,
                        detected: tr.is_detected(t),
                        visibility: vis.values[t],
                        pose: tr.gt[t].clone().unwrap(),
                    })
                    .collect(),
                energy: None,
            });
        }
    }
    PredictionSet {
        method: "ground_truth".into(),
        num_joints: seqs[0].skeleton.num_joints(),
        root_index: seqs[0].skeleton.root_index,
        tracks,
    }
}

#[test]
fn generate_writes_default_split_sizes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let files = run_args(["tempose", "generate", "--out", out.to_str().unwrap()]).unwrap();
    let count = |split: &str| std::fs::read_dir(out.join(split)).unwrap().count();
    assert_eq!((count("train"), count("val"), count("test")), (20, 5, 10));
    assert_eq!(files.len(), 37);
    let manifest: serde_json::Value =
        serde_json::from_slice(&bytes(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["train"].as_array().unwrap().len(), 20);
    assert_eq!(manifest["test"][3]["seed"], 2003);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn generate_is_deterministic_per_seed() {
    let a = Run::new();
    let b = Run::new();
    a.ok(&["generate"]);
    b.ok(&["generate"]);
    for rel in [
        "corpus/train/train_001.jsonl",
        "corpus/test/test_000.jsonl",
        "corpus/manifest.json",
    ] {
        assert!(bytes(&a.path(rel)) == bytes(&b.path(rel)), "{rel} differs");
    }
    let first = bytes(&a.path("corpus/test/test_000.jsonl"));
    a.ok(&["generate"]);
    assert!(bytes(&a.path("corpus/test/test_000.jsonl")) == first);
    b.ok(&["--seed", "9", "generate"]);
    assert!(bytes(&b.path("corpus/test/test_000.jsonl")) != first);
}

#[test]
fn generate_single_frame_sequences() {
    let r = Run::new();
    let cfg = r.path("config.json");
    let mut v: serde_json::Value = serde_json::from_slice(&bytes(&cfg)).unwrap();
    v["synth"]["num_frames"] = 1.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    r.ok(&["generate"]);
    let seqs = r.test_sequences();
    assert_eq!(seqs.len(), 2);
    assert!(seqs
        .iter()
        .all(|s| s.num_frames == 1 && s.tracks.iter().all(|t| t.len() == 1)));
}

#[test]
fn train_logs_one_row_per_epoch_and_rejects_resume() {
    let r = Run::new();
    r.ok(&["generate"]);
    let err = r.cmd(&["train", "--resume"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("not supported"));
    r.ok(&["train"]);
    let log = std::fs::read_to_string(r.path("model/train_loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,learning_rate,train_loss,val_loss");
    assert_eq!(lines.len() - 1, 2);
}

#[test]
fn train_without_corpus_is_a_validation_error() {
    let r = Run::new();
    let err = r.cmd(&["train"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn predict_covers_every_frame_and_is_deterministic() {
    let r = Run::new();
    r.through_predict();
    let path = r.path("pred/tpn.jsonl");
    let set = load_predictions(&path).unwrap();
    let seqs = r.test_sequences();
    let records: usize = set.tracks.iter().map(|t| t.frames.len()).sum();
    assert_eq!(records, frame_count(&seqs));

    let first = bytes(&path);
    r.ok(&["predict"]);
    assert!(bytes(&path) == first);
    let mut again = Vec::new();
    write_predictions(&set, &mut again).unwrap();
    assert!(again == first);
}

#[test]
fn refine_methods_keep_record_counts_and_round_trip() {
    let r = Run::new();
    r.through_predict();
    let n = frame_count(&r.test_sequences());
    for (method, file) in [
        ("energy", "refined.jsonl"),
        ("interpolation", "interpolation.jsonl"),
        ("one-euro", "one_euro.jsonl"),
    ] {
        r.ok(&["refine", "--method", method]);
        let path = r.path("pred").join(file);
        let first = bytes(&path);
        let set = load_predictions(&path).unwrap();
        assert_eq!(set.tracks.iter().map(|t| t.frames.len()).sum::<usize>(), n);
        assert_eq!(
            set.tracks.iter().all(|t| t.energy.is_some()),
            method == "energy"
        );
        let mut again = Vec::new();
        write_predictions(&set, &mut again).unwrap();
        assert!(again == first);
        r.ok(&["refine", "--method", method]);
        assert!(bytes(&path) == first);
    }
    assert_eq!(
        r.cmd(&["refine", "--method", "kalman"])
            .unwrap_err()
            .exit_code(),
        2
    );
}

#[test]
fn ground_truth_against_itself_is_perfect() {
    let r = Run::new();
    r.ok(&["generate"]);
    let seqs = r.test_sequences();
    let gt_path = r.path("gt.jsonl");
    save_predictions(&ground_truth_set(&seqs), &gt_path).unwrap();
    r.ok(&["evaluate", "--predictions", gt_path.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_slice(&bytes(&r.path("reports/ground_truth/report.json"))).unwrap();
    for sub in report["subsets"].as_array().unwrap() {
        let mean: MetricValues = serde_json::from_value(sub["mean"].clone()).unwrap();
        assert_eq!(
            (mean.mrpe, mean.mpjpe, mean.n_mrpe, mean.n_mpjpe),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(mean.pck, 100.0);
    }
}

#[test]
fn evaluate_partitions_poses_and_compares_methods() {
    let r = Run::new();
    r.through_predict();
    r.ok(&["refine", "--method", "interpolation"]);
    r.ok(&[
        "evaluate",
        "--predictions",
        r.path("pred/tpn.jsonl").to_str().unwrap(),
        r.path("pred/interpolation.jsonl").to_str().unwrap(),
    ]);
    let agg = std::fs::read_to_string(r.path("reports/tpn/aggregate.csv")).unwrap();
    assert!(agg.starts_with("sequence,subset,metric,value\n"));
    let poses = |subset: &str| -> f64 {
        agg.lines()
            .find(|l| l.starts_with(&format!("mean,{subset},poses,")))
            .map_or(0.0, |l| l.rsplit(',').next().unwrap().parse().unwrap())
    };
    assert_eq!(poses("visible") + poses("occluded"), poses("all"));
    assert_eq!(poses("all") as usize, frame_count(&r.test_sequences()));

    let per_seq = std::fs::read_to_string(r.path("reports/tpn/per_sequence.csv")).unwrap();
    assert!(per_seq.lines().any(|l| l.starts_with("test_001,all,mrpe,")));

    let rows = std::fs::read_to_string(r.path("reports/comparison.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * MetricValues::NAMES.len());
    let table = read_comparison(&r.path("reports/comparison.csv")).unwrap();
    assert!(table
        .iter()
        .any(|(m, k, s, _)| m == "interpolation" && k == "mrpe" && *s == Subset::All));

    let one = r.cmd(&[
        "evaluate",
        "--predictions",
        r.path("pred/tpn.jsonl").to_str().unwrap(),
        "--subset",
        "nope",
    ]);
    assert_eq!(one.unwrap_err().exit_code(), 2);
}

#[test]
fn compare_writes_all_four_methods() {
    let r = Run::new();
    r.through_predict();
    r.ok(&["compare"]);
    let table = read_comparison(&r.path("reports/comparison.csv")).unwrap();
    for m in ["tpn", "interpolation", "one_euro", "refined"] {
        assert!(
            table.iter().any(|(x, k, _, _)| x == m && k == "mrpe"),
            "{m}"
        );
    }
}

fn svg_paths_per_panel(svg: &str) -> Vec<(usize, usize)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("panel"))
        .map(|g| {
            let paths = g.children().filter(|c| c.has_tag_name("path")).count();
            let shaded = g
                .children()
                .filter(|c| c.attribute("class") == Some("occluded"))
                .count();
            (paths, shaded)
        })
        .collect()
}

#[test]
fn plot_writes_two_panel_svg() {
    let r = Run::new();
    r.through_predict();
    let files = r.ok(&["plot", "--seq", "test_000", "--person", "0"]);
    assert!(files[0].ends_with("plot_test_000_p0_hip.svg"));
    let panels = svg_paths_per_panel(&std::fs::read_to_string(&files[0]).unwrap());
    assert_eq!(panels.len(), 2);
    assert!(panels.iter().all(|&(paths, _)| paths >= 2));

    let files = r.ok(&["plot", "--seq", "test_001", "--person", "1", "--joint", "3"]);
    roxmltree::Document::parse(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();

    assert_eq!(
        r.cmd(&["plot", "--seq", "nope", "--person", "0"])
            .unwrap_err()
            .exit_code(),
        2
    );
    assert_eq!(
        r.cmd(&["plot", "--seq", "test_000", "--person", "9"])
            .unwrap_err()
            .exit_code(),
        2
    );
}

#[test]
fn plot_without_occlusion_has_no_shading() {
    let r = Run::new();
    r.ok(&["generate"]);
    let seqs = r.test_sequences();
    let mut set = ground_truth_set(&seqs);
    for t in &mut set.tracks {
        for f in &mut t.frames {
            f.visibility = 1.0;
        }
    }
    let p = r.path("gt.jsonl");
    save_predictions(&set, &p).unwrap();
    let files = r.ok(&[
        "plot",
        "--predictions",
        p.to_str().unwrap(),
        "--seq",
        "test_000",
        "--person",
        "0",
    ]);
    let panels = svg_paths_per_panel(&std::fs::read_to_string(&files[0]).unwrap());
    assert!(panels.iter().all(|&(_, shaded)| shaded == 0));
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tempose");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none");
    let status = |args: &[&str]| Command::new(exe).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["frobnicate"]), Some(2));
    assert_eq!(
        status(&["--config", missing.to_str().unwrap(), "generate"]),
        Some(2)
    );
    assert_eq!(
        status(&["predict", "--sequences", missing.to_str().unwrap()]),
        Some(2)
    );
    let out = dir.path().join("c");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    assert_eq!(
        status(&[
            "--config",
            cfg.to_str().unwrap(),
            "generate",
            "--out",
            out.to_str().unwrap()
        ]),
        Some(0)
    );
    // A file where the output directory should be.
    let blocked = dir.path().join("blocked");
    std::fs::write(&blocked, "x").unwrap();
    assert_eq!(
        status(&[
            "--config",
            cfg.to_str().unwrap(),
            "generate",
            "--out",
            blocked.to_str().unwrap()
        ]),
        Some(1)
    );
}
