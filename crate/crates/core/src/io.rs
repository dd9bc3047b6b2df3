//! JSON-lines readers and writers for sequences and per-frame estimates,
//! and file helpers for model checkpoints.
//!
//! Writing, reading and writing again produces identical bytes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::EnergyBreakdown;
use crate::skeleton::{
    CameraIntrinsics, PersonTrack, Pose2D, Pose3D, Sequence, Skeleton, Units, Vec3,
};
use crate::tpn::TpnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SequenceMeta {
    seq_id: String,
    fps: f64,
    num_frames: usize,
    camera: CameraIntrinsics,
    joints: Vec<String>,
    root_index: usize,
    edges: Vec<(usize, usize)>,
}

fn is_pixels(u: &Units) -> bool {
    *u == Units::Pixels
}

fn pixels() -> Units {
    Units::Pixels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PersonRecord {
    id: u32,
    detected: bool,
    kp2d: Option<Vec<[f64; 3]>>,
    #[serde(default = "pixels", skip_serializing_if = "is_pixels")]
    units: Units,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_loc: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_rel: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    persons: Vec<PersonRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SequenceLine {
    SequenceMeta(SequenceMeta),
    Frame(FrameRecord),
}

fn format_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

pub fn write_sequence<W: Write>(seq: &Sequence, mut w: W) -> Result<()> {
    seq.validate()?;
    let meta = SequenceLine::SequenceMeta(SequenceMeta {
        seq_id: seq.seq_id.clone(),
        fps: seq.fps,
        num_frames: seq.num_frames,
        camera: seq.camera,
        joints: seq.skeleton.joint_names.clone(),
        root_index: seq.skeleton.root_index,
        edges: seq.skeleton.edges.clone(),
    });
    serde_json::to_writer(&mut w, &meta)?;
    w.write_all(b"\n")?;
    for t in 0..seq.num_frames {
        let persons = seq
            .tracks
            .iter()
            .map(|tr| {
                let det = tr.detections[t].as_ref();
                let gt = tr.gt[t].as_ref();
                PersonRecord {
                    id: tr.person_id,
                    detected: det.is_some_and(|d| d.detected),
                    kp2d: det.map(|d| {
                        d.coords
                            .iter()
                            .zip(&d.confidence)
                            .map(|(c, &s)| [c[0], c[1], s])
                            .collect()
                    }),
                    units: det.map_or(Units::Pixels, |d| d.units),
                    gt_loc: gt.map(|g| g.location),
                    gt_rel: gt.map(|g| g.relative.clone()),
                }
            })
            .collect();
        serde_json::to_writer(&mut w, &SequenceLine::Frame(FrameRecord { t, persons }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequence<R: BufRead>(r: R) -> Result<Sequence> {
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Format("empty sequence file".into()))?;
    let meta = match serde_json::from_str(&first?).map_err(|e| format_err(1, e))? {
        SequenceLine::SequenceMeta(m) => m,
        SequenceLine::Frame(_) => {
            return Err(format_err(1, "expected a sequence_meta record first"))
        }
    };
    let skeleton = Skeleton::new(meta.joints.clone(), meta.root_index, meta.edges.clone())?;
    let j = skeleton.num_joints();
    let n = meta.num_frames;
    let mut tracks: Vec<PersonTrack> = Vec::new();
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut seen = 0usize;
    for (i, line) in lines {
        let line_no = i + 1;
        let rec = match serde_json::from_str(&line?).map_err(|e| format_err(line_no, e))? {
            SequenceLine::Frame(f) => f,
            SequenceLine::SequenceMeta(_) => {
                return Err(format_err(line_no, "duplicate sequence_meta"))
            }
        };
        if rec.t != seen {
            return Err(format_err(
                line_no,
                format!("expected frame {seen}, found {}", rec.t),
            ));
        }
        for p in rec.persons {
            let k = *index.entry(p.id).or_insert_with(|| {
                tracks.push(PersonTrack {
                    person_id: p.id,
                    detections: vec![None; n],
                    gt: vec![None; n],
                });
                tracks.len() - 1
            });
            if tracks[k].detections[rec.t].is_some() || tracks[k].gt[rec.t].is_some() {
                return Err(format_err(line_no, format!("person {} listed twice", p.id)));
            }
            if let Some(kp) = p.kp2d {
                if kp.len() != j {
                    return Err(format_err(
                        line_no,
                        format!("person {} has {} keypoints, expected {j}", p.id, kp.len()),
                    ));
                }
                let coords = kp.iter().map(|k| [k[0], k[1]]).collect();
                let conf = kp.iter().map(|k| k[2]).collect();
                let pose = Pose2D::new(coords, conf, p.detected, p.units)
                    .map_err(|e| format_err(line_no, e))?;
                tracks[k].detections[rec.t] = Some(pose);
            } else if p.detected {
                return Err(format_err(
                    line_no,
                    format!("person {} detected without keypoints", p.id),
                ));
            }
            match (p.gt_loc, p.gt_rel) {
                (Some(location), Some(relative)) => {
                    if relative.len() != j {
                        return Err(format_err(line_no, "ground-truth joint count mismatch"));
                    }
                    tracks[k].gt[rec.t] = Some(Pose3D { location, relative });
                }
                (None, None) => {}
                _ => {
                    return Err(format_err(
                        line_no,
                        "gt_loc and gt_rel must appear together",
                    ))
                }
            }
        }
        seen += 1;
        if seen > n {
            return Err(format_err(line_no, "more frames than num_frames"));
        }
    }
    if seen != n {
        return Err(Error::Format(format!("expected {n} frames, found {seen}")));
    }
    let seq = Sequence {
        seq_id: meta.seq_id,
        fps: meta.fps,
        camera: meta.camera,
        skeleton,
        tracks,
        num_frames: n,
    };
    seq.validate()?;
    Ok(seq)
}

/// One frame of a person's 3D estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub t: usize,
    pub detected: bool,
    pub visibility: f64,
    pub pose: Pose3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEnergy {
    pub iterations: usize,
    pub energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub seq_id: String,
    pub person: u32,
    pub frames: Vec<FrameEstimate>,
    pub energy: Option<TrackEnergy>,
}

impl TrackEstimate {
    pub fn detected(&self) -> Vec<bool> {
        self.frames.iter().map(|f| f.detected).collect()
    }

    pub fn visibility(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.visibility).collect()
    }

    /// `T x (3 + 3(J-1))` rows, location first.
    pub fn rows(&self, root_index: usize) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| {
                f.pose
                    .location
                    .iter()
                    .copied()
                    .chain(f.pose.relative_flat(root_index))
                    .collect()
            })
            .collect()
    }
}

/// Estimates of one method for a set of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub method: String,
    pub num_joints: usize,
    pub root_index: usize,
    pub tracks: Vec<TrackEstimate>,
}

impl PredictionSet {
    pub fn track(&self, seq_id: &str, person: u32) -> Option<&TrackEstimate> {
        self.tracks
            .iter()
            .find(|t| t.seq_id == seq_id && t.person == person)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionsMeta {
    method: String,
    num_joints: usize,
    root_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoseRecord {
    seq_id: String,
    person: u32,
    t: usize,
    detected: bool,
    visibility: f64,
    loc: Vec3,
    rel: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnergyRecord {
    seq_id: String,
    person: u32,
    iterations: usize,
    energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum PredictionLine {
    PredictionsMeta(PredictionsMeta),
    Pose(PoseRecord),
    TrackEnergy(EnergyRecord),
}

pub fn write_predictions<W: Write>(set: &PredictionSet, mut w: W) -> Result<()> {
    let mut put = |line: &PredictionLine| -> Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    put(&PredictionLine::PredictionsMeta(PredictionsMeta {
        method: set.method.clone(),
        num_joints: set.num_joints,
        root_index: set.root_index,
    }))?;
    for tr in &set.tracks {
        for f in &tr.frames {
            if f.pose.relative.len() != set.num_joints {
                return Err(Error::shape(format!(
                    "{} person {} frame {} has {} joints, expected {}",
                    tr.seq_id,
                    tr.person,
                    f.t,
                    f.pose.relative.len(),
                    set.num_joints
                )));
            }
            put(&PredictionLine::Pose(PoseRecord {
                seq_id: tr.seq_id.clone(),
                person: tr.person,
                t: f.t,
                detected: f.detected,
                visibility: f.visibility,
                loc: f.pose.location,
                rel: f.pose.relative.clone(),
            }))?;
        }
        if let Some(e) = &tr.energy {
            put(&PredictionLine::TrackEnergy(EnergyRecord {
                seq_id: tr.seq_id.clone(),
                person: tr.person,
                iterations: e.iterations,
                energy: e.energy,
            }))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<PredictionSet> {
    let mut set: Option<PredictionSet> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let rec: PredictionLine =
            serde_json::from_str(&line).map_err(|e| format_err(line_no, e))?;
        let Some(s) = set.as_mut() else {
            let PredictionLine::PredictionsMeta(m) = rec else {
                return Err(format_err(
                    line_no,
                    "expected a predictions_meta record first",
                ));
            };
            set = Some(PredictionSet {
                method: m.method,
                num_joints: m.num_joints,
                root_index: m.root_index,
                tracks: Vec::new(),
            });
            continue;
        };
        match rec {
            PredictionLine::PredictionsMeta(_) => {
                return Err(format_err(line_no, "duplicate predictions_meta"))
            }
            PredictionLine::Pose(p) => {
                if p.rel.len() != s.num_joints {
                    return Err(format_err(
                        line_no,
                        format!("{} joints, expected {}", p.rel.len(), s.num_joints),
                    ));
                }
                if !(0.0..=1.0).contains(&p.visibility) {
                    return Err(format_err(line_no, "visibility outside [0, 1]"));
                }
                let same = s.tracks.last().is_some_and(|tr| {
                    tr.seq_id == p.seq_id && tr.person == p.person && tr.energy.is_none()
                });
                if !same {
                    if s.track(&p.seq_id, p.person).is_some() {
                        return Err(format_err(
                            line_no,
                            format!(
                                "records of {} person {} are not contiguous",
                                p.seq_id, p.person
                            ),
                        ));
                    }
                    s.tracks.push(TrackEstimate {
                        seq_id: p.seq_id.clone(),
                        person: p.person,
                        frames: Vec::new(),
                        energy: None,
                    });
                }
                let tr = s.tracks.last_mut().expect("track pushed above");
                if p.t != tr.frames.len() {
                    return Err(format_err(
                        line_no,
                        format!("expected frame {}, found {}", tr.frames.len(), p.t),
                    ));
                }
                tr.frames.push(FrameEstimate {
                    t: p.t,
                    detected: p.detected,
                    visibility: p.visibility,
                    pose: Pose3D {
                        location: p.loc,
                        relative: p.rel,
                    },
                });
            }
            PredictionLine::TrackEnergy(e) => {
                let tr = s
                    .tracks
                    .last_mut()
                    .filter(|tr| {
                        tr.seq_id == e.seq_id && tr.person == e.person && tr.energy.is_none()
                    })
                    .ok_or_else(|| {
                        format_err(line_no, "energy record does not follow its track")
                    })?;
                tr.energy = Some(TrackEnergy {
                    iterations: e.iterations,
                    energy: e.energy,
                });
            }
        }
    }
    set.ok_or_else(|| Error::Format("empty predictions file".into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn save_sequence(seq: &Sequence, path: &Path) -> Result<()> {
    write_sequence(seq, create(path)?)
}

pub fn load_sequence(path: &Path) -> Result<Sequence> {
    read_sequence(open(path)?)
}

pub fn save_predictions(set: &PredictionSet, path: &Path) -> Result<()> {
    write_predictions(set, create(path)?)
}

pub fn load_predictions(path: &Path) -> Result<PredictionSet> {
    read_predictions(open(path)?)
}

pub fn save_model(model: &TpnModel, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &model.to_json())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TpnModel> {
    let v: serde_json::Value = serde_json::from_reader(open(path)?)?;
    TpnModel::from_json(&v)
}
