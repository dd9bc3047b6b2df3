//! Whole-corpus steps: network estimates, refinement, baselines and
//! evaluation against ground truth.

use crate::baselines::{linear_interpolate, one_euro_trajectory, OneEuroParams};
use crate::error::{Error, Result};
use crate::io::{FrameEstimate, PredictionSet, TrackEnergy, TrackEstimate};
use crate::metrics::{aggregate, evaluate_poses, subset_filter, MetricsReport, Subset};
use crate::refine::{refine_track, visibility_scores, RefineConfig, VisibilityTrace};
use crate::skeleton::{Pose3D, Sequence};
use crate::tpn::{predict_track, NormStats, TpnModel};

pub const METHOD_TPN: &str = "tpn";
pub const METHOD_INTERPOLATION: &str = "interpolation";
pub const METHOD_ONE_EURO: &str = "one_euro";
pub const METHOD_REFINED: &str = "refined";

/// Network estimates for every person and frame, with visibility scores.
pub fn predict_sequences(
    seqs: &[Sequence],
    model: &TpnModel,
    median_window: usize,
) -> Result<PredictionSet> {
    let cfg = &model.config;
    let mut tracks = Vec::new();
    for seq in seqs {
        if seq.skeleton.num_joints() != cfg.num_joints || seq.skeleton.root_index != cfg.root_index
        {
            return Err(Error::shape(format!(
                "sequence {} has {} joints (root {}), model expects {} (root {})",
                seq.seq_id,
                seq.skeleton.num_joints(),
                seq.skeleton.root_index,
                cfg.num_joints,
                cfg.root_index
            )));
        }
        for tr in &seq.tracks {
            let preds = predict_track(tr, &seq.camera, model)?;
            let vis = visibility_scores(tr, median_window);
            let frames = preds
                .into_iter()
                .enumerate()
                .map(|(t, p)| FrameEstimate {
                    t,
                    detected: p.had_detection,
                    visibility: vis.values[t],
                    pose: p.pose,
                })
                .collect();
            tracks.push(TrackEstimate {
                seq_id: seq.seq_id.clone(),
                person: tr.person_id,
                frames,
                energy: None,
            });
        }
    }
    Ok(PredictionSet {
        method: METHOD_TPN.into(),
        num_joints: cfg.num_joints,
        root_index: cfg.root_index,
        tracks,
    })
}

fn with_rows(
    set: &PredictionSet,
    method: &str,
    mut f: impl FnMut(&TrackEstimate, Vec<Vec<f64>>) -> Result<(Vec<Vec<f64>>, Option<TrackEnergy>)>,
) -> Result<PredictionSet> {
    let root = set.root_index;
    let mut tracks = Vec::with_capacity(set.tracks.len());
    for tr in &set.tracks {
        let (rows, energy) = f(tr, tr.rows(root))?;
        let frames = tr
            .frames
            .iter()
            .zip(rows)
            .map(|(fr, r)| FrameEstimate {
                pose: Pose3D::from_parts([r[0], r[1], r[2]], &r[3..], root),
                ..fr.clone()
            })
            .collect();
        tracks.push(TrackEstimate {
            seq_id: tr.seq_id.clone(),
            person: tr.person,
            frames,
            energy,
        });
    }
    Ok(PredictionSet {
        method: method.into(),
        num_joints: set.num_joints,
        root_index: set.root_index,
        tracks,
    })
}

/// Refines every track. `norm` supplies the standardization of the energy.
pub fn refine_predictions(
    set: &PredictionSet,
    cfg: &RefineConfig,
    norm: &NormStats,
) -> Result<PredictionSet> {
    with_rows(set, METHOD_REFINED, |tr, rows| {
        let vis = VisibilityTrace::new(tr.visibility(), tr.detected())?;
        let res = refine_track(&rows, &vis, cfg, norm)?;
        Ok((
            res.trajectory,
            Some(TrackEnergy {
                iterations: res.iterations,
                energy: res.energy,
            }),
        ))
    })
}

fn interpolate_rows(tr: &TrackEstimate, rows: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let det = tr.detected();
    if det.iter().any(|&d| d) {
        linear_interpolate(&rows, &det)
    } else {
        Ok(rows)
    }
}

/// Linear interpolation over undetected frames. Tracks never detected keep
/// the network estimate.
pub fn interpolate_predictions(set: &PredictionSet) -> Result<PredictionSet> {
    with_rows(set, METHOD_INTERPOLATION, |tr, rows| {
        Ok((interpolate_rows(tr, rows)?, None))
    })
}

/// 1-Euro filtering of the interpolated estimates.
pub fn one_euro_predictions(
    set: &PredictionSet,
    fps: f64,
    params: &OneEuroParams,
) -> Result<PredictionSet> {
    with_rows(set, METHOD_ONE_EURO, |tr, rows| {
        Ok((
            one_euro_trajectory(&interpolate_rows(tr, rows)?, fps, params)?,
            None,
        ))
    })
}

/// Metrics of `set` against the ground truth of `seqs` on one subset.
/// Sequences with no pose in the subset are left out of the mean; `None`
/// when no sequence has one.
pub fn evaluate_predictions(
    set: &PredictionSet,
    seqs: &[Sequence],
    subset: Subset,
    visibility_threshold: f64,
    pck_threshold: f64,
) -> Result<Option<MetricsReport>> {
    let mut per_seq = Vec::new();
    for seq in seqs {
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        for tr in &seq.tracks {
            let est = set.track(&seq.seq_id, tr.person_id).ok_or_else(|| {
                Error::invalid(format!(
                    "no estimate for {} person {}",
                    seq.seq_id, tr.person_id
                ))
            })?;
            if est.frames.len() != tr.len() {
                return Err(Error::shape(format!(
                    "{} person {}: {} estimated frames, {} in sequence",
                    seq.seq_id,
                    tr.person_id,
                    est.frames.len(),
                    tr.len()
                )));
            }
            let mask = subset_filter(&est.visibility(), subset, visibility_threshold);
            for ((f, g), keep) in est.frames.iter().zip(&tr.gt).zip(mask) {
                if let (true, Some(g)) = (keep, g) {
                    if f.pose.relative.len() != g.relative.len() {
                        return Err(Error::shape(
                            "estimate and ground truth differ in joint count",
                        ));
                    }
                    pred.push(f.pose.clone());
                    gt.push(g.clone());
                }
            }
        }
        if !pred.is_empty() {
            per_seq.push(evaluate_poses(&seq.seq_id, &pred, &gt, pck_threshold)?);
        }
    }
    if per_seq.is_empty() {
        return Ok(None);
    }
    aggregate(subset, per_seq).map(Some)
}
