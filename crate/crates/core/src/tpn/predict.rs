use super::layers::Act;
use super::model::TpnModel;
use crate::error::{Error, Result};
use crate::skeleton::{normalize_keypoints, CameraIntrinsics, PersonTrack, Pose3D, Units};

/// Per-frame network estimate for one person.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPrediction {
    pub pose: Pose3D,
    pub had_detection: bool,
}

/// Linear interpolation over missing frames, holding the nearest value at
/// the sequence ends. All-missing input becomes zeros of width `dim`.
pub fn fill_missing(frames: &[Option<Vec<f64>>], dim: usize) -> Vec<Vec<f64>> {
    let present: Vec<usize> = (0..frames.len()).filter(|&t| frames[t].is_some()).collect();
    if present.is_empty() {
        return vec![vec![0.0; dim]; frames.len()];
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut next = 0usize; // index into `present` of the first known frame >= t
    for t in 0..frames.len() {
        while next < present.len() && present[next] < t {
            next += 1;
        }
        if let Some(f) = &frames[t] {
            out.push(f.clone());
            continue;
        }
        let after = present.get(next).copied();
        let before = next.checked_sub(1).map(|i| present[i]);
        let v = match (before, after) {
            (Some(a), Some(b)) => {
                let (fa, fb) = (frames[a].as_ref().unwrap(), frames[b].as_ref().unwrap());
                let s = (t - a) as f64 / (b - a) as f64;
                fa.iter().zip(fb).map(|(x, y)| x + s * (y - x)).collect()
            }
            (Some(a), None) => frames[a].clone().unwrap(),
            (None, Some(b)) => frames[b].clone().unwrap(),
            (None, None) => unreachable!("at least one frame is present"),
        };
        out.push(v);
    }
    out
}

/// Camera-normalized, gap-filled 2D input (`T x 2J`) and per-frame
/// detection flags.
pub fn normalized_track(
    track: &PersonTrack,
    cam: &CameraIntrinsics,
    num_joints: usize,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut frames = Vec::with_capacity(track.len());
    let mut flags = Vec::with_capacity(track.len());
    for det in &track.detections {
        match det {
            Some(d) if d.detected => {
                if d.num_joints() != num_joints {
                    return Err(Error::shape(format!(
                        "detection has {} joints, model expects {num_joints}",
                        d.num_joints()
                    )));
                }
                let n = match d.units {
                    Units::Pixels => normalize_keypoints(d, cam)?,
                    Units::Normalized => d.clone(),
                };
                frames.push(Some(
                    n.coords.iter().flat_map(|c| c.iter().copied()).collect(),
                ));
                flags.push(true);
            }
            _ => {
                frames.push(None);
                flags.push(false);
            }
        }
    }
    Ok((fill_missing(&frames, 2 * num_joints), flags))
}

/// Eval-mode estimates (`T x output_dim`, mm) for every frame of a filled
/// normalized input, padding both ends by edge replication.
pub fn predict_normalized(inputs: &[Vec<f64>], model: &TpnModel) -> Result<Vec<Vec<f64>>> {
    let t = inputs.len();
    if t == 0 {
        return Ok(Vec::new());
    }
    let w = model.config.half_window;
    let dim = model.config.input_dim();
    let len = t + 2 * w;
    let mut x = Act::zeros(1, dim, len);
    for i in 0..len {
        let src = &inputs[i.saturating_sub(w).min(t - 1)];
        if src.len() != dim {
            return Err(Error::shape(format!(
                "frame has {} values, expected {dim}",
                src.len()
            )));
        }
        for (c, &v) in src.iter().enumerate() {
            x.data[c * len + i] = v;
        }
    }
    let y = model.forward(&x)?;
    Ok((0..t)
        .map(|i| (0..y.c).map(|c| y.data[c * y.t + i]).collect())
        .collect())
}

/// Estimates `Pose3D` on every frame of a track, including undetected ones.
pub fn predict_track(
    track: &PersonTrack,
    cam: &CameraIntrinsics,
    model: &TpnModel,
) -> Result<Vec<TrackPrediction>> {
    let (inputs, flags) = normalized_track(track, cam, model.config.num_joints)?;
    let out = predict_normalized(&inputs, model)?;
    let root = model.config.root_index;
    Ok(out
        .iter()
        .zip(flags)
        .map(|(o, had_detection)| TrackPrediction {
            pose: Pose3D::from_parts([o[0], o[1], o[2]], &o[3..], root),
            had_detection,
        })
        .collect())
}
