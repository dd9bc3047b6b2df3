//! Pose error metrics and their per-sequence aggregation.
//!
//! Sequence-level values are computed over every evaluated pose of every
//! person in the sequence, then averaged over sequences without weighting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{norm3, sub3, Pose3D, Vec3};

pub const PCK_THRESHOLD_MM: f64 = 150.0;

fn check_pairs<A, B>(pred: &[A], gt: &[B]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} predictions but {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    Ok(())
}

fn check_joints(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<()> {
    check_pairs(pred, gt)?;
    if pred
        .iter()
        .zip(gt)
        .any(|(a, b)| a.len() != b.len() || a.is_empty())
    {
        return Err(Error::shape("pose joint counts differ"));
    }
    Ok(())
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm3(sub3(*a, *b))
}

fn scale3(s: f64, a: &Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

/// Mean root position error.
pub fn mrpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pairs(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| dist(a, b)).sum::<f64>() / pred.len() as f64)
}

/// Mean over poses of the mean joint error of root-relative poses. The
/// root joint is part of the average.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    check_joints(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| dist(a, b)).sum::<f64>() / p.len() as f64)
        .sum();
    Ok(total / pred.len() as f64)
}

/// Percentage of joints with error strictly below `threshold`.
pub fn pck3d(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], threshold: f64) -> Result<f64> {
    check_joints(pred, gt)?;
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            total += 1;
            if dist(a, b) < threshold {
                hit += 1;
            }
        }
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// Least-squares `s` minimizing `sum |s pred - gt|^2`.
pub fn optimal_scale(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..3 {
            num += p[k] * g[k];
            den += p[k] * p[k];
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid(
            "predictions are all zero; scale is undefined",
        ));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledError {
    pub scale: f64,
    /// Mean Euclidean error after scaling.
    pub mean_error: f64,
    /// Mean squared error after scaling over the fitted points.
    pub squared_objective: f64,
}

pub fn n_mrpe(pred: &[Vec3], gt: &[Vec3]) -> Result<ScaledError> {
    let s = optimal_scale(pred, gt)?;
    let scaled: Vec<Vec3> = pred.iter().map(|p| scale3(s, p)).collect();
    let squared = scaled
        .iter()
        .zip(gt)
        .map(|(a, b)| dist(a, b).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(ScaledError {
        scale: s,
        mean_error: mrpe(&scaled, gt)?,
        squared_objective: squared,
    })
}

/// MPJPE after a scale fit on the absolute joint clouds of all poses.
pub fn n_mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<ScaledError> {
    check_pairs(pred, gt)?;
    let pa: Vec<Vec3> = pred.iter().flat_map(|p| p.absolute()).collect();
    let ga: Vec<Vec3> = gt.iter().flat_map(|p| p.absolute()).collect();
    if pa.len() != ga.len() {
        return Err(Error::shape("pose joint counts differ"));
    }
    let s = optimal_scale(&pa, &ga)?;
    let squared = pa
        .iter()
        .zip(&ga)
        .map(|(a, b)| dist(&scale3(s, a), b).powi(2))
        .sum::<f64>()
        / pa.len() as f64;
    let rel: Vec<Vec<Vec3>> = pred
        .iter()
        .map(|p| p.relative.iter().map(|r| scale3(s, r)).collect())
        .collect();
    let gt_rel: Vec<Vec<Vec3>> = gt.iter().map(|p| p.relative.clone()).collect();
    Ok(ScaledError {
        scale: s,
        mean_error: mpjpe(&rel, &gt_rel)?,
        squared_objective: squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Visible,
    Occluded,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::Visible, Subset::Occluded];

    pub fn name(&self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Visible => "visible",
            Subset::Occluded => "occluded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown subset {s:?}")))
    }
}

/// Frames selected by `subset`; visible means `v >= threshold`.
pub fn subset_filter(v: &[f64], subset: Subset, threshold: f64) -> Vec<bool> {
    v.iter()
        .map(|&x| match subset {
            Subset::All => true,
            Subset::Visible => x >= threshold,
            Subset::Occluded => x < threshold,
        })
        .collect()
}

/// Metric values of one sequence (or their cross-sequence means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mrpe: f64,
    pub mpjpe: f64,
    pub pck: f64,
    pub n_mrpe: f64,
    pub n_mpjpe: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 5] = ["mrpe", "mpjpe", "pck", "n_mrpe", "n_mpjpe"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mrpe" => Some(self.mrpe),
            "mpjpe" => Some(self.mpjpe),
            "pck" => Some(self.pck),
            "n_mrpe" => Some(self.n_mrpe),
            "n_mpjpe" => Some(self.n_mpjpe),
            _ => None,
        }
    }

    pub fn as_pairs(&self) -> [(&'static str, f64); 5] {
        [
            ("mrpe", self.mrpe),
            ("mpjpe", self.mpjpe),
            ("pck", self.pck),
            ("n_mrpe", self.n_mrpe),
            ("n_mpjpe", self.n_mpjpe),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub seq_id: String,
    pub count: usize,
    pub values: MetricValues,
}

/// All metrics over paired poses of one sequence.
pub fn evaluate_poses(
    seq_id: &str,
    pred: &[Pose3D],
    gt: &[Pose3D],
    pck_threshold: f64,
) -> Result<SequenceMetrics> {
    check_pairs(pred, gt)?;
    let roots_p: Vec<Vec3> = pred.iter().map(|p| p.location).collect();
    let roots_g: Vec<Vec3> = gt.iter().map(|p| p.location).collect();
    let rel_p: Vec<Vec<Vec3>> = pred.iter().map(|p| p.relative.clone()).collect();
    let rel_g: Vec<Vec<Vec3>> = gt.iter().map(|p| p.relative.clone()).collect();
    Ok(SequenceMetrics {
        seq_id: seq_id.to_string(),
        count: pred.len(),
        values: MetricValues {
            mrpe: mrpe(&roots_p, &roots_g)?,
            mpjpe: mpjpe(&rel_p, &rel_g)?,
            pck: pck3d(&rel_p, &rel_g, pck_threshold)?,
            n_mrpe: n_mrpe(&roots_p, &roots_g)?.mean_error,
            n_mpjpe: n_mpjpe(pred, gt)?.mean_error,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subset: Subset,
    pub sequences: Vec<SequenceMetrics>,
    /// Unweighted mean over sequences.
    pub mean: MetricValues,
    pub count: usize,
}

/// Averages per-sequence values. Fails on an empty list.
pub fn aggregate(subset: Subset, sequences: Vec<SequenceMetrics>) -> Result<MetricsReport> {
    if sequences.is_empty() {
        return Err(Error::invalid(format!(
            "no sequence has {} poses to evaluate",
            subset.name()
        )));
    }
    let n = sequences.len() as f64;
    let mean_of = |f: fn(&MetricValues) -> f64| {
        let mut xs: Vec<f64> = sequences.iter().map(|s| f(&s.values)).collect();
        xs.sort_by(f64::total_cmp);
        xs.iter().sum::<f64>() / n
    };
    let mean = MetricValues {
        mrpe: mean_of(|v| v.mrpe),
        mpjpe: mean_of(|v| v.mpjpe),
        pck: mean_of(|v| v.pck),
        n_mrpe: mean_of(|v| v.n_mrpe),
        n_mpjpe: mean_of(|v| v.n_mpjpe),
    };
    let count = sequences.iter().map(|s| s.count).sum();
    Ok(MetricsReport {
        subset,
        sequences,
        mean,
        count,
    })
}
