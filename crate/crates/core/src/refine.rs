//! Trajectory refinement by minimizing a visibility-weighted energy.
//!
//! For a trajectory `P` (location or flattened relative pose), estimate
//! `Q`, and per-frame visibility `v`:
//!
//! ```text
//! E_ref(P) = sum_t v_t min(|P_t - Q_t|^2, m)
//!          + l1 sum_t (1 - v_t) |P_t - P_{t-tau1}|^2
//!          + l2 sum_t |P_t - P_{t-tau2}|^2
//! E_total  = E_ref(loc) + l_rel E_ref(rel)
//! ```
//!
//! Energies are evaluated on trajectories standardized by the network's
//! output statistics. The clip `m` is per 3D point: a trajectory whose
//! frames hold `K` points (`3K` values) is clipped at `K m`.

use serde::{Deserialize, Serialize};

use crate::baselines::linear_interpolate;
use crate::error::{Error, Result};
use crate::skeleton::PersonTrack;
use crate::tpn::{Adam, NormStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub tau1: usize,
    pub tau2: usize,
    /// Clip on the squared prediction residual, per 3D point.
    pub clip: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_rel: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub median_window: usize,
    pub visibility_threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tau1: 20,
            tau2: 1,
            clip: 1.0,
            lambda1: 0.1,
            lambda2: 1.0,
            lambda_rel: 0.1,
            learning_rate: 1e-2,
            iterations: 500,
            median_window: 5,
            visibility_threshold: 0.1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > self.tau2 && self.tau2 >= 1) {
            return Err(Error::invalid(format!(
                "need tau1 > tau2 >= 1, got tau1={} tau2={}",
                self.tau1, self.tau2
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip must be positive"));
        }
        if self.median_window.is_multiple_of(2) {
            return Err(Error::invalid("median window must be odd"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_rel", self.lambda_rel),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Per-frame visibility in `[0, 1]` together with the detection flags it
/// was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTrace {
    pub values: Vec<f64>,
    pub detected: Vec<bool>,
}

impl VisibilityTrace {
    /// Builds a trace from raw per-frame scores, zeroing undetected frames.
    pub fn new(values: Vec<f64>, detected: Vec<bool>) -> Result<Self> {
        if values.len() != detected.len() {
            return Err(Error::shape(
                "visibility and detection flags differ in length",
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("visibility must lie in [0, 1]"));
        }
        let values = values
            .into_iter()
            .zip(&detected)
            .map(|(v, &d)| if d { v } else { 0.0 })
            .collect();
        Ok(VisibilityTrace { values, detected })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Median filter whose window shrinks symmetrically near the ends.
pub fn median_filter(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = x.len();
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|t| {
            let h = half.min(t).min(n - 1 - t);
            buf.clear();
            buf.extend_from_slice(&x[t - h..=t + h]);
            buf.sort_by(f64::total_cmp);
            buf[h]
        })
        .collect()
}

pub fn visibility_scores(track: &PersonTrack, median_window: usize) -> VisibilityTrace {
    let detected = track.detected_flags();
    let raw: Vec<f64> = track
        .detections
        .iter()
        .map(|d| match d {
            Some(d) if d.detected => d.mean_confidence(),
            _ => 0.0,
        })
        .collect();
    let values = median_filter(&raw, median_window.max(1))
        .into_iter()
        .zip(&detected)
        .map(|(v, &d)| if d { v } else { 0.0 })
        .collect();
    VisibilityTrace { values, detected }
}

fn check_lengths(a: &[Vec<f64>], b: &[Vec<f64>], v: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != v.len() {
        return Err(Error::shape(format!(
            "trajectory lengths differ: {} / {} / {}",
            a.len(),
            b.len(),
            v.len()
        )));
    }
    if a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::shape("trajectory frames differ in dimension"));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn e_pred(p: &[Vec<f64>], q: &[Vec<f64>], v: &[f64], clip: f64) -> Result<f64> {
    check_lengths(p, q, v)?;
    Ok(p.iter()
        .zip(q)
        .zip(v)
        .map(|((a, b), w)| w * sq_dist(a, b).min(clip))
        .sum())
}

pub fn e_smooth(p: &[Vec<f64>], tau: usize) -> f64 {
    (tau..p.len()).map(|t| sq_dist(&p[t], &p[t - tau])).sum()
}

fn e_smooth_weighted(p: &[Vec<f64>], tau: usize, w: impl Fn(usize) -> f64) -> f64 {
    (tau..p.len())
        .map(|t| w(t) * sq_dist(&p[t], &p[t - tau]))
        .sum()
}

/// The three weighted terms of one `E_ref`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RefTerms {
    pub pred: f64,
    pub smooth_long: f64,
    pub smooth_short: f64,
}

impl RefTerms {
    pub fn sum(&self) -> f64 {
        self.pred + self.smooth_long + self.smooth_short
    }
}

/// Clip used by [`e_ref`] for frames of `dim` values.
pub fn frame_clip(clip: f64, dim: usize) -> f64 {
    clip * (dim / 3).max(1) as f64
}

pub fn e_ref_terms(
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    v: &[f64],
    cfg: &RefineConfig,
) -> Result<RefTerms> {
    let dim = p.first().map_or(0, Vec::len);
    Ok(RefTerms {
        pred: e_pred(p, q, v, frame_clip(cfg.clip, dim))?,
        smooth_long: cfg.lambda1 * e_smooth_weighted(p, cfg.tau1, |t| 1.0 - v[t]),
        smooth_short: cfg.lambda2 * e_smooth(p, cfg.tau2),
    })
}

pub fn e_ref(p: &[Vec<f64>], q: &[Vec<f64>], v: &[f64], cfg: &RefineConfig) -> Result<f64> {
    Ok(e_ref_terms(p, q, v, cfg)?.sum())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub location: RefTerms,
    /// Relative-pose terms before multiplication by `lambda_rel`.
    pub relative: RefTerms,
    pub total: f64,
}

pub fn energy_breakdown(
    loc: &[Vec<f64>],
    rel: &[Vec<f64>],
    loc_hat: &[Vec<f64>],
    rel_hat: &[Vec<f64>],
    v: &[f64],
    cfg: &RefineConfig,
) -> Result<EnergyBreakdown> {
    let location = e_ref_terms(loc, loc_hat, v, cfg)?;
    let relative = e_ref_terms(rel, rel_hat, v, cfg)?;
    Ok(EnergyBreakdown {
        location,
        relative,
        total: location.sum() + cfg.lambda_rel * relative.sum(),
    })
}

pub fn e_total(
    loc: &[Vec<f64>],
    rel: &[Vec<f64>],
    loc_hat: &[Vec<f64>],
    rel_hat: &[Vec<f64>],
    v: &[f64],
    cfg: &RefineConfig,
) -> Result<f64> {
    Ok(energy_breakdown(loc, rel, loc_hat, rel_hat, v, cfg)?.total)
}

/// Gradient of `scale * E_ref`, accumulated into `g`.
fn accumulate_grad_ref(
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    v: &[f64],
    cfg: &RefineConfig,
    scale: f64,
    g: &mut [Vec<f64>],
) {
    let clip = frame_clip(cfg.clip, p.first().map_or(0, Vec::len));
    for t in 0..p.len() {
        if v[t] != 0.0 && sq_dist(&p[t], &q[t]) < clip {
            let c = 2.0 * scale * v[t];
            for k in 0..p[t].len() {
                g[t][k] += c * (p[t][k] - q[t][k]);
            }
        }
    }
    let mut pair = |tau: usize, w: &dyn Fn(usize) -> f64| {
        for t in tau..p.len() {
            let c = 2.0 * scale * w(t);
            if c == 0.0 {
                continue;
            }
            for k in 0..p[t].len() {
                let d = c * (p[t][k] - p[t - tau][k]);
                g[t][k] += d;
                g[t - tau][k] -= d;
            }
        }
    };
    pair(cfg.tau1, &|t| cfg.lambda1 * (1.0 - v[t]));
    pair(cfg.tau2, &|_| cfg.lambda2);
}

/// Subgradient of `E_total` with respect to the location and relative
/// trajectories. The clip term contributes nothing where the squared
/// residual is at or above the clip.
pub fn grad_e_total(
    loc: &[Vec<f64>],
    rel: &[Vec<f64>],
    loc_hat: &[Vec<f64>],
    rel_hat: &[Vec<f64>],
    v: &[f64],
    cfg: &RefineConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_lengths(loc, loc_hat, v)?;
    check_lengths(rel, rel_hat, v)?;
    let mut gl: Vec<Vec<f64>> = loc.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut gr: Vec<Vec<f64>> = rel.iter().map(|r| vec![0.0; r.len()]).collect();
    accumulate_grad_ref(loc, loc_hat, v, cfg, 1.0, &mut gl);
    accumulate_grad_ref(rel, rel_hat, v, cfg, cfg.lambda_rel, &mut gr);
    Ok((gl, gr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// Refined `T x (3 + 3(J-1))` rows in mm, location first.
    pub trajectory: Vec<Vec<f64>>,
    /// Final energy, in standardized units.
    pub energy: EnergyBreakdown,
    /// `E_total` before each update, followed by the final value.
    pub energy_history: Vec<f64>,
    pub iterations: usize,
}

fn split_rows(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    rows.iter()
        .map(|r| (r[..3].to_vec(), r[3..].to_vec()))
        .unzip()
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(|c| c.to_vec()).collect()
}

/// Refines one person's network estimates (`T x output_dim`, mm).
pub fn refine_track(
    predicted: &[Vec<f64>],
    visibility: &VisibilityTrace,
    cfg: &RefineConfig,
    norm: &NormStats,
) -> Result<RefineResult> {
    cfg.validate()?;
    let dim = norm.output_mean.len();
    if dim < 4 || norm.output_std.len() != dim {
        return Err(Error::shape(
            "normalization statistics have no relative-pose part",
        ));
    }
    if predicted.len() != visibility.len() || visibility.detected.len() != visibility.len() {
        return Err(Error::shape(format!(
            "{} predicted frames but {} visibility values",
            predicted.len(),
            visibility.len()
        )));
    }
    if let Some(r) = predicted.iter().find(|r| r.len() != dim) {
        return Err(Error::shape(format!(
            "frame has {} values, expected {dim}",
            r.len()
        )));
    }
    if predicted.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("predicted trajectory".into()));
    }
    let v = &visibility.values;
    let standardized: Vec<Vec<f64>> = predicted
        .iter()
        .map(|r| norm.standardize_output(r))
        .collect();
    let (loc_hat, rel_hat) = split_rows(&standardized);
    let init = if visibility.detected.iter().any(|&d| d) {
        linear_interpolate(&standardized, &visibility.detected)?
    } else {
        standardized.clone()
    };
    let (loc0, rel0) = split_rows(&init);
    let rel_dim = dim - 3;
    let mut loc = flatten(&loc0);
    let mut rel = flatten(&rel0);
    let mut adam = Adam::new([loc.len(), rel.len()]);
    let mut history = Vec::with_capacity(cfg.iterations + 1);

    for it in 0..=cfg.iterations {
        let l = unflatten(&loc, 3);
        let r = unflatten(&rel, rel_dim);
        let e = e_total(&l, &r, &loc_hat, &rel_hat, v, cfg)?;
        if !e.is_finite() {
            return Err(Error::NonFinite(format!(
                "refinement energy at iteration {it}"
            )));
        }
        history.push(e);
        if it == cfg.iterations {
            break;
        }
        let (gl, gr) = grad_e_total(&l, &r, &loc_hat, &rel_hat, v, cfg)?;
        adam.update(
            &mut [&mut loc, &mut rel],
            &[flatten(&gl), flatten(&gr)],
            cfg.learning_rate,
        )?;
    }

    let l = unflatten(&loc, 3);
    let r = unflatten(&rel, rel_dim);
    let energy = energy_breakdown(&l, &r, &loc_hat, &rel_hat, v, cfg)?;
    let trajectory = l
        .iter()
        .zip(&r)
        .map(|(a, b)| {
            let z: Vec<f64> = a.iter().chain(b).copied().collect();
            norm.destandardize_output(&z)
        })
        .collect();
    Ok(RefineResult {
        trajectory,
        energy,
        energy_history: history,
        iterations: cfg.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Pose2D, Units};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(x: &[f64]) -> Vec<Vec<f64>> {
        x.iter().map(|&v| vec![v]).collect()
    }

    fn small_norm(dim: usize) -> NormStats {
        NormStats {
            input_mean: vec![],
            input_std: vec![],
            output_mean: (0..dim).map(|k| 10.0 * k as f64).collect(),
            output_std: (0..dim).map(|k| 1.0 + k as f64).collect(),
        }
    }

    #[test]
    fn config_validation() {
        RefineConfig::default().validate().unwrap();
        for bad in [
            RefineConfig {
                tau1: 1,
                ..Default::default()
            },
            RefineConfig {
                tau2: 0,
                ..Default::default()
            },
            RefineConfig {
                clip: 0.0,
                ..Default::default()
            },
            RefineConfig {
                median_window: 4,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn track_with_conf(conf: &[Option<f64>]) -> PersonTrack {
        let detections = conf
            .iter()
            .map(|c| {
                c.map(|c| {
                    Pose2D::new(vec![[0.0, 0.0]; 3], vec![c; 3], true, Units::Pixels).unwrap()
                })
            })
            .collect();
        PersonTrack {
            person_id: 0,
            detections,
            gt: vec![None; conf.len()],
        }
    }

    #[test]
    fn visibility_examples() {
        let tr = track_with_conf(&[Some(0.8); 6]);
        for v in visibility_scores(&tr, 5).values {
            assert_abs_diff_eq!(v, 0.8, epsilon = 1e-15);
        }

        let tr = track_with_conf(&[Some(1.0), Some(1.0), Some(0.1), Some(1.0), Some(1.0)]);
        assert_eq!(visibility_scores(&tr, 5).values[2], 1.0);

        let tr = track_with_conf(&[Some(0.9), Some(0.9), None, Some(0.9), Some(0.9)]);
        let v = visibility_scores(&tr, 5);
        assert_eq!(v.values[2], 0.0);
        assert_eq!(v.detected, vec![true, true, false, true, true]);
    }

    #[test]
    fn median_shrinks_at_edges() {
        let x = [5.0, 0.0, 0.0, 0.0, 7.0];
        assert_eq!(median_filter(&x, 5), vec![5.0, 0.0, 0.0, 0.0, 7.0]);
        assert_eq!(median_filter(&[3.0, 1.0, 2.0], 3), vec![3.0, 2.0, 2.0]);
    }

    #[test]
    fn e_pred_examples() {
        let p = rows(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let q = rows(&[3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(e_pred(&p, &p, &[1.0; 5], 1.0).unwrap(), 0.0);
        assert_eq!(e_pred(&p, &q, &[1.0; 5], 1.0).unwrap(), 5.0);
        assert_eq!(e_pred(&p, &q, &[0.0; 5], 1.0).unwrap(), 0.0);
        assert!(e_pred(&p, &q[..4], &[1.0; 5], 1.0).is_err());
    }

    #[test]
    fn e_smooth_examples() {
        let p = rows(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(e_smooth(&p, 1), 3.0);
        assert_eq!(e_smooth(&p, 3), 9.0);
        assert_eq!(e_smooth(&p, 4), 0.0);
        assert_eq!(e_smooth(&rows(&[2.5; 7]), 2), 0.0);
    }

    #[test]
    fn e_ref_limits() {
        let cfg = RefineConfig {
            tau1: 3,
            ..Default::default()
        };
        let c = rows(&[1.5; 8]);
        assert_eq!(e_ref(&c, &c, &[1.0; 8], &cfg).unwrap(), 0.0);
        let p: Vec<Vec<f64>> = (0..8)
            .map(|t| vec![(t as f64).sin(), t as f64 * 0.5])
            .collect();
        let q: Vec<Vec<f64>> = (0..8).map(|t| vec![0.0, t as f64]).collect();
        let want = cfg.lambda1 * e_smooth(&p, 3) + cfg.lambda2 * e_smooth(&p, 1);
        assert_eq!(e_ref(&p, &q, &[0.0; 8], &cfg).unwrap(), want);
    }

    #[test]
    fn e_total_linear_in_lambda_rel() {
        let cfg = RefineConfig {
            tau1: 2,
            ..Default::default()
        };
        let loc: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64, 0.0, 1.0]).collect();
        let rel: Vec<Vec<f64>> = (0..6).map(|t| vec![(t * t) as f64 * 0.1; 6]).collect();
        let zl = vec![vec![0.0; 3]; 6];
        let zr = vec![vec![0.0; 6]; 6];
        let v = [1.0, 0.5, 0.0, 0.0, 0.7, 1.0];
        let base = e_total(
            &loc,
            &rel,
            &zl,
            &zr,
            &v,
            &RefineConfig {
                lambda_rel: 0.0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(base, e_ref(&loc, &zl, &v, &cfg).unwrap());
        let a = e_total(&loc, &rel, &zl, &zr, &v, &cfg).unwrap();
        let b = e_total(
            &loc,
            &rel,
            &zl,
            &zr,
            &v,
            &RefineConfig {
                lambda_rel: 0.2,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(b - base, 2.0 * (a - base), epsilon = 1e-12);
        let c = rows(&[0.0; 6]);
        let zero = e_total(&c, &c, &c, &c, &[1.0; 6], &cfg).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn gradient_zero_at_constant_prediction() {
        let cfg = RefineConfig::default();
        let p = vec![vec![0.3, -1.0, 2.0]; 30];
        let (gl, gr) = grad_e_total(&p, &p, &p, &p, &[1.0; 30], &cfg).unwrap();
        assert!(gl.iter().chain(&gr).flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn invisible_frame_with_equal_neighbors_has_zero_gradient() {
        let cfg = RefineConfig {
            tau1: 2,
            ..Default::default()
        };
        let p = rows(&[1.0; 5]);
        let q = rows(&[0.0, 0.0, 9.0, 0.0, 0.0]);
        let v = [1.0, 1.0, 0.0, 1.0, 1.0];
        let (g, _) = grad_e_total(&p, &p, &q, &p, &v, &cfg).unwrap();
        assert_eq!(g[2], vec![0.0]);
    }

    fn fd_check(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = 30;
        let cfg = RefineConfig {
            tau1: 5,
            tau2: 1,
            clip: 1.0,
            ..Default::default()
        };
        let h = 1e-6;
        let v: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.0..1.0)).collect();
        let loc_hat: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let rel_hat: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        // Keep every residual away from the clip so the energy is smooth.
        let perturb = |hat: &Vec<Vec<f64>>, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            hat.iter()
                .map(|r| {
                    let far = rng.random_bool(0.3);
                    r.iter()
                        .map(|x| {
                            x + if far {
                                rng.random_range(1.0..2.0)
                            } else {
                                rng.random_range(-0.2..0.2)
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let loc = perturb(&loc_hat, &mut rng);
        let rel = perturb(&rel_hat, &mut rng);
        for (a, b) in loc.iter().zip(&loc_hat).chain(rel.iter().zip(&rel_hat)) {
            assert!((sq_dist(a, b) - frame_clip(cfg.clip, a.len())).abs() > 10.0 * h);
        }
        let (gl, gr) = grad_e_total(&loc, &rel, &loc_hat, &rel_hat, &v, &cfg).unwrap();
        let energy =
            |l: &[Vec<f64>], r: &[Vec<f64>]| e_total(l, r, &loc_hat, &rel_hat, &v, &cfg).unwrap();
        for t in 0..t_len {
            for k in 0..3 {
                let mut lp = loc.clone();
                let mut lm = loc.clone();
                lp[t][k] += h;
                lm[t][k] -= h;
                let fd = (energy(&lp, &rel) - energy(&lm, &rel)) / (2.0 * h);
                assert!(
                    (fd - gl[t][k]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "loc {t} {k}: {fd} vs {}",
                    gl[t][k]
                );
            }
            for k in 0..6 {
                let mut rp = rel.clone();
                let mut rm = rel.clone();
                rp[t][k] += h;
                rm[t][k] -= h;
                let fd = (energy(&loc, &rp) - energy(&loc, &rm)) / (2.0 * h);
                assert!(
                    (fd - gr[t][k]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "rel {t} {k}: {fd} vs {}",
                    gr[t][k]
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            fd_check(seed);
        }
    }

    fn visible(n: usize) -> VisibilityTrace {
        VisibilityTrace::new(vec![1.0; n], vec![true; n]).unwrap()
    }

    #[test]
    fn constant_visible_track_is_stationary() {
        let norm = small_norm(6);
        let pred = vec![vec![100.0, -50.0, 4000.0, 30.0, 20.0, 10.0]; 40];
        let res = refine_track(&pred, &visible(40), &RefineConfig::default(), &norm).unwrap();
        for (a, b) in res.trajectory.iter().zip(&pred) {
            let za = norm.standardize_output(a);
            let zb = norm.standardize_output(b);
            assert!(sq_dist(&za, &zb).sqrt() < 1e-3);
        }
        assert_eq!(res.energy_history.len(), 501);
    }

    #[test]
    fn single_frame_is_unchanged() {
        let norm = small_norm(6);
        let pred = vec![vec![1.0, 2.0, 3000.0, 4.0, 5.0, 6.0]];
        let res = refine_track(&pred, &visible(1), &RefineConfig::default(), &norm).unwrap();
        assert_eq!(res.trajectory, pred);
    }

    #[test]
    fn spike_inside_gap_is_suppressed() {
        let norm = NormStats::identity(0, 6);
        let n = 80;
        let (g0, g1) = (30usize, 50usize);
        let line = |t: usize| vec![0.05 * t as f64, 1.0, -0.02 * t as f64, 0.5, 0.5, 0.5];
        let mut pred: Vec<Vec<f64>> = (0..n).map(line).collect();
        let spike = 10.0;
        for x in pred[40].iter_mut() {
            *x += spike;
        }
        let detected: Vec<bool> = (0..n).map(|t| !(g0..g1).contains(&t)).collect();
        let vis = VisibilityTrace::new(vec![1.0; n], detected).unwrap();
        let res = refine_track(&pred, &vis, &RefineConfig::default(), &norm).unwrap();
        let a = &pred[g0 - 1];
        let b = &pred[g1];
        let mut worst = 0.0f64;
        for t in g0..g1 {
            let s = (t - (g0 - 1)) as f64 / (g1 - (g0 - 1)) as f64;
            for k in 0..6 {
                let straight = a[k] + s * (b[k] - a[k]);
                worst = worst.max((res.trajectory[t][k] - straight).abs());
            }
        }
        assert!(worst < 0.25 * spike, "deviation {worst}");
    }

    #[test]
    fn energy_settles_late() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let norm = small_norm(9);
        let n = 120;
        let pred: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                (0..9)
                    .map(|k| {
                        10.0 * k as f64
                            + (1.0 + k as f64)
                                * ((t as f64 * 0.07 + k as f64).sin() + rng.random_range(-0.3..0.3))
                    })
                    .collect()
            })
            .collect();
        let values: Vec<f64> = (0..n)
            .map(|t| {
                if (50..70).contains(&t) {
                    0.0
                } else {
                    rng.random_range(0.3..1.0)
                }
            })
            .collect();
        let detected = (0..n).map(|t| !(50..70).contains(&t)).collect();
        let vis = VisibilityTrace::new(values, detected).unwrap();
        let res = refine_track(&pred, &vis, &RefineConfig::default(), &norm).unwrap();
        let h = &res.energy_history;
        let tail_start = h.len() - 101;
        for i in tail_start..h.len() - 1 {
            assert!(
                h[i + 1] <= h[i] + 0.01 * h[i],
                "energy rose at {i}: {} -> {}",
                h[i],
                h[i + 1]
            );
        }
        assert_abs_diff_eq!(res.energy.total, *h.last().unwrap(), epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn e_smooth_nonnegative(x in prop::collection::vec(-10.0..10.0f64, 1..20), tau in 1usize..5) {
            let p = rows(&x);
            let e = e_smooth(&p, tau);
            prop_assert!(e >= 0.0);
            let all_equal = (tau..x.len()).all(|t| x[t] == x[t - tau]);
            prop_assert_eq!(e == 0.0, all_equal);
        }

        #[test]
        fn e_pred_bounded_by_clip(x in prop::collection::vec(-10.0..10.0f64, 1..20),
                                  seed in 0u64..1000, clip in 0.1..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = x.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            let v: Vec<f64> = x.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let e = e_pred(&rows(&x), &rows(&q), &v, clip).unwrap();
            prop_assert!(e <= clip * v.iter().sum::<f64>() + 1e-12);
        }

        #[test]
        fn refinement_is_translation_equivariant(seed in 0u64..1000, offset in -50.0..50.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let norm = NormStats::identity(0, 6);
            let n = 30;
            let pred: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let detected: Vec<bool> = (0..n).map(|t| !(10..16).contains(&t)).collect();
            let vis = VisibilityTrace::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect(), detected).unwrap();
            let cfg = RefineConfig { iterations: 50, tau1: 5, ..Default::default() };
            let shifted: Vec<Vec<f64>> = pred.iter().map(|r| r.iter().map(|x| x + offset).collect()).collect();
            let a = refine_track(&pred, &vis, &cfg, &norm).unwrap();
            let b = refine_track(&shifted, &vis, &cfg, &norm).unwrap();
            for (ra, rb) in a.trajectory.iter().zip(&b.trajectory) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!((y - x - offset).abs() < 1e-6);
                }
            }
        }
    }
}
