//! Comparison smoothers: gap interpolation and the 1-Euro filter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tpn::fill_missing;

/// Replaces undetected frames by linear interpolation between the nearest
/// detected frames, holding the end values over leading and trailing gaps.
pub fn linear_interpolate(traj: &[Vec<f64>], detected: &[bool]) -> Result<Vec<Vec<f64>>> {
    if traj.len() != detected.len() {
        return Err(Error::shape(format!(
            "{} frames but {} detection flags",
            traj.len(),
            detected.len()
        )));
    }
    if !detected.iter().any(|&d| d) {
        return Err(Error::invalid(
            "cannot interpolate a track with no detected frame",
        ));
    }
    let dim = traj[0].len();
    let frames: Vec<Option<Vec<f64>>> = traj
        .iter()
        .zip(detected)
        .map(|(r, &d)| d.then(|| r.clone()))
        .collect();
    Ok(fill_missing(&frames, dim))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneEuroParams {
    pub min_cutoff: f64,
    pub beta: f64,
    pub d_cutoff: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        OneEuroParams {
            min_cutoff: 1.0,
            beta: 0.007,
            d_cutoff: 1.0,
        }
    }
}

/// Smoothing factor of a first-order low-pass at `cutoff` Hz.
pub fn smoothing_factor(cutoff: f64, fps: f64) -> f64 {
    let tau = 1.0 / (2.0 * PI * cutoff);
    1.0 / (1.0 + tau * fps)
}

pub fn one_euro_filter(signal: &[f64], fps: f64, params: &OneEuroParams) -> Result<Vec<f64>> {
    if !(fps > 0.0) {
        return Err(Error::invalid("fps must be positive"));
    }
    let mut out = Vec::with_capacity(signal.len());
    let Some(&first) = signal.first() else {
        return Ok(out);
    };
    let a_d = smoothing_factor(params.d_cutoff, fps);
    let mut x_prev = first;
    let mut dx_prev = 0.0;
    out.push(first);
    for &x in &signal[1..] {
        let dx = (x - x_prev) * fps;
        let dx_hat = dx_prev + a_d * (dx - dx_prev);
        let cutoff = params.min_cutoff + params.beta * dx_hat.abs();
        let a = smoothing_factor(cutoff, fps);
        let x_hat = x_prev + a * (x - x_prev);
        out.push(x_hat);
        x_prev = x_hat;
        dx_prev = dx_hat;
    }
    Ok(out)
}

/// Filters every coordinate of a `T x D` trajectory independently.
pub fn one_euro_trajectory(
    traj: &[Vec<f64>],
    fps: f64,
    params: &OneEuroParams,
) -> Result<Vec<Vec<f64>>> {
    let Some(dim) = traj.first().map(|r| r.len()) else {
        return Ok(Vec::new());
    };
    if traj.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("trajectory frames differ in dimension"));
    }
    let mut out = vec![vec![0.0; dim]; traj.len()];
    for k in 0..dim {
        let col: Vec<f64> = traj.iter().map(|r| r[k]).collect();
        for (t, v) in one_euro_filter(&col, fps, params)?.into_iter().enumerate() {
            out[t][k] = v;
        }
    }
    Ok(out)
}
