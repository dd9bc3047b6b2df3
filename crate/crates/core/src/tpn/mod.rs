//! Temporal convolutional regressor from a window of camera-normalized 2D
//! joints to the root location and root-relative pose of the center frame.
//!
//! Layout: an initial kernel-3 convolution lifts the `2J` input channels to
//! `C`, then three residual blocks each apply a dilated kernel-3 convolution
//! and a kernel-1 convolution (each followed by batch norm, ReLU and
//! dropout), and a kernel-1 head maps to `3 + 3(J-1)` outputs. All
//! convolutions are valid, so a window of exactly the receptive field
//! produces one output step.

mod adam;
mod layers;
mod model;
mod predict;
mod train;

pub use adam::Adam;
pub use layers::{dropout, Act, BatchNorm, BatchNormCache, Conv1d, Mode};
pub use model::{ForwardCache, Gradients, TpnModel, MODEL_VERSION};
pub use predict::{
    fill_missing, normalized_track, predict_normalized, predict_track, TrackPrediction,
};
pub use train::{
    augment_scale, compute_norm_stats, l1_loss, l1_loss_grad, train_tpn, train_tpn_with, EpochLog,
    TrainConfig, TrainReport, TrainingSample,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpnConfig {
    pub half_window: usize,
    pub channels: usize,
    /// Dilation of the kernel-3 convolution in each residual block.
    pub dilations: Vec<usize>,
    pub dropout: f64,
    pub num_joints: usize,
    pub root_index: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for TpnConfig {
    fn default() -> Self {
        TpnConfig {
            half_window: 40,
            channels: 256,
            dilations: vec![3, 9, 27],
            dropout: 0.25,
            num_joints: 17,
            root_index: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl TpnConfig {
    /// Reduced width for laptop-scale runs.
    pub fn desk() -> Self {
        TpnConfig {
            channels: 64,
            ..Default::default()
        }
    }

    pub const NUM_BLOCKS: usize = 3;

    pub fn input_dim(&self) -> usize {
        2 * self.num_joints
    }

    pub fn output_dim(&self) -> usize {
        3 + 3 * (self.num_joints - 1)
    }

    pub fn window_len(&self) -> usize {
        2 * self.half_window + 1
    }

    /// Frames seen by one output step.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * (1 + self.dilations.iter().sum::<usize>())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != Self::NUM_BLOCKS {
            return Err(Error::invalid(format!(
                "expected {} residual blocks, got {} dilations",
                Self::NUM_BLOCKS,
                self.dilations.len()
            )));
        }
        if self.dilations.contains(&0) || self.channels == 0 {
            return Err(Error::invalid(
                "dilations and channel width must be positive",
            ));
        }
        if self.receptive_field() != self.window_len() {
            return Err(Error::invalid(format!(
                "receptive field {} does not match window 2*{}+1",
                self.receptive_field(),
                self.half_window
            )));
        }
        if self.num_joints < 2 || self.root_index >= self.num_joints {
            return Err(Error::invalid("need >= 2 joints and a valid root index"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-dimension standardization of network inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        NormStats {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_std: vec![1.0; output_dim],
        }
    }

    /// Mean and population std of each column, std floored at [`STD_FLOOR`].
    pub fn column_stats<'a>(
        rows: impl IntoIterator<Item = &'a [f64]>,
        dim: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut sum = vec![0.0; dim];
        let mut sum2 = vec![0.0; dim];
        let mut count = 0usize;
        for r in rows {
            for (k, &v) in r.iter().enumerate() {
                sum[k] += v;
                sum2[k] += v * v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum2
            .iter()
            .zip(&mean)
            .map(|(s2, m)| (s2 / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        (mean, std)
    }

    pub fn standardize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.output_mean.iter().zip(&self.output_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize_output(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.output_mean.iter().zip(&self.output_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.input_mean.len() != input_dim
            || self.input_std.len() != input_dim
            || self.output_mean.len() != output_dim
            || self.output_std.len() != output_dim
        {
            return Err(Error::shape(
                "normalization statistics do not match model dimensions",
            ));
        }
        if self
            .input_std
            .iter()
            .chain(&self.output_std)
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid("normalization std must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_receptive_field_is_81() {
        let cfg = TpnConfig::default();
        assert_eq!(cfg.receptive_field(), 81);
        assert_eq!(cfg.window_len(), 81);
        assert_eq!(cfg.input_dim(), 34);
        assert_eq!(cfg.output_dim(), 51);
        cfg.validate().unwrap();
        let bad = TpnConfig {
            half_window: 30,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn std_is_floored() {
        let rows = [vec![2.0, 1.0], vec![2.0, 3.0]];
        let (m, s) = NormStats::column_stats(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(m, vec![2.0, 2.0]);
        assert_eq!(s, vec![STD_FLOOR, 1.0]);
    }

    proptest! {
        #[test]
        fn standardize_roundtrip(y in prop::collection::vec(-1e4..1e4f64, 4),
                                 mean in prop::collection::vec(-1e3..1e3f64, 4),
                                 std in prop::collection::vec(1e-3..1e3f64, 4)) {
            let ns = NormStats { input_mean: vec![], input_std: vec![], output_mean: mean, output_std: std };
            let back = ns.destandardize_output(&ns.standardize_output(&y));
            for (a, b) in back.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
