use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::layers::Act;
use super::model::TpnModel;
use super::predict::{normalized_track, predict_normalized};
use super::{NormStats, TpnConfig};
use crate::error::{Error, Result};
use crate::skeleton::{Pose3D, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Training items per batch.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Range of the random 2D zoom factor.
    pub scale_range: [f64; 2],
    /// Consecutive target frames per training item. With 1, every item is a
    /// single centered window; longer items share the convolution work of
    /// overlapping windows.
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.95,
            epochs: 80,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scale_range: [0.7, 1.3],
            chunk_len: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Laptop-scale schedule.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            chunk_len: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.chunk_len == 0 {
            return Err(Error::invalid(
                "learning rate, batch size and chunk length must be positive",
            ));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("scale range must be positive and ordered"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// One person track prepared for training: gap-filled normalized 2D input
/// and per-frame targets `[location; relative without root]` in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Option<Vec<f64>>>,
}

impl TrainingSample {
    pub fn from_sequences(seqs: &[Sequence]) -> Result<Vec<TrainingSample>> {
        let mut out = Vec::new();
        for seq in seqs {
            let j = seq.skeleton.num_joints();
            let root = seq.skeleton.root_index;
            for tr in &seq.tracks {
                let (inputs, _) = normalized_track(tr, &seq.camera, j)?;
                let targets = tr
                    .gt
                    .iter()
                    .map(|g| g.as_ref().map(|p| target_vector(p, root)))
                    .collect();
                out.push(TrainingSample { inputs, targets });
            }
        }
        Ok(out)
    }
}

fn target_vector(p: &Pose3D, root: usize) -> Vec<f64> {
    let mut v = p.location.to_vec();
    v.extend(p.relative_flat(root));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
}

/// Per-sample ℓ1 loss: summed absolute error over location and relative pose.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("prediction and target lengths differ"));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum())
}

/// Subgradient of [`l1_loss`] with respect to `pred`.
pub fn l1_loss_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            if p > t {
                1.0
            } else if p < t {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Zooms the 2D window by `alpha` and moves the target root depth to match;
/// the relative pose is unchanged.
pub fn augment_scale(
    window: &[Vec<f64>],
    target: &Pose3D,
    alpha: f64,
) -> Result<(Vec<Vec<f64>>, Pose3D)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "scale factor must be positive, got {alpha}"
        )));
    }
    let w = window
        .iter()
        .map(|f| f.iter().map(|v| v * alpha).collect())
        .collect();
    let mut t = target.clone();
    t.location[2] /= alpha;
    Ok((w, t))
}

/// Mean per-frame ℓ1 loss of eval-mode predictions over all targets.
fn eval_loss(model: &TpnModel, samples: &[TrainingSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let pred = predict_normalized(&s.inputs, model)?;
        for (p, t) in pred.iter().zip(&s.targets) {
            if let Some(t) = t {
                total += l1_loss(p, t)?;
                count += 1;
            }
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Normalization statistics of a training set.
pub fn compute_norm_stats(samples: &[TrainingSample], cfg: &TpnConfig) -> NormStats {
    let (input_mean, input_std) = NormStats::column_stats(
        samples
            .iter()
            .flat_map(|s| s.inputs.iter().map(Vec::as_slice)),
        cfg.input_dim(),
    );
    let (output_mean, output_std) = NormStats::column_stats(
        samples
            .iter()
            .flat_map(|s| s.targets.iter().flatten().map(Vec::as_slice)),
        cfg.output_dim(),
    );
    NormStats {
        input_mean,
        input_std,
        output_mean,
        output_std,
    }
}

struct Batch {
    input: Act,
    targets: Vec<Vec<Vec<f64>>>,
}

fn build_batch<R: Rng>(
    samples: &[TrainingSample],
    items: &[(usize, usize)],
    chunk: usize,
    cfg: &TpnConfig,
    tcfg: &TrainConfig,
    rng: &mut R,
) -> Batch {
    let w = cfg.half_window;
    let dim = cfg.input_dim();
    let len = chunk + 2 * w;
    let mut input = Act::zeros(items.len(), dim, len);
    let mut targets = Vec::with_capacity(items.len());
    for (b, &(si, start)) in items.iter().enumerate() {
        let s = &samples[si];
        let t_max = s.inputs.len() - 1;
        let [lo, hi] = tcfg.scale_range;
        let alpha = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        for i in 0..len {
            let src = &s.inputs[(start + i).saturating_sub(w).min(t_max)];
            for (c, &v) in src.iter().enumerate() {
                input.data[(b * dim + c) * len + i] = v * alpha;
            }
        }
        targets.push(
            (start..start + chunk)
                .map(|t| {
                    let mut v = s.targets[t]
                        .clone()
                        .expect("items only cover frames with targets");
                    v[2] /= alpha;
                    v
                })
                .collect(),
        );
    }
    Batch { input, targets }
}

/// Mean ℓ1 loss over a batch and its gradient in the `[n][out][t]` layout.
fn batch_loss(pred: &Act, targets: &[Vec<Vec<f64>>]) -> (f64, Act) {
    let count = (pred.n * pred.t) as f64;
    let mut grad = Act::zeros(pred.n, pred.c, pred.t);
    let mut loss = 0.0;
    for (n, chunk) in targets.iter().enumerate() {
        for (t, target) in chunk.iter().enumerate() {
            for (c, &tv) in target.iter().enumerate() {
                let d = pred.data[(n * pred.c + c) * pred.t + t] - tv;
                loss += d.abs();
                grad.data[(n * pred.c + c) * pred.t + t] = d.signum() * f64::from(d != 0.0) / count;
            }
        }
    }
    (loss / count, grad)
}

/// Trains the regressor on gap-filled normalized tracks with ground truth.
pub fn train_tpn(
    train: &[TrainingSample],
    val: &[TrainingSample],
    cfg: &TpnConfig,
    tcfg: &TrainConfig,
) -> Result<(TpnModel, TrainReport)> {
    train_tpn_with(train, val, cfg, tcfg, |_| {})
}

/// As [`train_tpn`], calling `on_epoch` after every epoch.
pub fn train_tpn_with(
    train: &[TrainingSample],
    val: &[TrainingSample],
    cfg: &TpnConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(TpnModel, TrainReport)> {
    cfg.validate()?;
    tcfg.validate()?;
    let usable: Vec<&TrainingSample> = train
        .iter()
        .filter(|s| s.targets.iter().any(Option::is_some))
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid(
            "training corpus has no frames with ground truth",
        ));
    }
    for s in train.iter().chain(val) {
        if s.inputs.len() != s.targets.len() || s.inputs.iter().any(|f| f.len() != cfg.input_dim())
        {
            return Err(Error::shape(
                "training sample does not match the model dimensions",
            ));
        }
        if s.targets
            .iter()
            .flatten()
            .any(|t| t.len() != cfg.output_dim())
        {
            return Err(Error::shape(
                "training target does not match the model output",
            ));
        }
    }
    let chunk = tcfg.chunk_len.min(
        train
            .iter()
            .filter(|s| !s.inputs.is_empty())
            .map(|s| s.inputs.len())
            .min()
            .unwrap_or(1),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut model = TpnModel::new(cfg.clone(), &mut rng)?;
    model.norm = compute_norm_stats(train, cfg);
    let mut adam = Adam::new(model.parameters().iter().map(|p| p.len()));
    adam.beta1 = tcfg.beta1;
    adam.beta2 = tcfg.beta2;
    adam.eps = tcfg.eps;

    let initial_train_loss = eval_loss(&model, train)?;
    let initial_val_loss = if val.is_empty() {
        None
    } else {
        Some(eval_loss(&model, val)?)
    };
    let mut logs = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let lr = tcfg.lr_at_epoch(epoch);
        // Non-overlapping chunks with a random phase per track and epoch.
        let mut items: Vec<(usize, usize)> = Vec::new();
        for (si, s) in train.iter().enumerate() {
            let t = s.inputs.len();
            if t < chunk {
                continue;
            }
            let offset = rng.random_range(0..chunk.min(t - chunk + 1));
            let mut start = offset;
            while start + chunk <= t {
                if s.targets[start..start + chunk].iter().all(Option::is_some) {
                    items.push((si, start));
                }
                start += chunk;
            }
        }
        items.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch_items in items.chunks(tcfg.batch_size) {
            if batch_items.len() * chunk < 2 {
                continue;
            }
            let batch = build_batch(train, batch_items, chunk, cfg, tcfg, &mut rng);
            let (pred, cache) = model.forward_train(&batch.input, &mut rng)?;
            let (loss, grad) = batch_loss(&pred, &batch.targets);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {loss} in epoch {epoch} after {batches} batches"
                )));
            }
            let (grads, _) = model.backward(&cache, &grad);
            adam.update(&mut model.parameters_mut(), &grads.tensors, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!(
                "model parameters after epoch {epoch}"
            )));
        }
        let log = EpochLog {
            epoch,
            learning_rate: lr,
            train_loss: if batches == 0 {
                0.0
            } else {
                loss_sum / batches as f64
            },
            val_loss: if val.is_empty() {
                None
            } else {
                Some(eval_loss(&model, val)?)
            },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((
        model,
        TrainReport {
            initial_train_loss,
            initial_val_loss,
            epochs: logs,
        },
    ))
}
