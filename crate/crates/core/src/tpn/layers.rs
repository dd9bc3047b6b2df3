//! Dense 1D building blocks with hand-written backward passes.
//!
//! Activations are `[batch][channel][time]` row-major buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch of multi-channel 1D signals, layout `[n][c][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(n: usize, c: usize, t: usize) -> Self {
        Act {
            n,
            c,
            t,
            data: vec![0.0; n * c * t],
        }
    }

    pub fn from_vec(n: usize, c: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * t {
            return Err(Error::shape(format!(
                "buffer of {} values for shape {n}x{c}x{t}",
                data.len()
            )));
        }
        Ok(Act { n, c, t, data })
    }

    #[inline]
    pub fn row(&self, n: usize, c: usize) -> &[f64] {
        let o = (n * self.c + c) * self.t;
        &self.data[o..o + self.t]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let o = (n * self.c + c) * self.t;
        &mut self.data[o..o + self.t]
    }

    pub fn same_shape(&self, other: &Act) -> bool {
        self.n == other.n && self.c == other.c && self.t == other.t
    }

    /// Keeps `len` central time steps, dropping `(t - len) / 2` on each side.
    pub fn center_crop(&self, len: usize) -> Act {
        let off = (self.t - len) / 2;
        let mut out = Act::zeros(self.n, self.c, len);
        for n in 0..self.n {
            for c in 0..self.c {
                out.row_mut(n, c)
                    .copy_from_slice(&self.row(n, c)[off..off + len]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Valid (unpadded) dilated 1D convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// `[c_out][c_in][kernel]`
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, dilation: usize, bias: bool) -> Self {
        Conv1d {
            c_in,
            c_out,
            kernel,
            dilation,
            weight: vec![0.0; c_out * c_in * kernel],
            bias: bias.then(|| vec![0.0; c_out]),
        }
    }

    /// He-uniform initialization.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = (self.c_in * self.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut self.weight {
            *w = rng.random_range(-bound..bound);
        }
    }

    pub fn shrink(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, j: usize) -> f64 {
        self.weight[(co * self.c_in + ci) * self.kernel + j]
    }

    pub fn forward(&self, x: &Act) -> Result<Act> {
        if x.c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        if x.t < self.shrink() + 1 {
            return Err(Error::shape(format!(
                "window of {} steps is shorter than the receptive field {}",
                x.t,
                self.shrink() + 1
            )));
        }
        let t_out = x.t - self.shrink();
        let mut out = Act::zeros(x.n, self.c_out, t_out);
        for n in 0..x.n {
            for co in 0..self.c_out {
                let row = out.row_mut(n, co);
                if let Some(b) = &self.bias {
                    row.fill(b[co]);
                }
                for ci in 0..self.c_in {
                    let xin = x.row(n, ci);
                    for j in 0..self.kernel {
                        let o = j * self.dilation;
                        axpy(self.w(co, ci, j), &xin[o..o + t_out], row);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, x: &Act, dy: &Act, dw: &mut [f64], db: Option<&mut [f64]>) -> Act {
        let t_out = dy.t;
        let mut dx = Act::zeros(x.n, x.c, x.t);
        for n in 0..x.n {
            for co in 0..self.c_out {
                let g = dy.row(n, co);
                for ci in 0..self.c_in {
                    let xin = x.row(n, ci);
                    let base = (co * self.c_in + ci) * self.kernel;
                    for j in 0..self.kernel {
                        let o = j * self.dilation;
                        dw[base + j] += dot(g, &xin[o..o + t_out]);
                        axpy(
                            self.weight[base + j],
                            g,
                            &mut dx.row_mut(n, ci)[o..o + t_out],
                        );
                    }
                }
            }
        }
        if let Some(db) = db {
            for n in 0..dy.n {
                for (co, d) in db.iter_mut().enumerate() {
                    *d += dy.row(n, co).iter().sum::<f64>();
                }
            }
        }
        dx
    }
}

/// Per-channel batch normalization over batch and time.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Act,
    pub inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn forward_eval(&self, x: &Act) -> Act {
        let mut out = x.clone();
        for n in 0..x.n {
            for c in 0..x.c {
                let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let (m, g, b) = (self.running_mean[c], self.scale[c], self.shift[c]);
                for v in out.row_mut(n, c) {
                    *v = g * (*v - m) * inv + b;
                }
            }
        }
        out
    }

    /// Normalizes by batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, x: &Act) -> Result<(Act, BatchNormCache)> {
        let count = x.n * x.t;
        if count < 2 {
            return Err(Error::invalid(format!(
                "batch norm in train mode needs >= 2 values per channel, got {count}"
            )));
        }
        let mut out = Act::zeros(x.n, x.c, x.t);
        let mut xhat = Act::zeros(x.n, x.c, x.t);
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mean = (0..x.n)
                .map(|n| x.row(n, c).iter().sum::<f64>())
                .sum::<f64>()
                / count as f64;
            let var = (0..x.n)
                .map(|n| {
                    x.row(n, c)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / count as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = inv;
            for n in 0..x.n {
                let src = x.row(n, c);
                let h = xhat.row_mut(n, c);
                for (hv, &v) in h.iter_mut().zip(src) {
                    *hv = (v - mean) * inv;
                }
                let (g, b) = (self.scale[c], self.shift[c]);
                for (o, &hv) in out.row_mut(n, c).iter_mut().zip(xhat.row(n, c)) {
                    *o = g * hv + b;
                }
            }
            let unbiased = var * count as f64 / (count - 1) as f64;
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        Ok((out, BatchNormCache { xhat, inv_std }))
    }

    /// Returns the input gradient; accumulates scale/shift gradients.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        dy: &Act,
        dscale: &mut [f64],
        dshift: &mut [f64],
    ) -> Act {
        let count = (dy.n * dy.t) as f64;
        let mut dx = Act::zeros(dy.n, dy.c, dy.t);
        for c in 0..dy.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..dy.n {
                sum_dy += dy.row(n, c).iter().sum::<f64>();
                sum_dy_xhat += dot(dy.row(n, c), cache.xhat.row(n, c));
            }
            dscale[c] += sum_dy_xhat;
            dshift[c] += sum_dy;
            let k = self.scale[c] * cache.inv_std[c] / count;
            for n in 0..dy.n {
                let g = dy.row(n, c);
                let h = cache.xhat.row(n, c);
                for ((d, &gv), &hv) in dx.row_mut(n, c).iter_mut().zip(g).zip(h) {
                    *d = k * (count * gv - sum_dy - hv * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

/// Inverted dropout. Returns the output and, in train mode with `p > 0`,
/// the multiplicative mask (0 or `1/(1-p)`).
pub fn dropout<R: Rng>(
    x: &Act,
    p: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<(Act, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut out = x.clone();
    for (o, m) in out.data.iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}
