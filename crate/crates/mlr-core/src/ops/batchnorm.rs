//! Per-channel batch normalization with exponential running statistics.
//!
//! Population (biased) variance is used both for normalization and for the
//! running estimates, so train and eval paths share one convention.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::par;
use crate::tensor::{require_same_dims, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Running mean/variance per channel plus the number of updates applied.
///
/// `updates == 0` means the statistics were never fitted; eval mode refuses
/// to normalize with them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: alloc::vec![0.0; channels],
            var: alloc::vec![1.0; channels],
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Everything the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

fn channel_layout(op: &'static str, input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = input.dims4(op)?;
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(CoreError::shape(
            op,
            format!(
                "gamma {:?} / beta {:?} do not match channel count {c}",
                gamma.dims(),
                beta.dims()
            ),
        ));
    }
    Ok((b, c, h * w))
}

/// Normalizes with batch statistics and returns the updated running stats.
///
/// Pure: the caller owns committing the returned [`RunningStats`].
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
    momentum: f64,
) -> Result<(Tensor, BnCache, RunningStats)> {
    let op = "batchnorm_train";
    let (b, c, hw) = channel_layout(op, input, gamma, beta)?;
    if stats.channels() != c {
        return Err(CoreError::shape(
            op,
            format!("running stats track {} channels, input has {c}", stats.channels()),
        ));
    }
    let n = b * hw;
    if n < 2 {
        return Err(CoreError::usage(
            op,
            format!("train mode needs at least 2 values per channel, got {n}"),
        ));
    }
    let data = input.data();
    let item = c * hw;

    // Per-channel batch statistics, each channel reduced in a fixed order.
    let chan_stats: Vec<(f64, f64)> = par::map_indexed(c, |ch| {
        let mut sum = 0.0;
        for i in 0..b {
            let base = i * item + ch * hw;
            sum += data[base..base + hw].iter().sum::<f64>();
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for i in 0..b {
            let base = i * item + ch * hw;
            for &v in &data[base..base + hw] {
                let d = v - mean;
                ss += d * d;
            }
        }
        (mean, ss / n as f64)
    });

    let inv_std: Vec<f64> = chan_stats
        .iter()
        .map(|&(_, var)| 1.0 / libm::sqrt(var + BN_EPS))
        .collect();

    let mut xhat = input.clone();
    {
        let means: Vec<f64> = chan_stats.iter().map(|s| s.0).collect();
        let inv = &inv_std;
        par::for_each_span(xhat.data_mut(), hw, |j, chunk| {
            let ch = j % c;
            let (m, is) = (means[ch], inv[ch]);
            for v in chunk.iter_mut() {
                *v = (*v - m) * is;
            }
        });
    }

    let mut out = xhat.clone();
    {
        let g = gamma.data();
        let be = beta.data();
        par::for_each_span(out.data_mut(), hw, |j, chunk| {
            let ch = j % c;
            let (gv, bv) = (g[ch], be[ch]);
            for v in chunk.iter_mut() {
                *v = gv * *v + bv;
            }
        });
    }

    let mut next = stats.clone();
    for ch in 0..c {
        next.mean[ch] = (1.0 - momentum) * next.mean[ch] + momentum * chan_stats[ch].0;
        next.var[ch] = (1.0 - momentum) * next.var[ch] + momentum * chan_stats[ch].1;
    }
    next.updates += 1;

    Ok((out, BnCache { xhat, inv_std }, next))
}

/// Normalizes with the running statistics; requires at least one update.
pub fn batchnorm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
) -> Result<Tensor> {
    let op = "batchnorm_eval";
    let (_, c, hw) = channel_layout(op, input, gamma, beta)?;
    if stats.channels() != c {
        return Err(CoreError::shape(
            op,
            format!("running stats track {} channels, input has {c}", stats.channels()),
        ));
    }
    if stats.updates == 0 {
        return Err(CoreError::usage(
            op,
            "running statistics were never updated; train before eval",
        ));
    }
    let mut out = input.clone();
    let g = gamma.data();
    let be = beta.data();
    let scale: Vec<f64> = (0..c)
        .map(|ch| g[ch] / libm::sqrt(stats.var[ch] + BN_EPS))
        .collect();
    let shift: Vec<f64> = (0..c)
        .map(|ch| be[ch] - stats.mean[ch] * scale[ch])
        .collect();
    par::for_each_span(out.data_mut(), hw, |j, chunk| {
        let ch = j % c;
        let (s, t) = (scale[ch], shift[ch]);
        for v in chunk.iter_mut() {
            *v = s * *v + t;
        }
    });
    Ok(out)
}

/// Train-mode backward through the batch statistics.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let op = "batchnorm_backward";
    require_same_dims(op, grad_out, &cache.xhat)?;
    let (b, c, hw) = channel_layout(op, grad_out, gamma, gamma)?;
    let n = (b * hw) as f64;
    let go = grad_out.data();
    let xh = cache.xhat.data();
    let item = c * hw;

    // dbeta = sum(dy), dgamma = sum(dy * xhat) per channel
    let sums: Vec<(f64, f64)> = par::map_indexed(c, |ch| {
        let mut s_dy = 0.0;
        let mut s_dyx = 0.0;
        for i in 0..b {
            let base = i * item + ch * hw;
            for k in 0..hw {
                let g = go[base + k];
                s_dy += g;
                s_dyx += g * xh[base + k];
            }
        }
        (s_dy, s_dyx)
    });

    let mut grad_input = grad_out.clone();
    {
        let g = gamma.data();
        let inv = &cache.inv_std;
        par::for_each_span(grad_input.data_mut(), hw, |j, chunk| {
            let ch = j % c;
            let coef = g[ch] * inv[ch];
            let (s_dy, s_dyx) = sums[ch];
            let base = j * hw;
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = coef * (*v - s_dy / n - xh[base + k] * s_dyx / n);
            }
        });
    }

    let grad_gamma = Tensor::new(
        alloc::vec![c],
        sums.iter().map(|s| s.1).collect(),
    )?;
    let grad_beta = Tensor::new(alloc::vec![c], sums.iter().map(|s| s.0).collect())?;
    Ok((grad_input, grad_gamma, grad_beta))
}
