//! The convolutional autoencoder: construction, training, encoding.
//!
//! Encoder stages run conv -> batchnorm -> GELU -> 2x2 max-pool; decoder
//! stages run upsample -> conv -> batchnorm -> activation, with a sigmoid on
//! the final stage so reconstructions stay inside the normalized input range.
//! Upsampling targets are derived from the recorded encoder shape chain, which
//! is what guarantees the decoder lands on the exact input dims despite the
//! floor semantics of pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::init::normal_init;
use crate::ops::activation::Activation;
use crate::ops::batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, RunningStats,
};
use crate::ops::conv::{conv2d_backward, conv2d_forward, conv_output_hw, ConvLayerSpec};
use crate::ops::loss::mse_loss;
use crate::ops::pool::{maxpool2x2_backward, maxpool2x2_forward, ArgmaxMap};
use crate::ops::upsample::{upsample_to_backward, upsample_to_forward};
use crate::optim::{adam_step, AdamParams, AdamState, SchedulerState};
use crate::tensor::Tensor;

/// Encoder/decoder stage specs plus batchnorm momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct CAEArchitecture {
    pub encoder: Vec<ConvLayerSpec>,
    pub decoder: Vec<ConvLayerSpec>,
    pub bn_momentum: f64,
}

impl CAEArchitecture {
    /// The reference 4+4 stage architecture: channels 1-32-64-128-10 with
    /// kernels 3,3,5,5 on the way down and the mirror on the way up.
    ///
    /// `full_batchnorm` adds batchnorm to the code-layer conv as well (20
    /// extra parameters); the default placement leaves the code conv and the
    /// final decoder conv without it.
    pub fn reference(full_batchnorm: bool) -> Self {
        let stage = |cin, cout, k, bn, act| ConvLayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            padding: (2, 2),
            stride: (1, 1),
            has_batchnorm: bn,
            activation: act,
        };
        CAEArchitecture {
            encoder: vec![
                stage(1, 32, 3, true, Activation::Gelu),
                stage(32, 64, 3, true, Activation::Gelu),
                stage(64, 128, 5, true, Activation::Gelu),
                stage(128, 10, 5, full_batchnorm, Activation::Gelu),
            ],
            decoder: vec![
                stage(10, 128, 5, true, Activation::Gelu),
                stage(128, 64, 5, true, Activation::Gelu),
                stage(64, 32, 3, true, Activation::Gelu),
                stage(32, 1, 3, false, Activation::Sigmoid),
            ],
            bn_momentum: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(CoreError::build("architecture needs encoder and decoder stages"));
        }
        for (i, s) in self.encoder.iter().chain(self.decoder.iter()).enumerate() {
            s.validate()
                .map_err(|e| CoreError::build(format!("stage {i}: {e}")))?;
        }
        if self.encoder[0].in_channels != 1 {
            return Err(CoreError::build("encoder must start from a single channel"));
        }
        for w in self.encoder.windows(2) {
            if w[0].out_channels != w[1].in_channels {
                return Err(CoreError::build("encoder channel chain is broken"));
            }
        }
        if self.decoder[0].in_channels != self.encoder.last().unwrap().out_channels {
            return Err(CoreError::build("decoder does not start at the code channels"));
        }
        for w in self.decoder.windows(2) {
            if w[0].out_channels != w[1].in_channels {
                return Err(CoreError::build("decoder channel chain is broken"));
            }
        }
        if self.decoder.last().unwrap().out_channels != 1 {
            return Err(CoreError::build("decoder must end on a single channel"));
        }
        Ok(())
    }
}

/// Spatial dims of one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderStageShapes {
    pub conv_in: (usize, usize),
    pub pre_pool: (usize, usize),
    pub post_pool: (usize, usize),
}

/// Spatial dims of one decoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderStageShapes {
    pub upsample_to: (usize, usize),
    pub conv_out: (usize, usize),
}

/// The recorded shape chain for a concrete input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeChain {
    pub input: (usize, usize),
    pub encoder: Vec<EncoderStageShapes>,
    pub decoder: Vec<DecoderStageShapes>,
    pub code_channels: usize,
    pub code_hw: (usize, usize),
}

impl ShapeChain {
    pub fn code_len(&self) -> usize {
        self.code_channels * self.code_hw.0 * self.code_hw.1
    }
}

/// Walks the architecture over an `(N, M)` input, validating every stage.
pub fn compute_shape_chain(arch: &CAEArchitecture, input: (usize, usize)) -> Result<ShapeChain> {
    let (mut h, mut w) = input;
    let mut encoder = Vec::with_capacity(arch.encoder.len());
    for (i, spec) in arch.encoder.iter().enumerate() {
        let conv_in = (h, w);
        let (ch, cw) = conv_output_hw(spec, h, w).map_err(|e| {
            CoreError::build(format!("encoder stage {}: {e}", i + 1))
        })?;
        if ch < 2 || cw < 2 {
            return Err(CoreError::build(format!(
                "encoder stage {}: conv output {ch}x{cw} too small for 2x2 pooling",
                i + 1
            )));
        }
        let post = (ch / 2, cw / 2);
        encoder.push(EncoderStageShapes {
            conv_in,
            pre_pool: (ch, cw),
            post_pool: post,
        });
        h = post.0;
        w = post.1;
    }
    let code_hw = (h, w);
    let code_channels = arch.encoder.last().unwrap().out_channels;

    let mut decoder = Vec::with_capacity(arch.decoder.len());
    for (i, spec) in arch.decoder.iter().enumerate() {
        // mirror: this stage must output the conv input dims of the
        // corresponding encoder stage
        let target = encoder[arch.encoder.len() - 1 - i].conv_in;
        let (kh, kw) = spec.kernel;
        let (ph, pw) = spec.padding;
        // conv with stride 1 maps s -> s + 2p - k + 1; solve for the conv input
        let growth_h = 2 * ph as isize - kh as isize + 1;
        let growth_w = 2 * pw as isize - kw as isize + 1;
        let need_h = target.0 as isize - growth_h;
        let need_w = target.1 as isize - growth_w;
        if need_h < 1 || need_w < 1 {
            return Err(CoreError::build(format!(
                "decoder stage {}: cannot reach target {target:?} with kernel {:?}",
                i + 1,
                spec.kernel
            )));
        }
        let up = (need_h as usize, need_w as usize);
        if up.0 < h || up.1 < w {
            return Err(CoreError::build(format!(
                "decoder stage {}: upsample target {up:?} smaller than stage input {h}x{w}",
                i + 1
            )));
        }
        decoder.push(DecoderStageShapes {
            upsample_to: up,
            conv_out: target,
        });
        h = target.0;
        w = target.1;
    }
    if (h, w) != input {
        return Err(CoreError::build(format!(
            "decoder chain ends at {h}x{w}, expected {input:?}"
        )));
    }
    Ok(ShapeChain {
        input,
        encoder,
        decoder,
        code_channels,
        code_hw,
    })
}

/// One named trainable tensor with its optimizer state.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub adam: AdamState,
}

#[derive(Debug, Clone, Copy)]
struct StageParamIdx {
    w: usize,
    b: usize,
    bn: Option<(usize, usize)>, // gamma, beta
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

/// A built (possibly trained) convolutional autoencoder.
#[derive(Debug, Clone)]
pub struct CAEModel {
    pub arch: CAEArchitecture,
    pub input_dims: (usize, usize),
    pub chain: ShapeChain,
    params: Vec<ParamEntry>,
    enc_idx: Vec<StageParamIdx>,
    dec_idx: Vec<StageParamIdx>,
    bn_enc: Vec<Option<RunningStats>>,
    bn_dec: Vec<Option<RunningStats>>,
    pub history: Vec<EpochStats>,
}

/// Training hyperparameters. Defaults follow the reference setup; the paper
/// pins only the initial learning rate (0.002).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub adam: AdamParams,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_rel_threshold: f64,
    pub min_lr: f64,
    pub init_std: f64,
    pub seed: u64,
    pub precision: Precision,
}

/// Numeric mode of a training run: arithmetic is always 64-bit; `Bits32`
/// additionally rounds every parameter to f32 after each update so the
/// in-memory model always equals its 32-bit persisted form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Bits64,
    Bits32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 200,
            early_stop_patience: 10,
            adam: AdamParams::default(),
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            scheduler_rel_threshold: 1e-4,
            min_lr: 1e-5,
            init_std: 0.02,
            seed: 0,
            precision: Precision::Bits64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(CoreError::build(
                "batch_size, max_epochs and early_stop_patience must be positive",
            ));
        }
        if !(self.adam.lr > 0.0 && self.init_std >= 0.0) {
            return Err(CoreError::build("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Builds the model with seeded normal initialization and the shape chain
/// recorded for `input_dims`.
pub fn build_cae(
    input_dims: (usize, usize),
    arch: &CAEArchitecture,
    seed: u64,
    init_std: f64,
) -> Result<CAEModel> {
    arch.validate()?;
    let chain = compute_shape_chain(arch, input_dims)?;

    let mut params = Vec::new();
    let mut counter = 0u64;
    let push = |name: String, value: Tensor, params: &mut Vec<ParamEntry>| {
        let adam = AdamState::new(value.dims());
        params.push(ParamEntry { name, value, adam });
    };
    let add_stage = |prefix: String,
                         spec: &ConvLayerSpec,
                         params: &mut Vec<ParamEntry>,
                         counter: &mut u64|
     -> StageParamIdx {
        let w_idx = params.len();
        let w_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(*counter + 1));
        *counter += 1;
        push(
            format!("{prefix}.conv.w"),
            normal_init(&spec.weight_dims(), w_seed, init_std),
            params,
        );
        let b_idx = params.len();
        push(
            format!("{prefix}.conv.b"),
            Tensor::zeros(&[spec.out_channels]),
            params,
        );
        let bn = if spec.has_batchnorm {
            let g_idx = params.len();
            push(
                format!("{prefix}.bn.gamma"),
                Tensor::full(&[spec.out_channels], 1.0),
                params,
            );
            let be_idx = params.len();
            push(
                format!("{prefix}.bn.beta"),
                Tensor::zeros(&[spec.out_channels]),
                params,
            );
            Some((g_idx, be_idx))
        } else {
            None
        };
        StageParamIdx { w: w_idx, b: b_idx, bn }
    };

    let mut enc_idx = Vec::new();
    let mut bn_enc = Vec::new();
    for (i, spec) in arch.encoder.iter().enumerate() {
        enc_idx.push(add_stage(format!("enc{}", i + 1), spec, &mut params, &mut counter));
        bn_enc.push(spec.has_batchnorm.then(|| RunningStats::new(spec.out_channels)));
    }
    let mut dec_idx = Vec::new();
    let mut bn_dec = Vec::new();
    for (i, spec) in arch.decoder.iter().enumerate() {
        dec_idx.push(add_stage(format!("dec{}", i + 1), spec, &mut params, &mut counter));
        bn_dec.push(spec.has_batchnorm.then(|| RunningStats::new(spec.out_channels)));
    }

    Ok(CAEModel {
        arch: arch.clone(),
        input_dims,
        chain,
        params,
        enc_idx,
        dec_idx,
        bn_enc,
        bn_dec,
        history: Vec::new(),
    })
}

/// Per-tensor and per-section trainable parameter counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBreakdown {
    pub rows: Vec<(String, usize)>,
    pub encoder_total: usize,
    pub decoder_total: usize,
    pub total: usize,
}

/// Counts trainable parameters only (conv weights/biases, batchnorm
/// gamma/beta); running statistics are excluded.
pub fn count_parameters(model: &CAEModel) -> ParamBreakdown {
    let mut rows = Vec::new();
    let mut encoder_total = 0;
    let mut decoder_total = 0;
    for p in &model.params {
        let n = p.value.len();
        rows.push((p.name.clone(), n));
        if p.name.starts_with("enc") {
            encoder_total += n;
        } else {
            decoder_total += n;
        }
    }
    ParamBreakdown {
        rows,
        encoder_total,
        decoder_total,
        total: encoder_total + decoder_total,
    }
}

struct StageCache {
    conv_in: Tensor,
    bn: Option<BnCache>,
    /// Forward input of the activation for stages without batchnorm (with
    /// batchnorm it is reconstructed from the cache), or the forward output
    /// for sigmoid stages.
    act_cache: Option<Tensor>,
    pool_map: Option<ArgmaxMap>,
    upsample_in_dims: Option<Vec<usize>>,
}

struct ForwardPass {
    enc: Vec<StageCache>,
    dec: Vec<StageCache>,
    output: Tensor,
    new_bn_enc: Vec<Option<RunningStats>>,
    new_bn_dec: Vec<Option<RunningStats>>,
}

impl CAEModel {
    pub fn code_len(&self) -> usize {
        self.chain.code_len()
    }

    pub fn parameters(&self) -> &[ParamEntry] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| CoreError::data(format!("unknown parameter '{name}'")))?;
        if entry.value.dims() != value.dims() {
            return Err(CoreError::shape(
                "set_parameter",
                format!(
                    "'{name}' expects dims {:?}, got {:?}",
                    entry.value.dims(),
                    value.dims()
                ),
            ));
        }
        entry.value = value;
        Ok(())
    }

    /// Batchnorm running stats as named vectors ("enc1", "dec2", ...).
    pub fn bn_states(&self) -> Vec<(String, &RunningStats)> {
        let mut out = Vec::new();
        for (i, s) in self.bn_enc.iter().enumerate() {
            if let Some(st) = s {
                out.push((format!("enc{}", i + 1), st));
            }
        }
        for (i, s) in self.bn_dec.iter().enumerate() {
            if let Some(st) = s {
                out.push((format!("dec{}", i + 1), st));
            }
        }
        out
    }

    pub fn set_bn_state(&mut self, stage: &str, stats: RunningStats) -> Result<()> {
        let slot = if let Some(rest) = stage.strip_prefix("enc") {
            let i: usize = rest
                .parse()
                .map_err(|_| CoreError::data(format!("bad stage name '{stage}'")))?;
            self.bn_enc.get_mut(i - 1)
        } else if let Some(rest) = stage.strip_prefix("dec") {
            let i: usize = rest
                .parse()
                .map_err(|_| CoreError::data(format!("bad stage name '{stage}'")))?;
            self.bn_dec.get_mut(i - 1)
        } else {
            None
        };
        match slot {
            Some(Some(existing)) if existing.channels() == stats.channels() => {
                *existing = stats;
                Ok(())
            }
            Some(Some(existing)) => Err(CoreError::shape(
                "set_bn_state",
                format!(
                    "stage '{stage}' tracks {} channels, got {}",
                    existing.channels(),
                    stats.channels()
                ),
            )),
            _ => Err(CoreError::data(format!(
                "stage '{stage}' has no batchnorm slot"
            ))),
        }
    }

    fn gamma_beta(&self, idx: &StageParamIdx) -> (&Tensor, &Tensor) {
        let (g, b) = idx.bn.expect("stage has batchnorm");
        (&self.params[g].value, &self.params[b].value)
    }

    /// Validates a `[B, N, M]` batch against the build-time input dims and
    /// reshapes it to `[B, 1, N, M]`.
    fn check_batch(&self, batch: &Tensor, op: &'static str) -> Result<Tensor> {
        let dims = batch.dims().to_vec();
        let (n, m) = self.input_dims;
        let b = match dims[..] {
            [bn, bm] if bn == n && bm == m => 1,
            [b, bn, bm] if bn == n && bm == m => b,
            [b, 1, bn, bm] if bn == n && bm == m => b,
            _ => {
                return Err(CoreError::shape(
                    op,
                    format!("batch dims {dims:?} do not match model input {n}x{m}"),
                ))
            }
        };
        batch.clone().reshaped(vec![b, 1, n, m])
    }

    fn forward_train(&self, batch: &Tensor, momentum: f64) -> Result<ForwardPass> {
        let mut x = self.check_batch(batch, "cae_forward")?;
        let mut enc = Vec::with_capacity(self.arch.encoder.len());
        let mut new_bn_enc = vec![None; self.bn_enc.len()];
        for (i, spec) in self.arch.encoder.iter().enumerate() {
            let idx = &self.enc_idx[i];
            let conv_in = x;
            let conv_out = conv2d_forward(
                &conv_in,
                &self.params[idx.w].value,
                &self.params[idx.b].value,
                spec,
            )?;
            let (bn_out, bn_cache) = if spec.has_batchnorm {
                let (g, b) = self.gamma_beta(idx);
                let stats = self.bn_enc[i].as_ref().unwrap();
                let (out, cache, next) = batchnorm_train(&conv_out, g, b, stats, momentum)?;
                new_bn_enc[i] = Some(next);
                (out, Some(cache))
            } else {
                (conv_out, None)
            };
            let act_out = spec.activation.forward(&bn_out);
            let act_cache = match (spec.activation, spec.has_batchnorm) {
                (Activation::Sigmoid, _) => Some(act_out.clone()),
                (Activation::Gelu, false) => Some(bn_out),
                _ => None,
            };
            let (pool_out, map) = maxpool2x2_forward(&act_out)?;
            enc.push(StageCache {
                conv_in,
                bn: bn_cache,
                act_cache,
                pool_map: Some(map),
                upsample_in_dims: None,
            });
            x = pool_out;
        }

        let mut dec = Vec::with_capacity(self.arch.decoder.len());
        let mut new_bn_dec = vec![None; self.bn_dec.len()];
        for (i, spec) in self.arch.decoder.iter().enumerate() {
            let idx = &self.dec_idx[i];
            let up_in_dims = x.dims().to_vec();
            let up = upsample_to_forward(&x, self.chain.decoder[i].upsample_to)?;
            let conv_out = conv2d_forward(
                &up,
                &self.params[idx.w].value,
                &self.params[idx.b].value,
                spec,
            )?;
            let (bn_out, bn_cache) = if spec.has_batchnorm {
                let (g, b) = self.gamma_beta(idx);
                let stats = self.bn_dec[i].as_ref().unwrap();
                let (out, cache, next) = batchnorm_train(&conv_out, g, b, stats, momentum)?;
                new_bn_dec[i] = Some(next);
                (out, Some(cache))
            } else {
                (conv_out, None)
            };
            let act_out = spec.activation.forward(&bn_out);
            let act_cache = match (spec.activation, spec.has_batchnorm) {
                (Activation::Sigmoid, _) => Some(act_out.clone()),
                (Activation::Gelu, false) => Some(bn_out),
                _ => None,
            };
            dec.push(StageCache {
                conv_in: up,
                bn: bn_cache,
                act_cache,
                pool_map: None,
                upsample_in_dims: Some(up_in_dims),
            });
            x = act_out;
        }
        Ok(ForwardPass {
            enc,
            dec,
            output: x,
            new_bn_enc,
            new_bn_dec,
        })
    }

    /// Rebuilds the activation input of a batchnorm stage from its cache.
    fn reconstruct_act_input(&self, cache: &BnCache, idx: &StageParamIdx) -> Tensor {
        let (gamma, beta) = self.gamma_beta(idx);
        let (_, c, h, w) = cache
            .xhat
            .dims4("reconstruct")
            .expect("bn cache is rank 4");
        let hw = h * w;
        let mut out = cache.xhat.clone();
        let g = gamma.data();
        let b = beta.data();
        for (j, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let ch = j % c;
            for v in chunk.iter_mut() {
                *v = g[ch] * *v + b[ch];
            }
        }
        out
    }

    /// Backward through the whole autoencoder; returns gradients aligned
    /// with `parameters()` order.
    fn backward(&self, pass: &ForwardPass, grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect();
        let mut g = grad_output.clone();

        for (i, spec) in self.arch.decoder.iter().enumerate().rev() {
            let idx = &self.dec_idx[i];
            let cache = &pass.dec[i];
            // activation
            g = match spec.activation {
                Activation::Sigmoid => {
                    spec.activation.backward(&g, cache.act_cache.as_ref().unwrap())
                }
                Activation::Gelu => {
                    if let Some(bn) = &cache.bn {
                        let act_in = self.reconstruct_act_input(bn, idx);
                        spec.activation.backward(&g, &act_in)
                    } else {
                        spec.activation.backward(&g, cache.act_cache.as_ref().unwrap())
                    }
                }
                Activation::Identity => g,
            };
            // batchnorm
            if let Some(bn) = &cache.bn {
                let (gamma, _) = self.gamma_beta(idx);
                let (gi, gg, gb) = batchnorm_backward(&g, bn, gamma)?;
                let (gidx, bidx) = idx.bn.unwrap();
                grads[gidx] = gg;
                grads[bidx] = gb;
                g = gi;
            }
            // conv
            let (gi, gw, gb) =
                conv2d_backward(&g, &cache.conv_in, &self.params[idx.w].value, spec)?;
            grads[idx.w] = gw;
            grads[idx.b] = gb;
            // upsample
            g = upsample_to_backward(&gi, cache.upsample_in_dims.as_ref().unwrap())?;
        }

        for (i, spec) in self.arch.encoder.iter().enumerate().rev() {
            let idx = &self.enc_idx[i];
            let cache = &pass.enc[i];
            // pool
            g = maxpool2x2_backward(&g, cache.pool_map.as_ref().unwrap())?;
            // activation
            g = match spec.activation {
                Activation::Sigmoid => {
                    spec.activation.backward(&g, cache.act_cache.as_ref().unwrap())
                }
                Activation::Gelu => {
                    if let Some(bn) = &cache.bn {
                        let act_in = self.reconstruct_act_input(bn, idx);
                        spec.activation.backward(&g, &act_in)
                    } else {
                        spec.activation.backward(&g, cache.act_cache.as_ref().unwrap())
                    }
                }
                Activation::Identity => g,
            };
            // batchnorm
            if let Some(bn) = &cache.bn {
                let (gamma, _) = self.gamma_beta(idx);
                let (gi, gg, gb) = batchnorm_backward(&g, bn, gamma)?;
                let (gidx, bidx) = idx.bn.unwrap();
                grads[gidx] = gg;
                grads[bidx] = gb;
                g = gi;
            }
            // conv
            let (gi, gw, gb) =
                conv2d_backward(&g, &cache.conv_in, &self.params[idx.w].value, spec)?;
            grads[idx.w] = gw;
            grads[idx.b] = gb;
            g = gi;
        }
        Ok(grads)
    }

    /// Training-mode reconstruction loss and parameter gradients for one
    /// batch, plus the running stats the batch produced. Pure; the caller
    /// decides whether to commit the stats.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        momentum: f64,
    ) -> Result<(f64, Vec<Tensor>, Vec<Option<RunningStats>>, Vec<Option<RunningStats>>)> {
        let target = self.check_batch(batch, "cae_loss")?;
        let pass = self.forward_train(&target, momentum)?;
        let (loss, grad_out) = mse_loss(&pass.output, &target)?;
        let grads = self.backward(&pass, &grad_out)?;
        Ok((loss, grads, pass.new_bn_enc, pass.new_bn_dec))
    }

    fn encode_4d(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (i, spec) in self.arch.encoder.iter().enumerate() {
            let idx = &self.enc_idx[i];
            let conv_out = conv2d_forward(
                &x,
                &self.params[idx.w].value,
                &self.params[idx.b].value,
                spec,
            )?;
            let bn_out = if spec.has_batchnorm {
                let (g, b) = self.gamma_beta(idx);
                batchnorm_eval(&conv_out, g, b, self.bn_enc[i].as_ref().unwrap())?
            } else {
                conv_out
            };
            let act_out = spec.activation.forward(&bn_out);
            let (pool_out, _) = maxpool2x2_forward(&act_out)?;
            x = pool_out;
        }
        Ok(x)
    }

    fn decode_4d(&self, code: &Tensor) -> Result<Tensor> {
        let mut x = code.clone();
        for (i, spec) in self.arch.decoder.iter().enumerate() {
            let idx = &self.dec_idx[i];
            let up = upsample_to_forward(&x, self.chain.decoder[i].upsample_to)?;
            let conv_out = conv2d_forward(
                &up,
                &self.params[idx.w].value,
                &self.params[idx.b].value,
                spec,
            )?;
            let bn_out = if spec.has_batchnorm {
                let (g, b) = self.gamma_beta(idx);
                batchnorm_eval(&conv_out, g, b, self.bn_dec[i].as_ref().unwrap())?
            } else {
                conv_out
            };
            x = spec.activation.forward(&bn_out);
        }
        Ok(x)
    }

    /// Eval-mode embedding extraction: `[B, N, M]` in, `[B, K]` out, where
    /// the code is flattened row-major over (channel, H, W).
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let x = self.check_batch(batch, "encode")?;
        let b = x.dims()[0];
        let code = self.encode_4d(&x)?;
        code.reshaped(vec![b, self.code_len()])
    }

    /// Eval-mode decoding of `[B, K]` codes back to `[B, 1, N, M]`.
    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        let (b, k) = code.dims2("decode")?;
        if k != self.code_len() {
            return Err(CoreError::shape(
                "decode",
                format!("code width {k} does not match model code size {}", self.code_len()),
            ));
        }
        let c = self.chain.code_channels;
        let (h, w) = self.chain.code_hw;
        let code4 = code.clone().reshaped(vec![b, c, h, w])?;
        self.decode_4d(&code4)
    }

    /// Eval-mode reconstruction MSE over a set of `[N, M]` matrices.
    pub fn reconstruction_mse(&self, set: &[Tensor], batch_size: usize) -> Result<f64> {
        if set.is_empty() {
            return Err(CoreError::data("reconstruction_mse: empty set"));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in set.chunks(batch_size.max(1)) {
            let batch = stack_batch(chunk)?;
            let x = self.check_batch(&batch, "reconstruction_mse")?;
            let code = self.encode_4d(&x)?;
            let rec = self.decode_4d(&code)?;
            let (loss, _) = mse_loss(&rec, &x)?;
            total += loss * x.len() as f64;
            count += x.len();
        }
        Ok(total / count as f64)
    }

    fn snapshot(&self) -> (Vec<Tensor>, Vec<Option<RunningStats>>, Vec<Option<RunningStats>>) {
        (
            self.params.iter().map(|p| p.value.clone()).collect(),
            self.bn_enc.clone(),
            self.bn_dec.clone(),
        )
    }

    fn restore(
        &mut self,
        snap: (Vec<Tensor>, Vec<Option<RunningStats>>, Vec<Option<RunningStats>>),
    ) {
        for (p, v) in self.params.iter_mut().zip(snap.0) {
            p.value = v;
        }
        self.bn_enc = snap.1;
        self.bn_dec = snap.2;
    }

    fn quantize_params_f32(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Stacks `[N, M]` matrices into a `[B, N, M]` batch tensor.
pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| CoreError::data("stack_batch: empty batch"))?;
    let (n, m) = first.dims2("stack_batch")?;
    let mut data = Vec::with_capacity(items.len() * n * m);
    for t in items {
        if t.dims() != [n, m] {
            return Err(CoreError::shape(
                "stack_batch",
                format!("item dims {:?} vs {:?}", t.dims(), [n, m]),
            ));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![items.len(), n, m], data)
}

/// Trains with Adam + reduce-on-plateau, early-stops on validation MSE and
/// returns the best-validation-epoch weights, with the full epoch history.
pub fn train_cae(
    mut model: CAEModel,
    train: &[Tensor],
    val: &[Tensor],
    cfg: &TrainConfig,
) -> Result<CAEModel> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::data("train_cae: empty train or validation split"));
    }
    let mut scheduler = SchedulerState::new(
        cfg.adam.lr,
        cfg.scheduler_factor,
        cfg.scheduler_patience,
        cfg.scheduler_rel_threshold,
        cfg.min_lr,
    )?;
    let momentum = model.arch.bn_momentum;
    if cfg.precision == Precision::Bits32 {
        model.quantize_params_f32();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_snap = None;
    let mut epochs_without_improvement = 0usize;
    model.history.clear();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        let mut train_elems = 0usize;
        for (batch_no, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<Tensor> = idxs.iter().map(|&i| train[i].clone()).collect();
            let batch = stack_batch(&items)?;
            let (loss, grads, bn_e, bn_d) = model
                .loss_and_gradients(&batch, momentum)
                .map_err(|e| wrap_batch_err(e, epoch, batch_no))?;
            if !loss.is_finite() {
                return Err(CoreError::non_finite(format!(
                    "training loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            for (slot, next) in model.bn_enc.iter_mut().zip(bn_e) {
                if let Some(next) = next {
                    *slot = Some(next);
                }
            }
            for (slot, next) in model.bn_dec.iter_mut().zip(bn_d) {
                if let Some(next) = next {
                    *slot = Some(next);
                }
            }
            let lr = scheduler.current_lr;
            for (p, g) in model.params.iter_mut().zip(&grads) {
                adam_step(&mut p.value, g, &mut p.adam, &cfg.adam, lr, &p.name)
                    .map_err(|e| wrap_batch_err(e, epoch, batch_no))?;
            }
            if cfg.precision == Precision::Bits32 {
                model.quantize_params_f32();
            }
            train_loss_sum += loss * batch.len() as f64;
            train_elems += batch.len();
        }
        let train_mse = train_loss_sum / train_elems as f64;
        let val_mse = model.reconstruction_mse(val, cfg.batch_size)?;
        scheduler = crate::optim::scheduler_update(&scheduler, val_mse)?;
        model.history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: scheduler.current_lr,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_snap = Some(model.snapshot());
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if let Some(snap) = best_snap {
        model.restore(snap);
    }
    Ok(model)
}

fn wrap_batch_err(e: CoreError, epoch: usize, batch: usize) -> CoreError {
    match e {
        CoreError::NonFinite { context } => CoreError::non_finite(format!(
            "{context} (epoch {epoch}, batch {batch})"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape_chain_matches_paper_geometry() {
        let arch = CAEArchitecture::reference(false);
        let chain = compute_shape_chain(&arch, (20, 409)).unwrap();
        let h: Vec<usize> = chain.encoder.iter().flat_map(|s| [s.pre_pool.0, s.post_pool.0]).collect();
        let w: Vec<usize> = chain.encoder.iter().flat_map(|s| [s.pre_pool.1, s.post_pool.1]).collect();
        assert_eq!(h, vec![22, 11, 13, 6, 6, 3, 3, 1]);
        assert_eq!(w, vec![411, 205, 207, 103, 103, 51, 51, 25]);
        assert_eq!(chain.code_channels, 10);
        assert_eq!(chain.code_hw, (1, 25));
        assert_eq!(chain.code_len(), 250);
        // decoder mirror walks back to the input dims
        assert_eq!(chain.decoder.last().unwrap().conv_out, (20, 409));
    }

    #[test]
    fn audio_only_width_gives_fifty_dim_code() {
        let arch = CAEArchitecture::reference(false);
        let chain = compute_shape_chain(&arch, (20, 74)).unwrap();
        assert_eq!(chain.code_len(), 50);
    }

    #[test]
    fn same_seed_builds_identical_weights() {
        let arch = CAEArchitecture::reference(false);
        let a = build_cae((20, 74), &arch, 11, 0.02).unwrap();
        let b = build_cae((20, 74), &arch, 11, 0.02).unwrap();
        for (x, y) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(x.value, y.value, "{}", x.name);
        }
    }

    #[test]
    fn too_small_input_names_failing_stage() {
        let arch = CAEArchitecture::reference(false);
        let err = compute_shape_chain(&arch, (8, 409)).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("stage"), "{msg}");
    }

    #[test]
    fn reference_parameter_count_matches_published_totals() {
        let arch = CAEArchitecture::reference(false);
        let model = build_cae((20, 409), &arch, 0, 0.02).unwrap();
        let breakdown = count_parameters(&model);
        assert_eq!(breakdown.encoder_total, 256_202);
        // layer-by-layer conv-only closed form
        let conv_only: usize = arch.encoder.iter().map(|s| s.conv_param_count()).sum();
        assert_eq!(conv_only, 255_754);
        assert_eq!(
            arch.encoder.iter().map(|s| s.conv_param_count()).collect::<Vec<_>>(),
            vec![320, 18_496, 204_928, 32_010]
        );
        // alternate full-batchnorm placement adds gamma+beta on the code conv
        let full = build_cae((20, 409), &CAEArchitecture::reference(true), 0, 0.02).unwrap();
        assert_eq!(count_parameters(&full).encoder_total, 256_222);
    }

    #[test]
    fn breakdown_rows_sum_to_total() {
        let model = build_cae((20, 409), &CAEArchitecture::reference(false), 0, 0.02).unwrap();
        let b = count_parameters(&model);
        let sum: usize = b.rows.iter().map(|(_, n)| n).sum();
        assert_eq!(sum, b.total);
        // independent dimension walker over the parameter list
        let walked: usize = model
            .parameters()
            .iter()
            .map(|p| p.value.dims().iter().product::<usize>())
            .sum();
        assert_eq!(walked, b.total);
    }

    #[test]
    fn encoder_count_is_task_independent() {
        // the downstream head never touches the extractor
        let model = build_cae((20, 409), &CAEArchitecture::reference(false), 3, 0.02).unwrap();
        let enc = count_parameters(&model).encoder_total;
        assert_eq!(enc, 256_202);
        let again = build_cae((20, 409), &CAEArchitecture::reference(false), 99, 0.02).unwrap();
        assert_eq!(count_parameters(&again).encoder_total, enc);
    }

    #[test]
    fn encode_requires_matching_width() {
        let model = build_cae((20, 74), &CAEArchitecture::reference(false), 0, 0.02).unwrap();
        let batch = Tensor::zeros(&[2, 20, 409]);
        assert!(matches!(
            model.encode(&batch).unwrap_err(),
            CoreError::Shape { .. }
        ));
    }

    #[test]
    fn encode_before_any_training_is_usage_error() {
        // batchnorm running stats are unfitted on a freshly built model
        let model = build_cae((20, 74), &CAEArchitecture::reference(false), 0, 0.02).unwrap();
        let batch = Tensor::full(&[1, 20, 74], 0.5);
        assert!(matches!(
            model.encode(&batch).unwrap_err(),
            CoreError::Usage { .. }
        ));
    }

    fn tiny_arch() -> CAEArchitecture {
        // two stages each way, small channels, same kernel/padding family
        let stage = |cin, cout, k, bn, act| ConvLayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            padding: (2, 2),
            stride: (1, 1),
            has_batchnorm: bn,
            activation: act,
        };
        CAEArchitecture {
            encoder: vec![
                stage(1, 4, 3, true, Activation::Gelu),
                stage(4, 3, 5, false, Activation::Gelu),
            ],
            decoder: vec![
                stage(3, 4, 5, true, Activation::Gelu),
                stage(4, 1, 3, false, Activation::Sigmoid),
            ],
            bn_momentum: 0.1,
        }
    }

    fn tiny_inputs(n: usize, seed: u64) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                normal_init(&[12, 18], seed.wrapping_add(i as u64), 1.0)
                    .map(|v| crate::ops::activation::sigmoid_scalar(v))
            })
            .collect()
    }

    #[test]
    fn training_improves_and_is_deterministic() {
        let arch = tiny_arch();
        let train = tiny_inputs(8, 100);
        let val = tiny_inputs(4, 200);
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 8,
            early_stop_patience: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let m1 = build_cae((12, 18), &arch, 1, 0.05).unwrap();
        let m1 = train_cae(m1, &train, &val, &cfg).unwrap();
        assert!(!m1.history.is_empty());
        let best = m1.reconstruction_mse(&val, 4).unwrap();
        for e in &m1.history {
            assert!(best <= e.val_mse + 1e-12, "best {best} vs epoch {e:?}");
        }

        let m2 = build_cae((12, 18), &arch, 1, 0.05).unwrap();
        let m2 = train_cae(m2, &train, &val, &cfg).unwrap();
        assert_eq!(m1.history, m2.history);
        for (a, b) in m1.parameters().iter().zip(m2.parameters()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn encode_decode_round_trip_dims_and_range() {
        let arch = tiny_arch();
        let train = tiny_inputs(6, 300);
        let cfg = TrainConfig {
            batch_size: 6,
            max_epochs: 2,
            early_stop_patience: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let model = build_cae((12, 18), &arch, 2, 0.05).unwrap();
        let model = train_cae(model, &train, &train, &cfg).unwrap();
        let batch = stack_batch(&train).unwrap();
        let code = model.encode(&batch).unwrap();
        assert_eq!(code.dims(), &[6, model.code_len()]);
        let rec = model.decode(&code).unwrap();
        assert_eq!(rec.dims(), &[6, 1, 12, 18]);
        assert!(rec.data().iter().all(|&v| v > 0.0 && v < 1.0));

        // identical rows encode identically; batch permutation permutes rows
        let twin = stack_batch(&[train[0].clone(), train[0].clone()]).unwrap();
        let tc = model.encode(&twin).unwrap();
        let k = model.code_len();
        assert_eq!(tc.data()[..k], tc.data()[k..2 * k]);
        let pair = stack_batch(&[train[1].clone(), train[2].clone()]).unwrap();
        let swapped = stack_batch(&[train[2].clone(), train[1].clone()]).unwrap();
        let a = model.encode(&pair).unwrap();
        let b = model.encode(&swapped).unwrap();
        assert_eq!(a.data()[..k], b.data()[k..2 * k]);
        assert_eq!(a.data()[k..2 * k], b.data()[..k]);
    }

    #[test]
    fn decode_rejects_wrong_code_width() {
        let model = build_cae((12, 18), &tiny_arch(), 2, 0.05).unwrap();
        let bad = Tensor::zeros(&[1, model.code_len() + 1]);
        assert!(matches!(
            model.decode(&bad).unwrap_err(),
            CoreError::Shape { .. }
        ));
    }

    #[test]
    fn shape_chain_matches_empirical_dims_on_random_sizes() {
        let arch = tiny_arch();
        for &(n, m) in &[(12usize, 18usize), (16, 16), (13, 21), (20, 32)] {
            let model = build_cae((n, m), &arch, 7, 0.05).unwrap();
            let x = Tensor::full(&[n, m], 0.3);
            // train one step so eval stats exist
            let cfg = TrainConfig {
                batch_size: 2,
                max_epochs: 1,
                early_stop_patience: 1,
                seed: 1,
                ..TrainConfig::default()
            };
            let model = train_cae(model, &[x.clone(), x.clone()], &[x.clone()], &cfg).unwrap();
            let code = model.encode(&x).unwrap();
            assert_eq!(code.dims()[1], model.chain.code_len());
            let rec = model.decode(&code).unwrap();
            assert_eq!(rec.dims(), &[1, 1, n, m]);
        }
    }
}
