//! 2-D convolution (cross-correlation) forward and backward passes.
//!
//! Implemented as im2col plus gemm per batch item. The weight-gradient
//! reduction over the batch goes through fixed-order chunk partials, so the
//! result does not depend on how many worker threads run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::gemm::gemm;
use crate::ops::activation::Activation;
use crate::par;
use crate::tensor::Tensor;

/// Geometry and layer options for one convolutional stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub stride: (usize, usize),
    pub has_batchnorm: bool,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(CoreError::build(format!(
                "kernel must be positive, got {:?}",
                self.kernel
            )));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(CoreError::build(format!(
                "stride must be positive, got {:?}",
                self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(CoreError::build("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// Trainable parameter count of the conv itself (weights + biases).
    pub fn conv_param_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel.0 * self.kernel.1 + 1)
    }
}

/// Output spatial dims: `(H + 2p - k) / s + 1`, floor division.
pub fn conv_output_hw(spec: &ConvLayerSpec, h: usize, w: usize) -> Result<(usize, usize)> {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let (sh, sw) = spec.stride;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(CoreError::shape(
            "conv2d",
            format!(
                "input {h}x{w} with padding {ph}x{pw} smaller than kernel {kh}x{kw}"
            ),
        ));
    }
    Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
}

fn check_operands(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvLayerSpec,
) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = input.dims4(op)?;
    if c != spec.in_channels {
        return Err(CoreError::shape(
            op,
            format!(
                "input has {c} channels (dims {:?}) but spec expects {}",
                input.dims(),
                spec.in_channels
            ),
        ));
    }
    if weights.dims() != spec.weight_dims().as_slice() {
        return Err(CoreError::shape(
            op,
            format!(
                "weight dims {:?} do not match spec dims {:?}",
                weights.dims(),
                spec.weight_dims()
            ),
        ));
    }
    if bias.dims() != [spec.out_channels] {
        return Err(CoreError::shape(
            op,
            format!(
                "bias dims {:?} do not match out_channels {}",
                bias.dims(),
                spec.out_channels
            ),
        ));
    }
    Ok((b, c, h, w))
}

/// Gather one item's patches into `cols[C*kh*kw, H'*W']` (zero padding).
#[allow(clippy::too_many_arguments)]
fn im2col(
    item: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvLayerSpec,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let (sh, sw) = spec.stride;
    let hw = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * hw;
                for oy in 0..oh {
                    let dst = row + oy * ow;
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        cols[dst..dst + ow].fill(0.0);
                        continue;
                    }
                    let src_row = (ch * h + iy as usize) * w;
                    if sw == 1 {
                        // valid ox range: 0 <= ox + kx - pw < w
                        let lo = pw.saturating_sub(kx).min(ow);
                        let hi = (w + pw - kx).min(ow).max(lo);
                        cols[dst..dst + lo].fill(0.0);
                        let ix0 = lo + kx - pw;
                        cols[dst + lo..dst + hi]
                            .copy_from_slice(&item[src_row + ix0..src_row + ix0 + (hi - lo)]);
                        cols[dst + hi..dst + ow].fill(0.0);
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            cols[dst + ox] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                item[src_row + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of `cols` back onto an item's input layout; inverse of `im2col`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvLayerSpec,
    oh: usize,
    ow: usize,
    item: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let (sh, sw) = spec.stride;
    let hw = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * hw;
                for oy in 0..oh {
                    let src = row + oy * ow;
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ch * h + iy as usize) * w;
                    if sw == 1 {
                        let lo = pw.saturating_sub(kx).min(ow);
                        let hi = (w + pw - kx).min(ow).max(lo);
                        let ix0 = lo + kx - pw;
                        for (d, s) in item[dst_row + ix0..dst_row + ix0 + (hi - lo)]
                            .iter_mut()
                            .zip(&cols[src + lo..src + hi])
                        {
                            *d += s;
                        }
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                item[dst_row + ix as usize] += cols[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input[B,C,H,W]` with `weights[O,C,kh,kw]` plus bias.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvLayerSpec,
) -> Result<Tensor> {
    let op = "conv2d_forward";
    let (b, c, h, w) = check_operands(op, input, weights, bias, spec)?;
    let (oh, ow) = conv_output_hw(spec, h, w)?;
    let o = spec.out_channels;
    let ck = c * spec.kernel.0 * spec.kernel.1;
    let hw = oh * ow;

    let mut out = Tensor::zeros(&[b, o, oh, ow]);
    let in_item = c * h * w;
    let in_data = input.data();
    let w_data = weights.data();
    let b_data = bias.data();
    par::for_each_item(out.data_mut(), o * hw, |i, out_item| {
        let mut cols = vec![0.0; ck * hw];
        im2col(
            &in_data[i * in_item..(i + 1) * in_item],
            c,
            h,
            w,
            spec,
            oh,
            ow,
            &mut cols,
        );
        gemm(o, ck, hw, w_data, false, &cols, false, 0.0, out_item);
        for (oc, chunk) in out_item.chunks_mut(hw).enumerate() {
            let bv = b_data[oc];
            for v in chunk.iter_mut() {
                *v += bv;
            }
        }
    });
    Ok(out)
}

/// Gradients of the convolution w.r.t. input, weights and bias.
///
/// `cached_input` must be the tensor the matching forward call consumed;
/// a `grad_out` whose dims disagree with that forward output is a usage error.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    weights: &Tensor,
    spec: &ConvLayerSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let op = "conv2d_backward";
    let bias_probe = Tensor::zeros(&[spec.out_channels]);
    let (b, c, h, w) = check_operands(op, cached_input, weights, &bias_probe, spec)?;
    let (oh, ow) = conv_output_hw(spec, h, w)?;
    let o = spec.out_channels;
    if grad_out.dims() != [b, o, oh, ow] {
        return Err(CoreError::usage(
            op,
            format!(
                "grad_out dims {:?} do not match the forward output [{b}, {o}, {oh}, {ow}] \
                 for the cached input {:?}",
                grad_out.dims(),
                cached_input.dims()
            ),
        ));
    }
    let ck = c * spec.kernel.0 * spec.kernel.1;
    let hw = oh * ow;
    let in_item = c * h * w;
    let out_item = o * hw;
    let in_data = cached_input.data();
    let go_data = grad_out.data();
    let w_data = weights.data();

    // Bias gradient: plain sums per output channel, batch-major order.
    let mut grad_bias = Tensor::zeros(&[o]);
    {
        let gb = grad_bias.data_mut();
        for item in go_data.chunks(out_item) {
            for (oc, chunk) in item.chunks(hw).enumerate() {
                gb[oc] += chunk.iter().sum::<f64>();
            }
        }
    }

    // Weight gradient: per-chunk partials summed in chunk order.
    let mut grad_weights = Tensor::zeros(weights.dims());
    par::chunked_sum_into(b, grad_weights.data_mut(), |range, partial| {
        let mut cols = vec![0.0; ck * hw];
        for i in range {
            im2col(
                &in_data[i * in_item..(i + 1) * in_item],
                c,
                h,
                w,
                spec,
                oh,
                ow,
                &mut cols,
            );
            gemm(
                o,
                hw,
                ck,
                &go_data[i * out_item..(i + 1) * out_item],
                false,
                &cols,
                true,
                1.0,
                partial,
            );
        }
    });

    // Input gradient: independent per item.
    let mut grad_input = Tensor::zeros(cached_input.dims());
    par::for_each_item(grad_input.data_mut(), in_item, |i, gi_item| {
        let mut gcols = vec![0.0; ck * hw];
        gemm(
            ck,
            o,
            hw,
            w_data,
            true,
            &go_data[i * out_item..(i + 1) * out_item],
            false,
            0.0,
            &mut gcols,
        );
        col2im(&gcols, c, h, w, spec, oh, ow, gi_item);
    });

    Ok((grad_input, grad_weights, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::activation::Activation;
    use alloc::vec;

    fn plain_spec(cin: usize, cout: usize, k: usize, p: usize) -> ConvLayerSpec {
        ConvLayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            padding: (p, p),
            stride: (1, 1),
            has_batchnorm: false,
            activation: Activation::Identity,
        }
    }

    /// Direct-summation reference, independent of the im2col path.
    fn conv_reference(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvLayerSpec) -> Tensor {
        let (b, c, h, w) = input.dims4("ref").unwrap();
        let (oh, ow) = conv_output_hw(spec, h, w).unwrap();
        let o = spec.out_channels;
        let (kh, kw) = spec.kernel;
        let (ph, pw) = spec.padding;
        let (sh, sw) = spec.stride;
        let mut out = Tensor::zeros(&[b, o, oh, ow]);
        for bi in 0..b {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.data()[oc];
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input.data()
                                        [((bi * c + ic) * h + iy as usize) * w + ix as usize];
                                    let wv = weights.data()
                                        [((oc * c + ic) * kh + ky) * kw + kx];
                                    acc += iv * wv;
                                }
                            }
                        }
                        out.data_mut()[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn paper_layer_one_output_dims() {
        let spec = plain_spec(1, 32, 3, 2);
        let input = Tensor::zeros(&[1, 1, 20, 409]);
        let weights = Tensor::zeros(&spec.weight_dims());
        let bias = Tensor::zeros(&[32]);
        let out = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.dims(), &[1, 32, 22, 411]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = plain_spec(1, 1, 1, 0);
        let input = Tensor::new(vec![1, 1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.5]).unwrap();
        let weights = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let spec = plain_spec(1, 1, 3, 0);
        let input = Tensor::full(&[1, 1, 3, 3], 1.0);
        let weights = Tensor::full(&[1, 1, 3, 3], 1.0);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.dims(), &[1, 1, 1, 1]);
        assert_eq!(out.scalar_value(), 9.0);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let spec = plain_spec(2, 1, 3, 0);
        let input = Tensor::zeros(&[1, 1, 4, 4]);
        let weights = Tensor::zeros(&spec.weight_dims());
        let bias = Tensor::zeros(&[1]);
        let err = conv2d_forward(&input, &weights, &bias, &spec).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[1, 1, 4, 4]") && msg.contains('2'), "{msg}");
    }

    #[test]
    fn matches_direct_summation_on_random_shapes() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(b, c, o, h, w, k, p) in &[
            (2usize, 3usize, 4usize, 5usize, 6usize, 3usize, 1usize),
            (1, 1, 2, 4, 4, 3, 2),
            (3, 2, 1, 7, 5, 5, 2),
            (1, 4, 3, 6, 6, 1, 0),
        ] {
            let spec = plain_spec(c, o, k, p);
            let input = Tensor::new(
                vec![b, c, h, w],
                (0..b * c * h * w).map(|_| next()).collect(),
            )
            .unwrap();
            let weights = Tensor::new(
                spec.weight_dims(),
                (0..o * c * k * k).map(|_| next()).collect(),
            )
            .unwrap();
            let bias = Tensor::new(vec![o], (0..o).map(|_| next()).collect()).unwrap();
            let fast = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
            let slow = conv_reference(&input, &weights, &bias, &spec);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn zero_grad_out_yields_zero_gradients() {
        let spec = plain_spec(2, 3, 3, 1);
        let input = Tensor::full(&[2, 2, 4, 4], 0.7);
        let weights = Tensor::full(&spec.weight_dims(), 0.3);
        let grad_out = Tensor::zeros(&[2, 3, 4, 4]);
        let (gi, gw, gb) = conv2d_backward(&grad_out, &input, &weights, &spec).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient_through() {
        let spec = plain_spec(1, 1, 1, 0);
        let input = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let weights = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let grad_out = Tensor::new(vec![1, 1, 2, 2], vec![5.0, -1.0, 2.0, 0.25]).unwrap();
        let (gi, _, _) = conv2d_backward(&grad_out, &input, &weights, &spec).unwrap();
        assert_eq!(gi.data(), grad_out.data());
    }

    #[test]
    fn stale_grad_out_is_usage_error() {
        let spec = plain_spec(1, 1, 3, 1);
        let input = Tensor::zeros(&[1, 1, 4, 4]);
        let weights = Tensor::zeros(&spec.weight_dims());
        let grad_out = Tensor::zeros(&[1, 1, 3, 3]);
        let err = conv2d_backward(&grad_out, &input, &weights, &spec).unwrap_err();
        assert!(matches!(err, CoreError::Usage { .. }));
    }

    #[test]
    fn stride_two_geometry() {
        let mut spec = plain_spec(1, 1, 3, 1);
        spec.stride = (2, 2);
        let input = Tensor::new(vec![1, 1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let weights = Tensor::full(&spec.weight_dims(), 1.0);
        let bias = Tensor::zeros(&[1]);
        let fast = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(fast.dims(), &[1, 1, 3, 3]);
        let slow = conv_reference(&input, &weights, &bias, &spec);
        assert_eq!(fast.data(), slow.data());
    }
}
