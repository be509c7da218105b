//! Nearest-neighbor upsampling to an explicit target shape.
//!
//! The decoder uses this to undo pooling: upsampling to the exact recorded
//! shape (rather than a fixed x2 factor) is what lets the reconstruction land
//! back on the original dims despite floor-semantics pooling.

use alloc::format;

use crate::error::{CoreError, Result};
use crate::par;
use crate::tensor::Tensor;

/// `output[y, x] = input[floor(y*h/H), floor(x*w/W)]` per channel.
pub fn upsample_to_forward(input: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let op = "upsample_to_forward";
    let (b, c, h, w) = input.dims4(op)?;
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(CoreError::shape(
            op,
            format!("target {th}x{tw} smaller than input {h}x{w}"),
        ));
    }
    let mut out = Tensor::zeros(&[b, c, th, tw]);
    let in_item = c * h * w;
    let out_item = c * th * tw;
    let in_data = input.data();
    par::for_each_item(out.data_mut(), out_item, |i, out_chunk| {
        let item = &in_data[i * in_item..(i + 1) * in_item];
        for ch in 0..c {
            for y in 0..th {
                let sy = y * h / th;
                let src_row = (ch * h + sy) * w;
                let dst_row = (ch * th + y) * tw;
                for x in 0..tw {
                    out_chunk[dst_row + x] = item[src_row + x * w / tw];
                }
            }
        }
    });
    Ok(out)
}

/// Accumulates each output-cell gradient onto its nearest-neighbor source.
pub fn upsample_to_backward(grad_out: &Tensor, input_dims: &[usize]) -> Result<Tensor> {
    let op = "upsample_to_backward";
    let (b, c, th, tw) = grad_out.dims4(op)?;
    let (gb, gc, h, w) = match input_dims {
        [b, c, h, w] => (*b, *c, *h, *w),
        _ => {
            return Err(CoreError::shape(
                op,
                format!("input dims {input_dims:?} are not rank 4"),
            ))
        }
    };
    if gb != b || gc != c || th < h || tw < w {
        return Err(CoreError::shape(
            op,
            format!("grad_out {:?} incompatible with input dims {input_dims:?}", grad_out.dims()),
        ));
    }
    let mut grad_input = Tensor::zeros(input_dims);
    let in_item = c * h * w;
    let out_item = c * th * tw;
    let go = grad_out.data();
    par::for_each_item(grad_input.data_mut(), in_item, |i, gi_item| {
        let go_item = &go[i * out_item..(i + 1) * out_item];
        for ch in 0..c {
            for y in 0..th {
                let sy = y * h / th;
                let dst_row = (ch * h + sy) * w;
                let src_row = (ch * th + y) * tw;
                for x in 0..tw {
                    gi_item[dst_row + x * w / tw] += go_item[src_row + x];
                }
            }
        }
    });
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn broadcast_single_value() {
        let input = Tensor::new(vec![1, 1, 1, 1], vec![3.5]).unwrap();
        let out = upsample_to_forward(&input, (2, 2)).unwrap();
        assert_eq!(out.dims(), &[1, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn decoder_mirror_shape() {
        let input = Tensor::zeros(&[1, 10, 1, 25]);
        let out = upsample_to_forward(&input, (3, 51)).unwrap();
        assert_eq!(out.dims(), &[1, 10, 3, 51]);
    }

    #[test]
    fn identity_when_target_equals_input() {
        let input = Tensor::new(vec![1, 2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let out = upsample_to_forward(&input, (2, 3)).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn shrinking_target_is_shape_error() {
        let input = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            upsample_to_forward(&input, (2, 4)).unwrap_err(),
            CoreError::Shape { .. }
        ));
    }

    #[test]
    fn backward_accumulates_fanout() {
        let input = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let out = upsample_to_forward(&input, (2, 4)).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let gi = upsample_to_backward(&Tensor::full(&[1, 1, 2, 4], 1.0), &[1, 1, 1, 2]).unwrap();
        // each source cell fans out to 4 targets
        assert_eq!(gi.data(), &[4.0, 4.0]);
    }

    #[test]
    fn uneven_ratio_matches_floor_rule() {
        let input = Tensor::new(vec![1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
        let out = upsample_to_forward(&input, (1, 5)).unwrap();
        // floor(x*2/5) for x = 0..4 -> 0,0,0,1,1
        assert_eq!(out.data(), &[10.0, 10.0, 10.0, 20.0, 20.0]);
    }
}
