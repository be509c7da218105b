//! 2x2 max-pooling with argmax routing for the backward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::par;
use crate::tensor::Tensor;

/// Winning position per pooling window, recorded by the forward pass.
///
/// Indices are flat offsets relative to each batch item, so the backward
/// scatter can run per item. The map remembers the dims it was built for and
/// rejects gradients that do not belong to it.
#[derive(Debug, Clone)]
pub struct ArgmaxMap {
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    winners: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.out_dims
    }
}

/// Max over non-overlapping 2x2 windows; trailing odd row/column is dropped.
///
/// Ties resolve to the first position in row-major window order.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, ArgmaxMap)> {
    let op = "maxpool2x2_forward";
    let (b, c, h, w) = input.dims4(op)?;
    if h < 2 || w < 2 {
        return Err(CoreError::shape(
            op,
            format!("spatial dims {h}x{w} too small for a 2x2 window"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut winners = vec![0usize; b * c * oh * ow];
    let in_item = c * h * w;
    let out_item = c * oh * ow;
    let in_data = input.data();
    par::for_each_item_with_index(
        out.data_mut(),
        out_item,
        &mut winners,
        out_item,
        |i, out_chunk, win_chunk| {
            let item = &in_data[i * in_item..(i + 1) * in_item];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = (ch * h + 2 * oy) * w + 2 * ox;
                        let cand = [base, base + 1, base + w, base + w + 1];
                        let mut best = cand[0];
                        let mut best_v = item[cand[0]];
                        for &p in &cand[1..] {
                            if item[p] > best_v {
                                best_v = item[p];
                                best = p;
                            }
                        }
                        let o_idx = (ch * oh + oy) * ow + ox;
                        out_chunk[o_idx] = best_v;
                        win_chunk[o_idx] = best;
                    }
                }
            }
        },
    );
    let map = ArgmaxMap {
        in_dims: input.dims().to_vec(),
        out_dims: out.dims().to_vec(),
        winners,
    };
    Ok((out, map))
}

/// Routes each output gradient to its recorded argmax position; every other
/// input cell (including rows/columns dropped by floor semantics) gets zero.
pub fn maxpool2x2_backward(grad_out: &Tensor, map: &ArgmaxMap) -> Result<Tensor> {
    let op = "maxpool2x2_backward";
    if grad_out.dims() != map.out_dims.as_slice() {
        return Err(CoreError::usage(
            op,
            format!(
                "grad_out dims {:?} do not match the map's output dims {:?} (stale map?)",
                grad_out.dims(),
                map.out_dims
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(&map.in_dims);
    let in_item: usize = map.in_dims[1..].iter().product();
    let out_item: usize = map.out_dims[1..].iter().product();
    let go = grad_out.data();
    let winners = &map.winners;
    par::for_each_item(grad_input.data_mut(), in_item, |i, gi_item| {
        let go_item = &go[i * out_item..(i + 1) * out_item];
        let win_item = &winners[i * out_item..(i + 1) * out_item];
        for (&w, &g) in win_item.iter().zip(go_item) {
            gi_item[w] += g;
        }
    });
    Ok(grad_input)
}
