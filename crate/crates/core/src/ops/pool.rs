//! Max pooling with recorded switches, and the matching unpool scatter.

use super::conv::output_extent;
use crate::error::{Error, Result};
use crate::tensor::{Switches, Tensor};

/// Windowed maximum. Padded cells count as negative infinity; ties go to the
/// smallest linear index in the window.
pub fn maxpool(input: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<(Tensor, Switches)> {
    if input.rank() != 4 {
        return Err(Error::dim("maxpool", format!("input must be rank 4, got {:?}", input.shape())));
    }
    if pad >= kernel {
        return Err(Error::dim("maxpool", format!("pad {pad} must be smaller than window {kernel}")));
    }
    let [n, c, h, w] = input.dims4();
    let ho = output_extent(h, kernel, stride, pad)?;
    let wo = output_extent(w, kernel, stride, pad)?;
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut switches = Vec::with_capacity(n * c * ho * wo);

    for plane in src.chunks_exact(h * w) {
        for oy in 0..ho {
            let y0 = (oy * stride) as isize - pad as isize;
            let ys = y0.max(0) as usize..((y0 + kernel as isize).min(h as isize)) as usize;
            for ox in 0..wo {
                let x0 = (ox * stride) as isize - pad as isize;
                let xs = x0.max(0) as usize..((x0 + kernel as isize).min(w as isize)) as usize;
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for y in ys.clone() {
                    for x in xs.clone() {
                        let v = plane[y * w + x];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = y * w + x;
                        }
                    }
                }
                if best_idx == usize::MAX {
                    return Err(Error::dim("maxpool", "window covers only padding"));
                }
                out.push(best);
                switches.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, ho, wo], out)?,
        Switches {
            dims: [n, c, ho, wo],
            input_hw: [h, w],
            indices: switches,
        },
    ))
}

/// Scatter `grad` back to the pre-pool extents through `switches`.
/// Windows that selected the same cell accumulate.
pub fn unpool(grad: &Tensor, switches: &Switches, input_dims: [usize; 4]) -> Result<Tensor> {
    if grad.dims4() != switches.dims || grad.rank() != 4 {
        return Err(Error::dim(
            "unpool",
            format!("grad extents {:?} vs switch extents {:?}", grad.shape(), switches.dims),
        ));
    }
    let [n, c, h, w] = input_dims;
    if n != switches.dims[0] || c != switches.dims[1] {
        return Err(Error::dim(
            "unpool",
            format!("input dims {input_dims:?} disagree with switch extents {:?}", switches.dims),
        ));
    }
    if switches.indices.len() != grad.len() {
        return Err(Error::Corruption {
            what: "switches",
            detail: format!("{} indices for {} cells", switches.indices.len(), grad.len()),
        });
    }
    let plane_out = switches.dims[2] * switches.dims[3];
    let mut out = Tensor::zeros(&input_dims)?;
    let dst = out.data_mut();
    for (p, (g_plane, s_plane)) in grad
        .data()
        .chunks_exact(plane_out)
        .zip(switches.indices.chunks_exact(plane_out))
        .enumerate()
    {
        let base = p * h * w;
        for (&g, &idx) in g_plane.iter().zip(s_plane) {
            if idx >= h * w {
                return Err(Error::Corruption {
                    what: "switches",
                    detail: format!("index {idx} outside {h}x{w} plane"),
                });
            }
            dst[base + idx] += g;
        }
    }
    Ok(out)
}
