//! Direct 2D convolution and its adjoint.
//!
//! Both kernels walk `(ci, ky, kx)` in the same fixed order for every output
//! element, so results are bit-identical across runs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent of a strided window along one axis: `(size + 2*pad - kernel) / stride + 1`.
pub fn output_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("window", "stride must be positive"));
    }
    if kernel == 0 {
        return Err(Error::dim("window", "kernel extent must be positive"));
    }
    let padded = size + 2 * pad;
    if padded < kernel {
        return Err(Error::dim(
            "window",
            format!("kernel {kernel} larger than padded input {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output columns whose tap `k` lands inside `[0, size)`.
#[inline]
fn valid_range(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // first o with o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // last o with o*stride + k - pad <= size - 1
    let limit = size + pad - 1;
    let hi = if k > limit { 0 } else { ((limit - k) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

fn conv_dims(input: &[usize; 4], weight: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    if weight.rank() != 4 {
        return Err(Error::dim(op, format!("weight must be rank 4, got {:?}", weight.shape())));
    }
    let [co, ci, kh, kw] = weight.dims4();
    if ci != input[1] {
        return Err(Error::dim(
            op,
            format!("weight axis 1 (Ci={ci}) does not match input axis 1 (C={})", input[1]),
        ));
    }
    Ok([co, ci, kh, kw])
}

/// Cross-correlation with zero padding. `input` is `[N, Ci, H, W]`, `weight` is
/// `[Co, Ci, Kh, Kw]`; returns `[N, Co, Ho, Wo]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::dim("conv2d", format!("input must be rank 4, got {:?}", input.shape())));
    }
    let idims = input.dims4();
    let [n, _, h, w] = idims;
    let [co, ci, kh, kw] = conv_dims(&idims, weight, "conv2d")?;
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::dim("conv2d", format!("bias length {} != Co {co}", b.len())));
        }
    }
    let ho = output_extent(h, kh, stride, pad)?;
    let wo = output_extent(w, kw, stride, pad)?;

    let src = input.data();
    let wts = weight.data();
    let mut out = vec![0.0f32; n * co * ho * wo];
    let col_ranges: Vec<_> = (0..kw).map(|kx| valid_range(wo, w, kx, stride, pad)).collect();
    let row_ranges: Vec<_> = (0..kh).map(|ky| valid_range(ho, h, ky, stride, pad)).collect();

    for b in 0..n {
        for o in 0..co {
            let plane = &mut out[(b * co + o) * ho * wo..][..ho * wo];
            for c in 0..ci {
                let in_plane = &src[(b * ci + c) * h * w..][..h * w];
                let kernel = &wts[(o * ci + c) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy0, oy1) = row_ranges[ky];
                    for kx in 0..kw {
                        let wv = kernel[ky * kw + kx];
                        let (ox0, ox1) = col_ranges[kx];
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * w..][..w];
                            let out_row = &mut plane[oy * wo..][..wo];
                            if stride == 1 {
                                let base = kx as isize - pad as isize;
                                let src_row =
                                    &in_row[(ox0 as isize + base) as usize..(ox1 as isize + base) as usize];
                                for (acc, &v) in out_row[ox0..ox1].iter_mut().zip(src_row) {
                                    *acc += wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    out_row[ox] += wv * in_row[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bv) = bias {
                for v in plane.iter_mut() {
                    *v += bv[o];
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

/// Adjoint of [`conv2d`] (without bias) for the same weight, stride and pad.
///
/// `input_hw` gives the spatial extents of the forward input, which the
/// output extents alone do not determine when `stride > 1`.
pub fn conv2d_transpose(
    grad_out: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    input_hw: [usize; 2],
) -> Result<Tensor> {
    if grad_out.rank() != 4 {
        return Err(Error::dim(
            "conv2d_transpose",
            format!("grad must be rank 4, got {:?}", grad_out.shape()),
        ));
    }
    if weight.rank() != 4 {
        return Err(Error::dim("conv2d_transpose", "weight must be rank 4"));
    }
    let [n, co, ho, wo] = grad_out.dims4();
    let [wco, ci, kh, kw] = weight.dims4();
    if wco != co {
        return Err(Error::dim(
            "conv2d_transpose",
            format!("weight axis 0 (Co={wco}) does not match grad axis 1 (C={co})"),
        ));
    }
    let [h, w] = input_hw;
    if h == 0 || w == 0 {
        return Err(Error::dim("conv2d_transpose", "declared input extents must be positive"));
    }
    let eho = output_extent(h, kh, stride, pad)?;
    let ewo = output_extent(w, kw, stride, pad)?;
    if (eho, ewo) != (ho, wo) {
        return Err(Error::dim(
            "conv2d_transpose",
            format!(
                "declared input {h}x{w} gives forward output {eho}x{ewo}, grad is {ho}x{wo}"
            ),
        ));
    }

    let g = grad_out.data();
    let wts = weight.data();
    let mut out = vec![0.0f32; n * ci * h * w];
    let col_ranges: Vec<_> = (0..kw).map(|kx| valid_range(wo, w, kx, stride, pad)).collect();
    let row_ranges: Vec<_> = (0..kh).map(|ky| valid_range(ho, h, ky, stride, pad)).collect();

    for b in 0..n {
        for o in 0..co {
            let g_plane = &g[(b * co + o) * ho * wo..][..ho * wo];
            for c in 0..ci {
                let plane = &mut out[(b * ci + c) * h * w..][..h * w];
                let kernel = &wts[(o * ci + c) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy0, oy1) = row_ranges[ky];
                    for kx in 0..kw {
                        let wv = kernel[ky * kw + kx];
                        let (ox0, ox1) = col_ranges[kx];
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * wo..][..wo];
                            let in_row = &mut plane[iy * w..][..w];
                            for ox in ox0..ox1 {
                                in_row[ox * stride + kx - pad] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, ci, h, w], out)
}
