//! Closed-form receptive fields and patch extraction.
//!
//! A receptive field is folded forward through the graph: a window layer
//! with kernel `k`, stride `s` and pad `p` maps `(size, stride, offset)` to
//! `(size + (k - 1) * stride, stride * s, offset - p * stride)`. Pointwise
//! layers keep it unchanged, and a block output takes the union of its two
//! branches (which always share the effective stride).

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph, Topology};
use crate::tensor::Tensor;

/// Gray used for pixels that fall outside the image, in `[0, 1]` display space.
pub const PATCH_GRAY: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RFSpec {
    /// Side length in input pixels.
    pub size: usize,
    /// Input-pixel step between adjacent units.
    pub stride: usize,
    /// Input coordinate of the top-left pixel of unit `(0, 0)`'s field.
    pub offset: i64,
}

impl RFSpec {
    pub const PIXEL: RFSpec = RFSpec { size: 1, stride: 1, offset: 0 };

    fn through_window(self, kernel: usize, stride: usize, pad: usize) -> RFSpec {
        RFSpec {
            size: self.size + (kernel - 1) * self.stride,
            stride: self.stride * stride,
            offset: self.offset - (pad * self.stride) as i64,
        }
    }

    fn union(self, other: RFSpec) -> Option<RFSpec> {
        if self.stride != other.stride {
            return None;
        }
        let start = self.offset.min(other.offset);
        let end = (self.offset + self.size as i64).max(other.offset + other.size as i64);
        Some(RFSpec { size: (end - start) as usize, stride: self.stride, offset: start })
    }
}

/// Receptive field of every layer in order; `None` for layers after global pooling.
pub fn receptive_fields(topology: &Topology) -> Result<Vec<Option<RFSpec>>> {
    let mut out: Vec<Option<RFSpec>> = Vec::with_capacity(topology.layers.len());
    for layer in &topology.layers {
        let src = |slot: usize| out[layer.inputs[slot]];
        let rf = match layer.kind {
            LayerKind::Input => Some(RFSpec::PIXEL),
            LayerKind::Conv { kernel, stride, pad, .. } | LayerKind::MaxPool { kernel, stride, pad } => {
                src(0).map(|r| r.through_window(kernel, stride, pad))
            }
            LayerKind::BatchNorm | LayerKind::Relu => src(0),
            LayerKind::Add | LayerKind::AddRelu => {
                let mut acc = src(0);
                for slot in 1..layer.inputs.len() {
                    acc = match (acc, src(slot)) {
                        (Some(a), Some(b)) => Some(a.union(b).ok_or_else(|| Error::Corruption {
                            what: "graph",
                            detail: format!("branches of `{}` have different strides", layer.name),
                        })?),
                        _ => None,
                    };
                }
                acc
            }
            LayerKind::GlobalAvgPool | LayerKind::Linear { .. } => None,
        };
        out.push(rf);
    }
    Ok(out)
}

pub fn compute_rf(graph: &NetworkGraph, layer: &str) -> Result<RFSpec> {
    let index = graph.layer_index(layer)?;
    receptive_fields(graph.topology())?[index].ok_or_else(|| Error::GlobalReceptiveField(layer.to_owned()))
}

/// The `size x size` input rectangle of one unit, which may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitRect {
    pub top: i64,
    pub left: i64,
    pub size: usize,
    pub image_h: usize,
    pub image_w: usize,
}

fn clip(start: i64, size: usize, limit: usize) -> Range<i64> {
    let lo = start.clamp(0, limit as i64);
    let hi = (start + size as i64).clamp(0, limit as i64);
    lo..hi.max(lo)
}

impl UnitRect {
    pub fn bottom(&self) -> i64 {
        self.top + self.size as i64
    }

    pub fn right(&self) -> i64 {
        self.left + self.size as i64
    }

    /// In-bounds rows, in image coordinates.
    pub fn rows(&self) -> Range<i64> {
        clip(self.top, self.size, self.image_h)
    }

    pub fn cols(&self) -> Range<i64> {
        clip(self.left, self.size, self.image_w)
    }

    pub fn margin_top(&self) -> usize {
        (self.rows().start - self.top).clamp(0, self.size as i64) as usize
    }

    pub fn margin_left(&self) -> usize {
        (self.cols().start - self.left).clamp(0, self.size as i64) as usize
    }

    pub fn margin_bottom(&self) -> usize {
        self.size - self.margin_top() - (self.rows().end - self.rows().start) as usize
    }

    pub fn margin_right(&self) -> usize {
        self.size - self.margin_left() - (self.cols().end - self.cols().start) as usize
    }

    pub fn contains(&self, y: i64, x: i64) -> bool {
        (self.top..self.bottom()).contains(&y) && (self.left..self.right()).contains(&x)
    }
}

pub fn unit_rect(rf: RFSpec, y: usize, x: usize, image_h: usize, image_w: usize) -> UnitRect {
    UnitRect {
        top: rf.offset + (y * rf.stride) as i64,
        left: rf.offset + (x * rf.stride) as i64,
        size: rf.size,
        image_h,
        image_w,
    }
}

/// Copy `rect` out of a `[3, H, W]` (or `[1, 3, H, W]`) image, filling
/// out-of-bounds pixels with [`PATCH_GRAY`].
pub fn extract_patch(image: &Tensor, rect: &UnitRect) -> Result<Tensor> {
    extract_patch_filled(image, rect, PATCH_GRAY)
}

pub fn extract_patch_filled(image: &Tensor, rect: &UnitRect, fill: f32) -> Result<Tensor> {
    let [n, c, h, w] = image.dims4();
    if n != 1 || (h, w) != (rect.image_h, rect.image_w) {
        return Err(Error::dim(
            "extract_patch",
            format!("image {:?} vs rect for {}x{}", image.shape(), rect.image_h, rect.image_w),
        ));
    }
    let s = rect.size;
    let mut out = Tensor::full(&[c, s, s], fill)?;
    let (rows, cols) = (rect.rows(), rect.cols());
    if rows.is_empty() || cols.is_empty() {
        return Ok(out);
    }
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in rows.clone() {
            let py = (y - rect.top) as usize;
            let px = (cols.start - rect.left) as usize;
            let len = (cols.end - cols.start) as usize;
            let from = (ch * h + y as usize) * w + cols.start as usize;
            let to = (ch * s + py) * s + px;
            dst[to..to + len].copy_from_slice(&src[from..from + len]);
        }
    }
    Ok(out)
}
