//! Image I/O, preprocessing, display normalization and montage assembly.

mod ppm;

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::ChannelOrder;
use crate::tensor::Tensor;

pub use ppm::{decode_ppm, encode_ppm};

/// Neutral gray used for empty montage cells and padded margins.
pub const GRAY: u8 = 128;
pub const MONTAGE_SEP: usize = 2;
pub const KERNEL_SEP: usize = 1;

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        RasterImage { width, height, pixels: vec![value; width * height * 3] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Image(format!("{} bytes for {width}x{height} RGB", pixels.len())));
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copy `tile` with its top-left corner at `(top, left)`.
    pub fn blit(&mut self, tile: &RasterImage, top: usize, left: usize) {
        let row = tile.width * 3;
        for y in 0..tile.height {
            let dst = ((top + y) * self.width + left) * 3;
            self.pixels[dst..dst + row].copy_from_slice(&tile.pixels[y * row..(y + 1) * row]);
        }
    }

    /// `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("consistent extents")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for `[0, 1]` data; values are clamped.
    pub fn from_unit_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims4();
        if n != 1 || c != 3 {
            return Err(Error::dim("raster", format!("expected [3, H, W], got {:?}", t.shape())));
        }
        let quantize = |v: f32| (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8;
        Ok(interleave(t.data(), h, w, quantize))
    }
}

fn interleave(planar: &[f32], h: usize, w: usize, f: impl Fn(f32) -> u8) -> RasterImage {
    let plane = h * w;
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push(f(planar[c * plane + i]));
        }
    }
    RasterImage { width: w, height: h, pixels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("PNG decode: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        return RasterImage::from_pixels(w as usize, h as usize, img.into_raw());
    }
    decode_ppm(bytes)
}

pub fn read_raster(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Image(m) => Error::Image(format!("{}: {m}", path.display())),
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Read a P6 or PNG file as a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    Ok(read_raster(path)?.to_tensor())
}

pub fn encode_image(image: &RasterImage, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm => Ok(encode_ppm(image)),
        ImageFormat::Png => {
            let mut out = std::io::Cursor::new(Vec::new());
            image::RgbImage::from_raw(image.width as u32, image.height as u32, image.pixels.clone())
                .ok_or_else(|| Error::Image("raster extents".into()))?
                .write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| Error::Image(format!("PNG encode: {e}")))?;
            Ok(out.into_inner())
        }
    }
}

pub fn write_image(path: &Path, image: &RasterImage, format: ImageFormat) -> Result<()> {
    let bytes = encode_image(image, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Shortest-side length used before the center crop: 256 for a 224 target.
pub fn resize_side(target: usize) -> usize {
    ((target * 8) as f64 / 7.0).round() as usize
}

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel centers.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = image.dims4();
    if n != 1 || out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize", format!("cannot resize {:?} to {out_h}x{out_w}", image.shape())));
    }
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let at = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Resize the shortest side to [`resize_side`] and center-crop to
/// `target x target`. Images already at the target extents pass through.
pub fn resize_and_crop(image: &Tensor, target: usize) -> Result<Tensor> {
    let [n, c, h, w] = image.dims4();
    if n != 1 || h == 0 || w == 0 || target == 0 {
        return Err(Error::dim("preprocess", format!("image {:?}, target {target}", image.shape())));
    }
    if (h, w) == (target, target) {
        return image.clone().reshape(&[c, h, w]);
    }
    let side = resize_side(target);
    let (rh, rw) = if h <= w {
        (side, ((w * side) as f64 / h as f64).round().max(side as f64) as usize)
    } else {
        (((h * side) as f64 / w as f64).round().max(side as f64) as usize, side)
    };
    let resized = resize_bilinear(image, rh, rw)?;
    let (top, left) = ((rh - target) / 2, (rw - target) / 2);
    let src = resized.data();
    let mut out = Vec::with_capacity(c * target * target);
    for ch in 0..c {
        for y in top..top + target {
            let row = (ch * rh + y) * rw;
            out.extend_from_slice(&src[row + left..row + left + target]);
        }
    }
    Tensor::from_vec(&[c, target, target], out)
}

/// Reorder an RGB display tensor into the container's channel order and
/// subtract its per-channel mean.
pub fn to_network_input(display: &Tensor, mean: [f32; 3], order: ChannelOrder) -> Result<Tensor> {
    let [n, c, h, w] = display.dims4();
    if n != 1 || c != 3 {
        return Err(Error::dim("preprocess", format!("expected 3 channels, got {:?}", display.shape())));
    }
    let plane = h * w;
    let src = display.data();
    let mut out = vec![0.0; 3 * plane];
    for ch in 0..3 {
        let from = match order {
            ChannelOrder::Rgb => ch,
            ChannelOrder::Bgr => 2 - ch,
        };
        for (o, &v) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(&src[from * plane..(from + 1) * plane]) {
            *o = v - mean[ch];
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Resize, crop and mean-subtract an RGB `[3, H, W]` image in `[0, 1]`.
pub fn preprocess(image: &Tensor, target: usize, mean: [f32; 3], order: ChannelOrder) -> Result<Tensor> {
    to_network_input(&resize_and_crop(image, target)?, mean, order)
}

/// Affine map of the whole tensor onto `0..=255` (min to 0, max to 255);
/// a constant tensor renders as uniform [`GRAY`].
pub fn normalize_for_display(t: &Tensor) -> Result<RasterImage> {
    let [n, c, h, w] = t.dims4();
    if n != 1 || c != 3 {
        return Err(Error::dim("normalize_for_display", format!("expected [3, H, W], got {:?}", t.shape())));
    }
    if !t.all_finite() {
        return Err(Error::Data("cannot display non-finite values".into()));
    }
    let (lo, hi) = min_max(t.data());
    Ok(interleave(t.data(), h, w, |v| scale_level(v, lo, hi)))
}

fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn scale_level(v: f32, lo: f32, hi: f32) -> u8 {
    if hi <= lo {
        return GRAY;
    }
    let r = (v as f64 - lo as f64) / (hi as f64 - lo as f64);
    (r * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 3x3 grid of equally sized tiles in rank order (row-major), separated by
/// 2px black lines. Cells without a tile stay gray.
pub fn montage(tiles: &[RasterImage]) -> Result<RasterImage> {
    let first = tiles.first().ok_or_else(|| Error::Image("montage needs at least one tile".into()))?;
    if tiles.len() > 9 {
        return Err(Error::Image(format!("montage holds 9 tiles, got {}", tiles.len())));
    }
    let (tw, th) = (first.width, first.height);
    if let Some(bad) = tiles.iter().find(|t| (t.width, t.height) != (tw, th)) {
        return Err(Error::Image(format!(
            "montage tiles must share extents: {tw}x{th} vs {}x{}",
            bad.width, bad.height
        )));
    }
    let mut out = RasterImage::filled(3 * tw + 2 * MONTAGE_SEP, 3 * th + 2 * MONTAGE_SEP, 0);
    let gray = RasterImage::filled(tw, th, GRAY);
    for cell in 0..9 {
        let (r, c) = (cell / 3, cell % 3);
        out.blit(tiles.get(cell).unwrap_or(&gray), r * (th + MONTAGE_SEP), c * (tw + MONTAGE_SEP));
    }
    Ok(out)
}

/// All first-layer kernels `[Co, 3, k, k]` on a square grid with 1px black
/// separators, normalized jointly over every weight.
pub fn kernel_pixel_map(weight: &Tensor) -> Result<RasterImage> {
    let &[co, ci, kh, kw] = weight.shape() else {
        return Err(Error::dim("kernel_pixel_map", format!("expected [Co, 3, k, k], got {:?}", weight.shape())));
    };
    if ci != 3 {
        return Err(Error::dim("kernel_pixel_map", format!("kernels have {ci} input channels, need 3")));
    }
    let cols = (1..).find(|c| c * c >= co).expect("finite");
    let rows = co.div_ceil(cols);
    let (lo, hi) = min_max(weight.data());
    let mut out = RasterImage::filled(cols * kw + (cols - 1) * KERNEL_SEP, rows * kh + (rows - 1) * KERNEL_SEP, 0);
    for (k, kernel) in weight.data().chunks_exact(3 * kh * kw).enumerate() {
        let tile = interleave(kernel, kh, kw, |v| scale_level(v, lo, hi));
        out.blit(&tile, (k / cols) * (kh + KERNEL_SEP), (k % cols) * (kw + KERNEL_SEP));
    }
    Ok(out)
}

/// Seeded uniform-noise raster, used for synthetic corpora.
pub fn noise_raster(width: usize, height: usize, seed: u64) -> RasterImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..width * height * 3).map(|_| rng.random::<u8>()).collect();
    RasterImage { width, height, pixels }
}
