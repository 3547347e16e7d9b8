//! Per-channel rendering: for each mined entry, the receptive-field patch of
//! the image next to the backward projection of the same unit.

use std::path::{Path, PathBuf};

use crate::backprop::{project_unit, BackwardMode, UnitRef};
use crate::error::{Error, Result};
use crate::graph::{forward, NetworkGraph};
use crate::miner::MineEntry;
use crate::render::{self, montage, normalize_for_display, RasterImage, GRAY};
use crate::rf::{compute_rf, extract_patch, unit_rect, UnitRect};
use crate::tensor::Tensor;

/// Corpus image extensions, lowercase.
pub const CORPUS_EXTENSIONS: [&str; 2] = ["ppm", "png"];

/// Image ids (file names) of every PPM/PNG file in `dir`, sorted.
pub fn list_corpus(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| CORPUS_EXTENSIONS.contains(&e.as_str())) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                ids.push(name.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Turns corpus files into display images and network inputs for one graph.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub corpus: PathBuf,
    pub target: usize,
    pub mean: [f32; 3],
    pub order: crate::graph::ChannelOrder,
}

impl Preprocessor {
    pub fn for_graph(graph: &NetworkGraph, corpus: impl Into<PathBuf>) -> Result<Self> {
        let input = graph.topology().input_shape();
        if input[2] != input[3] {
            return Err(Error::Build(format!("non-square input {input:?}")));
        }
        Ok(Preprocessor {
            corpus: corpus.into(),
            target: input[2],
            mean: graph.store().mean(),
            order: graph.store().channel_order(),
        })
    }

    /// Resized and cropped RGB image in `[0, 1]`.
    pub fn display(&self, image_id: &str) -> Result<Tensor> {
        let raw = render::read_image(&self.corpus.join(image_id))?;
        render::resize_and_crop(&raw, self.target)
    }

    pub fn input(&self, image_id: &str) -> Result<Tensor> {
        render::to_network_input(&self.display(image_id)?, self.mean, self.order)
    }
}

/// Render the in-bounds part of a projection inside `rect`, normalized on
/// its own, with out-of-image margins gray.
pub fn projection_tile(projection: &Tensor, rect: &UnitRect) -> Result<RasterImage> {
    let mut tile = RasterImage::filled(rect.size, rect.size, GRAY);
    let (rows, cols) = (rect.rows(), rect.cols());
    if rows.is_empty() || cols.is_empty() {
        return Ok(tile);
    }
    let (h, w) = ((rows.end - rows.start) as usize, (cols.end - cols.start) as usize);
    let [_, _, ih, iw] = projection.dims4();
    let src = projection.data();
    let mut crop = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            let row = (c * ih + rows.start as usize + y) * iw + cols.start as usize;
            crop.extend_from_slice(&src[row..row + w]);
        }
    }
    let shown = normalize_for_display(&Tensor::from_vec(&[3, h, w], crop)?)?;
    tile.blit(&shown, rect.margin_top(), rect.margin_left());
    Ok(tile)
}

/// Patch and projection tiles for one mined unit.
pub fn render_entry(
    graph: &NetworkGraph,
    prep: &Preprocessor,
    layer: &str,
    channel: usize,
    entry: &MineEntry,
    mode: BackwardMode,
) -> Result<(RasterImage, RasterImage)> {
    let display = prep.display(&entry.image_id)?;
    let input = render::to_network_input(&display, prep.mean, prep.order)?;
    let (_, tape) = forward(graph, &input, true)?;
    let tape = tape.expect("recorded");
    let unit = UnitRef::new(layer, channel, entry.y, entry.x);
    let projection = project_unit(graph, &tape, &unit, mode)?;

    let rf = compute_rf(graph, layer)?;
    let rect = unit_rect(rf, entry.y, entry.x, prep.target, prep.target);
    let patch = RasterImage::from_unit_tensor(&extract_patch(&display, &rect)?)?;
    Ok((patch, projection_tile(&projection, &rect)?))
}

/// Patch montage and projection montage for the ranked entries of one channel.
pub fn render_channel(
    graph: &NetworkGraph,
    prep: &Preprocessor,
    layer: &str,
    channel: usize,
    entries: &[MineEntry],
    mode: BackwardMode,
) -> Result<(RasterImage, RasterImage)> {
    let rf = compute_rf(graph, layer)?;
    if entries.is_empty() {
        let blank = RasterImage::filled(rf.size, rf.size, GRAY);
        return Ok((montage(std::slice::from_ref(&blank))?, montage(&[blank])?));
    }
    let mut patches = Vec::with_capacity(9);
    let mut projections = Vec::with_capacity(9);
    for entry in entries.iter().take(9) {
        let (p, g) = render_entry(graph, prep, layer, channel, entry, mode)?;
        patches.push(p);
        projections.push(g);
    }
    Ok((montage(&patches)?, montage(&projections)?))
}

/// Output file names `<layer>_<channel>_patches.<ext>` and `<layer>_<channel>_<mode>.<ext>`.
pub fn montage_names(layer: &str, channel: usize, mode: BackwardMode, format: render::ImageFormat) -> (String, String) {
    let ext = format.extension();
    (
        format!("{layer}_{channel}_patches.{ext}"),
        format!("{layer}_{channel}_{}.{ext}", mode.name()),
    )
}
