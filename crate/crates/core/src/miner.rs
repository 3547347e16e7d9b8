//! Top-k activation mining over an image corpus, plus overlap statistics
//! between mined lists.
//!
//! Each image contributes at most one entry per `(layer, channel)`: its
//! spatial maximum, first in row-major order on ties. Lists are ordered by
//! value descending, then image id, then `(y, x)`; that order is total, so
//! per-worker partial tables merge to the same result in any order.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{forward_layers, NetworkGraph};
use crate::tensor::Tensor;

pub const MINE_HEADER: &str = "rnlens-mine v1";

/// Default correspondence threshold: more than one shared image.
pub const DEFAULT_MIN_SHARED: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct MineEntry {
    pub image_id: String,
    pub y: usize,
    pub x: usize,
    pub value: f32,
}

fn rank(a: &MineEntry, b: &MineEntry) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}

fn insert_bounded(list: &mut Vec<MineEntry>, entry: MineEntry, k: usize) {
    let at = list.partition_point(|e| rank(e, &entry) == Ordering::Less);
    if at < k {
        list.insert(at, entry);
        list.truncate(k);
    }
}

fn merge_bounded(a: Vec<MineEntry>, b: Vec<MineEntry>, k: usize) -> Vec<MineEntry> {
    let mut all = a;
    all.extend(b);
    all.sort_by(rank);
    all.truncate(k);
    all
}

/// Ranked top-k lists per `(layer, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MineTable {
    k: usize,
    layers: IndexMap<String, Vec<Vec<MineEntry>>>,
}

impl MineTable {
    pub fn new(k: usize) -> Self {
        MineTable { k, layers: IndexMap::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn channels(&self, layer: &str) -> Option<usize> {
        self.layers.get(layer).map(Vec::len)
    }

    pub fn layer(&self, layer: &str) -> Result<&[Vec<MineEntry>]> {
        self.layers
            .get(layer)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLayer(layer.to_owned()))
    }

    pub fn entries(&self, layer: &str, channel: usize) -> Result<&[MineEntry]> {
        let lists = self.layer(layer)?;
        lists
            .get(channel)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnitOutOfRange(format!("{layer} has {} channels, asked for {channel}", lists.len())))
    }

    /// Add a layer's lists; each list is re-sorted and cut to `k`.
    pub fn insert_layer(&mut self, layer: impl Into<String>, mut lists: Vec<Vec<MineEntry>>) {
        for list in &mut lists {
            list.sort_by(rank);
            list.truncate(self.k);
        }
        self.layers.insert(layer.into(), lists);
    }

    /// The same table cut to `k` entries per list.
    pub fn truncated(&self, k: usize) -> MineTable {
        let k = k.min(self.k);
        MineTable {
            k,
            layers: self
                .layers
                .iter()
                .map(|(name, lists)| (name.clone(), lists.iter().map(|l| l[..k.min(l.len())].to_vec()).collect()))
                .collect(),
        }
    }

    /// Serialize to the line-oriented mine file format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MINE_HEADER} k={}\n", self.k);
        for (layer, lists) in &self.layers {
            for (channel, list) in lists.iter().enumerate() {
                let _ = write!(out, "{layer}\t{channel}\t");
                for (i, e) in list.iter().enumerate() {
                    if i > 0 {
                        out.push(';');
                    }
                    let _ = write!(out, "{},{},{},{}", e.image_id, e.y, e.x, e.value);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MineTable> {
        let bad = |line: usize, detail: String| Error::MineFormat { line, detail };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let k = header
            .strip_prefix(MINE_HEADER)
            .and_then(|rest| rest.strip_prefix(" k="))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .ok_or_else(|| bad(1, format!("expected `{MINE_HEADER} k=<k>`, got `{header}`")))?;

        let mut table = MineTable::new(k);
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(layer), Some(channel), Some(body), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad(n, "expected three tab-separated fields".into()));
            };
            let channel: usize = channel.parse().map_err(|_| bad(n, format!("bad channel `{channel}`")))?;
            let mut list = Vec::new();
            for item in body.split(';').filter(|s| !s.is_empty()) {
                let parts: Vec<&str> = item.split(',').collect();
                let [id, y, x, v] = parts[..] else {
                    return Err(bad(n, format!("entry `{item}` is not id,y,x,value")));
                };
                let parse_err = |what: &str| bad(n, format!("bad {what} in `{item}`"));
                list.push(MineEntry {
                    image_id: id.to_owned(),
                    y: y.parse().map_err(|_| parse_err("y"))?,
                    x: x.parse().map_err(|_| parse_err("x"))?,
                    value: v.parse().map_err(|_| parse_err("value"))?,
                });
            }
            if list.len() > k {
                return Err(bad(n, format!("{} entries exceed k={k}", list.len())));
            }
            if list.windows(2).any(|w| rank(&w[0], &w[1]) != Ordering::Less) {
                return Err(bad(n, "entries are not in rank order".into()));
            }
            let lists = table.layers.entry(layer.to_owned()).or_default();
            if channel != lists.len() {
                return Err(bad(n, format!("expected channel {} of `{layer}`, got {channel}", lists.len())));
            }
            lists.push(list);
        }
        Ok(table)
    }
}

/// Mining output: the table and the images that had to be skipped.
#[derive(Debug, Clone)]
pub struct MineReport {
    pub table: MineTable,
    /// `(image id, reason)` pairs, sorted by id.
    pub skipped: Vec<(String, String)>,
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r', ',', ';']) {
        return Err(Error::Data(format!("image id `{id}` is empty or contains a reserved character")));
    }
    Ok(())
}

/// Per-channel spatial maxima of a `[1, C, H, W]` (or `[1, K]`) activation.
fn spatial_maxima(image_id: &str, act: &Tensor) -> Vec<MineEntry> {
    let (c, h, w) = match *act.shape() {
        [_, c, h, w] => (c, h, w),
        [_, k] => (k, 1, 1),
        _ => unreachable!("layer outputs are rank 2 or 4"),
    };
    act.data()
        .chunks_exact(h * w)
        .take(c)
        .map(|plane| {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            MineEntry { image_id: image_id.to_owned(), y: best / w, x: best % w, value: plane[best] }
        })
        .collect()
}

struct Partial {
    lists: Vec<Vec<Vec<MineEntry>>>,
    skipped: Vec<(String, String)>,
    seen: usize,
}

impl Partial {
    fn empty(channels: &[usize]) -> Self {
        Partial { lists: channels.iter().map(|&c| vec![Vec::new(); c]).collect(), skipped: vec![], seen: 0 }
    }

    fn merge(mut self, other: Partial, k: usize) -> Partial {
        for (mine, theirs) in self.lists.iter_mut().zip(other.lists) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a = merge_bounded(std::mem::take(a), b, k);
            }
        }
        self.skipped.extend(other.skipped);
        self.seen += other.seen;
        self
    }
}

/// Mine the top-`k` images per channel for each of `layers`.
///
/// `load` turns an image id into a network-ready input tensor; ids it fails
/// on are skipped and reported. Work is spread over `workers` threads, and
/// the result does not depend on that count or on the order of `ids`.
pub fn mine_topk_with<F>(
    graph: &NetworkGraph,
    ids: &[String],
    load: F,
    layers: &[&str],
    k: usize,
    workers: usize,
) -> Result<MineReport>
where
    F: Fn(&str) -> Result<Tensor> + Sync,
{
    if k == 0 {
        return Err(Error::Data("k must be at least 1".into()));
    }
    for id in ids {
        validate_id(id)?;
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Data("duplicate image ids in corpus".into()));
    }
    let indices = layers.iter().map(|l| graph.layer_index(l)).collect::<Result<Vec<_>>>()?;
    let channels: Vec<usize> = indices.iter().map(|&i| graph.layers()[i].chw()[0]).collect();

    let scan = |mut part: Partial, id: &String| {
        let outcome = load(id).and_then(|img| forward_layers(graph, &img, &indices));
        match outcome {
            Ok(acts) => {
                for (lists, act) in part.lists.iter_mut().zip(&acts) {
                    for (list, entry) in lists.iter_mut().zip(spatial_maxima(id, act)) {
                        insert_bounded(list, entry, k);
                    }
                }
                part.seen += 1;
            }
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                part.skipped.push((id.clone(), e.to_string()));
            }
        }
        part
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Data(format!("worker pool: {e}")))?;
    let merged = pool.install(|| {
        ids.par_iter()
            .fold(|| Partial::empty(&channels), scan)
            .reduce(|| Partial::empty(&channels), |a, b| a.merge(b, k))
    });
    if merged.seen == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut table = MineTable::new(k);
    for (name, lists) in layers.iter().zip(merged.lists) {
        table.insert_layer(*name, lists);
    }
    let mut skipped = merged.skipped;
    skipped.sort();
    Ok(MineReport { table, skipped })
}

/// [`mine_topk_with`] over an in-memory corpus of `(id, image)` pairs.
pub fn mine_topk(
    graph: &NetworkGraph,
    corpus: &[(String, Tensor)],
    layers: &[&str],
    k: usize,
    workers: usize,
) -> Result<MineReport> {
    let by_id: HashMap<&str, &Tensor> = corpus.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let ids: Vec<String> = corpus.iter().map(|(id, _)| id.clone()).collect();
    mine_topk_with(graph, &ids, |id| Ok(by_id[id].clone()), layers, k, workers)
}

/// Number of image ids the two lists share.
pub fn topk_overlap(a: &[MineEntry], b: &[MineEntry]) -> usize {
    let ids: HashSet<&str> = a.iter().map(|e| e.image_id.as_str()).collect();
    b.iter().filter(|e| ids.contains(e.image_id.as_str())).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correspondence {
    pub channel_a: usize,
    pub channel_b: usize,
    pub shared: usize,
}

/// Channel pairs between two mined layers sharing at least `min_shared`
/// images, sorted by shared count (descending) then channel indices.
pub fn find_correspondences(
    table_a: &MineTable,
    layer_a: &str,
    table_b: &MineTable,
    layer_b: &str,
    min_shared: usize,
) -> Result<Vec<Correspondence>> {
    let a = table_a.layer(layer_a)?;
    let b = table_b.layer(layer_b)?;
    let mut out = Vec::new();
    if min_shared == 0 {
        for (ca, la) in a.iter().enumerate() {
            for (cb, lb) in b.iter().enumerate() {
                out.push(Correspondence { channel_a: ca, channel_b: cb, shared: topk_overlap(la, lb) });
            }
        }
    } else {
        let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
        for (cb, list) in b.iter().enumerate() {
            for e in list {
                by_image.entry(e.image_id.as_str()).or_default().push(cb);
            }
        }
        for (ca, list) in a.iter().enumerate() {
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for e in list {
                for &cb in by_image.get(e.image_id.as_str()).into_iter().flatten() {
                    *counts.entry(cb).or_default() += 1;
                }
            }
            out.extend(
                counts
                    .into_iter()
                    .filter(|&(_, n)| n >= min_shared)
                    .map(|(cb, n)| Correspondence { channel_a: ca, channel_b: cb, shared: n }),
            );
        }
    }
    out.sort_by(|x, y| {
        y.shared
            .cmp(&x.shared)
            .then(x.channel_a.cmp(&y.channel_a))
            .then(x.channel_b.cmp(&y.channel_b))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolveStep {
    pub from: String,
    pub to: String,
    pub overlap: usize,
}

/// Block-output layers of `stage` present in `table` (e.g. `res5a`, `res5b`, ...), in block order.
pub fn stage_blocks<'a>(table: &'a MineTable, stage: &str) -> Vec<&'a str> {
    let mut blocks: Vec<&str> = table
        .layer_names()
        .filter(|name| {
            name.strip_prefix(stage)
                .is_some_and(|rest| rest.len() == 1 && rest.chars().all(|c| c.is_ascii_lowercase()))
        })
        .collect();
    blocks.sort_unstable();
    blocks
}

/// Overlap of `channel`'s top-k between each pair of consecutive blocks in `stage`.
pub fn evolve_report(table: &MineTable, stage: &str, channel: usize) -> Result<Vec<EvolveStep>> {
    let blocks = stage_blocks(table, stage);
    if blocks.is_empty() {
        return Err(Error::UnknownStage(stage.to_owned()));
    }
    let lists = blocks
        .iter()
        .map(|b| table.entries(b, channel))
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks
        .windows(2)
        .zip(lists.windows(2))
        .map(|(names, l)| EvolveStep {
            from: names[0].to_owned(),
            to: names[1].to_owned(),
            overlap: topk_overlap(l[0], l[1]),
        })
        .collect())
}
