//! One check per acceptance criterion. Each returns a short summary on
//! success and the first violation otherwise.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use rnlens::backprop::{project_unit, project_unit_seeded, BackwardMode, UnitRef};
use rnlens::graph::{
    build_tiny_linear, build_tiny_resnet, forward, forward_layers, random_store, resnet50_topology, BlockKind,
    LayerKind, NetworkGraph, TINY_INPUT,
};
use rnlens::miner::{evolve_report, mine_topk, MineEntry, MineTable};
use rnlens::ops::{conv2d, conv2d_transpose, maxpool, relu_backward};
use rnlens::render::{decode_ppm, encode_ppm, montage, normalize_for_display, RasterImage, GRAY, MONTAGE_SEP};
use rnlens::rf::{compute_rf, receptive_fields, unit_rect, RFSpec};
use rnlens::Tensor;

use super::{conv_oracle, reference_forward, rel_err, rng, tiny_corpus, tiny_image, to_f64, uniform};

pub type Outcome = Result<String, String>;

pub const CONV_CONFIGS: usize = 200;
pub const CONV_TOL: f64 = 1e-5;
pub const ADJOINT_TOL: f64 = 1e-4;
pub const TIME_LIMIT_S: f64 = 10.0;
pub const FD_TOL: f64 = 1e-2;
pub const FD_MIN_DERIVATIVE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const FD_PROBES: usize = 20;
pub const RF_UNITS: usize = 50;
pub const TIGHT_DELTA: f32 = 1e-6;
/// Pixel perturbations tried in turn; the large ones revive rectified-off units.
pub const TIGHT_STEPS: [f32; 4] = [5.0, -5.0, 100.0, -100.0];
pub const MINE_IMAGES: usize = 12;
pub const MINE_K: usize = 9;

#[derive(Debug, Clone, Copy)]
pub struct ConvConfig {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

/// Seeded conv configurations with spatial extents up to 8.
pub fn conv_configs(seed: u64, count: usize) -> Vec<ConvConfig> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = r.random_range(1..=5);
        let pad = r.random_range(0..k);
        let cfg = ConvConfig {
            n: r.random_range(1..=2),
            ci: r.random_range(1..=4),
            co: r.random_range(1..=4),
            h: r.random_range(1..=8),
            w: r.random_range(1..=8),
            k,
            stride: r.random_range(1..=3),
            pad,
            bias: r.random_bool(0.5),
        };
        if cfg.h + 2 * pad >= k && cfg.w + 2 * pad >= k {
            out.push(cfg);
        }
    }
    out
}

pub fn conv_oracle_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for (i, c) in conv_configs(1, CONV_CONFIGS).into_iter().enumerate() {
        let x = uniform(&mut r, &[c.n, c.ci, c.h, c.w], -1.0, 1.0);
        let w = uniform(&mut r, &[c.co, c.ci, c.k, c.k], -1.0, 1.0);
        let b = uniform(&mut r, &[c.co], -1.0, 1.0);
        let bias = c.bias.then(|| b.data());
        let got = conv2d(&x, &w, bias, c.stride, c.pad).map_err(|e| format!("config {i} {c:?}: {e}"))?;
        let (shape, want) = conv_oracle(&x, &w, bias, c.stride, c.pad);
        if got.shape() != shape.as_slice() {
            return Err(format!("config {i} {c:?}: extents {:?} vs {shape:?}", got.shape()));
        }
        let err = got.data().iter().zip(&want).map(|(&g, &o)| (g as f64 - o).abs()).fold(0.0, f64::max);
        if err > CONV_TOL {
            return Err(format!("config {i} {c:?}: max abs error {err:e}"));
        }
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= TIME_LIMIT_S {
        return Err(format!("took {secs:.2}s"));
    }
    Ok(format!("{CONV_CONFIGS} configs, max abs error {worst:.2e}, {secs:.2}s"))
}

pub fn adjoint_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for (i, c) in conv_configs(2, CONV_CONFIGS).into_iter().enumerate() {
        let x = uniform(&mut r, &[c.n, c.ci, c.h, c.w], -1.0, 1.0);
        let w = uniform(&mut r, &[c.co, c.ci, c.k, c.k], -1.0, 1.0);
        let y = conv2d(&x, &w, None, c.stride, c.pad).map_err(|e| e.to_string())?;
        let g = uniform(&mut r, y.shape(), -1.0, 1.0);
        let xt = conv2d_transpose(&g, &w, c.stride, c.pad, [c.h, c.w]).map_err(|e| format!("config {i}: {e}"))?;
        let lhs = y.dot(&g).map_err(|e| e.to_string())?;
        let rhs = x.dot(&xt).map_err(|e| e.to_string())?;
        let err = rel_err(lhs, rhs);
        if err > ADJOINT_TOL {
            return Err(format!("config {i} {c:?}: <conv x, g> = {lhs}, <x, conv^T g> = {rhs}"));
        }
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= TIME_LIMIT_S {
        return Err(format!("took {secs:.2}s"));
    }
    Ok(format!("{CONV_CONFIGS} configs, max relative error {worst:.2e}, {secs:.2}s"))
}

pub fn relu_table_check() -> Outcome {
    let grad = Tensor::vector(&[5.0, -3.0]).unwrap();
    let fwd = Tensor::vector(&[-1.0, 2.0]).unwrap();
    let expect = [
        (BackwardMode::Gradient, [0.0, -3.0]),
        (BackwardMode::Deconvnet, [5.0, 0.0]),
        (BackwardMode::Guided, [0.0, 0.0]),
    ];
    for (mode, want) in expect {
        let got = relu_backward(&grad, &fwd, mode).map_err(|e| e.to_string())?;
        if got.data() != want {
            return Err(format!("{mode}: {:?} != {want:?}", got.data()));
        }
    }
    Ok("gradient [0,-3], deconvnet [5,0], guided [0,0]".into())
}

/// Scalar activation of `unit` under the f64 reference forward.
fn reference_unit(graph: &NetworkGraph, image: &[f64], layer: usize, unit: &UnitRef) -> f64 {
    reference_forward(graph, image)[layer].at(unit.channel, unit.y, unit.x)
}

pub struct FdReport {
    pub probes: usize,
    pub kinks: usize,
    pub worst: f64,
}

/// Compare the gradient-mode projection (seeded with 1) against central
/// differences of the f64 reference at `probes` pixels with |derivative| > threshold.
/// Probes where forward and backward one-sided differences disagree sit on a
/// kink of the piecewise-linear map and are reported separately.
pub fn finite_difference(
    graph: &NetworkGraph,
    image: &Tensor,
    unit: &UnitRef,
    probes: usize,
    seed: u64,
) -> Result<FdReport, String> {
    let (_, tape) = forward(graph, image, true).map_err(|e| e.to_string())?;
    let tape = tape.unwrap();
    let grad = project_unit_seeded(graph, &tape, unit, BackwardMode::Gradient, 1.0).map_err(|e| e.to_string())?;
    let layer = graph.layer_index(&unit.layer).map_err(|e| e.to_string())?;
    let base = to_f64(image);
    let f0 = reference_unit(graph, &base, layer, unit);

    let mut candidates: Vec<usize> =
        (0..grad.len()).filter(|&i| (grad.data()[i] as f64).abs() > FD_MIN_DERIVATIVE).collect();
    candidates.shuffle(&mut rng(seed));
    let mut report = FdReport { probes: 0, kinks: 0, worst: 0.0 };
    for i in candidates {
        if report.probes == probes {
            break;
        }
        let mut x = base.clone();
        x[i] = base[i] + FD_STEP;
        let up = reference_unit(graph, &x, layer, unit);
        x[i] = base[i] - FD_STEP;
        let down = reference_unit(graph, &x, layer, unit);
        let (fwd, bwd) = ((up - f0) / FD_STEP, (f0 - down) / FD_STEP);
        if rel_err(fwd, bwd) > FD_TOL / 10.0 {
            report.kinks += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * FD_STEP);
        let g = grad.data()[i] as f64;
        let err = rel_err(fd, g);
        if err > FD_TOL {
            return Err(format!("{} pixel {i}: projection {g:e}, finite difference {fd:e}", unit.layer));
        }
        report.probes += 1;
        report.worst = report.worst.max(err);
    }
    if report.probes < probes {
        return Err(format!("{}: only {} usable probes", unit.layer, report.probes));
    }
    Ok(report)
}

/// Unit with the largest recorded activation in `layer` (channel `channel`).
pub fn strongest_unit(graph: &NetworkGraph, image: &Tensor, layer: &str, channel: usize) -> UnitRef {
    let index = graph.layer_index(layer).unwrap();
    let act = &forward_layers(graph, image, &[index]).unwrap()[0];
    let [_, h, w] = graph.layers()[index].chw();
    let plane = &act.data()[channel * h * w..(channel + 1) * h * w];
    let best = (0..plane.len()).fold(0, |b, i| if plane[i] > plane[b] { i } else { b });
    UnitRef::new(layer, channel, best / w, best % w)
}

pub fn linear_equivalence_check() -> Outcome {
    let graph = build_tiny_linear(21);
    let image = tiny_image(22);
    let (_, tape) = forward(&graph, &image, true).map_err(|e| e.to_string())?;
    let tape = tape.unwrap();
    let units = [
        strongest_unit(&graph, &image, "res3b", 3),
        UnitRef::new("res2b_branch2b", 1, 7, 4),
        UnitRef::new("fc10", 6, 0, 0),
    ];
    for unit in &units {
        let p: Vec<Tensor> = BackwardMode::ALL
            .iter()
            .map(|&m| project_unit(&graph, &tape, unit, m).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&p[0]) != bits(&p[1]) || bits(&p[0]) != bits(&p[2]) {
            return Err(format!("{}: projections differ between modes", unit.layer));
        }
    }
    let report = finite_difference(&graph, &image, &units[0], FD_PROBES, 23)?;
    Ok(format!(
        "3 units bitwise equal across modes; {} probes, max relative error {:.2e}, {} kinks skipped",
        report.probes, report.worst, report.kinks
    ))
}

pub fn gradient_fd_check() -> Outcome {
    let graph = build_tiny_resnet(31);
    let image = tiny_image(32);
    let units = [
        strongest_unit(&graph, &image, "conv1_relu", 0),
        strongest_unit(&graph, &image, "res2a", 2),
        strongest_unit(&graph, &image, "res2b_branch2b", 1),
        strongest_unit(&graph, &image, "res3a", 5),
        strongest_unit(&graph, &image, "res3b", 11),
        UnitRef::new("fc10", 4, 0, 0),
    ];
    let (mut probes, mut kinks, mut worst) = (0, 0, 0.0f64);
    for (i, unit) in units.iter().enumerate() {
        let r = finite_difference(&graph, &image, unit, FD_PROBES, 40 + i as u64)?;
        probes += r.probes;
        kinks += r.kinks;
        worst = worst.max(r.worst);
    }
    Ok(format!(
        "{} units, {probes} probes, max relative error {worst:.2e}, {kinks} kinks skipped",
        units.len()
    ))
}

/// Tiny-fixture units with a spatial receptive field, drawn uniformly over layers.
pub fn random_units(graph: &NetworkGraph, count: usize, seed: u64) -> Vec<UnitRef> {
    let rfs = receptive_fields(graph.topology()).unwrap();
    let layers: Vec<usize> = (1..graph.layers().len()).filter(|&i| rfs[i].is_some()).collect();
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let l = &graph.layers()[layers[r.random_range(0..layers.len())]];
            let [c, h, w] = l.chw();
            UnitRef::new(l.name.clone(), r.random_range(0..c), r.random_range(0..h), r.random_range(0..w))
        })
        .collect()
}

fn unit_value(graph: &NetworkGraph, image: &Tensor, unit: &UnitRef) -> f32 {
    let index = graph.layer_index(&unit.layer).unwrap();
    forward_layers(graph, image, &[index]).unwrap()[0].at(0, unit.channel, unit.y, unit.x)
}

/// Soundness: randomizing every pixel outside the rect (and, separately,
/// single outside pixels) leaves the activation bit-identical.
pub fn rf_soundness(graph: &NetworkGraph, units: &[UnitRef], seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut checks = 0;
    for unit in units {
        let image = tiny_image(r.random());
        let rect = unit_rect(compute_rf(graph, &unit.layer).unwrap(), unit.y, unit.x, TINY_INPUT, TINY_INPUT);
        let base = unit_value(graph, &image, unit);
        let outside: Vec<(usize, usize)> = (0..TINY_INPUT)
            .flat_map(|y| (0..TINY_INPUT).map(move |x| (y, x)))
            .filter(|&(y, x)| !rect.contains(y as i64, x as i64))
            .collect();
        if outside.is_empty() {
            continue;
        }
        let plane = TINY_INPUT * TINY_INPUT;
        let mut all = image.clone();
        for &(y, x) in &outside {
            for c in 0..3 {
                all.data_mut()[c * plane + y * TINY_INPUT + x] = r.random_range(-10.0..10.0);
            }
        }
        let mut trials = vec![all];
        for _ in 0..3 {
            let (y, x) = outside[r.random_range(0..outside.len())];
            let mut one = image.clone();
            one.data_mut()[r.random_range(0..3) * plane + y * TINY_INPUT + x] = r.random_range(-1e3..1e3);
            trials.push(one);
        }
        for t in &trials {
            let v = unit_value(graph, t, unit);
            if v.to_bits() != base.to_bits() {
                return Err(format!("{unit:?}: {base} became {v} after changing pixels outside {rect:?}"));
            }
            checks += 1;
        }
    }
    Ok(checks)
}

/// Tightness: some pixel inside the rect moves the activation by more than 1e-6.
pub fn rf_tightness(graph: &NetworkGraph, units: &[UnitRef], seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let plane = TINY_INPUT * TINY_INPUT;
    for unit in units {
        let image = tiny_image(r.random());
        let rect = unit_rect(compute_rf(graph, &unit.layer).unwrap(), unit.y, unit.x, TINY_INPUT, TINY_INPUT);
        let base = unit_value(graph, &image, unit);
        let mut inside: Vec<(i64, i64)> =
            rect.rows().flat_map(|y| rect.cols().map(move |x| (y, x))).collect();
        inside.shuffle(&mut r);
        let found = inside.iter().any(|&(y, x)| {
            TIGHT_STEPS.iter().any(|&d| {
                let mut t = image.clone();
                let i = r.random_range(0..3) * plane + y as usize * TINY_INPUT + x as usize;
                t.data_mut()[i] += d;
                (unit_value(graph, &t, unit) - base).abs() > TIGHT_DELTA
            })
        });
        if !found {
            return Err(format!("{unit:?}: no pixel inside {rect:?} changes the activation"));
        }
    }
    Ok(())
}

/// conv1 7x7/2 p3 then pool1 3x3/2 p1 on a 224x224 single-channel image:
/// the bounding box of pixels that can move a pool1 unit, found by
/// perturbation, as `(top, left, bottom, right)` (exclusive ends).
pub fn stem_perturbation_box(y: usize, x: usize) -> (i64, i64, i64, i64) {
    let size = 224;
    let mut r = rng(77);
    let w = uniform(&mut r, &[1, 1, 7, 7], 0.1, 1.0);
    let image = uniform(&mut r, &[1, 1, size, size], -0.5, 0.5);
    let value = |img: &Tensor| {
        let c = conv2d(img, &w, None, 2, 3).unwrap();
        maxpool(&c, 3, 2, 1).unwrap().0.at(0, 0, y, x)
    };
    let base = value(&image);
    let mut bbox = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    let (cy, cx) = (4 * y as i64, 4 * x as i64);
    for py in (cy - 12).max(0)..(cy + 12).min(size as i64) {
        for px in (cx - 12).max(0)..(cx + 12).min(size as i64) {
            let mut t = image.clone();
            t.data_mut()[py as usize * size + px as usize] += 100.0;
            if value(&t) != base {
                bbox = (bbox.0.min(py), bbox.1.min(px), bbox.2.max(py + 1), bbox.3.max(px + 1));
            }
        }
    }
    bbox
}

pub fn rf_suite_check() -> Outcome {
    let topology = resnet50_topology(false);
    let stem = receptive_fields(&topology).map_err(|e| e.to_string())?[topology.layer_index("pool1").unwrap()]
        .ok_or("pool1 has no receptive field")?;
    if stem != (RFSpec { size: 11, stride: 4, offset: -5 }) {
        return Err(format!("conv1+pool1 receptive field {stem:?}"));
    }
    for (y, x) in [(0, 0), (20, 31), (55, 55)] {
        let rect = unit_rect(stem, y, x, 224, 224);
        let want = (rect.rows().start, rect.cols().start, rect.rows().end, rect.cols().end);
        let got = stem_perturbation_box(y, x);
        if got != want {
            return Err(format!("pool1 unit ({y}, {x}): perturbation box {got:?}, computed {want:?}"));
        }
    }

    let mut checks = 0;
    for (name, graph) in [("tiny", build_tiny_resnet(51)), ("tiny-linear", build_tiny_linear(52))] {
        let units = random_units(&graph, RF_UNITS, 53);
        checks += rf_soundness(&graph, &units, 54).map_err(|e| format!("{name} soundness: {e}"))?;
        rf_tightness(&graph, &units, 55).map_err(|e| format!("{name} tightness: {e}"))?;
    }
    Ok(format!(
        "pool1 = size 11 / stride 4 / offset -5, perturbation boxes agree; {RF_UNITS} units x 2 fixtures, {checks} soundness checks, 0 violations"
    ))
}

/// Brute force: every (image, position) pair of every channel, fully sorted;
/// per image keep the first pair, then keep the first k images.
pub fn brute_force_table(graph: &NetworkGraph, corpus: &[(String, Tensor)], layers: &[&str], k: usize) -> MineTable {
    let mut table = MineTable::new(k);
    for layer in layers {
        let index = graph.layer_index(layer).unwrap();
        let [c, h, w] = graph.layers()[index].chw();
        let mut lists: Vec<Vec<MineEntry>> = vec![Vec::new(); c];
        let acts: Vec<Tensor> = corpus
            .iter()
            .map(|(_, img)| forward_layers(graph, img, &[index]).unwrap().remove(0))
            .collect();
        for (ch, list) in lists.iter_mut().enumerate() {
            let mut all: Vec<MineEntry> = Vec::new();
            for ((id, _), act) in corpus.iter().zip(&acts) {
                for y in 0..h {
                    for x in 0..w {
                        all.push(MineEntry { image_id: id.clone(), y, x, value: act.at(0, ch, y, x) });
                    }
                }
            }
            all.sort_by(|a, b| {
                b.value
                    .partial_cmp(&a.value)
                    .unwrap()
                    .then_with(|| a.image_id.cmp(&b.image_id))
                    .then((a.y, a.x).cmp(&(b.y, b.x)))
            });
            let mut seen = HashSet::new();
            *list = all.into_iter().filter(|e| seen.insert(e.image_id.clone())).take(k).collect();
        }
        table.insert_layer(*layer, lists);
    }
    table
}

pub const MINE_LAYERS: [&str; 8] =
    ["conv1", "pool1", "res2a", "res2b_branch2c", "res2b", "res3a_branch2a_relu", "res3a", "res3b"];

pub fn mining_check() -> Outcome {
    let graph = build_tiny_resnet(61);
    let corpus = tiny_corpus(MINE_IMAGES, 62);
    let mined = mine_topk(&graph, &corpus, &MINE_LAYERS, MINE_K, 1).map_err(|e| e.to_string())?;
    let oracle = brute_force_table(&graph, &corpus, &MINE_LAYERS, MINE_K);
    if mined.table != oracle {
        return Err("mine_topk disagrees with the brute-force sort".into());
    }
    let parallel = mine_topk(&graph, &corpus, &MINE_LAYERS, MINE_K, 8).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (one, eight) = (dir.path().join("w1.mine"), dir.path().join("w8.mine"));
    std::fs::write(&one, mined.table.to_text()).map_err(|e| e.to_string())?;
    std::fs::write(&eight, parallel.table.to_text()).map_err(|e| e.to_string())?;
    let (a, b) = (std::fs::read(&one).unwrap(), std::fs::read(&eight).unwrap());
    if a != b {
        return Err("1-worker and 8-worker mine files differ".into());
    }
    let lists: usize = MINE_LAYERS.iter().map(|l| mined.table.channels(l).unwrap()).sum();
    Ok(format!(
        "{MINE_IMAGES} images, k={MINE_K}, {lists} lists equal to brute force; 1 vs 8 workers: {} identical bytes",
        a.len()
    ))
}

pub fn identity_block_check() -> Outcome {
    let graph = build_tiny_resnet(71).with_zeroed_branches().map_err(|e| e.to_string())?;
    let corpus = tiny_corpus(MINE_IMAGES, 72);
    let layers = ["res2a", "res2b", "res3a", "res3b"];
    let table = mine_topk(&graph, &corpus, &layers, MINE_K, 4).map_err(|e| e.to_string())?.table;
    let mut steps = 0;
    for (stage, a, b) in [("res2", "res2a", "res2b"), ("res3", "res3a", "res3b")] {
        let channels = table.channels(a).unwrap();
        for ch in 0..channels {
            let report = evolve_report(&table, stage, ch).map_err(|e| e.to_string())?;
            if report.len() != 1 || report[0].overlap != MINE_K {
                return Err(format!("{stage} channel {ch}: {report:?}"));
            }
            let (la, lb) = (table.entries(a, ch).unwrap(), table.entries(b, ch).unwrap());
            let key = |l: &[MineEntry]| l.iter().map(|e| (e.image_id.clone(), e.y, e.x, e.value.to_bits())).collect::<Vec<_>>();
            if key(la) != key(lb) {
                return Err(format!("{a} vs {b} channel {ch}: entries differ"));
            }
            steps += 1;
        }
    }
    Ok(format!("{steps} channel transitions: overlap {MINE_K}/{MINE_K}, identical positions and values"))
}

pub fn topology_audit_check() -> Outcome {
    let topology = resnet50_topology(false);
    let counts: Vec<usize> = topology.stages.iter().map(|s| s.blocks.len()).collect();
    if counts != [3, 4, 6, 3] {
        return Err(format!("stage block counts {counts:?}"));
    }
    for stage in &topology.stages {
        for (i, block) in stage.blocks.iter().enumerate() {
            if (block.kind == BlockKind::Projection) != (i == 0) {
                return Err(format!("{} is {:?}", block.name, block.kind));
            }
        }
    }
    let graph = NetworkGraph::new(topology.clone(), random_store(&topology, 5)).map_err(|e| e.to_string())?;
    if graph.weighted_layer_count() != 50 {
        return Err(format!("{} weighted layers", graph.weighted_layer_count()));
    }
    let width = |name: &str| match graph.layer(name).unwrap().kind {
        LayerKind::Conv { out_channels, .. } => out_channels,
        _ => 0,
    };
    for block in &graph.stage("res4").unwrap().blocks[1..] {
        let n = &block.name;
        let widths = [
            graph.layers()[block.input].chw()[0],
            width(&format!("{n}_branch2a")),
            width(&format!("{n}_branch2b")),
            width(&format!("{n}_branch2c")),
        ];
        if widths != [1024, 256, 256, 1024] {
            return Err(format!("{n} widths {widths:?}"));
        }
    }
    Ok(format!(
        "blocks 3/4/6/3, projections at stage entries, 50 weighted layers, res4 bottleneck 1024/256/256/1024, {} weight tensors",
        graph.store().weight_count()
    ))
}

pub fn renderer_check() -> Outcome {
    let mut r = rng(81);
    for (w, h) in [(8, 8), (1, 1), (13, 5)] {
        let pixels = (0..w * h * 3).map(|_| r.random::<u8>()).collect();
        let img = RasterImage::from_pixels(w, h, pixels).unwrap();
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).map_err(|e| e.to_string())?;
        if encode_ppm(&back) != bytes {
            return Err(format!("{w}x{h} P6 round trip changed bytes"));
        }
    }
    for side in 1..=64 {
        let tiles = vec![RasterImage::filled(side, side, 7); 9];
        let m = montage(&tiles).map_err(|e| e.to_string())?;
        let want = 3 * side + 2 * MONTAGE_SEP;
        if (m.width, m.height) != (want, want) {
            return Err(format!("tile {side}: montage {}x{}", m.width, m.height));
        }
    }
    let zero = normalize_for_display(&Tensor::zeros(&[3, 6, 6]).unwrap()).map_err(|e| e.to_string())?;
    if zero.pixels.iter().any(|&p| p != GRAY) {
        return Err("all-zero tensor is not uniform 128".into());
    }
    Ok("P6 byte round trip, montage 3t+4 for t in 1..=64, all-zero -> 128".into())
}
