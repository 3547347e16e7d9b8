use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rnlens::backprop::BackwardMode;
use rnlens::graph::{forward, load_weights, random_store, resnet50_topology, tiny_topology, write_weights, Arch, LayerKind, NetworkGraph};
use rnlens::miner::{self, MineTable};
use rnlens::render::{self, ImageFormat};
use rnlens::rf::receptive_fields;
use rnlens::visualize::{list_corpus, montage_names, render_channel, Preprocessor};

/// `println!` that reports a failed write instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

#[derive(Parser)]
#[command(name = "rnlens", version, about = "Residual network unit visualization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gradient,
    Deconvnet,
    Guided,
}

impl From<Mode> for BackwardMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Gradient => BackwardMode::Gradient,
            Mode::Deconvnet => BackwardMode::Deconvnet,
            Mode::Guided => BackwardMode::Guided,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ppm,
    Png,
}

impl From<Format> for ImageFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ppm => ImageFormat::Ppm,
            Format::Png => ImageFormat::Png,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArch {
    Tiny,
    TinyLinear,
    Resnet50,
}

#[derive(Subcommand)]
enum Command {
    /// Print the topology, stage layout and receptive-field table.
    Describe {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Top classes for one image.
    Classify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Mine the top-k images per channel over a corpus directory.
    Mine {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated layer names.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<String>,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "RNLENS_WORKERS")]
        workers: Option<usize>,
    },
    /// Render patch and projection montages for one mined channel.
    Visualize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mine: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long)]
        channel: usize,
        #[arg(long, value_enum, default_value = "guided")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "ppm")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k overlap of one channel across consecutive blocks of a stage.
    Evolve {
        #[arg(long)]
        mine: PathBuf,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        channel: usize,
        /// Directory for the report and, with --weights and --corpus, per-block montages.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        weights: Option<PathBuf>,
        #[arg(long, requires = "weights")]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "guided")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "ppm")]
        format: Format,
    },
    /// Channel pairs between two mined layers that share top-k images.
    Correspond {
        #[arg(long)]
        mine: PathBuf,
        /// Mine file for --to; defaults to --mine.
        #[arg(long)]
        mine_to: Option<PathBuf>,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = miner::DEFAULT_MIN_SHARED)]
        min_shared: usize,
    },
    /// Render the first convolution's kernels as a pixel map.
    Kernels {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "conv1")]
        layer: String,
        /// Output file; `.png` selects PNG, anything else PPM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded weight container.
    Fixture {
        #[arg(long, value_enum, default_value = "tiny")]
        arch: FixtureArch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero every residual branch so each block passes its input through.
        #[arg(long)]
        zero_branches: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded corpus of noise images.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_graph(path: &Path) -> Result<NetworkGraph> {
    let store = load_weights(path)?;
    NetworkGraph::from_store(store).with_context(|| format!("building graph from {}", path.display()))
}

fn read_mine(path: &Path) -> Result<MineTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MineTable::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => ImageFormat::Png,
        _ => ImageFormat::Ppm,
    }
}

fn describe(weights: &Path) -> Result<()> {
    let graph = load_graph(weights)?;
    let rfs = receptive_fields(graph.topology())?;
    out!("arch: {}", graph.arch().name());
    out!("input: {:?}", &graph.topology().input_shape()[1..]);
    out!("weights: {} tensors", graph.store().weight_count());
    out!("weighted layers: {}", graph.weighted_layer_count());
    out!("classes: {}", graph.class_count());
    out!("stages: {}", graph.stages().len());
    for stage in graph.stages() {
        let blocks: Vec<String> = stage
            .blocks
            .iter()
            .map(|b| format!("{}({})", b.name, if b.kind == rnlens::graph::BlockKind::Projection { "proj" } else { "id" }))
            .collect();
        out!("  {} blocks={} {}", stage.name, stage.blocks.len(), blocks.join(" "));
    }
    out!();
    out!("{:<24} {:<22} {:<16} {:>6} {:>6} {:>7}", "layer", "kind", "output", "size", "stride", "offset");
    for (layer, rf) in graph.layers().iter().zip(&rfs) {
        let kind = match layer.kind {
            LayerKind::Conv { kernel, stride, pad, .. } => format!("conv {kernel}x{kernel}/{stride} p{pad}"),
            LayerKind::MaxPool { kernel, stride, pad } => format!("maxpool {kernel}x{kernel}/{stride} p{pad}"),
            other => other.label().to_owned(),
        };
        let shape = layer.out_shape[1..].iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        match rf {
            Some(rf) => out!(
                "{:<24} {:<22} {:<16} {:>6} {:>6} {:>7}",
                layer.name, kind, shape, rf.size, rf.stride, rf.offset
            ),
            None => out!("{:<24} {:<22} {:<16} {:>6} {:>6} {:>7}", layer.name, kind, shape, "global", "-", "-"),
        }
    }
    Ok(())
}

fn classify(weights: &Path, image: &Path, top: usize) -> Result<()> {
    let graph = load_graph(weights)?;
    let prep = Preprocessor::for_graph(&graph, ".")?;
    let raw = render::read_image(image)?;
    let input = render::preprocess(&raw, prep.target, prep.mean, prep.order)?;
    let (logits, _) = forward(&graph, &input, false)?;
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    for (rank, &class) in order.iter().take(top).enumerate() {
        out!("{}\t{}\t{}", rank + 1, class, logits[class]);
    }
    Ok(())
}

fn mine(weights: &Path, corpus: &Path, layers: &[String], k: usize, out: &Path, workers: Option<usize>) -> Result<()> {
    let graph = load_graph(weights)?;
    for layer in layers {
        graph.layer_index(layer)?;
    }
    let ids = list_corpus(corpus)?;
    let prep = Preprocessor::for_graph(&graph, corpus)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let names: Vec<&str> = layers.iter().map(String::as_str).collect();
    let report = miner::mine_topk_with(&graph, &ids, |id| prep.input(id), &names, k, workers)?;
    for (id, reason) in &report.skipped {
        eprintln!("warning: skipped {id}: {reason}");
    }
    fs::write(out, report.table.to_text()).with_context(|| format!("writing {}", out.display()))?;
    out!(
        "mined {} images ({} skipped) into {}",
        ids.len() - report.skipped.len(),
        report.skipped.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_channel(
    graph: &NetworkGraph,
    prep: &Preprocessor,
    table: &MineTable,
    layer: &str,
    channel: usize,
    mode: BackwardMode,
    format: ImageFormat,
    out: &Path,
) -> Result<()> {
    let entries = table.entries(layer, channel)?;
    let (patches, projections) = render_channel(graph, prep, layer, channel, entries, mode)?;
    let (pname, gname) = montage_names(layer, channel, mode, format);
    render::write_image(&out.join(&pname), &patches, format)?;
    render::write_image(&out.join(&gname), &projections, format)?;
    out!("{}", out.join(pname).display());
    out!("{}", out.join(gname).display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Describe { weights } => describe(&weights),
        Command::Classify { weights, image, top } => classify(&weights, &image, top),
        Command::Mine { weights, corpus, layers, k, out, workers } => mine(&weights, &corpus, &layers, k, &out, workers),
        Command::Visualize { weights, corpus, mine, layer, channel, mode, format, out } => {
            let graph = load_graph(&weights)?;
            let table = read_mine(&mine)?;
            graph.layer_index(&layer)?;
            let prep = Preprocessor::for_graph(&graph, corpus)?;
            create_dir(&out)?;
            write_channel(&graph, &prep, &table, &layer, channel, mode.into(), format.into(), &out)
        }
        Command::Evolve { mine, stage, channel, out, weights, corpus, mode, format } => {
            let table = read_mine(&mine)?;
            let steps = miner::evolve_report(&table, &stage, channel)?;
            let mut report = String::new();
            for s in &steps {
                report.push_str(&format!("{}\t{}\t{}/{}\n", s.from, s.to, s.overlap, table.k()));
            }
            write!(io::stdout().lock(), "{report}")?;
            if let Some(out) = out {
                create_dir(&out)?;
                let path = out.join(format!("evolve_{stage}_{channel}.txt"));
                fs::write(&path, &report).with_context(|| format!("writing {}", path.display()))?;
                if let (Some(weights), Some(corpus)) = (weights, corpus) {
                    let graph = load_graph(&weights)?;
                    let prep = Preprocessor::for_graph(&graph, corpus)?;
                    for block in miner::stage_blocks(&table, &stage) {
                        write_channel(&graph, &prep, &table, block, channel, mode.into(), format.into(), &out)?;
                    }
                }
            }
            Ok(())
        }
        Command::Correspond { mine, mine_to, from, to, min_shared } => {
            let a = read_mine(&mine)?;
            let b = match mine_to {
                Some(path) => read_mine(&path)?,
                None => a.clone(),
            };
            out!("{from}\t{to}\tshared");
            for c in miner::find_correspondences(&a, &from, &b, &to, min_shared)? {
                out!("{}\t{}\t{}", c.channel_a, c.channel_b, c.shared);
            }
            Ok(())
        }
        Command::Kernels { weights, layer, out } => {
            let graph = load_graph(&weights)?;
            let spec = graph.layer(&layer)?;
            if !matches!(spec.kind, LayerKind::Conv { .. }) {
                bail!("`{layer}` is not a convolution");
            }
            let w = graph.store().get(&spec.weight_keys[0]).context("missing kernel weights")?;
            let map = render::kernel_pixel_map(w)?;
            render::write_image(&out, &map, format_for(&out))?;
            out!("{} ({}x{})", out.display(), map.width, map.height);
            Ok(())
        }
        Command::Fixture { arch, seed, zero_branches, out } => {
            let topology = match arch {
                FixtureArch::Tiny => tiny_topology(Arch::Tiny),
                FixtureArch::TinyLinear => tiny_topology(Arch::TinyLinear),
                FixtureArch::Resnet50 => resnet50_topology(false),
            };
            let store = random_store(&topology, seed);
            let mut graph = NetworkGraph::new(topology, store)?;
            if zero_branches {
                graph = graph.with_zeroed_branches()?;
            }
            write_weights(&out, graph.store())?;
            out!("{} ({} tensors)", out.display(), graph.store().len());
            Ok(())
        }
        Command::Corpus { out, count, size, seed } => {
            if size == 0 {
                bail!("--size must be positive");
            }
            create_dir(&out)?;
            for i in 0..count {
                let img = render::noise_raster(size, size, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
                render::write_image(&out.join(format!("img_{i:04}.ppm")), &img, ImageFormat::Ppm)?;
            }
            out!("{count} images in {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
