//! Layer graph, topology builders, weight container and the recording forward pass.

mod build;
mod forward;
mod store;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::BatchNormParams;
use crate::tensor::Tensor;

pub use build::{
    build_resnet50, build_tiny_linear, build_tiny_resnet, random_store, resnet50_topology, tiny_topology,
    TINY_INPUT,
};
pub use forward::{forward, forward_layers, Tape};
pub use store::{
    load_weights, write_weights, Arch, ChannelOrder, WeightStore, DEFAULT_EPS, MAGIC, META_ARCH,
    META_CHANNEL_ORDER, META_EPS, META_MEAN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// The image placeholder; always layer 0, named `data`.
    Input,
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm,
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Elementwise sum without rectification (relu-free fixture only).
    Add,
    /// Residual block output: elementwise sum of both branches, then relu.
    AddRelu,
    GlobalAvgPool,
    Linear {
        out_features: usize,
    },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Add => "add",
            LayerKind::AddRelu => "block_output_add_relu",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Linear { .. } => "linear",
        }
    }

    /// Spatial window `(kernel, stride, pad)` for conv and pool layers.
    pub fn window(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerKind::Conv { kernel, stride, pad, .. } | LayerKind::MaxPool { kernel, stride, pad } => {
                Some((kernel, stride, pad))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Producer layer indices, all smaller than this layer's own index.
    pub inputs: Vec<usize>,
    pub weight_keys: Vec<String>,
    /// Output extents with batch size 1: `[1, C, H, W]`, or `[1, K]` after pooling.
    pub out_shape: Vec<usize>,
}

impl LayerSpec {
    /// `[C, H, W]` of the output, with 1x1 spatial extents for rank-2 outputs.
    pub fn chw(&self) -> [usize; 3] {
        match self.out_shape[..] {
            [_, c, h, w] => [c, h, w],
            [_, k] => [k, 1, 1],
            _ => unreachable!("layer outputs are rank 2 or 4"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Identity shortcut.
    Basic,
    /// Shortcut through a single 1x1 convolution (+ batchnorm).
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    /// Layer feeding the block.
    pub input: usize,
    /// The block output layer (post add, post relu).
    pub output: usize,
    /// Main-branch layers in order (`branch2a` .. `branch2c` and their batchnorm/relu).
    pub branch: Vec<usize>,
    /// Shortcut layers (`branch1` conv + batchnorm); empty for basic blocks.
    pub shortcut: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub blocks: Vec<Block>,
}

/// Weight-free layer graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub arch: Arch,
    pub layers: Vec<LayerSpec>,
    pub stages: Vec<Stage>,
}

impl Topology {
    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].out_shape
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Every key the graph reads from a weight store, with its expected extents.
    pub fn required_weights(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let in_c = layer.inputs.first().map(|&i| self.layers[i].chw()[0]);
            match layer.kind {
                LayerKind::Conv { out_channels, kernel, .. } => {
                    let ci = in_c.expect("conv has an input");
                    out.push((layer.weight_keys[0].clone(), vec![out_channels, ci, kernel, kernel]));
                    if let Some(b) = layer.weight_keys.get(1) {
                        out.push((b.clone(), vec![out_channels]));
                    }
                }
                LayerKind::BatchNorm => {
                    let c = layer.chw()[0];
                    out.extend(layer.weight_keys.iter().map(|k| (k.clone(), vec![c])));
                }
                LayerKind::Linear { out_features } => {
                    let f = in_c.expect("linear has an input");
                    out.push((layer.weight_keys[0].clone(), vec![out_features, f]));
                    out.push((layer.weight_keys[1].clone(), vec![out_features]));
                }
                _ => {}
            }
        }
        out
    }

    /// Stable hash of layer names, kinds and extents.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for layer in &self.layers {
            feed(layer.name.as_bytes());
            feed(format!("{:?}{:?}{:?}", layer.kind, layer.inputs, layer.out_shape).as_bytes());
        }
        h
    }
}

/// A topology bound to a validated weight store. Immutable once built.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    topology: Topology,
    store: WeightStore,
    index: HashMap<String, usize>,
    eps: f32,
}

impl NetworkGraph {
    /// Bind `store` to `topology`, checking that every key resolves with the
    /// declared extents.
    pub fn new(topology: Topology, store: WeightStore) -> Result<Self> {
        for (key, shape) in topology.required_weights() {
            let t = store
                .get(&key)
                .ok_or_else(|| Error::Build(format!("missing weight `{key}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Build(format!(
                    "weight `{key}` has extents {:?}, layer expects {shape:?}",
                    t.shape()
                )));
            }
        }
        let eps = store.eps();
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::Build(format!("invalid eps {eps}")));
        }
        let index = topology
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.clone(), i))
            .collect();
        Ok(NetworkGraph {
            topology,
            store,
            index,
            eps,
        })
    }

    /// Rebuild from a container, choosing the topology by its `meta/arch` tag.
    pub fn from_store(store: WeightStore) -> Result<Self> {
        match store.arch()? {
            Arch::ResNet50 => build_resnet50(store),
            arch @ (Arch::Tiny | Arch::TinyLinear) => NetworkGraph::new(tiny_topology(arch), store),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.topology.layers
    }

    pub fn stages(&self) -> &[Stage] {
        &self.topology.stages
    }

    pub fn store(&self) -> &WeightStore {
        &self.store
    }

    pub fn arch(&self) -> Arch {
        self.topology.arch
    }

    pub fn eps(&self) -> f32 {
        self.eps
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(name.to_owned()))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec> {
        Ok(&self.topology.layers[self.layer_index(name)?])
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.topology.stages.iter().find(|s| s.name == name)
    }

    /// Number of output classes.
    pub fn class_count(&self) -> usize {
        self.layers().last().expect("non-empty").chw()[0]
    }

    /// Convolutions on main paths (stem + every branch2 conv) plus linear layers.
    pub fn weighted_layer_count(&self) -> usize {
        let shortcut: std::collections::HashSet<usize> = self
            .stages()
            .iter()
            .flat_map(|s| s.blocks.iter().flat_map(|b| b.shortcut.iter().copied()))
            .collect();
        self.layers()
            .iter()
            .enumerate()
            .filter(|(i, l)| {
                matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Linear { .. }) && !shortcut.contains(i)
            })
            .count()
    }

    pub(crate) fn weight(&self, layer: &LayerSpec, slot: usize) -> &Tensor {
        // presence and extents checked in `new`
        self.store.get(&layer.weight_keys[slot]).expect("validated weight")
    }

    pub(crate) fn bn_params(&self, layer: &LayerSpec) -> BatchNormParams<'_> {
        BatchNormParams {
            gamma: self.weight(layer, 0).data(),
            beta: self.weight(layer, 1).data(),
            mean: self.weight(layer, 2).data(),
            var: self.weight(layer, 3).data(),
            eps: self.eps,
        }
    }

    /// Copy of this network with every main-branch weight (convs and batchnorm
    /// gamma/beta/mean) set to zero, so each branch contributes exactly 0.
    pub fn with_zeroed_branches(&self) -> Result<Self> {
        let mut store = self.store.clone();
        for stage in self.stages() {
            for block in &stage.blocks {
                for &i in &block.branch {
                    let layer = &self.layers()[i];
                    let keys: &[String] = match layer.kind {
                        LayerKind::Conv { .. } => &layer.weight_keys,
                        // gamma, beta, mean; variance stays positive
                        LayerKind::BatchNorm => &layer.weight_keys[..3],
                        _ => &[],
                    };
                    for key in keys {
                        let t = store.get_mut(key).expect("validated weight");
                        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
        NetworkGraph::new(self.topology.clone(), store)
    }
}

/// Incremental topology builder that tracks output extents.
pub(crate) struct GraphBuilder {
    arch: Arch,
    layers: Vec<LayerSpec>,
    stages: Vec<Stage>,
}

impl GraphBuilder {
    pub fn new(arch: Arch, channels: usize, height: usize, width: usize) -> Self {
        GraphBuilder {
            arch,
            layers: vec![LayerSpec {
                name: "data".into(),
                kind: LayerKind::Input,
                inputs: vec![],
                weight_keys: vec![],
                out_shape: vec![1, channels, height, width],
            }],
            stages: vec![],
        }
    }

    pub fn last(&self) -> usize {
        self.layers.len() - 1
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<usize>, weight_keys: Vec<String>) -> usize {
        let src = self.layers[inputs[0]].out_shape.clone();
        let out_shape = match kind {
            LayerKind::Input => unreachable!(),
            LayerKind::Conv { out_channels, kernel, stride, pad, .. } => {
                let h = crate::ops::output_extent(src[2], kernel, stride, pad).expect("valid topology");
                let w = crate::ops::output_extent(src[3], kernel, stride, pad).expect("valid topology");
                vec![1, out_channels, h, w]
            }
            LayerKind::MaxPool { kernel, stride, pad } => {
                let h = crate::ops::output_extent(src[2], kernel, stride, pad).expect("valid topology");
                let w = crate::ops::output_extent(src[3], kernel, stride, pad).expect("valid topology");
                vec![1, src[1], h, w]
            }
            LayerKind::BatchNorm | LayerKind::Relu => src,
            LayerKind::Add | LayerKind::AddRelu => {
                for &i in &inputs[1..] {
                    assert_eq!(self.layers[i].out_shape, src, "branch extents differ at {name}");
                }
                src
            }
            LayerKind::GlobalAvgPool => vec![1, src[1]],
            LayerKind::Linear { out_features } => vec![1, out_features],
        };
        assert!(self.layers.iter().all(|l| l.name != name), "duplicate layer {name}");
        self.layers.push(LayerSpec {
            name: name.to_owned(),
            kind,
            inputs,
            weight_keys,
            out_shape,
        });
        self.last()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, name: &str, from: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> usize {
        let mut keys = vec![format!("{name}/weight")];
        if bias {
            keys.push(format!("{name}/bias"));
        }
        let kind = LayerKind::Conv { out_channels, kernel, stride, pad, bias };
        self.push(name, kind, vec![from], keys)
    }

    pub fn batchnorm(&mut self, name: &str, from: usize) -> usize {
        let keys = ["gamma", "beta", "mean", "var"].iter().map(|s| format!("{name}/{s}")).collect();
        self.push(name, LayerKind::BatchNorm, vec![from], keys)
    }

    pub fn relu(&mut self, name: &str, from: usize) -> usize {
        self.push(name, LayerKind::Relu, vec![from], vec![])
    }

    pub fn maxpool(&mut self, name: &str, from: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        self.push(name, LayerKind::MaxPool { kernel, stride, pad }, vec![from], vec![])
    }

    pub fn global_avg_pool(&mut self, name: &str, from: usize) -> usize {
        self.push(name, LayerKind::GlobalAvgPool, vec![from], vec![])
    }

    pub fn linear(&mut self, name: &str, from: usize, out_features: usize) -> usize {
        let keys = vec![format!("{name}/weight"), format!("{name}/bias")];
        self.push(name, LayerKind::Linear { out_features }, vec![from], keys)
    }

    /// Bottleneck block `res{stage}{block}` in Caffe naming. A projection block
    /// puts `stride` on both `branch2a` and the `branch1` shortcut.
    #[allow(clippy::too_many_arguments)]
    pub fn bottleneck(
        &mut self,
        stage: &str,
        block: char,
        from: usize,
        mid: usize,
        out: usize,
        stride: usize,
        kind: BlockKind,
        rectify: bool,
    ) -> usize {
        let id = format!("{stage}{block}");
        let name = format!("res{id}");
        let start = self.layers.len();

        let mut shortcut = vec![];
        let skip = match kind {
            BlockKind::Basic => from,
            BlockKind::Projection => {
                let c = self.conv(&format!("{name}_branch1"), from, out, 1, stride, 0, false);
                let b = self.batchnorm(&format!("bn{id}_branch1"), c);
                shortcut.extend([c, b]);
                b
            }
        };

        let mut x = from;
        for (suffix, width, k, s, p) in [("2a", mid, 1, stride, 0), ("2b", mid, 3, 1, 1), ("2c", out, 1, 1, 0)] {
            x = self.conv(&format!("{name}_branch{suffix}"), x, width, k, s, p, false);
            x = self.batchnorm(&format!("bn{id}_branch{suffix}"), x);
            if suffix != "2c" && rectify {
                x = self.relu(&format!("{name}_branch{suffix}_relu"), x);
            }
        }
        let merge = if rectify { LayerKind::AddRelu } else { LayerKind::Add };
        let output = self.push(&name, merge, vec![x, skip], vec![]);
        let branch = (start..output).filter(|i| !shortcut.contains(i)).collect();

        let stage_name = format!("res{stage}");
        let entry = Block { name, kind, input: from, output, branch, shortcut };
        match self.stages.last_mut() {
            Some(s) if s.name == stage_name => s.blocks.push(entry),
            _ => self.stages.push(Stage { name: stage_name, blocks: vec![entry] }),
        }
        output
    }

    pub fn finish(self) -> Topology {
        Topology {
            arch: self.arch,
            layers: self.layers,
            stages: self.stages,
        }
    }
}
