use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Arch, BlockKind, ChannelOrder, GraphBuilder, LayerKind, NetworkGraph, Topology, WeightStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Spatial input extent of the tiny fixture.
pub const TINY_INPUT: usize = 32;

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];

/// 50-layer bottleneck residual network: stage block counts 3, 4, 6, 3.
pub fn resnet50_topology(conv1_bias: bool) -> Topology {
    let mut g = GraphBuilder::new(Arch::ResNet50, 3, 224, 224);
    let x = g.conv("conv1", 0, 64, 7, 2, 3, conv1_bias);
    let x = g.batchnorm("bn_conv1", x);
    let x = g.relu("conv1_relu", x);
    let mut x = g.maxpool("pool1", x, 3, 2, 1);

    let stages: [(&str, usize, usize, usize, usize); 4] = [
        ("2", 3, 64, 256, 1),
        ("3", 4, 128, 512, 2),
        ("4", 6, 256, 1024, 2),
        ("5", 3, 512, 2048, 2),
    ];
    for (stage, blocks, mid, out, stride) in stages {
        for (i, letter) in ('a'..='z').take(blocks).enumerate() {
            let (kind, s) = if i == 0 { (BlockKind::Projection, stride) } else { (BlockKind::Basic, 1) };
            x = g.bottleneck(stage, letter, x, mid, out, s, kind, true);
        }
    }
    let x = g.global_avg_pool("pool5", x);
    g.linear("fc1000", x, 1000);
    g.finish()
}

/// Bind a ResNet-50 container. `conv1/bias` is used when the container has it.
pub fn build_resnet50(store: WeightStore) -> Result<NetworkGraph> {
    let topology = resnet50_topology(store.contains("conv1/bias"));
    NetworkGraph::new(topology, store)
}

/// conv 3x3 (8) -> pool -> res2 (projection + basic, 8) -> res3 (stride-2
/// projection + basic, 16) -> global pool -> linear(10).
pub fn tiny_topology(arch: Arch) -> Topology {
    let rectify = match arch {
        Arch::Tiny => true,
        Arch::TinyLinear => false,
        Arch::ResNet50 => panic!("tiny_topology called for ResNet-50"),
    };
    let mut g = GraphBuilder::new(arch, 3, TINY_INPUT, TINY_INPUT);
    let x = g.conv("conv1", 0, 8, 3, 1, 1, true);
    let mut x = g.batchnorm("bn_conv1", x);
    if rectify {
        x = g.relu("conv1_relu", x);
    }
    let x = g.maxpool("pool1", x, 2, 2, 0);
    let x = g.bottleneck("2", 'a', x, 4, 8, 1, BlockKind::Projection, rectify);
    let x = g.bottleneck("2", 'b', x, 4, 8, 1, BlockKind::Basic, rectify);
    let x = g.bottleneck("3", 'a', x, 8, 16, 2, BlockKind::Projection, rectify);
    let x = g.bottleneck("3", 'b', x, 8, 16, 1, BlockKind::Basic, rectify);
    let x = g.global_avg_pool("pool5", x);
    g.linear("fc10", x, 10);
    g.finish()
}

pub fn build_tiny_resnet(seed: u64) -> NetworkGraph {
    let topology = tiny_topology(Arch::Tiny);
    let store = random_store(&topology, seed);
    NetworkGraph::new(topology, store).expect("generated store matches its topology")
}

/// The tiny fixture without any rectifier: a piecewise-linear network whose
/// only nonlinearity is max pooling.
pub fn build_tiny_linear(seed: u64) -> NetworkGraph {
    let topology = tiny_topology(Arch::TinyLinear);
    let store = random_store(&topology, seed);
    NetworkGraph::new(topology, store).expect("generated store matches its topology")
}

/// Seeded weights for every key `topology` needs, plus metadata.
///
/// Convs draw from He-normal, batchnorm statistics from narrow uniform
/// ranges around the identity.
pub fn random_store(topology: &Topology, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let uniform = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
    };
    let normal = |rng: &mut ChaCha8Rng, shape: &[usize], std: f32| {
        let d = Normal::new(0.0f32, std).expect("positive std");
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| d.sample(rng)).collect()).expect("valid shape")
    };

    for layer in &topology.layers {
        let in_c = layer.inputs.first().map(|&i| topology.layers[i].chw()[0]);
        match layer.kind {
            LayerKind::Conv { out_channels, kernel, bias, .. } => {
                let ci = in_c.expect("conv input");
                let fan_in = (ci * kernel * kernel) as f32;
                let w = normal(&mut rng, &[out_channels, ci, kernel, kernel], (2.0 / fan_in).sqrt());
                store.set(layer.weight_keys[0].clone(), w);
                if bias {
                    let b = uniform(&mut rng, &[out_channels], -0.1, 0.1);
                    store.set(layer.weight_keys[1].clone(), b);
                }
            }
            LayerKind::BatchNorm => {
                let c = layer.chw()[0];
                let ranges = [(0.5, 1.5), (-0.2, 0.2), (-0.2, 0.2), (0.5, 1.5)];
                for (key, (lo, hi)) in layer.weight_keys.iter().zip(ranges) {
                    let t = uniform(&mut rng, &[c], lo, hi);
                    store.set(key.clone(), t);
                }
            }
            LayerKind::Linear { out_features } => {
                let f = in_c.expect("linear input");
                let w = normal(&mut rng, &[out_features, f], (1.0 / f as f32).sqrt());
                store.set(layer.weight_keys[0].clone(), w);
                let b = uniform(&mut rng, &[out_features], -0.1, 0.1);
                store.set(layer.weight_keys[1].clone(), b);
            }
            _ => {}
        }
    }
    let mean = match topology.arch {
        Arch::ResNet50 => IMAGENET_MEAN,
        Arch::Tiny | Arch::TinyLinear => [0.5; 3],
    };
    store.set_metadata(mean, super::DEFAULT_EPS, ChannelOrder::Rgb);
    store.set_arch(topology.arch);
    store
}
