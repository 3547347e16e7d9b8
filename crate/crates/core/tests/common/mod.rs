//! Shared test helpers: seeded data and an independent f64 reference
//! interpreter for the layer graph.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnlens::graph::{LayerKind, NetworkGraph, TINY_INPUT};
use rnlens::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `[1, 3, 32, 32]` noise in `[-0.5, 0.5)`.
pub fn tiny_image(seed: u64) -> Tensor {
    uniform(&mut rng(seed), &[1, 3, TINY_INPUT, TINY_INPUT], -0.5, 0.5)
}

pub fn tiny_corpus(n: usize, seed: u64) -> Vec<(String, Tensor)> {
    (0..n)
        .map(|i| (format!("img{i:02}"), tiny_image(seed * 1000 + i as u64)))
        .collect()
}

/// Plain nested-loop convolution in f64 over `[N, Ci, H, W]` with `[Co, Ci, K, K]` weights.
pub fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, ci, h, wd] = x.dims4();
    let [co, _, k, _] = w.dims4();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bs| bs[o] as f64);
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                acc += x.at(b, c, iy as usize, ix as usize) as f64 * w.at(o, c, ky, kx) as f64;
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (vec![n, co, ho, wo], out)
}

/// f64 activation of one layer, stored as `[C, H, W]` (1x1 spatial for vectors).
#[derive(Clone, Debug)]
pub struct Act {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

fn weights(graph: &NetworkGraph, key: &str) -> Vec<f64> {
    graph.store().get(key).unwrap().data().iter().map(|&v| v as f64).collect()
}

/// Evaluate every layer of `graph` in f64 on a `[3, H, W]` image.
pub fn reference_forward(graph: &NetworkGraph, image: &[f64]) -> Vec<Act> {
    let eps = graph.eps() as f64;
    let mut acts: Vec<Act> = Vec::with_capacity(graph.layers().len());
    for layer in graph.layers() {
        let [c, h, w] = layer.chw();
        let src = layer.inputs.first().map(|&i| acts[i].clone());
        let out = match layer.kind {
            LayerKind::Input => Act { c, h, w, data: image.to_vec() },
            LayerKind::Conv { out_channels, kernel, stride, pad, bias } => {
                let x = src.unwrap();
                let wt = weights(graph, &layer.weight_keys[0]);
                let b = if bias { weights(graph, &layer.weight_keys[1]) } else { vec![0.0; out_channels] };
                let mut data = vec![0.0; c * h * w];
                for o in 0..c {
                    for oy in 0..h {
                        for ox in 0..w {
                            let mut acc = b[o];
                            for ci in 0..x.c {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as i64 - pad as i64;
                                        let ix = (ox * stride + kx) as i64 - pad as i64;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                            acc += x.at(ci, iy as usize, ix as usize)
                                                * wt[((o * x.c + ci) * kernel + ky) * kernel + kx];
                                        }
                                    }
                                }
                            }
                            data[(o * h + oy) * w + ox] = acc;
                        }
                    }
                }
                Act { c, h, w, data }
            }
            LayerKind::BatchNorm => {
                let x = src.unwrap();
                let [g, b, m, v] = [0, 1, 2, 3].map(|i| weights(graph, &layer.weight_keys[i]));
                let plane = h * w;
                let data = x
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &val)| {
                        let ch = i / plane;
                        g[ch] * (val - m[ch]) / (v[ch] + eps).sqrt() + b[ch]
                    })
                    .collect();
                Act { c, h, w, data }
            }
            LayerKind::Relu => {
                let x = src.unwrap();
                Act { c, h, w, data: x.data.iter().map(|&v| v.max(0.0)).collect() }
            }
            LayerKind::MaxPool { kernel, stride, pad } => {
                let x = src.unwrap();
                let mut data = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..h {
                        for ox in 0..w {
                            let mut best = f64::NEG_INFINITY;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as i64 - pad as i64;
                                    let ix = (ox * stride + kx) as i64 - pad as i64;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        best = best.max(x.at(ch, iy as usize, ix as usize));
                                    }
                                }
                            }
                            data[(ch * h + oy) * w + ox] = best;
                        }
                    }
                }
                Act { c, h, w, data }
            }
            LayerKind::Add | LayerKind::AddRelu => {
                let a = src.unwrap();
                let b = &acts[layer.inputs[1]];
                let rectify = layer.kind == LayerKind::AddRelu;
                let data = a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(&p, &q)| if rectify { (p + q).max(0.0) } else { p + q })
                    .collect();
                Act { c, h, w, data }
            }
            LayerKind::GlobalAvgPool => {
                let x = src.unwrap();
                let plane = x.h * x.w;
                let data = x.data.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
                Act { c, h: 1, w: 1, data }
            }
            LayerKind::Linear { out_features } => {
                let x = src.unwrap();
                let wt = weights(graph, &layer.weight_keys[0]);
                let b = weights(graph, &layer.weight_keys[1]);
                let f = x.data.len();
                let data = (0..out_features)
                    .map(|k| b[k] + (0..f).map(|j| wt[k * f + j] * x.data[j]).sum::<f64>())
                    .collect();
                Act { c, h: 1, w: 1, data }
            }
        };
        acts.push(out);
    }
    acts
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Relative disagreement used by derivative checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub mod criteria;
