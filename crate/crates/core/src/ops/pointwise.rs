//! Pointwise and reduction kernels: relu and its three backward rules,
//! inference-mode batch normalization, add, global average pooling, linear.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a backward pass crosses a rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackwardMode {
    /// Ordinary backpropagation: zero where the forward input was not positive.
    Gradient,
    /// Deconvnet: rectify the backward signal itself.
    Deconvnet,
    /// Guided backpropagation: apply both masks.
    Guided,
}

impl BackwardMode {
    pub const ALL: [BackwardMode; 3] = [BackwardMode::Gradient, BackwardMode::Deconvnet, BackwardMode::Guided];

    pub fn name(self) -> &'static str {
        match self {
            BackwardMode::Gradient => "gradient",
            BackwardMode::Deconvnet => "deconvnet",
            BackwardMode::Guided => "guided",
        }
    }
}

impl std::str::FromStr for BackwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(BackwardMode::Gradient),
            "deconvnet" | "deconv" => Ok(BackwardMode::Deconvnet),
            "guided" => Ok(BackwardMode::Guided),
            other => Err(Error::Data(format!("unknown backward mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for BackwardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(grad: &Tensor, forward_input: &Tensor, mode: BackwardMode) -> Result<Tensor> {
    grad.require_same_shape(forward_input, "relu_backward")?;
    let data = grad
        .data()
        .iter()
        .zip(forward_input.data())
        .map(|(&g, &f)| {
            let pass = match mode {
                BackwardMode::Gradient => f > 0.0,
                BackwardMode::Deconvnet => g > 0.0,
                BackwardMode::Guided => f > 0.0 && g > 0.0,
            };
            if pass {
                g
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(grad.shape(), data)
}

/// Per-channel statistics for inference-mode batch normalization.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub mean: &'a [f32],
    pub var: &'a [f32],
    pub eps: f32,
}

impl BatchNormParams<'_> {
    fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta), ("mean", self.mean), ("var", self.var)] {
            if v.len() != channels {
                return Err(Error::dim(
                    "batchnorm",
                    format!("{name} has {} entries for {channels} channels", v.len()),
                ));
            }
        }
        if let Some(c) = self.var.iter().position(|&v| v < 0.0) {
            return Err(Error::Data(format!("negative variance {} in channel {c}", self.var[c])));
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return Err(Error::Data(format!("eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }

    /// `gamma[c] / sqrt(var[c] + eps)`: the Jacobian of the normalization.
    pub fn scales(&self) -> Vec<f32> {
        self.gamma
            .iter()
            .zip(self.var)
            .map(|(&g, &v)| g / (v + self.eps).sqrt())
            .collect()
    }
}

pub fn batchnorm_inference(x: &Tensor, params: &BatchNormParams<'_>) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4();
    params.validate(c)?;
    let std: Vec<f32> = params.var.iter().map(|&v| (v + params.eps).sqrt()).collect();
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let ch = i % c;
        let (g, b, m, s) = (params.gamma[ch], params.beta[ch], params.mean[ch], std[ch]);
        for v in plane.iter_mut() {
            *v = g * (*v - m) / s + b;
        }
    }
    debug_assert_eq!(out.len(), n * c * h * w);
    Ok(out)
}

/// Backward of batch normalization: a per-channel rescale, identical in all modes.
pub fn batchnorm_backward(grad: &Tensor, params: &BatchNormParams<'_>) -> Result<Tensor> {
    let [_, c, h, w] = grad.dims4();
    params.validate(c)?;
    let scales = params.scales();
    let mut out = grad.clone();
    for (i, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let s = scales[i % c];
        for v in plane.iter_mut() {
            *v *= s;
        }
    }
    Ok(out)
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.require_same_shape(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::dim("global_avg_pool", format!("input must be rank 4, got {:?}", x.shape())));
    }
    let [n, c, h, w] = x.dims4();
    let area = (h * w) as f64;
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / area) as f32)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward(grad: &Tensor, input_dims: [usize; 4]) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    if grad.shape() != [n, c] {
        return Err(Error::dim(
            "global_avg_pool_backward",
            format!("grad {:?} vs pooled extents [{n}, {c}]", grad.shape()),
        ));
    }
    let inv = 1.0 / (h * w) as f32;
    let data = grad
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, h * w))
        .collect();
    Tensor::from_vec(&input_dims, data)
}

/// `x: [N, F]`, `weight: [K, F]`, `bias: [K]` -> `[N, K]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let (n, f) = match *x.shape() {
        [n, f] => (n, f),
        _ => return Err(Error::dim("linear", format!("input must be [N, F], got {:?}", x.shape()))),
    };
    let (k, wf) = match *weight.shape() {
        [k, wf] => (k, wf),
        _ => return Err(Error::dim("linear", format!("weight must be [K, F], got {:?}", weight.shape()))),
    };
    if wf != f {
        return Err(Error::dim("linear", format!("weight axis 1 (F={wf}) vs input axis 1 (F={f})")));
    }
    if let Some(b) = bias {
        if b.len() != k {
            return Err(Error::dim("linear", format!("bias length {} != K {k}", b.len())));
        }
    }
    let mut out = Vec::with_capacity(n * k);
    for row in x.data().chunks_exact(f) {
        for (j, wrow) in weight.data().chunks_exact(f).enumerate() {
            let mut acc = 0.0f32;
            for (a, b) in row.iter().zip(wrow) {
                acc += a * b;
            }
            out.push(acc + bias.map_or(0.0, |b| b[j]));
        }
    }
    Tensor::from_vec(&[n, k], out)
}

/// Transpose product `grad · weight`: `[N, K] -> [N, F]`.
pub fn linear_backward(grad: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let [k, f] = match *weight.shape() {
        [k, f] => [k, f],
        _ => return Err(Error::dim("linear_backward", "weight must be rank 2")),
    };
    let n = match *grad.shape() {
        [n, gk] if gk == k => n,
        _ => {
            return Err(Error::dim(
                "linear_backward",
                format!("grad {:?} vs weight {:?}", grad.shape(), weight.shape()),
            ))
        }
    };
    let mut out = vec![0.0f32; n * f];
    for (g_row, o_row) in grad.data().chunks_exact(k).zip(out.chunks_exact_mut(f)) {
        for (&g, wrow) in g_row.iter().zip(weight.data().chunks_exact(f)) {
            for (o, &wv) in o_row.iter_mut().zip(wrow) {
                *o += g * wv;
            }
        }
    }
    Tensor::from_vec(&[n, f], out)
}
