use super::{LayerKind, NetworkGraph};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Switches, Tensor};

/// Every layer's output for one image, plus max-pool switches.
///
/// Entry 0 is the network input itself.
#[derive(Debug, Clone)]
pub struct Tape {
    fingerprint: u64,
    activations: Vec<Tensor>,
    switches: Vec<Option<Switches>>,
}

impl Tape {
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn activation_at(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }

    pub fn activation(&self, graph: &NetworkGraph, name: &str) -> Result<&Tensor> {
        let i = graph.layer_index(name)?;
        self.activations
            .get(i)
            .ok_or_else(|| Error::TapeMismatch(format!("no entry for `{name}`")))
    }

    pub fn switches_at(&self, index: usize) -> Option<&Switches> {
        self.switches.get(index).and_then(Option::as_ref)
    }

    /// Fail unless this tape was recorded by `graph`.
    pub fn check(&self, graph: &NetworkGraph) -> Result<()> {
        if self.fingerprint != graph.topology().fingerprint() || self.activations.len() != graph.layers().len() {
            return Err(Error::TapeMismatch(format!(
                "{} entries recorded, graph has {} layers",
                self.activations.len(),
                graph.layers().len()
            )));
        }
        Ok(())
    }
}

fn as_batch(graph: &NetworkGraph, image: &Tensor) -> Result<Tensor> {
    let expect = graph.topology().input_shape();
    let batched = match image.rank() {
        3 => image.clone().reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?,
        _ => image.clone(),
    };
    if batched.shape() != expect {
        return Err(Error::dim(
            "forward",
            format!("image extents {:?}, graph input is {expect:?}", image.shape()),
        ));
    }
    Ok(batched)
}

fn eval_layer(graph: &NetworkGraph, index: usize, inputs: &[&Tensor]) -> Result<(Tensor, Option<Switches>)> {
    let layer = &graph.layers()[index];
    let x = inputs[0];
    let out = match layer.kind {
        LayerKind::Input => unreachable!("input is not evaluated"),
        LayerKind::Conv { stride, pad, bias, .. } => {
            let b = bias.then(|| graph.weight(layer, 1).data());
            ops::conv2d(x, graph.weight(layer, 0), b, stride, pad)?
        }
        LayerKind::BatchNorm => ops::batchnorm_inference(x, &graph.bn_params(layer))?,
        LayerKind::Relu => ops::relu_forward(x),
        LayerKind::MaxPool { kernel, stride, pad } => {
            let (y, sw) = ops::maxpool(x, kernel, stride, pad)?;
            return Ok((y, Some(sw)));
        }
        LayerKind::Add => ops::elementwise_add(x, inputs[1])?,
        LayerKind::AddRelu => ops::relu_forward(&ops::elementwise_add(x, inputs[1])?),
        LayerKind::GlobalAvgPool => ops::global_avg_pool(x)?,
        LayerKind::Linear { .. } => ops::linear(x, graph.weight(layer, 0), Some(graph.weight(layer, 1).data()))?,
    };
    Ok((out, None))
}

struct Run {
    outputs: Vec<Option<Tensor>>,
    switches: Vec<Option<Switches>>,
}

/// Evaluate layers `0..=stop`, dropping intermediates once their last
/// consumer has run unless `keep` says otherwise.
fn run(graph: &NetworkGraph, image: &Tensor, stop: usize, keep: impl Fn(usize) -> bool) -> Result<Run> {
    let layers = graph.layers();
    let mut last_use: Vec<usize> = (0..layers.len()).collect();
    for (i, l) in layers.iter().enumerate().take(stop + 1) {
        for &src in &l.inputs {
            last_use[src] = last_use[src].max(i);
        }
    }
    let mut outputs: Vec<Option<Tensor>> = vec![None; stop + 1];
    let mut switches: Vec<Option<Switches>> = vec![None; stop + 1];
    outputs[0] = Some(as_batch(graph, image)?);

    for i in 1..=stop {
        let layer = &layers[i];
        let (y, sw) = {
            let ins: Vec<&Tensor> = layer
                .inputs
                .iter()
                .map(|&s| outputs[s].as_ref().expect("producer still live"))
                .collect();
            eval_layer(graph, i, &ins)?
        };
        debug_assert_eq!(y.shape(), layer.out_shape.as_slice(), "{}", layer.name);
        outputs[i] = Some(y);
        switches[i] = sw;
        for &src in &layer.inputs {
            if last_use[src] == i && !keep(src) {
                outputs[src] = None;
            }
        }
    }
    Ok(Run { outputs, switches })
}

/// Run the full network on one image (`[1, 3, H, W]` or `[3, H, W]`).
///
/// Returns the logits and, when `record` is set, a [`Tape`] holding every
/// layer's output and all pool switches.
pub fn forward(graph: &NetworkGraph, image: &Tensor, record: bool) -> Result<(Vec<f32>, Option<Tape>)> {
    let stop = graph.layers().len() - 1;
    let Run { mut outputs, switches } = run(graph, image, stop, |_| record)?;
    let logits = outputs[stop].as_ref().expect("final output").data().to_vec();
    let tape = record.then(|| Tape {
        fingerprint: graph.topology().fingerprint(),
        activations: outputs.iter_mut().map(|t| t.take().expect("recorded")).collect(),
        switches,
    });
    Ok((logits, tape))
}

/// Outputs of the `wanted` layers only; evaluation stops at the deepest one.
pub fn forward_layers(graph: &NetworkGraph, image: &Tensor, wanted: &[usize]) -> Result<Vec<Tensor>> {
    let Some(&stop) = wanted.iter().max() else {
        return Ok(vec![]);
    };
    if stop >= graph.layers().len() {
        return Err(Error::UnknownLayer(format!("layer index {stop}")));
    }
    let Run { outputs, .. } = run(graph, image, stop, |i| wanted.contains(&i))?;
    Ok(wanted
        .iter()
        .map(|&i| outputs[i].clone().expect("kept"))
        .collect())
}
