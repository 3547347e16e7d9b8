//! Project one unit's activation back to pixel space.
//!
//! The projection starts from a tensor shaped like the unit's layer that is
//! zero everywhere except the unit itself, then walks the graph backwards:
//! conv through its transpose, pool through the recorded switches, batchnorm
//! as a per-channel rescale, additions by copying the signal to both
//! branches, and rectifiers through the rule selected by [`BackwardMode`].

use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph, Tape};
use crate::ops::{self, relu_backward};
use crate::tensor::Tensor;

pub use crate::ops::BackwardMode;

/// A single spatial unit: `(channel, y, x)` in the output of `layer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitRef {
    pub layer: String,
    pub channel: usize,
    pub y: usize,
    pub x: usize,
}

impl UnitRef {
    pub fn new(layer: impl Into<String>, channel: usize, y: usize, x: usize) -> Self {
        UnitRef {
            layer: layer.into(),
            channel,
            y,
            x,
        }
    }
}

/// Backward rule applied at rectifiers: `(incoming grad, forward input) -> outgoing grad`.
pub type ReluRule<'a> = dyn Fn(&Tensor, &Tensor) -> Result<Tensor> + 'a;

/// Project `unit` with its recorded activation as the seed.
pub fn project_unit(graph: &NetworkGraph, tape: &Tape, unit: &UnitRef, mode: BackwardMode) -> Result<Tensor> {
    let value = unit_activation(graph, tape, unit)?;
    project_unit_seeded(graph, tape, unit, mode, value)
}

pub fn project_unit_seeded(
    graph: &NetworkGraph,
    tape: &Tape,
    unit: &UnitRef,
    mode: BackwardMode,
    seed: f32,
) -> Result<Tensor> {
    project_unit_with(graph, tape, unit, seed, &|g, f| relu_backward(g, f, mode))
}

/// Recorded activation of `unit`, after range checks.
pub fn unit_activation(graph: &NetworkGraph, tape: &Tape, unit: &UnitRef) -> Result<f32> {
    tape.check(graph)?;
    let index = graph.layer_index(&unit.layer)?;
    let [c, h, w] = graph.layers()[index].chw();
    if unit.channel >= c || unit.y >= h || unit.x >= w {
        return Err(Error::UnitOutOfRange(format!(
            "{}[{}, {}, {}] outside extents {c}x{h}x{w}",
            unit.layer, unit.channel, unit.y, unit.x
        )));
    }
    Ok(tape.activation_at(index).data()[(unit.channel * h + unit.y) * w + unit.x])
}

/// Projection with a caller-supplied rectifier rule.
pub fn project_unit_with(
    graph: &NetworkGraph,
    tape: &Tape,
    unit: &UnitRef,
    seed: f32,
    rule: &ReluRule<'_>,
) -> Result<Tensor> {
    unit_activation(graph, tape, unit)?;
    let top = graph.layer_index(&unit.layer)?;
    let layers = graph.layers();

    let mut start = Tensor::zeros(&layers[top].out_shape)?;
    let [_, h, w] = layers[top].chw();
    start.data_mut()[(unit.channel * h + unit.y) * w + unit.x] = seed;

    let mut grads: Vec<Option<Tensor>> = vec![None; top + 1];
    grads[top] = Some(start);
    for i in (1..=top).rev() {
        let Some(incoming) = grads[i].take() else { continue };
        let outgoing = backward_with(graph, tape, i, incoming, rule)?;
        for (&src, g) in layers[i].inputs.iter().zip(outgoing) {
            grads[src] = Some(match grads[src].take() {
                None => g,
                Some(acc) => ops::elementwise_add(&acc, &g)?,
            });
        }
    }
    let image = match grads[0].take() {
        Some(g) => g,
        None => Tensor::zeros(tape.input().shape())?,
    };
    let [_, c, ih, iw] = image.dims4();
    image.reshape(&[c, ih, iw])
}

/// Push `incoming` (gradient w.r.t. layer `index`'s output) through that one
/// layer. Returns one tensor per producer, in `inputs` order.
pub fn backward_through_layer(
    graph: &NetworkGraph,
    tape: &Tape,
    index: usize,
    mode: BackwardMode,
    incoming: Tensor,
) -> Result<Vec<Tensor>> {
    tape.check(graph)?;
    backward_with(graph, tape, index, incoming, &|g, f| relu_backward(g, f, mode))
}

fn backward_with(
    graph: &NetworkGraph,
    tape: &Tape,
    index: usize,
    incoming: Tensor,
    rule: &ReluRule<'_>,
) -> Result<Vec<Tensor>> {
    let layer = &graph.layers()[index];
    if incoming.shape() != layer.out_shape.as_slice() {
        return Err(Error::dim(
            "backward",
            format!("{}: incoming {:?} vs output {:?}", layer.name, incoming.shape(), layer.out_shape),
        ));
    }
    let input_of = |slot: usize| tape.activation_at(layer.inputs[slot]);
    let out = match layer.kind {
        LayerKind::Input => {
            return Err(Error::Corruption {
                what: "graph",
                detail: "cannot propagate through the input placeholder".into(),
            })
        }
        LayerKind::Conv { stride, pad, .. } => {
            let [_, _, h, w] = input_of(0).dims4();
            vec![ops::conv2d_transpose(&incoming, graph.weight(layer, 0), stride, pad, [h, w])?]
        }
        LayerKind::BatchNorm => vec![ops::batchnorm_backward(&incoming, &graph.bn_params(layer))?],
        LayerKind::Relu => vec![rule(&incoming, input_of(0))?],
        LayerKind::MaxPool { .. } => {
            let sw = tape.switches_at(index).ok_or_else(|| Error::Corruption {
                what: "tape",
                detail: format!("no switches recorded for `{}`", layer.name),
            })?;
            vec![ops::unpool(&incoming, sw, input_of(0).dims4())?]
        }
        LayerKind::Add => vec![incoming.clone(), incoming],
        LayerKind::AddRelu => {
            // the block output is positive exactly where the pre-relu sum is
            let g = rule(&incoming, tape.activation_at(index))?;
            vec![g.clone(), g]
        }
        LayerKind::GlobalAvgPool => vec![ops::global_avg_pool_backward(&incoming, input_of(0).dims4())?],
        LayerKind::Linear { .. } => vec![ops::linear_backward(&incoming, graph.weight(layer, 0))?],
    };
    Ok(out)
}
