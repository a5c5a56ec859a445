use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::{LayerSpec, Mode, RngStream};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Affine { x: NodeId, w: NodeId, b: NodeId, batch: usize, inputs: usize, outputs: usize },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom, batch: usize },
    MaxPool2 { x: NodeId, arg: Vec<usize> },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Reshape { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    Sum { x: NodeId },
    SquaredNorm { x: NodeId },
    /// Scalar function of `x` whose local gradient was computed in the forward pass.
    ScalarFn { x: NodeId, grad: Vec<f64> },
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is already topologically sorted and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    branches: Vec<u64>,
}

/// Gradients of a scalar loss with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Takes ownership of a gradient, substituting zeros when the node did not
    /// influence the loss.
    pub fn take(&mut self, id: NodeId, len: usize) -> Vec<f64> {
        self.grads[id.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId], what: &str) -> Result<NodeId> {
        value.check_finite(what)?;
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Constant, needs_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf, typically a parameter.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Variable, needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub(crate) fn take_value(mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))
    }

    /// Records a discrete branch decision (e.g. which piece of a piecewise loss
    /// was taken) so that [`Tape::fingerprint`] can detect kink crossings.
    pub fn note_branch(&mut self, tag: u64) {
        self.branches.push(tag);
    }

    /// Hash of every discrete decision made in the forward pass: relu signs,
    /// pooling winners and noted branches. Two evaluations with equal
    /// fingerprints lie on the same smooth piece of the function.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.nodes[x.0].value.values() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool2 { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        self.branches.hash(&mut h);
        h.finish()
    }

    fn batch_of(&self, x: NodeId) -> (usize, Vec<usize>) {
        let s = self.nodes[x.0].value.shape();
        (s[0], s[1..].to_vec())
    }

    /// Applies a layer to the batch at `x`; `params` are the layer's weight and bias nodes.
    pub fn layer(
        &mut self,
        spec: &LayerSpec,
        params: &[NodeId],
        x: NodeId,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<NodeId> {
        let (batch, per_example) = self.batch_of(x);
        let out_shape = spec.output_shape(&per_example)?;
        if params.len() != spec.param_count() {
            return Err(Error::Usage(format!(
                "{spec:?} takes {} parameter tensors, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        for (p, want) in params.iter().zip(spec.param_shapes()) {
            let got = self.nodes[p.0].value.shape();
            if got != want.as_slice() {
                return Err(Error::Dimension(format!("{spec:?} parameter shape {got:?}, expected {want:?}")));
            }
        }
        self.nodes[x.0].value.check_finite("layer input")?;
        let mut full = vec![batch];
        full.extend_from_slice(&out_shape);
        match *spec {
            LayerSpec::Affine { inputs, outputs } => {
                let (w, b) = (params[0], params[1]);
                let y = kernels::affine_forward(
                    batch,
                    inputs,
                    outputs,
                    self.value(x).values(),
                    self.value(w).values(),
                    self.value(b).values(),
                );
                self.push(Tensor::new(full, y)?, Op::Affine { x, w, b, batch, inputs, outputs }, &[x, w, b], "affine")
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                let (w, b) = (params[0], params[1]);
                let geom = ConvGeom {
                    in_ch: in_channels,
                    out_ch: out_channels,
                    kernel,
                    height: per_example[1],
                    width: per_example[2],
                };
                let y = kernels::conv2d_forward(
                    &geom,
                    batch,
                    self.value(x).values(),
                    self.value(w).values(),
                    self.value(b).values(),
                );
                self.push(Tensor::new(full, y)?, Op::Conv2d { x, w, b, geom, batch }, &[x, w, b], "conv2d")
            }
            LayerSpec::MaxPool2 => {
                let (c, h, w) = (per_example[0], per_example[1], per_example[2]);
                let (y, arg) = kernels::maxpool2_forward(batch * c, h, w, self.value(x).values());
                self.push(Tensor::new(full, y)?, Op::MaxPool2 { x, arg }, &[x], "maxpool")
            }
            LayerSpec::Relu => {
                let y = self.value(x).values().iter().map(|&v| v.max(0.0)).collect();
                self.push(Tensor::new(full, y)?, Op::Relu { x }, &[x], "relu")
            }
            LayerSpec::Tanh => {
                let y = self.value(x).values().iter().map(|v| v.tanh()).collect();
                self.push(Tensor::new(full, y)?, Op::Tanh { x }, &[x], "tanh")
            }
            LayerSpec::Flatten => {
                let y = self.value(x).values().to_vec();
                self.push(Tensor::new(full, y)?, Op::Reshape { x }, &[x], "flatten")
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    let y = self.value(x).values().to_vec();
                    return self.push(Tensor::new(full, y)?, Op::Reshape { x }, &[x], "dropout");
                }
                let keep = 1.0 / (1.0 - rate);
                let n = self.value(x).len();
                let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
                let y = self.value(x).values().iter().zip(&mask).map(|(v, m)| v * m).collect();
                self.push(Tensor::new(full, y)?, Op::Dropout { x, mask }, &[x], "dropout")
            }
        }
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push(y, Op::Reshape { x }, &[x], "reshape")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x], "sum")
    }

    /// `Σ x²` over every entry.
    pub fn squared_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).squared_norm();
        self.push(Tensor::scalar(s), Op::SquaredNorm { x }, &[x], "squared_norm")
    }

    /// Records a scalar `value = f(x)` with its gradient `df/dx` already evaluated.
    pub fn scalar_fn(&mut self, x: NodeId, value: f64, grad: Vec<f64>) -> Result<NodeId> {
        if grad.len() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "local gradient length {} for input of length {}",
                grad.len(),
                self.value(x).len()
            )));
        }
        if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite local gradient {g}")));
        }
        self.push(Tensor::scalar(value), Op::ScalarFn { x, grad }, &[x], "scalar_fn")
    }

    /// `Σ c_k x_k` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Usage("weighted_sum of no terms".into()));
        };
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &(id, c) in terms {
            let v = self.value(id);
            if v.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!("weighted_sum shapes {shape:?} vs {:?}", v.shape())));
            }
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += c * x;
            }
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::new(shape, acc)?, Op::WeightedSum { terms: terms.to_vec() }, &ids, "weighted_sum")
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn add(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let dy = match &node.op {
                Op::Constant | Op::Variable => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let needs = |id: &NodeId| self.nodes[id.0].needs_grad;
            match &node.op {
                Op::Constant | Op::Variable => unreachable!(),
                Op::Affine { x, w, b, batch, inputs, outputs } => {
                    let (dx, dw, db) = kernels::affine_backward(
                        *batch,
                        *inputs,
                        *outputs,
                        self.value(*x).values(),
                        self.value(*w).values(),
                        &dy,
                    );
                    if needs(x) {
                        add(&mut grads, *x, dx);
                    }
                    if needs(w) {
                        add(&mut grads, *w, dw);
                    }
                    if needs(b) {
                        add(&mut grads, *b, db);
                    }
                }
                Op::Conv2d { x, w, b, geom, batch } => {
                    let (dx, dw, db) =
                        kernels::conv2d_backward(geom, *batch, self.value(*x).values(), self.value(*w).values(), &dy);
                    if needs(x) {
                        add(&mut grads, *x, dx);
                    }
                    if needs(w) {
                        add(&mut grads, *w, dw);
                    }
                    if needs(b) {
                        add(&mut grads, *b, db);
                    }
                }
                Op::MaxPool2 { x, arg } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (&i, g) in arg.iter().zip(&dy) {
                        dx[i] += g;
                    }
                    add(&mut grads, *x, dx);
                }
                Op::Relu { x } => {
                    let dx = self.value(*x).values().iter().zip(&dy).map(|(&v, g)| if v > 0.0 { *g } else { 0.0 }).collect();
                    add(&mut grads, *x, dx);
                }
                Op::Tanh { x: input } => {
                    let dx = node.value.values().iter().zip(&dy).map(|(t, g)| g * (1.0 - t * t)).collect();
                    add(&mut grads, *input, dx);
                }
                Op::Reshape { x } => add(&mut grads, *x, dy),
                Op::Dropout { x, mask } => {
                    let dx = dy.iter().zip(mask).map(|(g, m)| g * m).collect();
                    add(&mut grads, *x, dx);
                }
                Op::Sum { x } => {
                    let n = self.value(*x).len();
                    add(&mut grads, *x, vec![dy[0]; n]);
                }
                Op::SquaredNorm { x } => {
                    let dx = self.value(*x).values().iter().map(|v| 2.0 * v * dy[0]).collect();
                    add(&mut grads, *x, dx);
                }
                Op::ScalarFn { x, grad } => {
                    add(&mut grads, *x, grad.iter().map(|g| g * dy[0]).collect());
                }
                Op::WeightedSum { terms } => {
                    for (id, c) in terms {
                        if needs(id) {
                            add(&mut grads, *id, dy.iter().map(|g| c * g).collect());
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::rng_stream;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut tape = Tape::new();
        let vals = vec![0.3, -1.7, 2.5];
        let x = tape.variable(Tensor::vector(vals.clone()));
        let n = tape.squared_norm(x).unwrap();
        let half = tape.weighted_sum(&[(n, 0.5)]).unwrap();
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap(), vals.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x) + 3 * sum(x) -> grad 4
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        let a = tape.sum(x).unwrap();
        let b = tape.sum(x).unwrap();
        let l = tape.weighted_sum(&[(a, 1.0), (b, 3.0)]).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[4.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0]));
        let x = tape.variable(Tensor::vector(vec![2.0]));
        let l = tape.weighted_sum(&[(c, 1.0), (x, 1.0)]).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn fingerprint_tracks_relu_pattern() {
        let run = |v: f64| {
            let mut tape = Tape::new();
            let x = tape.variable(Tensor::new(vec![1, 2], vec![v, 1.0]).unwrap());
            tape.layer(&LayerSpec::Relu, &[], x, Mode::Eval, &mut rng_stream(0, &[])).unwrap();
            tape.fingerprint()
        };
        assert_eq!(run(0.5), run(0.7));
        assert_ne!(run(0.5), run(-0.5));
    }
}
