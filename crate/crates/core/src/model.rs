//! Feature map `z`, one-vs-rest margin head `(w_c, b_c)`, and their composition.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{rng_stream, LayerSpec, Mode, NodeId, RngStream, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hidden-layer non-linearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn layer(self) -> LayerSpec {
        match self {
            Activation::Relu => LayerSpec::Relu,
            Activation::Tanh => LayerSpec::Tanh,
        }
    }
}

/// Ordered layers mapping an input of `input_shape` to a feature vector in `R^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

impl FeatureMap {
    /// Checks that consecutive layers compose and end in a vector of `output_dim`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = l.output_shape(&shape)?;
        }
        match shape.as_slice() {
            [m] => Ok(Self { input_shape, layers, output_dim: *m }),
            other => Err(Error::Dimension(format!("feature map must end in a vector, ends in {other:?}"))),
        }
    }

    /// LeNet-5 shaped map on `1x28x28` inputs ending in `R^84`. Dropout, when
    /// given, follows the 120- and 84-wide hidden activations.
    pub fn lenet(activation: Activation, dropout: Option<f64>) -> Result<Self> {
        let act = activation.layer();
        let mut layers = vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 6, kernel: 5 },
            act.clone(),
            LayerSpec::MaxPool2,
            LayerSpec::Conv2d { in_channels: 6, out_channels: 16, kernel: 5 },
            act.clone(),
            LayerSpec::MaxPool2,
            LayerSpec::Flatten,
            LayerSpec::Affine { inputs: 256, outputs: 120 },
            act.clone(),
        ];
        if let Some(rate) = dropout {
            layers.push(LayerSpec::Dropout { rate });
        }
        layers.push(LayerSpec::Affine { inputs: 120, outputs: 84 });
        layers.push(act);
        if let Some(rate) = dropout {
            layers.push(LayerSpec::Dropout { rate });
        }
        Self::new(vec![1, 28, 28], layers)
    }

    /// Fully connected map `input -> hidden... -> features`, each followed by the activation.
    pub fn mlp(input_shape: Vec<usize>, widths: &[usize], activation: Activation) -> Result<Self> {
        let mut layers = Vec::new();
        if input_shape.len() != 1 {
            layers.push(LayerSpec::Flatten);
        }
        let mut prev: usize = input_shape.iter().product();
        for &w in widths {
            layers.push(LayerSpec::Affine { inputs: prev, outputs: w });
            layers.push(activation.layer());
            prev = w;
        }
        Self::new(input_shape, layers)
    }
}

/// Per-class weight vectors (rows of `weights`, `[n_classes, m]`) and biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginHead {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl MarginHead {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ok = weights.shape().len() == 2 && bias.shape() == [weights.shape()[0]];
        if !ok {
            return Err(Error::Dimension(format!(
                "head weights {:?} and bias {:?} disagree",
                weights.shape(),
                bias.shape()
            )));
        }
        weights.check_finite("head weights")?;
        bias.check_finite("head bias")?;
        Ok(Self { weights, bias })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        let m = self.dim();
        &self.weights.values()[c * m..(c + 1) * m]
    }
}

/// Feature map plus margin head; the head dimension equals the feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub feature_map: FeatureMap,
    /// Weight and bias tensors of the parametric layers, in layer order.
    pub params: Vec<Tensor>,
    pub head: MarginHead,
}

/// Node handles for one taped forward pass.
#[derive(Debug)]
pub struct TapedForward {
    pub feature_params: Vec<NodeId>,
    pub head_weights: NodeId,
    pub head_bias: NodeId,
    pub features: NodeId,
    pub scores: NodeId,
}

/// Argmax class with the all-negative reject flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub reject: bool,
}

const CHECKPOINT_FORMAT: &str = "lmnet-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    /// Uniform `±1/sqrt(fan_in)` initialization for every weight and bias.
    pub fn init(feature_map: FeatureMap, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Usage("model needs at least one class".into()));
        }
        let mut rng = rng_stream(seed, &[0x1a17]);
        let mut params = Vec::new();
        for layer in &feature_map.layers {
            let bound = 1.0 / (layer.fan_in().max(1) as f64).sqrt();
            for shape in layer.param_shapes() {
                params.push(uniform(shape, bound, &mut rng));
            }
        }
        let m = feature_map.output_dim;
        let bound = 1.0 / (m as f64).sqrt();
        let head = MarginHead::new(uniform(vec![n_classes, m], bound, &mut rng), uniform(vec![n_classes], bound, &mut rng))?;
        Self::from_parts(feature_map, params, head)
    }

    /// Assembles a model, validating every parameter shape against the layers.
    pub fn from_parts(feature_map: FeatureMap, params: Vec<Tensor>, head: MarginHead) -> Result<Self> {
        let fm = FeatureMap::new(feature_map.input_shape.clone(), feature_map.layers.clone())?;
        if fm.output_dim != feature_map.output_dim {
            return Err(Error::Dimension("declared output_dim does not match layers".into()));
        }
        let expected: Vec<Vec<usize>> = fm.layers.iter().flat_map(|l| l.param_shapes()).collect();
        if expected.len() != params.len() {
            return Err(Error::Dimension(format!("expected {} parameter tensors, got {}", expected.len(), params.len())));
        }
        for (p, want) in params.iter().zip(&expected) {
            if p.shape() != want.as_slice() {
                return Err(Error::Dimension(format!("parameter shape {:?}, expected {want:?}", p.shape())));
            }
            p.check_finite("parameter")?;
        }
        if head.dim() != fm.output_dim {
            return Err(Error::Dimension(format!(
                "head dimension {} != feature dimension {}",
                head.dim(),
                fm.output_dim
            )));
        }
        Ok(Self { feature_map: fm, params, head })
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_map.output_dim
    }

    /// Every trainable tensor: feature-map parameters, then head weights and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.params.iter().collect();
        v.push(&self.head.weights);
        v.push(&self.head.bias);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.params.iter_mut().collect();
        v.push(&mut self.head.weights);
        v.push(&mut self.head.bias);
        v
    }

    /// `true` for weight tensors, `false` for biases; aligned with [`Model::parameters`].
    pub fn is_weight(&self) -> Vec<bool> {
        let mut v: Vec<bool> = self.feature_map.layers.iter().flat_map(|l| [true, false].into_iter().take(l.param_count())).collect();
        v.extend([true, false]);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn batched<'a>(&self, x: &'a Tensor) -> Result<std::borrow::Cow<'a, Tensor>> {
        let want = &self.feature_map.input_shape;
        if x.shape() == want.as_slice() {
            let mut s = vec![1];
            s.extend_from_slice(want);
            return Ok(std::borrow::Cow::Owned(x.clone().reshape(s)?));
        }
        if x.shape().len() == want.len() + 1 && &x.shape()[1..] == want.as_slice() {
            return Ok(std::borrow::Cow::Borrowed(x));
        }
        Err(Error::Dimension(format!("input shape {:?} does not match model input {want:?}", x.shape())))
    }

    /// Records the full forward pass of a batch `[N, ...]` (or a single example) on `tape`,
    /// with all parameters as differentiable leaves.
    pub fn forward_tape(&self, tape: &mut Tape, x: &Tensor, mode: Mode, rng: &mut RngStream) -> Result<TapedForward> {
        let x = self.batched(x)?;
        let mut h = tape.constant(x.into_owned());
        let feature_params: Vec<NodeId> = self.params.iter().map(|p| tape.variable(p.clone())).collect();
        let mut offset = 0;
        for layer in &self.feature_map.layers {
            let k = layer.param_count();
            h = tape.layer(layer, &feature_params[offset..offset + k], h, mode, rng)?;
            offset += k;
        }
        let head_weights = tape.variable(self.head.weights.clone());
        let head_bias = tape.variable(self.head.bias.clone());
        let m = self.feature_dim();
        let head = LayerSpec::Affine { inputs: m, outputs: self.n_classes() };
        let scores = tape.layer(&head, &[head_weights, head_bias], h, mode, rng)?;
        Ok(TapedForward { feature_params, head_weights, head_bias, features: h, scores })
    }

    /// Features and scores of a batch in the given mode: `([N, m], [N, C])`.
    pub fn evaluate(&self, x: &Tensor, mode: Mode, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, x, mode, rng)?;
        Ok((tape.value(f.features).clone(), tape.value(f.scores).clone()))
    }

    /// `z(x)` in eval mode. Accepts one example or a batch; returns `[N, m]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.evaluate(x, Mode::Eval, &mut rng_stream(0, &[]))?.0)
    }

    /// `s_c = w_c · z(x) + b_c` in eval mode; returns `[N, n_classes]`.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.evaluate(x, Mode::Eval, &mut rng_stream(0, &[]))?.1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: self.clone() };
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let m = ck.model;
        let head = MarginHead::new(m.head.weights, m.head.bias)?;
        Self::from_parts(m.feature_map, m.params, head)
    }
}

fn uniform(shape: Vec<usize>, bound: f64, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.values_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

/// Highest-scoring class (lowest index on ties); `reject` when every score is negative.
pub fn predict(scores: &[f64]) -> Result<Prediction> {
    let mut best = match scores.first() {
        Some(_) => 0,
        None => return Err(Error::Usage("predict on empty score vector".into())),
    };
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(Prediction { class: best, reject: scores.iter().all(|&s| s < 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_affine_model(m: usize, n_classes: usize) -> Model {
        let fm = FeatureMap::new(vec![m], vec![LayerSpec::Affine { inputs: m, outputs: m }]).unwrap();
        let mut w = Tensor::zeros(vec![m, m]);
        for i in 0..m {
            w.values_mut()[i * m + i] = 1.0;
        }
        let head = MarginHead::new(Tensor::zeros(vec![n_classes, m]), Tensor::filled(vec![n_classes], 0.5)).unwrap();
        Model::from_parts(fm, vec![w, Tensor::zeros(vec![m])], head).unwrap()
    }

    #[test]
    fn identity_feature_map() {
        let model = identity_affine_model(3, 2);
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        assert_eq!(model.features(&x).unwrap().values(), x.values());
    }

    #[test]
    fn zero_head_scores_are_bias() {
        let model = identity_affine_model(3, 4);
        let s = model.scores(&Tensor::vector(vec![9.0, 8.0, 7.0])).unwrap();
        assert_eq!(s.shape(), &[1, 4]);
        assert!(s.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dot_product_score() {
        let mut model = identity_affine_model(2, 1);
        model.head.weights = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        model.head.bias = Tensor::zeros(vec![1]);
        let s = model.scores(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(s.values(), &[0.0]);
    }

    #[test]
    fn zero_input_bias_free_relu_net_gives_zero_features() {
        let fm = FeatureMap::mlp(vec![5], &[4, 3], Activation::Relu).unwrap();
        let mut model = Model::init(fm, 2, 3).unwrap();
        for (p, is_w) in model.params.iter_mut().zip([true, false, true, false]) {
            if !is_w {
                p.values_mut().fill(0.0);
            }
        }
        let z = model.features(&Tensor::zeros(vec![5])).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lenet_features_are_84_wide() {
        let model = Model::init(FeatureMap::lenet(Activation::Relu, None).unwrap(), 10, 0).unwrap();
        assert_eq!(model.feature_dim(), 84);
        let z = model.features(&Tensor::filled(vec![1, 28, 28], 0.3)).unwrap();
        assert_eq!(z.shape(), &[1, 84]);
        let s = model.scores(&Tensor::filled(vec![2, 1, 28, 28], 0.3)).unwrap();
        assert_eq!(s.shape(), &[2, 10]);
    }

    #[test]
    fn scores_match_loop_oracle() {
        let fm = FeatureMap::mlp(vec![6], &[5, 4], Activation::Tanh).unwrap();
        let model = Model::init(fm, 3, 11).unwrap();
        let x = Tensor::vector((0..6).map(|i| (i as f64 * 0.7).sin()).collect());
        let z = model.features(&x).unwrap();
        let s = model.scores(&x).unwrap();
        for c in 0..3 {
            let w = model.head.class_weights(c);
            let mut want = model.head.bias.values()[c];
            for j in 0..4 {
                want += w[j] * z.values()[j];
            }
            assert!((s.values()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let model = identity_affine_model(3, 2);
        assert!(matches!(model.scores(&Tensor::vector(vec![1.0, 2.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn head_dimension_must_match() {
        let fm = FeatureMap::mlp(vec![3], &[4], Activation::Relu).unwrap();
        let good = Model::init(fm.clone(), 2, 0).unwrap();
        let head = MarginHead::new(Tensor::zeros(vec![2, 5]), Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(Model::from_parts(fm, good.params, head), Err(Error::Dimension(_))));
    }

    #[test]
    fn predict_cases() {
        assert_eq!(predict(&[0.2, 0.9, -0.3]).unwrap(), Prediction { class: 1, reject: false });
        assert_eq!(predict(&[-0.5, -0.1, -0.9]).unwrap(), Prediction { class: 1, reject: true });
        assert_eq!(predict(&[0.4, 0.4]).unwrap(), Prediction { class: 0, reject: false });
        assert!(matches!(predict(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn eval_is_pure() {
        let model = Model::init(FeatureMap::lenet(Activation::Relu, Some(0.5)).unwrap(), 10, 5).unwrap();
        let x = Tensor::filled(vec![1, 28, 28], 0.7);
        assert_eq!(model.scores(&x).unwrap(), model.scores(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = Model::init(FeatureMap::mlp(vec![4], &[3], Activation::Relu).unwrap(), 2, 9).unwrap();
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
    }

    #[test]
    fn checkpoint_with_bad_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = Model::init(FeatureMap::mlp(vec![4], &[3], Activation::Relu).unwrap(), 2, 9).unwrap();
        model.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"shape\":[3,4]", "\"shape\":[4,3]", 1);
        fs::write(&path, text).unwrap();
        assert!(Model::load(&path).is_err());
    }
}
