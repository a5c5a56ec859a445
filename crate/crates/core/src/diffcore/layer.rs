use serde::{Deserialize, Serialize};

use super::{NodeId, RngStream, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer of a feature map. Shapes are per example; tensors flowing
/// through layers carry an extra leading batch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = W x + B` with `W: [outputs, inputs]`.
    Affine { inputs: usize, outputs: usize },
    /// Valid padding, stride 1, square kernel. `W: [out, in, k, k]`.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    /// 2x2 window, stride 2.
    MaxPool2,
    Relu,
    Tanh,
    Flatten,
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train time.
    Dropout { rate: f64 },
}

impl LayerSpec {
    /// Shapes of the trainable tensors, weight first then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Affine { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]]
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().len()
    }

    /// Fan-in used for weight initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Affine { inputs, .. } => inputs,
            LayerSpec::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |want: String| {
            Err(Error::Dimension(format!("{self:?} expects input {want}, got {input:?}")))
        };
        match *self {
            LayerSpec::Affine { inputs, outputs } => {
                if input != [inputs] {
                    return mismatch(format!("[{inputs}]"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => match *input {
                [c, h, w] if c == in_channels && h >= kernel && w >= kernel && kernel > 0 => {
                    Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => mismatch(format!("[{in_channels}, >={kernel}, >={kernel}]")),
            },
            LayerSpec::MaxPool2 => match *input {
                [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
                _ => mismatch("[C, >=2, >=2]".into()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Usage(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
        }
    }
}

/// Applies one layer to a batch `[N, ...]` outside of any training tape.
///
/// `params` holds the layer's weight and bias (empty for parameter-free layers).
pub fn apply_layer(
    layer: &LayerSpec,
    params: &[Tensor],
    input: &Tensor,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let ps: Vec<NodeId> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let y = tape.layer(layer, &ps, x, mode, rng)?;
    Ok(tape.take_value(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::rng_stream;

    fn rng() -> RngStream {
        rng_stream(0, &[])
    }

    #[test]
    fn affine_identity_is_identity() {
        let mut w = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            w.values_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(vec![3]);
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        let y = apply_layer(&LayerSpec::Affine { inputs: 3, outputs: 3 }, &[w, b], &x, Mode::Eval, &mut rng())
            .unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = apply_layer(&LayerSpec::Relu, &[], &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.values(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_ones_conv_sums_nine() {
        let spec = LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 3 };
        let w = Tensor::filled(vec![1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(vec![1]);
        let x = Tensor::filled(vec![1, 1, 5, 5], 1.0);
        let y = apply_layer(&spec, &[w, b], &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.values().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let spec = LayerSpec::Affine { inputs: 4, outputs: 2 };
        let x = Tensor::zeros(vec![1, 3]);
        let r = apply_layer(&spec, &[Tensor::zeros(vec![2, 4]), Tensor::zeros(vec![2])], &x, Mode::Eval, &mut rng());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let x = Tensor::new(vec![1, 2], vec![1.0, f64::INFINITY]).unwrap();
        assert!(matches!(apply_layer(&LayerSpec::Relu, &[], &x, Mode::Eval, &mut rng()), Err(Error::Numeric(_))));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales_survivors() {
        let spec = LayerSpec::Dropout { rate: 0.5 };
        let x = Tensor::filled(vec![4, 100], 1.0);
        let e = apply_layer(&spec, &[], &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(e.values(), x.values());
        let t = apply_layer(&spec, &[], &x, Mode::Train, &mut rng()).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = t.values().iter().filter(|&&v| v == 2.0).count();
        assert!((100..300).contains(&kept));
    }

    #[test]
    fn dropout_rate_out_of_range() {
        let x = Tensor::zeros(vec![1, 2]);
        let r = apply_layer(&LayerSpec::Dropout { rate: 1.0 }, &[], &x, Mode::Train, &mut rng());
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn maxpool_and_flatten_shapes() {
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
        let y = apply_layer(&LayerSpec::MaxPool2, &[], &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.values(), &[5.0, 7.0]);
        let f = apply_layer(&LayerSpec::Flatten, &[], &y, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(f.shape(), &[1, 2]);
    }
}
