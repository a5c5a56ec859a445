use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundReport};
use crate::data::{load_idx, normalize, normalize_pixels, random_affine, subsample_fraction, AugmentConfig, Dataset, Split, MNIST_MEAN, MNIST_STD};
use crate::diffcore::{rng_stream, Mode, Tape};
use crate::error::{Error, Result};
use crate::loss::objective;
use crate::model::{predict, Model};
use crate::optim::{adamw_step, OptimState};
use crate::tensor::Tensor;

use super::config::{DataPaths, RunConfig};

const SHUFFLE_STREAM: u64 = 0x5f;
const DROPOUT_STREAM: u64 = 0xd0;
const AUGMENT_STREAM: u64 = 0xa6;

/// Raw (unnormalized) MNIST splits.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

impl Mnist {
    pub fn load(paths: &DataPaths) -> Result<Self> {
        let train = load_idx(&paths.train_images, &paths.train_labels, Split::Train)?;
        let test = load_idx(&paths.test_images, &paths.test_labels, Split::Test)?;
        if train.example_shape() != test.example_shape() {
            return Err(Error::Data(format!(
                "train images {:?} and test images {:?} differ in shape",
                train.example_shape(),
                test.example_shape()
            )));
        }
        Ok(Self { train, test })
    }
}

/// Result of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Percent correct on the test split.
    pub test_accuracy: f64,
    /// Fraction of test examples whose scores are all negative.
    pub reject_rate: f64,
    pub final_train_loss: Option<f64>,
    pub epochs: usize,
    pub steps: usize,
    pub wall_seconds: f64,
    /// Bounds evaluated on the normalized training subset.
    pub bounds: BoundReport,
    #[serde(skip)]
    pub model: Option<Model>,
}

/// Loads data from `config.data` (or the environment) and trains.
pub fn train(config: &RunConfig) -> Result<RunOutcome> {
    let paths = config.data.clone().unwrap_or_else(DataPaths::from_env);
    let mnist = Mnist::load(&paths)?;
    train_on(config, &mnist.train, &mnist.test)
}

/// Trains on a stratified `config.fraction` of `train`, scores on all of `test`.
/// Both datasets are raw pixels in `[0, 1]`.
pub fn train_on(config: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let subset = subsample_fraction(train, config.fraction, config.seed)?;
    let n_classes = train.n_classes.max(test.n_classes);
    let fm = config.feature_map(subset.example_shape())?;
    let mut model = Model::init(fm, n_classes, config.seed)?;
    let loss_cfg = config.method.loss_config()?;
    let decay = model.is_weight();
    let lens: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut state = OptimState::new(config.optimizer, &lens);
    let aug = AugmentConfig::default();
    let shape = subset.example_shape().to_vec();
    let (ch, h, w) = match shape.as_slice() {
        [c, h, w] => (*c, *h, *w),
        _ => (1, 1, subset.example_len()),
    };
    let per = subset.example_len();

    let mut order: Vec<usize> = (0..subset.len()).collect();
    let mut steps = 0usize;
    let mut final_loss = None;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_stream(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut pixels = Vec::with_capacity(batch.len() * per);
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let img = subset.image(i);
                let mut x = if config.method.augment {
                    let mut rng = rng_stream(config.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    random_affine(img, ch, h, w, &aug, &mut rng).0
                } else {
                    img.to_vec()
                };
                normalize_pixels(&mut x, MNIST_MEAN, MNIST_STD)?;
                pixels.extend(x);
                labels.push(subset.labels[i]);
            }
            let mut bshape = vec![batch.len()];
            bshape.extend(&shape);
            let x = Tensor::new(bshape, pixels)?;
            let mut rng = rng_stream(config.seed, &[DROPOUT_STREAM, epoch as u64, b as u64]);
            let mut tape = Tape::new();
            let fwd = model.forward_tape(&mut tape, &x, Mode::Train, &mut rng).map_err(diverged(epoch, steps))?;
            let loss_node = objective(&mut tape, &fwd, &labels, &loss_cfg).map_err(diverged(epoch, steps))?;
            let loss = tape.value(loss_node).values()[0];
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, step {steps}")));
            }
            let mut grads = tape.backward(loss_node)?;
            let mut ids = fwd.feature_params.clone();
            ids.push(fwd.head_weights);
            ids.push(fwd.head_bias);
            let g: Vec<Vec<f64>> = ids.iter().zip(&lens).map(|(&id, &len)| grads.take(id, len)).collect();
            adamw_step(&mut model.parameters_mut(), &g, &decay, &mut state).map_err(diverged(epoch, steps))?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        final_loss = Some(epoch_loss / seen as f64);
    }

    let test_norm = normalize(test, MNIST_MEAN, MNIST_STD)?;
    let (correct, rejects) = score_dataset(&model, &test_norm, config.eval_batch_size)?;
    let train_norm = normalize(&subset, MNIST_MEAN, MNIST_STD)?;
    let bounds = bound_report(&model, &train_norm, &config.report)?;
    Ok(RunOutcome {
        config: config.clone(),
        train_examples: subset.len(),
        test_examples: test.len(),
        test_accuracy: 100.0 * correct as f64 / test.len() as f64,
        reject_rate: rejects as f64 / test.len() as f64,
        final_train_loss: final_loss,
        epochs: config.epochs,
        steps,
        wall_seconds: start.elapsed().as_secs_f64(),
        bounds,
        model: Some(model),
    })
}

fn diverged(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => Error::Diverged(format!("epoch {epoch}, step {step}: {msg}")),
        other => other,
    }
}

/// Counts correct argmax predictions and all-negative rejects in eval mode.
pub fn score_dataset(model: &Model, dataset: &Dataset, batch: usize) -> Result<(usize, usize)> {
    let per = dataset.example_len();
    let mut correct = 0;
    let mut rejects = 0;
    for start in (0..dataset.len()).step_by(batch.max(1)) {
        let end = (start + batch).min(dataset.len());
        let mut shape = vec![end - start];
        shape.extend(dataset.example_shape());
        let x = Tensor::new(shape, dataset.images.values()[start * per..end * per].to_vec())?;
        let scores = model.scores(&x)?;
        for (row, &y) in scores.rows().zip(&dataset.labels[start..end]) {
            let p = predict(row)?;
            correct += usize::from(p.class == y);
            rejects += usize::from(p.reject);
        }
    }
    Ok((correct, rejects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Architecture;

    /// Two well-separated blobs of 4x4 "images".
    fn toy(n: usize, split: Split) -> Dataset {
        let mut v = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            for p in 0..16 {
                let on = (p < 8) == (y == 0);
                v.push(if on { 0.8 + 0.01 * ((i * 7 + p) % 10) as f64 } else { 0.1 });
            }
            labels.push(y);
        }
        let mut ds = Dataset::new(Tensor::new(vec![n, 1, 4, 4], v).unwrap(), labels, 2, split).unwrap();
        ds.n_classes = 2;
        ds
    }

    fn cfg(method: &str, epochs: usize) -> RunConfig {
        RunConfig {
            architecture: Architecture::Mlp { hidden: vec![8] },
            method: method.parse().unwrap(),
            epochs,
            batch_size: 8,
            optimizer: crate::optim::AdamWConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn learns_separable_toy_problem() {
        let (tr, te) = (toy(40, Split::Train), toy(20, Split::Test));
        for m in ["ce", "mh+lm-0.001", "ce+do", "mh+aug"] {
            let out = train_on(&cfg(m, 30), &tr, &te).unwrap();
            assert!(out.test_accuracy >= 95.0, "{m}: {}", out.test_accuracy);
            assert_eq!(out.steps, 30 * 5);
            assert_eq!(out.bounds.l, 40);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (tr, te) = (toy(24, Split::Train), toy(10, Split::Test));
        let a = train_on(&cfg("mh+aug+lm-0.001+do", 3), &tr, &te).unwrap();
        let b = train_on(&cfg("mh+aug+lm-0.001+do", 3), &tr, &te).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.final_train_loss, b.final_train_loss);
        let c = train_on(&RunConfig { seed: 1, ..cfg("mh+aug+lm-0.001+do", 3) }, &tr, &te).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn zero_epochs_leaves_initial_model() {
        let (tr, te) = (toy(24, Split::Train), toy(10, Split::Test));
        let out = train_on(&cfg("ce", 0), &tr, &te).unwrap();
        assert_eq!(out.steps, 0);
        assert!(out.final_train_loss.is_none());
        let fm = cfg("ce", 0).feature_map(&[1, 4, 4]).unwrap();
        assert_eq!(out.model.unwrap(), Model::init(fm, 2, 0).unwrap());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (tr, te) = (toy(24, Split::Train), toy(10, Split::Test));
        let mut c = cfg("ce", 50);
        c.optimizer.lr = 1e200;
        c.optimizer.weight_decay = 0.0;
        match train_on(&c, &tr, &te) {
            Err(Error::Diverged(_)) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.test_accuracy)),
        }
    }

    #[test]
    fn rejects_bad_fraction() {
        let (tr, te) = (toy(24, Split::Train), toy(10, Split::Test));
        assert!(matches!(train_on(&RunConfig { fraction: 0, ..cfg("ce", 1) }, &tr, &te), Err(Error::Usage(_))));
    }
}
