use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::ReportConfig;
use crate::error::{Error, Result};
use crate::loss::{BaseLoss, LossConfig};
use crate::model::{Activation, FeatureMap};
use crate::optim::AdamWConfig;

/// Environment variable naming the directory that holds the four MNIST IDX files.
pub const DATA_DIR_ENV: &str = "LMNET_DATA_DIR";

/// One row label of the method grid, e.g. `mh+aug+lm-0.001+do`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub base: BaseLoss,
    pub augment: bool,
    /// Hyperplane-bound weight (`alpha = beta`); `None` disables the regularizer.
    pub lm_weight: Option<f64>,
    pub dropout: bool,
}

impl Method {
    pub const fn plain(base: BaseLoss) -> Self {
        Self { base, augment: false, lm_weight: None, dropout: false }
    }

    pub const fn with_lm(self, weight: f64) -> Self {
        Self { lm_weight: Some(weight), ..self }
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        match self.lm_weight {
            Some(w) => LossConfig::with_bound(self.base, w),
            None => Ok(LossConfig::plain(self.base)),
        }
    }

    /// The 16 rows of the MNIST results table, in table order.
    pub fn table_grid(lm_weight: f64) -> Vec<Method> {
        let mut grid = Vec::with_capacity(16);
        for base in [BaseLoss::CrossEntropy, BaseLoss::ModifiedHuber] {
            for augment in [false, true] {
                for lm in [None, Some(lm_weight)] {
                    for dropout in [false, true] {
                        grid.push(Method { base, augment, lm_weight: lm, dropout });
                    }
                }
            }
        }
        grid
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.base {
            BaseLoss::CrossEntropy => "ce",
            BaseLoss::ModifiedHuber => "mh",
        })?;
        if self.augment {
            f.write_str("+aug")?;
        }
        if let Some(w) = self.lm_weight {
            write!(f, "+lm-{w}")?;
        }
        if self.dropout {
            f.write_str("+do")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let base = match parts.next() {
            Some("ce") => BaseLoss::CrossEntropy,
            Some("mh") | Some("ml") => BaseLoss::ModifiedHuber,
            other => return Err(Error::Usage(format!("unknown base loss {other:?} in method {s:?}"))),
        };
        let mut m = Method::plain(base);
        for p in parts {
            match p {
                "aug" => m.augment = true,
                "do" => m.dropout = true,
                lm if lm.starts_with("lm-") => {
                    let w: f64 = lm[3..].parse().map_err(|_| Error::Usage(format!("bad lm weight in {s:?}")))?;
                    if !(w >= 0.0) {
                        return Err(Error::Usage(format!("lm weight must be >= 0 in {s:?}")));
                    }
                    m.lm_weight = Some(w);
                }
                other => return Err(Error::Usage(format!("unknown method flag {other:?} in {s:?}"))),
            }
        }
        Ok(m)
    }
}

impl Serialize for MethodLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for MethodLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(MethodLabel).map_err(serde::de::Error::custom)
    }
}

/// A [`Method`] that serializes as its row label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodLabel(pub Method);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Lenet,
    Mlp { hidden: Vec<usize> },
}

/// Locations of the train/test IDX files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl DataPaths {
    /// Standard MNIST file names under `dir`, preferring uncompressed files and
    /// falling back to `.gz`.
    pub fn in_dir(dir: &Path) -> Self {
        let pick = |name: &str| {
            let plain = dir.join(name);
            let gz = dir.join(format!("{name}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        Self {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    /// From [`DATA_DIR_ENV`], else `data/mnist` relative to the working directory.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"));
        Self::in_dir(&dir)
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<DataPaths>,
    pub architecture: Architecture,
    pub activation: Activation,
    #[serde(with = "method_label")]
    pub method: Method,
    pub dropout_rate: f64,
    /// Percentage of the training set, stratified.
    pub fraction: u32,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub report: ReportConfig,
}

mod method_label {
    use super::{Method, MethodLabel};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        MethodLabel(*m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        Ok(MethodLabel::deserialize(d)?.0)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            architecture: Architecture::Lenet,
            activation: Activation::Relu,
            method: Method::plain(BaseLoss::CrossEntropy),
            dropout_rate: 0.5,
            fraction: 100,
            seed: 0,
            optimizer: AdamWConfig::default(),
            epochs: 30,
            batch_size: 64,
            eval_batch_size: 500,
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn feature_map(&self, input_shape: &[usize]) -> Result<FeatureMap> {
        let dropout = self.method.dropout.then_some(self.dropout_rate);
        match &self.architecture {
            Architecture::Lenet => {
                if input_shape != [1, 28, 28] {
                    return Err(Error::Dimension(format!("LeNet expects [1, 28, 28] inputs, got {input_shape:?}")));
                }
                FeatureMap::lenet(self.activation, dropout)
            }
            Architecture::Mlp { hidden } => {
                let mut fm = FeatureMap::mlp(input_shape.to_vec(), hidden, self.activation)?;
                if let Some(rate) = dropout {
                    let mut layers = Vec::new();
                    for l in fm.layers {
                        let act = matches!(l, crate::diffcore::LayerSpec::Relu | crate::diffcore::LayerSpec::Tanh);
                        layers.push(l);
                        if act {
                            layers.push(crate::diffcore::LayerSpec::Dropout { rate });
                        }
                    }
                    fm = FeatureMap::new(fm.input_shape, layers)?;
                }
                Ok(fm)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fraction == 0 || self.fraction > 100 {
            return Err(Error::Usage(format!("fraction {}% outside 1..=100", self.fraction)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Usage("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Usage(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.eps > 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Usage(format!("invalid optimizer settings {o:?}")));
        }
        self.method.loss_config().map(|_| ())
    }
}
