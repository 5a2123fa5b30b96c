use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::BatchNormSettings;
use crate::optim::RmspropConfig;
use crate::topology::{ArchitectureKind, ArchitectureSpec};

/// Which activation the MI is measured against (the other end is always the
/// first hidden layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiEndpoint {
    /// The vector the softmax dense layer reads: the last hidden activation,
    /// or the shortcut sum when the network has a shortcut.
    #[default]
    SoftmaxInput,
    /// The last hidden layer's own activation.
    LastHidden,
}

impl fmt::Display for MiEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiEndpoint::SoftmaxInput => "softmax-input",
            MiEndpoint::LastHidden => "last-hidden",
        })
    }
}

impl FromStr for MiEndpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax-input" => Ok(MiEndpoint::SoftmaxInput),
            "last-hidden" => Ok(MiEndpoint::LastHidden),
            other => Err(Error::Config(format!(
                "unknown MI endpoint {other:?} (expected softmax-input or last-hidden)"
            ))),
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureKind,
    pub width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub rho: f64,
    pub rmsprop_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Neighbor count of the MI estimator.
    pub k: usize,
    /// Validation rows the MI is estimated on; 0 uses every row.
    pub mi_subsample: usize,
    pub jitter_amplitude: f64,
    pub mi_endpoint: MiEndpoint,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    /// Record wall-clock time per epoch; when off the column is zero so the
    /// output is reproducible byte for byte.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rms = RmspropConfig::default();
        let bn = BatchNormSettings::default();
        Self {
            architecture: ArchitectureKind::PlainMlp,
            width: 32,
            depth: 4,
            epochs: 500,
            seed: 0,
            learning_rate: rms.learning_rate,
            rho: rms.rho,
            rmsprop_eps: rms.eps,
            bn_eps: bn.eps,
            bn_momentum: bn.momentum,
            k: 3,
            mi_subsample: 2000,
            jitter_amplitude: 1e-10,
            mi_endpoint: MiEndpoint::default(),
            data_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("runs/run.csv"),
            timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::mnist(self.architecture, self.width, self.depth)
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            rho: self.rho,
            eps: self.rmsprop_eps,
        }
    }

    pub fn batch_norm(&self) -> BatchNormSettings {
        BatchNormSettings {
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("learning_rate", self.learning_rate),
            ("rmsprop_eps", self.rmsprop_eps),
            ("bn_eps", self.bn_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("rho", self.rho), ("bn_momentum", self.bn_momentum)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.jitter_amplitude >= 0.0) || !self.jitter_amplitude.is_finite() {
            return Err(Error::Config(format!(
                "jitter_amplitude must be >= 0, got {}",
                self.jitter_amplitude
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.mi_subsample != 0 && self.mi_subsample <= self.k {
            return Err(Error::Config(format!(
                "mi_subsample ({}) must exceed k ({})",
                self.mi_subsample, self.k
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 over the canonical serialization with the data and output
    /// locations blanked, so it names the experiment rather than the files.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.data_dir = PathBuf::new();
        canonical.out = PathBuf::new();
        let text = canonical.to_toml().expect("config always serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// File stem used for this run inside a sweep directory.
    pub fn run_name(&self) -> String {
        format!(
            "{}-w{}-d{}-s{}-{}",
            self.architecture,
            self.width,
            self.depth,
            self.seed,
            &self.hash()[..12]
        )
    }
}
