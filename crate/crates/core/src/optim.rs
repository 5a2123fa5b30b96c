//! Parameter initialization and RMSprop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, LayerKind, NetworkTopology, NodeParams, ParameterStore};
use crate::numerics::{normal_sample, Matrix, SeededRng};

/// `fan_in × fan_out` weights drawn from `Normal(0, √(2/(fan_in+fan_out)))`.
pub fn glorot_normal_init(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Domain(format!("fans must be positive, got {fan_in}x{fan_out}")));
    }
    let stddev = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal_sample(rng, 0.0, stddev, fan_in, fan_out)
}

/// Fresh parameters for every node of `topology`, drawn in node order.
///
/// Dense weights are Glorot-normal with zero bias; batch-norm starts at
/// `γ = 1, β = 0` with running mean 0 and running variance 1.
pub fn initialize(topology: &NetworkTopology, rng: &mut SeededRng) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for node in topology.nodes() {
        match node.kind {
            LayerKind::Dense => {
                let fan_in = topology.nodes()[node.inputs[0].0].width;
                store.insert(
                    node.id,
                    NodeParams::Dense {
                        weights: glorot_normal_init(rng, fan_in, node.width)?,
                        bias: vec![0.0; node.width],
                    },
                );
            }
            LayerKind::BatchNorm => {
                store.insert(
                    node.id,
                    NodeParams::BatchNorm {
                        gamma: vec![1.0; node.width],
                        beta: vec![0.0; node.width],
                        running_mean: vec![0.0; node.width],
                        running_var: vec![1.0; node.width],
                    },
                );
            }
            _ => {}
        }
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

/// Per-parameter squared-gradient averages, laid out like [`ParameterStore::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub config: RmspropConfig,
    accumulators: Vec<Vec<f64>>,
    steps: u64,
}

impl RmspropState {
    pub fn new(config: RmspropConfig, params: &ParameterStore) -> Self {
        Self {
            config,
            accumulators: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            steps: 0,
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of `params` in place.
    ///
    /// A non-finite gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        let g_tensors = grads.tensors();
        self.step_tensors(params.tensors_mut(), &g_tensors)
    }

    /// Same as [`step`](Self::step) on raw tensor lists.
    pub fn step_tensors(&mut self, mut params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.accumulators.len() || grads.len() != self.accumulators.len() {
            return Err(Error::Domain(format!(
                "rmsprop expects {} tensors, got {} parameters and {} gradients",
                self.accumulators.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), s)) in params.iter().zip(grads).zip(&self.accumulators).enumerate() {
            if p.len() != g.len() || p.len() != s.len() {
                return Err(Error::Shape {
                    op: "rmsprop_step",
                    left: (i, p.len()),
                    right: (i, g.len()),
                });
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in tensor {i} at entry {pos} after {} steps",
                    self.steps
                )));
            }
        }
        let RmspropConfig {
            learning_rate,
            rho,
            eps,
        } = self.config;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.accumulators.iter_mut()) {
            for ((p, g), s) in p.iter_mut().zip(g.iter()).zip(s.iter_mut()) {
                *s = rho * *s + (1.0 - rho) * g * g;
                *p -= learning_rate * g / (s.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
