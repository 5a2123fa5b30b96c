use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MiEndpoint};
use crate::error::{Error, Result};
use crate::mi::{jitter, ksg_mi, Ensemble, MiEstimate};
use crate::mnist::{test_error, Dataset, Split};
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::{backward, capture, forward, forward_keeping, Batch, Mode, NetworkTopology, NodeId, ParameterStore};
use crate::numerics::{SeededRng, SparseRows};
use crate::optim::{initialize, RmspropState};
use crate::topology::{build_with, Architecture};

const INIT_STREAM: u64 = 1;
const SUBSAMPLE_STREAM: u64 = 2;
const JITTER_STREAM: u64 = 3;

/// Metrics of one epoch. Epoch 0 is measured at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the training set, in nats.
    pub train_loss: f64,
    pub test_error: f64,
    pub mi_nats: f64,
    pub mi_bits: f64,
    /// Milliseconds since the run started.
    pub wall_ms: u64,
}

impl TrajectoryRecord {
    /// Row written when training diverges: the offending loss, everything else NaN.
    pub fn divergence_marker(epoch: usize, train_loss: f64, wall_ms: u64) -> Self {
        Self {
            epoch,
            train_loss: if train_loss.is_finite() { f64::NAN } else { train_loss },
            test_error: f64::NAN,
            mi_nats: f64::NAN,
            mi_bits: f64::NAN,
            wall_ms,
        }
    }

    pub fn is_divergence_marker(&self) -> bool {
        !self.train_loss.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// The last record is a divergence marker.
    pub diverged: bool,
    pub optimizer_steps: u64,
}

/// Trained network state at the end of a run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub architecture: Architecture,
    pub params: ParameterStore,
    /// Validation rows the MI is estimated on, fixed for the whole run.
    pub mi_rows: Vec<usize>,
}

/// Loads both splits from `config.data_dir` and runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Trajectory> {
    config.validate()?;
    let train = Dataset::load(&config.data_dir, Split::Train)?;
    let test = Dataset::load(&config.data_dir, Split::Test)?;
    Ok(run_on(config, &train, &test)?.0)
}

/// Eval-mode activations of `nodes` for every row of `dataset`.
pub fn capture_activations(
    topology: &NetworkTopology,
    params: &ParameterStore,
    dataset: &Dataset,
    nodes: &[NodeId],
) -> Result<Vec<Ensemble>> {
    capture(topology, params, &dataset.images, nodes)?
        .into_iter()
        .map(Ensemble::new)
        .collect()
}

pub fn mi_nodes(architecture: &Architecture, endpoint: MiEndpoint) -> (NodeId, NodeId) {
    let first = architecture.landmarks.first_hidden();
    let last = match endpoint {
        MiEndpoint::SoftmaxInput => architecture.landmarks.softmax_input,
        MiEndpoint::LastHidden => architecture.landmarks.last_hidden(),
    };
    (first, last)
}

/// Sparse copy of the images when at most half the pixels are non-zero.
fn sparse_copy(data: &Dataset) -> Option<SparseRows> {
    let sparse = SparseRows::from_dense(&data.images);
    (sparse.density() <= 0.5).then_some(sparse)
}

fn batch<'a>(data: &'a Dataset, sparse: &'a Option<SparseRows>) -> Batch<'a> {
    Batch {
        dense: &data.images,
        sparse: sparse.as_ref(),
    }
}

struct Evaluation {
    test_error: f64,
    mi: MiEstimate,
}

fn evaluate(
    config: &ExperimentConfig,
    state: &RunState,
    test: &Dataset,
    test_sparse: &Option<SparseRows>,
    epoch: usize,
) -> Result<Evaluation> {
    let topology = &state.architecture.topology;
    let (first, last) = mi_nodes(&state.architecture, config.mi_endpoint);
    let (logits, trace) = forward_keeping(topology, &state.params, batch(test, test_sparse), Mode::Eval, &[first, last])?;
    if !logits.is_finite() {
        return Err(Error::Divergence(format!("non-finite logits at epoch {epoch}")));
    }
    let error = test_error(&logits, &test.labels)?;
    let pick = |id: NodeId| -> Result<Ensemble> {
        let full = trace
            .output(id)
            .ok_or_else(|| Error::Topology(format!("node {id} was not retained")))?;
        Ensemble::new(full.select_rows(&state.mi_rows))
    };
    let mut rng = SeededRng::new(config.seed)
        .substream(JITTER_STREAM)
        .substream(epoch as u64);
    let x = jitter(&pick(first)?, &mut rng, config.jitter_amplitude)?;
    let y = jitter(&pick(last)?, &mut rng, config.jitter_amplitude)?;
    Ok(Evaluation {
        test_error: error,
        mi: ksg_mi(&x, &y, config.k)?,
    })
}

/// Full-batch training on in-memory data.
///
/// Each epoch is one forward/backward pass over all of `train` and one
/// RMSprop update. Epoch 0 is recorded before any update. A non-finite loss
/// or gradient ends the run with a divergence marker row instead of an error.
pub fn run_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<(Trajectory, RunState)> {
    config.validate()?;
    let mi_count = match config.mi_subsample {
        0 => test.len(),
        n => n,
    };
    if test.len() < mi_count || mi_count <= config.k {
        return Err(Error::Config(format!(
            "cannot estimate MI on {mi_count} of {} validation rows with k = {}",
            test.len(),
            config.k
        )));
    }
    let architecture = build_with(&config.spec(), config.batch_norm())?;
    let topology = &architecture.topology;
    if train.images.cols() != topology.input_width() || test.images.cols() != topology.input_width() {
        return Err(Error::Data(format!(
            "network expects {} input features, data has {} (train) and {} (test)",
            topology.input_width(),
            train.images.cols(),
            test.images.cols()
        )));
    }
    let root = SeededRng::new(config.seed);
    let params = initialize(topology, &mut root.substream(INIT_STREAM))?;
    let mi_rows = root
        .substream(SUBSAMPLE_STREAM)
        .sample_indices(test.len(), mi_count);
    let mut state = RunState {
        architecture,
        params,
        mi_rows,
    };
    let train_sparse = sparse_copy(train);
    let test_sparse = sparse_copy(test);
    let mut optimizer = RmspropState::new(config.rmsprop(), &state.params);
    let started = Instant::now();
    let elapsed = || {
        if config.timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        }
    };

    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut diverged = false;
    for epoch in 0..=config.epochs {
        let topology = &state.architecture.topology;
        let (logits, trace) = forward(topology, &state.params, batch(train, &train_sparse), Mode::Train)?;
        let loss = softmax_cross_entropy(&logits, &train.labels)?.0;
        drop(logits);
        if !loss.is_finite() {
            log::warn!("non-finite training loss at epoch {epoch}");
            records.push(TrajectoryRecord::divergence_marker(epoch, loss, elapsed()));
            diverged = true;
            break;
        }
        let eval = match evaluate(config, &state, test, &test_sparse, epoch) {
            Ok(e) => e,
            Err(Error::Divergence(msg)) => {
                log::warn!("{msg}");
                records.push(TrajectoryRecord::divergence_marker(epoch, f64::NAN, elapsed()));
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(TrajectoryRecord {
            epoch,
            train_loss: loss,
            test_error: eval.test_error,
            mi_nats: eval.mi.nats,
            mi_bits: eval.mi.bits,
            wall_ms: elapsed(),
        });
        if epoch % 25 == 0 || epoch == config.epochs {
            log::info!(
                "{} epoch {epoch}: loss {loss:.5} test error {:.4} MI {:.4} bits",
                config.architecture,
                eval.test_error,
                eval.mi.bits
            );
        }
        if epoch == config.epochs {
            break;
        }

        state
            .params
            .update_running_stats(&trace, config.bn_momentum);
        let grads = backward(topology, &state.params, trace, &train.labels)?.grads;
        match optimizer.step(&mut state.params, &grads) {
            Ok(()) => {}
            Err(Error::Divergence(msg)) => {
                log::warn!("{msg}");
                records.push(TrajectoryRecord::divergence_marker(epoch + 1, f64::NAN, elapsed()));
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((
        Trajectory {
            records,
            diverged,
            optimizer_steps: optimizer.steps(),
        },
        state,
    ))
}
