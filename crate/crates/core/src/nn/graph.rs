//! Layer DAG evaluation in topological order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, dense_forward,
    softmax_cross_entropy, tanh_backward, tanh_forward, BatchNormCache, Mode,
};
use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, matmul_tn, Matrix, SparseRows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Dense,
    BatchNorm,
    Tanh,
    Add,
    SoftmaxCrossEntropy,
}

impl LayerKind {
    fn arity(self) -> usize {
        match self {
            LayerKind::Input => 0,
            LayerKind::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub width: usize,
}

/// Batch-norm constants shared by every batch-norm node of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSettings {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.99,
        }
    }
}

/// Validated layer DAG. Nodes are stored in topological order, node 0 is
/// the single input and the last node is the single softmax sink.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    nodes: Vec<LayerNode>,
    consumers: Vec<Vec<NodeId>>,
    batch_norm: BatchNormSettings,
}

impl NetworkTopology {
    pub fn new(nodes: Vec<LayerNode>, batch_norm: BatchNormSettings) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("empty graph".into()));
        }
        let mut consumers = vec![Vec::new(); nodes.len()];
        for (pos, node) in nodes.iter().enumerate() {
            if node.id.0 != pos {
                return Err(Error::Topology(format!(
                    "node at position {pos} has id {}",
                    node.id
                )));
            }
            if (pos == 0) != (node.kind == LayerKind::Input) {
                return Err(Error::Topology(
                    "exactly one input node is allowed and it must come first".into(),
                ));
            }
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::Topology(format!(
                    "node {} ({:?}) has {} inputs, expected {}",
                    node.id,
                    node.kind,
                    node.inputs.len(),
                    node.kind.arity()
                )));
            }
            if node.width == 0 {
                return Err(Error::Topology(format!("node {} has zero width", node.id)));
            }
            for input in &node.inputs {
                if input.0 >= pos {
                    return Err(Error::Topology(format!(
                        "node {} reads node {input}, which is not upstream (cycle or misordered graph)",
                        node.id
                    )));
                }
                consumers[input.0].push(node.id);
            }
            let in_width = |i: usize| nodes[node.inputs[i].0].width;
            match node.kind {
                LayerKind::BatchNorm | LayerKind::Tanh | LayerKind::SoftmaxCrossEntropy
                    if in_width(0) != node.width =>
                {
                    return Err(Error::Topology(format!(
                        "node {} ({:?}) width {} differs from its input width {}",
                        node.id,
                        node.kind,
                        node.width,
                        in_width(0)
                    )));
                }
                LayerKind::Add if in_width(0) != in_width(1) || in_width(0) != node.width => {
                    return Err(Error::Topology(format!(
                        "add node {} sums nodes {} (width {}) and {} (width {})",
                        node.id,
                        node.inputs[0],
                        in_width(0),
                        node.inputs[1],
                        in_width(1)
                    )));
                }
                _ => {}
            }
        }
        let sinks: Vec<usize> = (0..nodes.len()).filter(|&i| consumers[i].is_empty()).collect();
        let last = nodes.len() - 1;
        if sinks != [last] || nodes[last].kind != LayerKind::SoftmaxCrossEntropy {
            return Err(Error::Topology(format!(
                "graph must have exactly one sink and it must be the softmax output; sinks: {sinks:?}"
            )));
        }
        if nodes
            .iter()
            .filter(|n| n.kind == LayerKind::SoftmaxCrossEntropy)
            .count()
            != 1
        {
            return Err(Error::Topology("more than one softmax output".into()));
        }
        Ok(Self {
            nodes,
            consumers,
            batch_norm,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&LayerNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Topology(format!("unknown node id {id}")))
    }

    pub fn consumers(&self, id: NodeId) -> &[NodeId] {
        &self.consumers[id.0]
    }

    pub fn input_width(&self) -> usize {
        self.nodes[0].width
    }

    pub fn classes(&self) -> usize {
        self.sink().width
    }

    pub fn sink(&self) -> &LayerNode {
        self.nodes.last().expect("validated non-empty")
    }

    /// The node whose output the softmax reads.
    pub fn logits_node(&self) -> NodeId {
        self.sink().inputs[0]
    }

    pub fn batch_norm(&self) -> BatchNormSettings {
        self.batch_norm
    }

    /// Shortest directed path, in edges, from `from` to `to`.
    pub fn path_length(&self, from: NodeId, to: NodeId) -> Option<usize> {
        if from.0 >= self.nodes.len() || to.0 >= self.nodes.len() || to.0 < from.0 {
            return None;
        }
        let mut dist: Vec<Option<usize>> = vec![None; self.nodes.len()];
        dist[from.0] = Some(0);
        for node in &self.nodes[from.0 + 1..=to.0] {
            dist[node.id.0] = node.inputs.iter().filter_map(|i| dist[i.0]).min().map(|d| d + 1);
        }
        dist[to.0]
    }
}

/// Trainable tensors and running statistics of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeParams {
    Dense {
        weights: Matrix,
        bias: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

/// Parameters of every Dense and BatchNorm node, keyed by node id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<NodeId, NodeParams>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NodeId, params: NodeParams) {
        self.entries.insert(id, params);
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeParams> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut NodeParams> {
        self.entries.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &NodeParams)> {
        self.entries.iter()
    }

    /// Trainable tensors in a fixed order: per node ascending, weights then
    /// bias for Dense, gamma then beta for BatchNorm.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for p in self.entries.values() {
            match p {
                NodeParams::Dense { weights, bias } => {
                    out.push(weights.as_slice());
                    out.push(bias.as_slice());
                }
                NodeParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice());
                    out.push(beta.as_slice());
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for p in self.entries.values_mut() {
            match p {
                NodeParams::Dense { weights, bias } => {
                    out.push(weights.as_mut_slice());
                    out.push(bias.as_mut_slice());
                }
                NodeParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_mut_slice());
                    out.push(beta.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks one entry per Dense/BatchNorm node with matching shapes and nothing else.
    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        let mut expected = 0;
        for node in topology.nodes() {
            let fan_in = node.inputs.first().map(|i| topology.nodes()[i.0].width);
            match (node.kind, self.entries.get(&node.id)) {
                (LayerKind::Dense, Some(NodeParams::Dense { weights, bias })) => {
                    expected += 1;
                    if weights.shape() != (fan_in.unwrap_or(0), node.width) || bias.len() != node.width {
                        return Err(Error::Topology(format!(
                            "dense node {} has weights {:?} and bias {}",
                            node.id,
                            weights.shape(),
                            bias.len()
                        )));
                    }
                }
                (
                    LayerKind::BatchNorm,
                    Some(NodeParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    }),
                ) => {
                    expected += 1;
                    let w = node.width;
                    if gamma.len() != w || beta.len() != w || running_mean.len() != w || running_var.len() != w {
                        return Err(Error::Topology(format!(
                            "batch-norm node {} has mis-sized parameters",
                            node.id
                        )));
                    }
                    if running_var.iter().any(|v| *v < 0.0) {
                        return Err(Error::Topology(format!(
                            "batch-norm node {} has negative running variance",
                            node.id
                        )));
                    }
                }
                (LayerKind::Dense | LayerKind::BatchNorm, _) => {
                    return Err(Error::Topology(format!(
                        "node {} ({:?}) has no matching parameter entry",
                        node.id, node.kind
                    )));
                }
                _ => {}
            }
        }
        if expected != self.entries.len() {
            return Err(Error::Topology(format!(
                "{} parameter entries for {expected} parameterized nodes",
                self.entries.len()
            )));
        }
        Ok(())
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<'_>, momentum: f64) {
        for (id, cache) in trace.bn.iter().enumerate() {
            let Some(cache) = cache else { continue };
            if let Some(NodeParams::BatchNorm {
                running_mean,
                running_var,
                ..
            }) = self.entries.get_mut(&NodeId(id))
            {
                for (r, b) in running_mean.iter_mut().zip(&cache.batch_mean) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                for (r, b) in running_var.iter_mut().zip(&cache.batch_var) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
    }
}

/// Gradients for the trainable tensors of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeGrads {
    Dense { weights: Matrix, bias: Vec<f64> },
    BatchNorm { gamma: Vec<f64>, beta: Vec<f64> },
}

/// Gradient store mirroring the trainable layout of [`ParameterStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<NodeId, NodeGrads>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&NodeGrads> {
        self.entries.get(&id)
    }

    /// Same order as [`ParameterStore::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.entries.values() {
            match g {
                NodeGrads::Dense { weights, bias } => {
                    out.push(weights.as_slice());
                    out.push(bias.as_slice());
                }
                NodeGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice());
                    out.push(beta.as_slice());
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Network input rows, optionally with a sparse copy that the first dense
/// layer uses for its product and weight gradient.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub dense: &'a Matrix,
    pub sparse: Option<&'a SparseRows>,
}

impl<'a> From<&'a Matrix> for Batch<'a> {
    fn from(dense: &'a Matrix) -> Self {
        Batch { dense, sparse: None }
    }
}

impl<'a> Batch<'a> {
    /// Pairs `dense` with its sparse copy; the two must hold the same values.
    pub fn with_sparse(dense: &'a Matrix, sparse: &'a SparseRows) -> Result<Self> {
        if dense.shape() != sparse.shape() {
            return Err(Error::Shape {
                op: "sparse input",
                left: dense.shape(),
                right: sparse.shape(),
            });
        }
        Ok(Batch {
            dense,
            sparse: Some(sparse),
        })
    }
}

/// Cached activations of one forward pass.
#[derive(Debug)]
pub struct ForwardTrace<'a> {
    input: Batch<'a>,
    mode: Mode,
    outputs: Vec<Option<Matrix>>,
    bn: Vec<Option<BatchNormCache>>,
}

impl<'a> ForwardTrace<'a> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Output of a node, if it was retained.
    pub fn output(&self, id: NodeId) -> Option<&Matrix> {
        if id.0 == 0 {
            Some(self.input.dense)
        } else {
            self.outputs.get(id.0).and_then(|o| o.as_ref())
        }
    }

    fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.outputs.get_mut(id.0).and_then(Option::take)
    }
}

fn node_params(params: &ParameterStore, id: NodeId) -> Result<&NodeParams> {
    params
        .get(id)
        .ok_or_else(|| Error::Topology(format!("no parameters for node {id}")))
}

/// Evaluates the graph on `x` and returns the logits.
///
/// Train mode normalizes by batch statistics and retains everything the
/// backward pass needs; the batch statistics are left in the trace for
/// [`ParameterStore::update_running_stats`]. Eval mode is a pure function of
/// `(params, x)` and retains only the logits and the `keep` nodes.
pub fn forward<'a>(
    topology: &NetworkTopology,
    params: &ParameterStore,
    x: impl Into<Batch<'a>>,
    mode: Mode,
) -> Result<(Matrix, ForwardTrace<'a>)> {
    forward_keeping(topology, params, x, mode, &[])
}

pub fn forward_keeping<'a>(
    topology: &NetworkTopology,
    params: &ParameterStore,
    x: impl Into<Batch<'a>>,
    mode: Mode,
    keep: &[NodeId],
) -> Result<(Matrix, ForwardTrace<'a>)> {
    let batch = x.into();
    let x = batch.dense;
    if x.cols() != topology.input_width() {
        return Err(Error::Shape {
            op: "forward input",
            left: x.shape(),
            right: (x.rows(), topology.input_width()),
        });
    }
    let nodes = topology.nodes();
    let n = nodes.len();
    let logits_id = topology.logits_node();
    let retain: Vec<bool> = nodes
        .iter()
        .map(|node| {
            node.id == logits_id
                || keep.contains(&node.id)
                || (mode == Mode::Train
                    && (node.kind == LayerKind::Tanh
                        || topology
                            .consumers(node.id)
                            .iter()
                            .any(|c| nodes[c.0].kind == LayerKind::Dense)))
        })
        .collect();
    // index of the last consumer of each node, so transient outputs can be freed
    let last_use: Vec<usize> = (0..n)
        .map(|i| topology.consumers(NodeId(i)).iter().map(|c| c.0).max().unwrap_or(i))
        .collect();

    let mut trace = ForwardTrace {
        input: batch,
        mode,
        outputs: vec![None; n],
        bn: vec![None; n],
    };
    let eps = topology.batch_norm().eps;

    for node in &nodes[1..] {
        if node.kind == LayerKind::SoftmaxCrossEntropy {
            continue;
        }
        let (out, cache) =
            eval_node(node, params, &trace, mode, eps).map_err(|e| e.at_node(node.id.0))?;
        if cache.is_some() {
            trace.bn[node.id.0] = cache;
        }
        trace.outputs[node.id.0] = Some(out);

        for &src in &node.inputs {
            if src.0 != 0 && !retain[src.0] && last_use[src.0] == node.id.0 {
                trace.outputs[src.0] = None;
            }
        }
    }
    let logits = trace
        .output(logits_id)
        .cloned()
        .ok_or_else(|| Error::Topology("logits were not produced".into()))?;
    Ok((logits, trace))
}

fn eval_node(
    node: &LayerNode,
    params: &ParameterStore,
    trace: &ForwardTrace<'_>,
    mode: Mode,
    eps: f64,
) -> Result<(Matrix, Option<BatchNormCache>)> {
    let input = |i: usize| -> Result<&Matrix> {
        trace.output(node.inputs[i]).ok_or_else(|| {
            Error::Topology(format!("output of node {} was released early", node.inputs[i]))
        })
    };
    match node.kind {
        LayerKind::Dense => match node_params(params, node.id)? {
            NodeParams::Dense { weights, bias } => match trace.input.sparse {
                Some(sparse) if node.inputs[0].0 == 0 => {
                    if bias.len() != weights.cols() {
                        return Err(Error::Shape {
                            op: "dense bias",
                            left: weights.shape(),
                            right: (1, bias.len()),
                        });
                    }
                    let mut y = sparse.matmul(weights)?;
                    y.add_row_broadcast(bias)?;
                    Ok((y, None))
                }
                _ => Ok((dense_forward(input(0)?, weights, bias)?, None)),
            },
            _ => Err(Error::Topology("dense node holds batch-norm parameters".into())),
        },
        LayerKind::BatchNorm => match node_params(params, node.id)? {
            NodeParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => match mode {
                Mode::Train => {
                    let (y, cache) = batchnorm_forward_train(input(0)?, gamma, beta, eps)?;
                    Ok((y, Some(cache)))
                }
                Mode::Eval => Ok((
                    batchnorm_forward_eval(input(0)?, gamma, beta, running_mean, running_var, eps)?,
                    None,
                )),
            },
            _ => Err(Error::Topology("batch-norm node holds dense parameters".into())),
        },
        LayerKind::Tanh => Ok((tanh_forward(input(0)?), None)),
        LayerKind::Add => Ok((input(0)?.add(input(1)?)?, None)),
        LayerKind::Input | LayerKind::SoftmaxCrossEntropy => {
            Err(Error::Topology(format!("node {} is not evaluable", node.id)))
        }
    }
}

/// Eval-mode activations of the requested nodes.
pub fn capture(
    topology: &NetworkTopology,
    params: &ParameterStore,
    x: &Matrix,
    nodes: &[NodeId],
) -> Result<Vec<Matrix>> {
    for &id in nodes {
        let node = topology.node(id)?;
        if node.kind == LayerKind::SoftmaxCrossEntropy {
            return Err(Error::Topology(format!(
                "node {id} is the loss sink and has no activation"
            )));
        }
    }
    let (_, trace) = forward_keeping(topology, params, x, Mode::Eval, nodes)?;
    nodes
        .iter()
        .map(|&id| {
            trace
                .output(id)
                .cloned()
                .ok_or_else(|| Error::Topology(format!("node {id} was not retained")))
        })
        .collect()
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Backward {
    pub loss: f64,
    pub grads: Gradients,
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse-mode pass over a train-mode trace: loss and parameter gradients.
///
/// Gradients arriving at a node from several consumers are summed.
pub fn backward(
    topology: &NetworkTopology,
    params: &ParameterStore,
    trace: ForwardTrace<'_>,
    labels: &[u8],
) -> Result<Backward> {
    if trace.mode != Mode::Train {
        return Err(Error::Domain("backward needs a train-mode trace".into()));
    }
    let mut trace = trace;
    let nodes = topology.nodes();
    let sink = topology.sink();
    let logits_id = topology.logits_node();
    let logits = trace
        .output(logits_id)
        .ok_or_else(|| Error::Topology("trace has no logits".into()))?;
    let (loss, grad_logits) =
        softmax_cross_entropy(logits, labels).map_err(|e| e.at_node(sink.id.0))?;

    let mut node_grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
    node_grads[logits_id.0] = Some(grad_logits);
    let mut grads = Gradients::default();

    for node in nodes[1..nodes.len() - 1].iter().rev() {
        let Some(upstream) = node_grads[node.id.0].take() else {
            continue;
        };
        let upstream = &upstream;
        let id = node.id;
        let result = (|| -> Result<Vec<(NodeId, Matrix)>> {
            match node.kind {
                LayerKind::Dense => {
                    let src = node.inputs[0];
                    let x_in = trace
                        .output(src)
                        .ok_or_else(|| Error::Topology(format!("input of dense node {id} not retained")))?;
                    let d_weights = match trace.input.sparse {
                        Some(sparse) if src.0 == 0 => sparse.matmul_tn(upstream)?,
                        _ => matmul_tn(x_in, upstream)?,
                    };
                    let d_bias = upstream.column_sums();
                    grads.entries.insert(
                        id,
                        NodeGrads::Dense {
                            weights: d_weights,
                            bias: d_bias,
                        },
                    );
                    if src.0 == 0 {
                        return Ok(vec![]);
                    }
                    let NodeParams::Dense { weights, .. } = node_params(params, id)? else {
                        return Err(Error::Topology("dense node holds batch-norm parameters".into()));
                    };
                    Ok(vec![(src, matmul_nt(upstream, weights)?)])
                }
                LayerKind::BatchNorm => {
                    let cache = trace.bn[id.0]
                        .as_ref()
                        .ok_or_else(|| Error::Topology(format!("no batch-norm cache for node {id}")))?;
                    let (dx, gamma, beta) = batchnorm_backward(cache, upstream)?;
                    grads.entries.insert(id, NodeGrads::BatchNorm { gamma, beta });
                    Ok(vec![(node.inputs[0], dx)])
                }
                LayerKind::Tanh => {
                    let y = trace
                        .output(id)
                        .ok_or_else(|| Error::Topology(format!("tanh output {id} not retained")))?;
                    Ok(vec![(node.inputs[0], tanh_backward(y, upstream)?)])
                }
                LayerKind::Add => Ok(vec![
                    (node.inputs[0], upstream.clone()),
                    (node.inputs[1], upstream.clone()),
                ]),
                LayerKind::Input | LayerKind::SoftmaxCrossEntropy => Ok(vec![]),
            }
        })()
        .map_err(|e| e.at_node(id.0))?;
        for (target, g) in result {
            if target.0 != 0 {
                accumulate(&mut node_grads[target.0], g).map_err(|e| e.at_node(id.0))?;
            }
        }
        // every consumer has already been processed
        trace.take(id);
        trace.bn[id.0] = None;
    }
    Ok(Backward {
        loss,
        grads,
    })
}

/// Train-mode loss without gradients.
pub fn train_loss(
    topology: &NetworkTopology,
    params: &ParameterStore,
    x: &Matrix,
    labels: &[u8],
) -> Result<f64> {
    let (logits, _) = forward(topology, params, x, Mode::Train)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}
