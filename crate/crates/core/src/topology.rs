//! The four dense architectures: plain MLP, shortcut, residual, and both.
//!
//! Every hidden layer is `Dense → BatchNorm → Tanh`. The first and last
//! hidden layers are `2W` wide, interior layers `W`. The softmax output is a
//! bare `Dense(classes)` fed by whatever the last stage produces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNormSettings, LayerKind, LayerNode, NetworkTopology, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureKind {
    #[serde(rename = "mlp")]
    PlainMlp,
    Shortcut,
    Residual,
    ShortcutResidual,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 4] = [
        ArchitectureKind::PlainMlp,
        ArchitectureKind::Shortcut,
        ArchitectureKind::Residual,
        ArchitectureKind::ShortcutResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::PlainMlp => "mlp",
            ArchitectureKind::Shortcut => "shortcut",
            ArchitectureKind::Residual => "residual",
            ArchitectureKind::ShortcutResidual => "shortcut-residual",
        }
    }

    pub fn has_shortcut(self) -> bool {
        matches!(self, ArchitectureKind::Shortcut | ArchitectureKind::ShortcutResidual)
    }

    pub fn has_residual(self) -> bool {
        matches!(self, ArchitectureKind::Residual | ArchitectureKind::ShortcutResidual)
    }

    /// Smallest depth that yields a valid graph of this kind.
    pub fn min_depth(self) -> usize {
        if self.has_residual() {
            5
        } else {
            2
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchitectureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture {s:?}; expected one of mlp, shortcut, residual, shortcut-residual"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    /// Interior hidden width `W`.
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub input_width: usize,
    pub classes: usize,
}

impl ArchitectureSpec {
    pub const MNIST_INPUT: usize = 784;
    pub const MNIST_CLASSES: usize = 10;

    pub fn mnist(kind: ArchitectureKind, width: usize, depth: usize) -> Self {
        Self {
            kind,
            width,
            depth,
            input_width: Self::MNIST_INPUT,
            classes: Self::MNIST_CLASSES,
        }
    }

    /// Widths of the hidden layers, first to last.
    pub fn hidden_widths(&self) -> Vec<usize> {
        (1..=self.depth)
            .map(|i| if i == 1 || i == self.depth { 2 * self.width } else { self.width })
            .collect()
    }

    /// Hidden-layer pairs `(i, i+2)` joined by a residual add, 1-based.
    pub fn residual_pairs(&self) -> Vec<(usize, usize)> {
        if !self.kind.has_residual() || self.depth < 3 {
            return Vec::new();
        }
        (2..)
            .step_by(2)
            .take_while(|&i| i + 2 < self.depth)
            .map(|i| (i, i + 2))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.input_width == 0 || self.classes == 0 {
            return Err(Error::Config(format!(
                "width, input width and class count must be positive: {self:?}"
            )));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!(
                "depth {} too small: at least 2 hidden layers are needed",
                self.depth
            )));
        }
        if self.kind.has_residual() && self.residual_pairs().is_empty() {
            return Err(Error::Config(format!(
                "{} needs at least one pair of W-wide interior layers two apart, which requires depth >= {}; got {}",
                self.kind,
                self.kind.min_depth(),
                self.depth
            )));
        }
        Ok(())
    }
}

/// Node ids of the landmarks in a built architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Landmarks {
    /// Activation output of each hidden layer (the tanh node), first to last.
    pub hidden: Vec<NodeId>,
    /// Node whose output the softmax dense layer reads.
    pub softmax_input: NodeId,
    /// Dense node producing the logits.
    pub logits: NodeId,
    pub add_nodes: Vec<NodeId>,
}

impl Landmarks {
    pub fn first_hidden(&self) -> NodeId {
        self.hidden[0]
    }

    pub fn last_hidden(&self) -> NodeId {
        *self.hidden.last().expect("at least two hidden layers")
    }
}

#[derive(Debug, Clone)]
pub struct Architecture {
    pub spec: ArchitectureSpec,
    pub topology: NetworkTopology,
    pub landmarks: Landmarks,
}

struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    fn push(&mut self, kind: LayerKind, inputs: Vec<NodeId>, width: usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(LayerNode {
            id,
            kind,
            inputs,
            width,
        });
        id
    }

    fn hidden_layer(&mut self, from: NodeId, width: usize) -> NodeId {
        let dense = self.push(LayerKind::Dense, vec![from], width);
        let bn = self.push(LayerKind::BatchNorm, vec![dense], width);
        self.push(LayerKind::Tanh, vec![bn], width)
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (wa, wb) = (self.nodes[a.0].width, self.nodes[b.0].width);
        if wa != wb {
            return Err(Error::Topology(format!(
                "cannot sum node {a} (width {wa}) with node {b} (width {wb})"
            )));
        }
        Ok(self.push(LayerKind::Add, vec![a, b], wa))
    }
}

/// Builds the layer graph for `spec`.
///
/// Residual adds follow the standard two-layer block: the (post-add) output
/// of hidden layer `i` is summed with the activation of layer `i+2` for
/// `i = 2, 4, …` while both are interior, and the sum feeds layer `i+3`.
/// The shortcut sums the first and last hidden activations before the
/// softmax dense layer.
pub fn build(spec: &ArchitectureSpec) -> Result<Architecture> {
    build_with(spec, BatchNormSettings::default())
}

pub fn build_with(spec: &ArchitectureSpec, batch_norm: BatchNormSettings) -> Result<Architecture> {
    spec.validate()?;
    let widths = spec.hidden_widths();
    let pairs = spec.residual_pairs();
    let mut g = GraphBuilder { nodes: Vec::new() };
    let input = g.push(LayerKind::Input, vec![], spec.input_width);

    let mut hidden = Vec::with_capacity(spec.depth);
    // effective output of each hidden layer after any residual add
    let mut stream: Vec<NodeId> = Vec::with_capacity(spec.depth);
    let mut add_nodes = Vec::new();
    let mut prev = input;
    for (idx, &w) in widths.iter().enumerate() {
        let layer = idx + 1;
        let act = g.hidden_layer(prev, w);
        hidden.push(act);
        let mut out = act;
        if let Some(&(src, _)) = pairs.iter().find(|&&(_, dst)| dst == layer) {
            out = g.add(stream[src - 1], act)?;
            add_nodes.push(out);
        }
        stream.push(out);
        prev = out;
    }

    let mut softmax_input = prev;
    if spec.kind.has_shortcut() {
        softmax_input = g.add(hidden[0], prev)?;
        add_nodes.push(softmax_input);
    }
    let logits = g.push(LayerKind::Dense, vec![softmax_input], spec.classes);
    g.push(LayerKind::SoftmaxCrossEntropy, vec![logits], spec.classes);

    let topology = NetworkTopology::new(g.nodes, batch_norm)?;
    Ok(Architecture {
        spec: *spec,
        topology,
        landmarks: Landmarks {
            hidden,
            softmax_input,
            logits,
            add_nodes,
        },
    })
}

/// Total trainable scalars: dense weights and biases plus batch-norm scale and shift.
pub fn parameter_count(spec: &ArchitectureSpec) -> Result<usize> {
    spec.validate()?;
    let mut total = 0;
    let mut fan_in = spec.input_width;
    for w in spec.hidden_widths() {
        total += fan_in * w + w + 2 * w;
        fan_in = w;
    }
    total += fan_in * spec.classes + spec.classes;
    Ok(total)
}

/// Counts trainable scalars directly from a built graph.
pub fn topology_parameter_count(topology: &NetworkTopology) -> usize {
    topology
        .nodes()
        .iter()
        .map(|n| match n.kind {
            LayerKind::Dense => {
                let fan_in = topology.nodes()[n.inputs[0].0].width;
                fan_in * n.width + n.width
            }
            LayerKind::BatchNorm => 2 * n.width,
            _ => 0,
        })
        .sum()
}
