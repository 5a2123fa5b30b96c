//! Layer primitives and the layer-graph network with reverse-mode gradients.

pub mod graph;
pub mod layers;

pub use graph::{
    backward, capture, forward, forward_keeping, train_loss, Backward, Batch, BatchNormSettings,
    ForwardTrace, Gradients, LayerKind, LayerNode, NetworkTopology, NodeGrads, NodeId, NodeParams,
    ParameterStore,
};
pub use layers::Mode;
