use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{0}")]
    Domain(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}: byte offset {offset}: {msg}")]
    Idx {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        Error::Node {
            node,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
