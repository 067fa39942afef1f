use std::fmt;

use thiserror::Error;

/// Grid location of a node, used to point at the offending value in errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

/// An argument fell outside the domain (or range) of a utility function.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct UtilityDomainError {
    pub family: &'static str,
    pub operation: &'static str,
    pub value: f64,
    pub node: Option<NodeIndex>,
    pub coords: Option<[f64; 3]>,
}

impl UtilityDomainError {
    pub(crate) fn new(family: &'static str, operation: &'static str, value: f64) -> Self {
        Self {
            family,
            operation,
            value,
            node: None,
            coords: None,
        }
    }

    pub fn at_node(mut self, node: NodeIndex, coords: [f64; 3]) -> Self {
        self.node = Some(node);
        self.coords = Some(coords);
        self
    }
}

impl fmt::Display for UtilityDomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} utility {}: argument {} outside domain",
            self.family, self.operation, self.value
        )?;
        if let (Some(n), Some([a, b, s])) = (self.node, self.coords) {
            write!(f, " at node {n} (alpha={a}, beta={b}, S={s})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    UtilityDomain(#[from] UtilityDomainError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
