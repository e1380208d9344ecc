use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value in layer {layer}")]
    NonFiniteLayer { layer: usize },
    #[error("non-finite loss at {phase} iteration {iteration}")]
    NonFiniteLoss { phase: &'static str, iteration: usize },
    #[error("degenerate soliton constant {0}")]
    Degenerate(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
