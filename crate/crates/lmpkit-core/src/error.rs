//! Shared error type for the core library.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the core crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors emitted by core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape, dimension, or element-count mismatch.
    Size(String),
    /// Class label outside the valid range.
    Label { index: usize, num_classes: usize },
    /// A pooling context does not match the tensors it is applied to.
    Context(String),
    /// Every channel of an activation volume carries zero mass.
    EmptyActivation,
    /// The queried channel is all-zero and excluded from voting.
    ExcludedChannel,
    /// Scene geometry could not be satisfied within the retry budget.
    Placement(String),
    /// Training produced a non-finite loss at the given step.
    Diverged { step: usize },
    /// A configuration value violates its documented invariant.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Size(msg) => write!(f, "size error: {msg}"),
            Error::Label { index, num_classes } => {
                write!(f, "label {index} out of range for {num_classes} classes")
            }
            Error::Context(msg) => write!(f, "context error: {msg}"),
            Error::EmptyActivation => write!(f, "all channels are zero"),
            Error::ExcludedChannel => write!(f, "channel is all-zero and carries no vote"),
            Error::Placement(msg) => write!(f, "placement error: {msg}"),
            Error::Diverged { step } => write!(f, "training diverged at step {step}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
