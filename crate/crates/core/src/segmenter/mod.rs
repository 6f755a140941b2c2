//! The pluggable segmentation function and its implementations.
//!
//! Anything that maps a [`ModelInput`] to a same-sized [`ProbabilityMap`]
//! can drive the refinement engine, the trainer's rollouts and the
//! benchmark. Three families live here:
//!
//! * [`ToyModel`]: a per-pixel logistic model with analytic gradients,
//! * [`ScriptedMock`] and friends: deterministic test instruments,
//! * [`ExternalSegmenter`]: a child process speaking the line-delimited JSON
//!   protocol, for benchmarking third-party models.

mod external;
mod mock;
mod toy;

use thiserror::Error;

use crate::encoding::ModelInput;
use crate::types::{BinaryMask, ProbabilityMap};

pub use external::{ExternalSegmenter, Handshake, Request, Response, DEFAULT_TIMEOUT, PROTOCOL_NAME, PROTOCOL_VERSION};
pub use mock::{ConstantSegmenter, Counted, OracleSegmenter, ScriptedMock};
pub use toy::{
    load_params, persist_params, ForwardCache, ToyModel, ToyModelParams, DEFAULT_SIGMA, FEATURE_COUNT, FEATURE_NAMES,
    PARAMS_MAGIC,
};

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error("scripted segmenter queue exhausted after {calls} calls")]
    Exhausted { calls: usize },
    #[error("segmenter output is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("segmenter output value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("external segmenter exited: {0}")]
    ProcessExited(String),
    #[error("external segmenter sent a malformed message: {0}")]
    Malformed(String),
    #[error("external segmenter did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("external segmenter is unusable after an earlier failure")]
    Failed,
    #[error("no ground truth registered for the oracle segmenter")]
    NoGroundTruth,
    #[error("bad parameter file: {0}")]
    Params(String),
    #[error("external segmenter i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A segmentation function `f(image, clicks, previous mask)`.
///
/// Implementations must return a map with the input's dimensions and values
/// in `[0, 1]`, and must be deterministic for a fixed state and input.
pub trait Segmenter: Send {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError>;

    /// Called by the benchmark before each instance. Only ground-truth-aware
    /// test doubles such as [`OracleSegmenter`] use it.
    fn begin_instance(&mut self, _gt: &BinaryMask) {}
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        (**self).predict(input)
    }

    fn begin_instance(&mut self, gt: &BinaryMask) {
        (**self).begin_instance(gt)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for &mut S {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        (**self).predict(input)
    }

    fn begin_instance(&mut self, gt: &BinaryMask) {
        (**self).begin_instance(gt)
    }
}

/// Builds one segmenter per worker thread (one child process per worker for
/// external models).
pub trait SegmenterFactory: Sync {
    fn create(&self) -> Result<Box<dyn Segmenter>, SegmenterError>;
}

impl<F> SegmenterFactory for F
where
    F: Fn() -> Result<Box<dyn Segmenter>, SegmenterError> + Sync,
{
    fn create(&self) -> Result<Box<dyn Segmenter>, SegmenterError> {
        self()
    }
}

/// Checks the dimension and range contract on a segmenter's output.
pub fn validate_output(input: &ModelInput, output: &ProbabilityMap) -> Result<(), SegmenterError> {
    if output.dims() != input.dims() {
        return Err(SegmenterError::DimensionMismatch {
            expected: input.dims(),
            actual: output.dims(),
        });
    }
    Ok(())
}
