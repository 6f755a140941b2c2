//! Deterministic test instruments.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::encoding::ModelInput;
use crate::types::{BinaryMask, ProbabilityMap};

use super::{validate_output, Segmenter, SegmenterError};

/// Returns queued maps in order and records every input it receives.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    queue: VecDeque<ProbabilityMap>,
    log: Vec<ModelInput>,
}

impl ScriptedMock {
    pub fn new(outputs: impl IntoIterator<Item = ProbabilityMap>) -> Self {
        Self {
            queue: outputs.into_iter().collect(),
            log: Vec::new(),
        }
    }

    pub fn push(&mut self, map: ProbabilityMap) {
        self.queue.push_back(map);
    }

    pub fn calls(&self) -> &[ModelInput] {
        &self.log
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl Segmenter for ScriptedMock {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        self.log.push(input.clone());
        let out = self
            .queue
            .pop_front()
            .ok_or(SegmenterError::Exhausted { calls: self.log.len() })?;
        validate_output(input, &out)?;
        Ok(out)
    }
}

/// Answers every call with the ground truth registered for the current
/// instance.
#[derive(Debug, Default, Clone)]
pub struct OracleSegmenter {
    gt: Option<ProbabilityMap>,
}

impl OracleSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_ground_truth(gt: &BinaryMask) -> Self {
        Self {
            gt: Some(ProbabilityMap::from_mask(gt)),
        }
    }
}

impl Segmenter for OracleSegmenter {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        let out = self.gt.clone().ok_or(SegmenterError::NoGroundTruth)?;
        validate_output(input, &out)?;
        Ok(out)
    }

    fn begin_instance(&mut self, gt: &BinaryMask) {
        self.gt = Some(ProbabilityMap::from_mask(gt));
    }
}

/// Returns the same value at every pixel; `0.0` is the "empty" segmenter.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSegmenter(pub f64);

impl Segmenter for ConstantSegmenter {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        let (w, h) = input.dims();
        Ok(ProbabilityMap::filled(w, h, self.0))
    }
}

/// Wraps a segmenter and counts calls in a shared counter.
#[derive(Debug)]
pub struct Counted<S> {
    pub inner: S,
    pub calls: Arc<AtomicUsize>,
}

impl<S> Counted<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_counter(inner: S, calls: Arc<AtomicUsize>) -> Self {
        Self { inner, calls }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<S: Segmenter> Segmenter for Counted<S> {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(input)
    }

    fn begin_instance(&mut self, gt: &BinaryMask) {
        self.inner.begin_instance(gt)
    }
}
