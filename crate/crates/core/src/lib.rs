//! Click-based interactive segmentation.
//!
//! A segmenter `f(image, clicks, previous mask)` is driven by a two-level
//! loop: each user click runs one coarse pass on the last refined mask, then
//! zero or more refinement passes that feed the output back with the same
//! clicks ([`cfr`]). Around that sit a differentiable toy segmenter and its
//! iterative-click-loss trainer ([`train`]), copy-paste augmentation
//! ([`augment`]), a deterministic click simulator ([`simulator`]) and the
//! number-of-clicks benchmark ([`bench`]).
//!
//! Coordinates are `(u, v)` = (column, row) with the origin at the top-left.

pub mod augment;
pub mod bench;
pub mod cfr;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod formats;
pub mod mask_ops;
pub mod seed;
pub mod segmenter;
pub mod simulator;
pub mod train;
pub mod types;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use cfr::{CfrConfig, SegmentationSession};
pub use dataset::AnnotatedSample;
pub use encoding::{assemble_model_input, encode_click_maps, ClickMaps, ModelInput, DEFAULT_DISK_RADIUS};
pub use error::{Error, Result};
pub use mask_ops::{binarize, connected_components, distance_transform, iou, pixel_delta, DEFAULT_THRESHOLD};
pub use segmenter::{Segmenter, SegmenterError, SegmenterFactory, ToyModel, ToyModelParams};
pub use types::{BinaryMask, Click, ClickLabel, ClickSequence, ProbabilityMap, RasterImage};
