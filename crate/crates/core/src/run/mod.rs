//! Config-driven training, evaluation and prediction runs.

mod config;
mod pipeline;

pub use config::{DataPaths, RunConfig, SegPairPaths, Task, DEFAULT_PATCH_SIZE, DEFAULT_SEED, DEFAULT_SEG_ERODE, DEFAULT_THRESHOLD};
pub use pipeline::{classify_pixels, evaluate, load_checkpoint, predict, segment_image, train, EvalOptions, EvalOutcome, Net, Split, TrainOutcome};
