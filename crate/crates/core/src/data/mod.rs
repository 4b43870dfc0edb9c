//! Dataset ingestion, sampling, normalization, augmentation and synthetic
//! data generation.

mod augment;
mod cube;
mod image;
mod patches;
mod synth;

pub use augment::{augment, flip_h, flip_v, rot90, D4};
pub use cube::{load_cube, normalize_band_mean, normalize_global, read_class_names, save_cube, HyperCube};
pub use image::{load_seg_pair, read_ppm, write_ppm, Palette, Rgb, SegSample, SegSource};
pub use patches::{build_patch_dataset, extract_patch, sample_per_class, PatchDataset, PatchSource, Sample};
pub use synth::{generate_hyper, generate_seg, synth_hyper, synth_seg, SynthHyperParams, SynthOutput, SynthSegParams};
