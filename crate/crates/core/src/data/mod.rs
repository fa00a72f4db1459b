//! Patch datasets: directory indexing, patient-level splits, PNG decoding,
//! normalization and flip augmentation, plus a synthetic stand-in dataset.

mod batch;
mod image;
mod index;
mod split;
mod synth;

pub use batch::{flip_horizontal, flip_vertical, load_batch, PatchFiles, PatchSet, PatchSource};
pub use image::{
    decode_png, denormalize_pixel, encode_png, encode_sample_grid, normalize_pixel, sample_grid,
    RgbImage, GRID_COLUMNS,
};
pub use index::{
    parse_patch_filename, scan_dataset, DatasetIndex, ParsedName, Patch, Rejected, Scan,
    NUM_CLASSES,
};
pub use split::{split, SplitSpec, SplitUnit, TEST_FRACTION};
pub use synth::{synth_dataset, synth_patch, SYNTH_EXTENT, SYNTH_PATIENTS};
