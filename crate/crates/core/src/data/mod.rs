//! Samples, manifests, preprocessing and the synthetic radiograph generator.

#[cfg(feature = "io")]
mod manifest;
mod preprocess;
mod sample;
mod synth;

#[cfg(feature = "io")]
pub use manifest::{
    load_manifest, read_manifest, save_samples, write_manifest, ManifestRow, MANIFEST_HEADER,
};
pub use preprocess::{preprocess, preprocess_all, PreprocessConfig};
pub use sample::{CxrSample, ScoreKind, LUNG_SUM_TOLERANCE};
pub use synth::{
    coverage_score, render_layout, synth_dataset, synth_layout, synth_sample, Blob, Side,
    SynthLayout,
    BLOB_THRESHOLD,
};
