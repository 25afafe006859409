//! Modality-agnostic sample representation, preprocessing onto the shared
//! 4D layout, patchification and manifest handling.

pub mod io;
pub mod manifest;
pub mod patch;
pub mod preprocess;
pub mod sample;

pub use manifest::{load_manifest, parse_manifest, render_manifest, write_manifest, Manifest, ManifestRecord};
pub use patch::{patchify, unpatchify, PatchConfig, TokenSequence};
pub use preprocess::{preprocess_2d, preprocess_ct, preprocess_video};
pub use sample::{LabelSet, Lesion, Modality, RegionStatus, Sample4D};
