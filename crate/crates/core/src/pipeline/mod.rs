//! Dataset manifests, run artifacts, and the static result gallery.

mod artifact;
mod gallery;
mod manifest;

pub use artifact::{sha256_hex, sha256_path, ArtifactFile, RunArtifact, RunDir, ARTIFACT_ROOT_ENV};
pub use gallery::{emit_gallery, external_references, Gallery, GalleryRow};
pub use manifest::{
    curate_manifest, split_dataset, CurationRules, DatasetManifest, ManifestRecord,
    RejectionReport, Split,
};
