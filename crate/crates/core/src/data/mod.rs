//! Volumes, masks, file formats, augmentation, synthetic phantoms and
//! dataset manifests.

pub mod augment;
pub mod io;
pub mod manifest;
pub mod phantom;
pub mod volume;

pub use augment::{augment, Augmentation};
pub use io::{load_mask, load_volume, save_mask, save_volume, FileFormat};
pub use manifest::{make_folds, DatasetManifest, ManifestEntry};
pub use phantom::{synth_phantom, PhantomSpec};
pub use volume::{normalize, Mask, Volume, DEFAULT_SPACING};
