//! Synthetic multi-coil acquisitions, dataset splits and the k-space volume
//! file format.

mod coils;
mod manifest;
mod phantom;
mod volume;

pub use coils::{simulate_coils, synthesize_kspace};
pub use manifest::{build_manifest, sample_seed, DatasetManifest, ManifestEntry, Split, SplitFractions};
pub use phantom::{generate_phantom, Family, PhantomSpec};
pub use volume::{read_volume, write_volume, Metadata, VolumeDtype, VOLUME_MAGIC};

#[cfg(test)]
mod tests;
