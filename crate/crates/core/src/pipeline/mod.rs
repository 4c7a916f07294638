//! Offline dataset preparation: manifests, pruning, segmentation,
//! spectrograms, normalisation and the on-disk cache.

pub mod cache;
pub mod manifest;
pub mod normalize;
pub mod segment;
pub mod spectrogram;
pub mod wav;

pub use cache::{materialize_cache, CacheEntry, CacheError, CacheManifest};
pub use manifest::{ingest_dataset, ingest_manifest_file, prune_dataset, write_manifest, DatasetIndex};
pub use normalize::{compute_normalization_stats, denormalize, normalize};
pub use segment::{segment_clip, segment_samples, subclip_count, subclip_range};
pub use spectrogram::{compute_spectrogram, SpectrogramConfig, SpectrogramExtractor};
