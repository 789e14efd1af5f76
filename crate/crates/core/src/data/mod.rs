//! Class registry, manifests, dataset variants, grouped splitting, batching
//! and the synthetic leaf corpus.

pub mod manifest;
pub mod prepare;
pub mod registry;
pub mod split;
pub mod synth;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, SampleRecord};
pub use prepare::{channel_means, prepare_image, prepare_rgb, subtract_means, PrepareOptions, Variant};
pub use registry::{ClassEntry, ClassRegistry, HEALTHY};
pub use split::{batch_indices, check_split, grouped_split, grouped_split_indices, make_batches, SplitCheck, SplitRatio, SplitSpec};
pub use synth::{gen_minivillage, generate, SynthCorpus, SynthLabels, SynthOptions};
