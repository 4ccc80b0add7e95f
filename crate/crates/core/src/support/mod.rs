//! Evidence for reading a token as a symbol.
//!
//! *Global support* counts, among the `k` training embeddings nearest to a
//! token, how many carry each tag. *Local support* is the mean matched
//! descriptor distance between a token and the other tokens of the same word
//! that carry the same tag; small values mean the tokens were produced the
//! same way.

mod descriptor;
mod index;
mod local;

pub use descriptor::{DescriptorExtractor, DogExtractor, Keypoint, LocalDescriptor};
pub use index::{
    build_index, global_support, is_globally_consistent, EmbeddingIndex, SupportMap, DEFAULT_K,
};
pub use local::{
    local_support, local_support_images, DescriptorMetric, mutual_matches, pair_distance, LocalSupport,
};
