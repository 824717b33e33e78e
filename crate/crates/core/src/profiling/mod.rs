//! Augmentation profiling: silhouette scores of delta meta tokens, the
//! score-driven augmentation sampler, PCA projection and embedding export.

mod export;
mod pca;
mod sampler;
mod silhouette;

pub use export::{read_embeddings, write_embeddings, write_silhouette_report, EmbeddingRecord};
pub use pca::{pca_project, Projection};
pub use sampler::{
    pair_inclusion_probabilities, wrs_sample, wrs_weights, wrs_weights_standardized,
    SamplerWeights,
};
pub use silhouette::{silhouette_scores, ClusterScore, Silhouette, SilhouetteReport};
