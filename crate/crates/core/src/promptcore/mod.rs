//! Context vectors, the metanet, meta tokens and prompt-conditioned
//! classification.

mod checkpoint;
mod model;

pub use checkpoint::{read_tensors, write_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    default_bottleneck, trainable_parameter_count, DeltaMetaToken, DeltaVariant, MetaToken, ModelVars, PromptModel,
    CONTEXT_INIT_STD,
};
