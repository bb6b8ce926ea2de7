//! Prototype stores, relative representations, the classification head,
//! training losses and prototype-geometry analysis.
//!
//! Embeddings are compared through their cosine similarities to a prototype
//! store. Language prototypes fix the target geometry; visual prototypes are
//! learned so that their relative representations match it.

mod analysis;
mod head;
mod losses;
mod store;

pub use analysis::{
    alignment_score, class_mean_prototypes, nearest_actions, random_prototypes, similarity_matrix, ProtoInit,
};
pub use head::{classify, cosine_attention, probabilities, Head};
pub use losses::{loss_cls, loss_feat, loss_past, loss_reg, loss_sem, total_loss, FeatNorm, LossParts, LossWeights};
pub use store::{default_names, relative_repr, subset_size, LanguageTargets, ProtoKind, ProtoStore, PrototypeSubset};
