//! Interaction and item-content data: loading, splitting, cold-item
//! partitioning, long-tail statistics and a synthetic generator.

pub mod cold;
pub mod io;
pub mod matrix;
pub mod split;
pub mod stats;
pub mod synth;

pub use cold::{cold_fold_in_pairs, mark_cold_items, ColdPartition};
pub use io::{
    load_features, load_interactions, write_atomic, write_interactions, FeatureMatrix, IdMap,
    LoadedInteractions,
};
pub use matrix::{InteractionSet, RatingMatrix};
pub use split::{fold_in_pairs, holdout_count, holdout_items, split_users, FoldInPair, UserSplit};
pub use stats::{density_stats, LongTailStats};
pub use synth::{gen_synthetic, SyntheticConfig, SyntheticData};
