//! SQL analysis: schema catalog, feature extraction, CTE segmentation, and
//! clause-level diffing. Everything here is deterministic and engine-free;
//! execution lives in [`crate::exec`].

pub mod catalog;
pub mod cte;
pub mod diff;
pub mod features;

pub use catalog::{ColumnRecord, SchemaCatalog, TypeTag, TYPE_TAXONOMY};
pub use cte::{reassemble, split_ctes, CteSegment};
pub use diff::{clause_diff, ClauseDiff, ClauseTag};
pub use features::{
    extract_features, extract_features_lossy, extract_features_scoped, is_vocabulary_keyword,
    QueryFeatures, KEYWORD_VOCABULARY,
};
