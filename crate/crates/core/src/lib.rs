//! Candidate generation with binary codes and multi-index hashing, followed
//! by re-ranking with real-valued recommenders.
//!
//! The flow: [`dataset`] builds the leave-one-out split, [`hashrec`] learns
//! user and item codes, [`mih`] indexes item codes, [`candidates`] retrieves
//! `c` items per user, [`ranker`] trains re-rankers (optionally drawing hard
//! negatives from those candidates) and [`eval`] measures HR@N and MRR@N.

pub mod adam;
pub mod bench;
pub mod candidates;
pub mod codes;
pub mod container;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hashrec;
pub mod math;
pub mod mih;
pub mod ranker;
pub mod sampling;

pub use candidates::{generate_candidates, CandidateSet};
pub use codes::{binarize, hamming_distance, BinaryCodeMatrix};
pub use dataset::{InteractionDataset, ItemId, Split, UserId};
pub use embedding::DenseEmbeddingMatrix;
pub use error::{Error, Result};
pub use eval::{evaluate_candidates, evaluate_cigar, evaluate_full, EvalReport};
pub use hashrec::{train_hashrec, HashRecConfig, HashRecModel};
pub use mih::{build_index, linear_scan_topc, pad_candidates, CandidateList, MultiIndexHashTable};
pub use ranker::{rerank, train_ranker, RankerKind, RankerModel, RerankConfig};
