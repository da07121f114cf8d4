//! Pose retrieval, curation, positional encoding and evaluation primitives.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod curation;
pub mod dsm;
pub mod europe;
pub mod index;
pub mod pose;
pub mod retrieval;
