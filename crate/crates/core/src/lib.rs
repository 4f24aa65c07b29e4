//! Quantitative characterization of relational table embeddings.
//!
//! The crate is organised around the life cycle of a measurement run:
//!
//! * [`table`] parses and projects relational tables,
//! * [`variants`] derives the permuted, sampled, perturbed and context
//!   variants that each property needs,
//! * [`refembed`] provides deterministic feature-hashing embedders that act as
//!   analytic ground truth,
//! * [`embedding_io`] is the model-agnostic JSONL interchange format,
//! * [`measures`] and [`fd`] compute the property measures,
//! * [`report`] and [`pipeline`] assemble reproducible reports.

pub mod corpus;
pub mod embedding_io;
pub mod error;
pub mod fd;
pub mod measures;
pub mod pipeline;
pub mod refembed;
pub mod report;
pub mod stats;
pub mod table;
pub mod variants;

pub use embedding_io::{EmbeddingRecord, EmbeddingSet, EmbeddingSpace, Level, Manifest, SeriesKey};
pub use error::{Error, Result};
pub use fd::{FdGroupSet, FdInstance};
pub use measures::{DispersionResult, MeasureError, OverlapKind, OverlapPair};
pub use refembed::{EmbedderConfig, ReferenceModel};
pub use report::{MeasureReport, Property};
pub use stats::FiveNumber;
pub use table::{ColumnRef, Table, TableFormat};
pub use variants::{Axis, ContextSetting, PermutationPlan};
