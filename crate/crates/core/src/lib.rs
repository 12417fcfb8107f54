//! Core building blocks for mining direct-marketing customer streams.
//!
//! * [`schema`] describes datasets and parses delimited records into [`Instance`]s.
//! * [`stream`] replays record files as ordered event streams.
//! * [`rfm`] derives recency/frequency/monetary features.
//! * [`learners`] holds the online classifiers.
//! * [`evaluation`] covers prequential metrics, target selection and lift.

pub mod codec;
pub mod evaluation;
pub mod learners;
pub mod rfm;
pub mod schema;
pub mod stream;

pub use schema::{AttributeKind, AttributeSpec, Cell, DatasetSchema, Flags, Instance};
