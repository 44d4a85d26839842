//! Annotation workbench for time-series datasets: ingestion, 2-D projections,
//! sample selection, annotation sessions, label analysis and downstream
//! evaluation.

pub mod analysis;
pub mod binmat;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod labels;
pub mod plot;
pub mod projection;
pub mod risk;
pub mod sampling;
pub mod server;
pub mod session;

pub use dataset::{ingest_dataset, ClassScheme, Dataset, FeatureMatrix};
pub use sampling::{DistanceMetric, Method};
pub use session::{AnnotationSession, LabelValue, SessionConfig};
