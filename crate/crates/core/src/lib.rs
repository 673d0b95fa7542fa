//! Graph embeddings in Euclidean, spherical, hyperbolic, product, overlaying
//! and dot-product spaces, trained with Adam on distortion or a softmax
//! ranking proxy and evaluated by distortion and mean average precision.

pub mod config;
pub mod dump;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod optimizer;
pub mod report;
pub mod spaces;

pub use error::{Error, ExitKind, Result};
