//! Interactive foreground segmentation from loosely drawn boxes.
//!
//! The solver alternates between fitting color mixtures and solving a
//! binary labeling by max-flow. With a loose box, a foreground mixture that
//! resembles the background is pruned, and a superpixel-cluster term keeps
//! labels coherent within a cluster.

pub mod appearance;
pub mod bench;
pub mod clustering;
pub mod error;
pub mod graphcut;
pub mod imagecore;
mod kmeans;
pub mod solver;

pub use appearance::{AppearanceModels, GaussianComponent, Gmm};
pub use clustering::ClusterMap;
pub use error::{Error, Result};
pub use imagecore::{BoundingBox, LabelMask, RgbImage, SegMetrics};
pub use solver::{grabcut_baseline, loosecut, Init, SegmentationResult, SolverConfig};
