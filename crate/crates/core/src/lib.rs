//! NDT-Map-Code: a geometry-only global place descriptor built on NDT maps.
//!
//! The pipeline turns a point cloud (or an NDT submap) into a
//! `(2·N_r) × N_θ` descriptor matrix:
//!
//! 1. [`ndt::build_grid`] voxelizes the cloud and fits one Gaussian per voxel.
//! 2. Each cell gets a shape class from `g = e1·e3 / e2²` and an entropy.
//! 3. [`descriptor::aggregate_bins`] drops cells into polar ring/sector/height bins.
//! 4. [`descriptor::encode`] collapses the height layers with weights `w + 1`.
//!
//! Retrieval ([`matcher`]) uses a kd-tree over the shape-class histogram
//! (geometric key), estimates yaw from the column means (sector key) and scores
//! candidates with a column-shifted correlation distance. [`evaluation`]
//! produces precision-recall curves, F1 and Extended Precision.
//!
//! ```
//! use ndtmc::{descriptor::{extract_from_cloud, PartitionParams}, ndt::ShapeParams, synth};
//!
//! let scene = synth::SceneSpec::random(&mut synth::rng(1));
//! let cloud = scene.sample(&mut synth::rng(2));
//! let part = PartitionParams::kitti();
//! let out = extract_from_cloud(&cloud, 2.0, &part, &ShapeParams::default()).unwrap();
//! assert_eq!(out.descriptor.rows(), 40);
//! assert_eq!(out.descriptor.cols(), 60);
//! ```

pub mod bench;
pub mod cloud_io;
mod codec;
pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod kdtree;
pub mod matcher;
pub mod ndt;
pub mod submap;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/ndt-cells.md")]
    pub struct NdtCells;
    #[doc = include_str!("../../../book/src/descriptor.md")]
    pub struct Descriptor;
    #[doc = include_str!("../../../book/src/matching.md")]
    pub struct Matching;
    #[doc = include_str!("../../../book/src/submaps.md")]
    pub struct Submaps;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
