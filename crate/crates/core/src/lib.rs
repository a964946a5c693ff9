//! Peeled-representation garment digitization pipeline.
//!
//! A peelmap stack stores, per camera ray, the ordered sequence of
//! ray–surface intersections as pixel-aligned depth / RGB / segmentation /
//! normal images. This crate implements the full non-neural pipeline built
//! on that representation:
//!
//! - [`render`]: ground-truth peelmap synthesis from textured, labeled
//!   meshes by multi-hit ray casting,
//! - [`reconstruct`]: back-projection to labeled point clouds, per-layer
//!   grid meshification, layer merging and boundary-gap stitching,
//! - [`seams`]: peel-layer based seam estimation and mesh partitioning,
//! - [`flatten`]: free-boundary conformal (LSCM) flattening of each
//!   partition and shelf packing into a single UV atlas,
//! - [`texture`]: atlas baking from the RGB peelmaps plus inpainting of
//!   occluded texels,
//! - [`metrics`]: the loss functions and evaluation metrics (P2S, IOU,
//!   NRE) used to score a reconstruction,
//! - [`pipeline`]: end-to-end round-trip orchestration, run manifests and
//!   procedural test fixtures.

pub mod bvh;
pub mod camera;
pub mod fixtures;
pub mod flatten;
pub mod inpaint;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod reconstruct;
pub mod render;
pub mod seams;
pub mod sparse;
pub mod stack;
pub mod texture;

pub use camera::PinholeCamera;
pub use mesh::{LabeledPointCloud, LayeredMesh, TriMesh, FILL_LAYER};
pub use stack::PeelStack;
