//! Subject/bystander face classification and face-privacy auditing.
//!
//! The crate is organised bottom-up:
//!
//! - [`imaging`]: grayscale rasters, Laplacian-variance blurriness and
//!   gray-level-difference contrast.
//! - [`features`]: the 20-value handcrafted face record and the fused
//!   532-value classifier input.
//! - [`providers`]: manifests, face/region/embedding sidecars and the
//!   optional model-backed providers.
//! - [`classifier`]: the two-layer network, its training loop and model files.
//! - [`evaluation`]: metrics, grouped splits, stratification, agreement
//!   statistics and the synthetic corpus generator.
//! - [`audit`]: anonymization rules, person categories, annotation consensus
//!   and corpus-level privacy aggregation.

pub mod audit;
pub mod classifier;
pub mod evaluation;
pub mod features;
pub mod imaging;
pub mod providers;
pub mod records;
pub mod seed;
