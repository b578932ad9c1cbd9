//! Verification toolkit for continuity-aware airway-tree segmentation.
//!
//! The crate covers the numeric core of that pipeline: a channel-specific
//! fuzzy attention gate, the JCAM composite loss, tree-aware evaluation
//! metrics with a CCF model-selection score, topology-preserving 3D
//! skeletonization with branch decomposition, smart patch sampling, and a
//! synthetic tubular-tree generator that serves as the ground-truth oracle
//! for all of it. A minimal reverse-mode tape keeps the gate and loss math
//! differentiable, with finite-difference verification throughout.
//!
//! Numeric kernels are generic over the scalar type via [`scalar::Real`];
//! the aliases below pin the two precisions used in practice: `f32` for
//! on-disk storage, `f64` for loss/gradient verification.

pub mod autodiff;
pub mod checks;
pub mod fuzzattn;
pub mod jcam;
pub mod metrics;
pub mod nifti;
pub mod rawio;
pub mod sampling;
pub mod scalar;
pub mod skeleton;
pub mod synth;
pub mod volume;

pub use scalar::Real;
pub use volume::{BinaryMask, VoxelBox};

/// CT/prediction volume at storage precision (NIfTI float32).
pub type Volume3D = volume::Volume<f32>;
/// Verification-precision volume (distance fields, soft predictions).
pub type VolumeF64 = volume::Volume<f64>;
/// Tensor at the precision the gradient checks run at.
pub type Tensor64 = autodiff::Tensor<f64>;
/// Tape at the precision the gradient checks run at.
pub type Tape64 = autodiff::Tape<f64>;
