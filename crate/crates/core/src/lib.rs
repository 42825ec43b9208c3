//! Camera pose from 2D image line segments and 3D scene line segments.
//!
//! Parallel scene lines share a vanishing direction in the image. Clustering
//! both sides by direction fixes the rotation up to at most eight candidates;
//! for each, a RANSAC over line triples finds the translation and the
//! correspondences, and Levenberg-Marquardt refines the winner on the
//! endpoint reprojection residual.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common instantiations.
//!
//! ```
//! use vpreg::{register, PipelineConfigF64};
//! use vpreg::sim::{trial_scene, SimConfig};
//!
//! let scene = trial_scene(&SimConfig { noise_sigma: 0.0, ..Default::default() }, 1).unwrap();
//! let reg = register(&scene.segs2d, &scene.segs3d, &scene.intrinsics, &PipelineConfigF64::default()).unwrap();
//! assert!((reg.pose.translation - scene.gt.translation).norm() < 1e-6);
//! ```

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster;
pub mod geom;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod rotation;
pub mod scalar;
pub mod sim;
pub mod translation;

pub use cluster::{ClusterConfig, DirectionCluster};
pub use geom::{CameraIntrinsics, ImageLine, LineSegment2D, LineSegment3D, Pose, PoseTangent, UnitDirection};
pub use pipeline::{register, Diagnostics, PipelineConfig, Registration, RegistrationError};
pub use refine::{refine_pose, RefineConfig};
pub use rotation::{enumerate_rotations, RotationCandidate};
pub use scalar::Real;
pub use translation::{estimate_translation, solve_translation, Correspondence, CorrespondenceSet, RansacConfig};

pub type PoseF64 = Pose<f64>;
pub type PoseF32 = Pose<f32>;
pub type CameraIntrinsicsF64 = CameraIntrinsics<f64>;
pub type CameraIntrinsicsF32 = CameraIntrinsics<f32>;
pub type LineSegment2DF64 = LineSegment2D<f64>;
pub type LineSegment2DF32 = LineSegment2D<f32>;
pub type LineSegment3DF64 = LineSegment3D<f64>;
pub type LineSegment3DF32 = LineSegment3D<f32>;
pub type PipelineConfigF64 = PipelineConfig<f64>;
pub type PipelineConfigF32 = PipelineConfig<f32>;
pub type RegistrationF64 = Registration<f64>;
pub type RegistrationF32 = Registration<f32>;
