//! Kinematics and pose estimation for skid-steering ground robots.
//!
//! Skid-steering platforms turn by driving the left and right wheel pairs at
//! different speeds; the wheels slip by design, so the usual differential-drive
//! model is wrong. This crate models the slip with instantaneous centers of
//! rotation (ICRs) plus per-side correction factors, and estimates those
//! kinematic parameters online together with the robot pose in a
//! tightly-coupled sliding-window solver fusing wheel encoders, a monocular
//! camera, and optionally an IMU.
//!
//! The crate is organized as:
//!
//! * [`geom`] — quaternion rotations, poses, and the shared error-state
//!   conventions.
//! * [`kinematics`] — the ICR wheel-speed model, its analytic Jacobians, and
//!   track-width initialization.
//! * [`propagation`] — encoder dead-reckoning with error-state information,
//!   and IMU preintegration.
//! * [`simulate`] — ground-truth trajectory generation on a quadratic motion
//!   manifold and synthesis of noisy encoder/IMU/feature measurements.
//! * [`estimator`] — the sliding-window bundle-adjustment estimator with
//!   Schur-complement marginalization.
//! * [`observability`] — numerical rank/nullspace analysis of the calibration
//!   problem and degenerate-motion classification.
//! * [`harness`] — measurement-log I/O, scenario configs, trajectory metrics,
//!   and the Monte Carlo driver behind the CLI.

pub mod error;
pub mod estimator;
pub mod geom;
pub mod harness;
pub mod kinematics;
pub mod observability;
pub mod propagation;
pub mod simulate;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
