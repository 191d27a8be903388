//! Bundled motion profiles used by the CLI and the test suites.

use crate::kinematics::KinematicParams;
use crate::simulate::{ManifoldParams, MotionProfile, Segment};

/// 205.4 m mixed-curvature run at a constant 1 m/s (so the path length in
/// meters equals the duration in seconds), with smooth yaw-rate ramps.
pub fn general_motion() -> MotionProfile {
    let omegas = [
        0.0, 0.35, -0.25, 0.5, -0.4, 0.15, -0.1, 0.45, 0.0, -0.3, 0.25, -0.5, 0.2, 0.1,
    ];
    let duration = 205.4 / omegas.len() as f64;
    MotionProfile {
        segments: omegas
            .iter()
            .map(|&omega_z| Segment { duration, v_x: 1.0, omega_z })
            .collect(),
        ramp_time: 0.5,
        manifold: ManifoldParams::flat(),
    }
}

/// Straight drive with varying speed (ω ≡ 0, wheels identical).
pub fn straight_line() -> MotionProfile {
    MotionProfile {
        segments: [0.6, 1.2, 0.8, 1.4]
            .iter()
            .map(|&v_x| Segment { duration: 5.0, v_x, omega_z: 0.0 })
            .collect(),
        ramp_time: 0.5,
        manifold: ManifoldParams::flat(),
    }
}

/// Constant-radius circle (all signals constant).
pub fn constant_circle() -> MotionProfile {
    MotionProfile {
        segments: vec![Segment { duration: 30.0, v_x: 1.0, omega_z: 0.4 }],
        ramp_time: 0.0,
        manifold: ManifoldParams::flat(),
    }
}

/// Pivot about the left wheel train: `v_x = Y_l ω` keeps `o_l ≡ 0` for the
/// given parameters, with varying yaw rate.
pub fn pivot_left(xi: &KinematicParams) -> MotionProfile {
    MotionProfile {
        segments: [0.4, 0.7, 0.55, 0.8]
            .iter()
            .map(|&w| Segment { duration: 3.0, v_x: xi.y_l * w, omega_z: w })
            .collect(),
        ramp_time: 0.0,
        manifold: ManifoldParams::flat(),
    }
}

/// Fixed curvature, varying speed: ω/v constant, so the wheel-speed ratio
/// stays fixed while everything ramps.
pub fn fixed_curvature() -> MotionProfile {
    let c = 0.35;
    MotionProfile {
        segments: [0.6, 1.0, 1.4, 0.8]
            .iter()
            .map(|&v| Segment { duration: 4.0, v_x: v, omega_z: c * v })
            .collect(),
        ramp_time: 0.5,
        manifold: ManifoldParams::flat(),
    }
}

/// In-place rotation with varying rate, used for track-width initialization.
pub fn calibration_spin() -> MotionProfile {
    MotionProfile {
        segments: [0.6, 0.9, 0.75, 1.0]
            .iter()
            .map(|&w| Segment { duration: 2.0, v_x: 0.0, omega_z: w })
            .collect(),
        ramp_time: 0.0,
        manifold: ManifoldParams::flat(),
    }
}

/// Truncates a profile to (roughly) the given duration, keeping whole
/// segments plus one shortened tail segment.
pub fn truncate(profile: &MotionProfile, duration: f64) -> MotionProfile {
    let mut out = MotionProfile {
        segments: Vec::new(),
        ramp_time: profile.ramp_time,
        manifold: profile.manifold,
    };
    let mut left = duration;
    for seg in &profile.segments {
        if left <= 0.0 {
            break;
        }
        let d = seg.duration.min(left);
        out.segments.push(Segment { duration: d, ..*seg });
        left -= d;
    }
    out
}

/// Looks up a bundled profile by name; `pivot_left` depends on the true ξ.
pub fn by_name(name: &str, xi_true: &KinematicParams) -> Option<MotionProfile> {
    match name {
        "general_motion" => Some(general_motion()),
        "general_motion_quarter" => Some(truncate(&general_motion(), 205.4 / 4.0)),
        "straight_line" => Some(straight_line()),
        "constant_circle" => Some(constant_circle()),
        "pivot_left" => Some(pivot_left(xi_true)),
        "fixed_curvature" => Some(fixed_curvature()),
        "calibration_spin" => Some(calibration_spin()),
        _ => None,
    }
}

/// Names of all bundled profiles.
pub const PRESET_NAMES: &[&str] = &[
    "general_motion",
    "general_motion_quarter",
    "straight_line",
    "constant_circle",
    "pivot_left",
    "fixed_curvature",
    "calibration_spin",
];
