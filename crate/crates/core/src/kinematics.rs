//! ICR-based skid-steering kinematics.
//!
//! The model maps left/right wheel linear speeds `(o_l, o_r)` to the planar
//! body velocity of the odometer frame through five parameters
//! `ξ = [X_v, Y_l, Y_r, α_l, α_r]`: the ICR positions of the vehicle and of
//! the two wheel trains, plus per-side correction factors absorbing tire,
//! load, and terrain effects:
//!
//! ```text
//! [v_x]            1    [-Y_r   Y_l ] [α_l  0 ] [o_l]
//! [v_y]  =  ----------- [ X_v  -X_v ] [ 0  α_r] [o_r]
//! [ω_z]     (Y_l - Y_r) [ -1     1  ]
//! ```
//!
//! Every forward evaluation satisfies the side-slip identity
//! `v_y = -X_v · ω_z` exactly.

use nalgebra::{Matrix3x2, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Hard floor on `|ΔY| = |Y_l - Y_r|`; below it the model divides by ~zero.
pub const DELTA_Y_FLOOR: f64 = 1e-6;

/// Gyro yaw-rate threshold below which samples are dropped during
/// track-width initialization (the estimate divides by `|ω|`).
pub const TRACK_WIDTH_GYRO_THRESHOLD: f64 = 0.05;

/// Minimum retained samples for a meaningful track-width average.
pub const TRACK_WIDTH_MIN_SAMPLES: usize = 10;

/// The five skid-steering kinematic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct KinematicParams {
    /// Longitudinal ICR offset of the vehicle (m); `v_y = -X_v ω_z`.
    pub x_v: f64,
    /// Lateral ICR position of the left wheel train (m), normally > 0.
    pub y_l: f64,
    /// Lateral ICR position of the right wheel train (m), normally < 0.
    pub y_r: f64,
    /// Left correction factor (unitless), normally in (0, 2).
    pub alpha_l: f64,
    /// Right correction factor (unitless), normally in (0, 2).
    pub alpha_r: f64,
}

impl KinematicParams {
    pub fn new(x_v: f64, y_l: f64, y_r: f64, alpha_l: f64, alpha_r: f64) -> Self {
        KinematicParams { x_v, y_l, y_r, alpha_l, alpha_r }
    }

    /// Ordering `[X_v, Y_l, Y_r, α_l, α_r]`, matching the Jacobian columns.
    pub fn as_array(&self) -> [f64; 5] {
        [self.x_v, self.y_l, self.y_r, self.alpha_l, self.alpha_r]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        KinematicParams::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn as_vector(&self) -> nalgebra::SVector<f64, 5> {
        nalgebra::SVector::<f64, 5>::from_column_slice(&self.as_array())
    }

    pub fn delta_y(&self) -> f64 {
        self.y_l - self.y_r
    }

    /// Checks the hard `ΔY` floor.
    pub fn check_delta_y(&self) -> Result<()> {
        if self.delta_y().abs() <= DELTA_Y_FLOOR {
            return Err(Error::DegenerateParams(format!(
                "|Y_l - Y_r| = {:.3e} <= {DELTA_Y_FLOOR:.0e}",
                self.delta_y().abs()
            )));
        }
        Ok(())
    }

    /// Full physical-sanity validation used when ingesting configs.
    pub fn validate(&self) -> Result<()> {
        self.check_delta_y()?;
        if !(self.y_l > 0.0 && self.y_r < 0.0) {
            return Err(Error::DegenerateParams(format!(
                "expected Y_l > 0 > Y_r, got Y_l = {}, Y_r = {}",
                self.y_l, self.y_r
            )));
        }
        for (name, a) in [("alpha_l", self.alpha_l), ("alpha_r", self.alpha_r)] {
            if !(a > 0.0 && a < 2.0) {
                return Err(Error::DegenerateParams(format!(
                    "{name} = {a} outside (0, 2)"
                )));
            }
        }
        Ok(())
    }
}

impl From<[f64; 5]> for KinematicParams {
    fn from(a: [f64; 5]) -> Self {
        KinematicParams::from_array(a)
    }
}

impl From<KinematicParams> for [f64; 5] {
    fn from(p: KinematicParams) -> Self {
        p.as_array()
    }
}

/// One wheel-encoder sample: left/right wheel linear speeds at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderReading {
    pub t: f64,
    pub o_l: f64,
    pub o_r: f64,
}

/// Planar body-frame velocity of the odometer frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub v_x: f64,
    pub v_y: f64,
    pub omega_z: f64,
}

impl BodyVelocity {
    pub fn new(v_x: f64, v_y: f64, omega_z: f64) -> Self {
        BodyVelocity { v_x, v_y, omega_z }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.v_x, self.v_y, self.omega_z)
    }
}

/// Wheel speeds to body velocity.
pub fn forward_kinematics(xi: &KinematicParams, o_l: f64, o_r: f64) -> Result<BodyVelocity> {
    xi.check_delta_y()?;
    let dy = xi.delta_y();
    let el = xi.alpha_l * o_l;
    let er = xi.alpha_r * o_r;
    let omega = (er - el) / dy;
    Ok(BodyVelocity {
        v_x: (-xi.y_r * el + xi.y_l * er) / dy,
        v_y: xi.x_v * (el - er) / dy,
        omega_z: omega,
    })
}

/// Body velocity to wheel speeds; inverts [`forward_kinematics`] exactly.
///
/// From the wheel-ICR relations, the effective wheel speed is
/// `α o = v_x - Y ω`, so `o_l = (v_x - Y_l ω)/α_l` and
/// `o_r = (v_x - Y_r ω)/α_r` (the `v_y` component is determined by the
/// side-slip identity and carries no extra information).
pub fn inverse_kinematics(xi: &KinematicParams, v_x: f64, omega_z: f64) -> Result<(f64, f64)> {
    xi.check_delta_y()?;
    if xi.alpha_l.abs() < 1e-12 || xi.alpha_r.abs() < 1e-12 {
        return Err(Error::DegenerateParams(
            "correction factor too close to zero to invert".into(),
        ));
    }
    Ok((
        (v_x - xi.y_l * omega_z) / xi.alpha_l,
        (v_x - xi.y_r * omega_z) / xi.alpha_r,
    ))
}

/// The four analytic Jacobians of the kinematic map, evaluated at
/// `(ξ̂, o_l, o_r)`.
///
/// `j_v_xi`/`j_w_xi` differentiate the linear/angular velocity w.r.t. the
/// parameters (columns ordered `[X_v, Y_l, Y_r, α_l, α_r]`). `j_v_o`/`j_w_o`
/// are the sensitivities to the encoder *noise* `n = [n_l, n_r]` entering as
/// `o = o_m - n`, i.e. they equal minus the derivative w.r.t. the readings.
#[derive(Debug, Clone, Copy)]
pub struct KinematicJacobians {
    pub j_v_xi: SMatrix<f64, 3, 5>,
    pub j_v_o: Matrix3x2<f64>,
    pub j_w_xi: SMatrix<f64, 3, 5>,
    pub j_w_o: Matrix3x2<f64>,
}

/// Computes [`KinematicJacobians`].
pub fn jacobians(xi: &KinematicParams, o_l: f64, o_r: f64) -> Result<KinematicJacobians> {
    xi.check_delta_y()?;
    let dy = xi.delta_y();
    let dy2 = dy * dy;
    let el = xi.alpha_l * o_l;
    let er = xi.alpha_r * o_r;
    let diff = el - er; // α_l o_l - α_r o_r

    let mut j_v_xi = SMatrix::<f64, 3, 5>::zeros();
    // Row 0: v_x; Row 1: v_y; Row 2 stays zero (v has no z component).
    let c = diff / dy2;
    j_v_xi[(0, 1)] = c * xi.y_r;
    j_v_xi[(0, 2)] = -c * xi.y_l;
    j_v_xi[(1, 0)] = c * dy;
    j_v_xi[(1, 1)] = -c * xi.x_v;
    j_v_xi[(1, 2)] = c * xi.x_v;
    j_v_xi[(0, 3)] = -xi.y_r * o_l / dy;
    j_v_xi[(0, 4)] = xi.y_l * o_r / dy;
    j_v_xi[(1, 3)] = xi.x_v * o_l / dy;
    j_v_xi[(1, 4)] = -xi.x_v * o_r / dy;

    let j_v_o = -1.0 / dy
        * Matrix3x2::new(
            -xi.alpha_l * xi.y_r,
            xi.alpha_r * xi.y_l,
            xi.x_v * xi.alpha_l,
            -xi.x_v * xi.alpha_r,
            0.0,
            0.0,
        );

    let mut j_w_xi = SMatrix::<f64, 3, 5>::zeros();
    j_w_xi[(2, 1)] = (el - er) / dy2;
    j_w_xi[(2, 2)] = (er - el) / dy2;
    j_w_xi[(2, 3)] = -o_l / dy;
    j_w_xi[(2, 4)] = o_r / dy;

    let j_w_o =
        -1.0 / dy * Matrix3x2::new(0.0, 0.0, 0.0, 0.0, -xi.alpha_l, xi.alpha_r);

    Ok(KinematicJacobians { j_v_xi, j_v_o, j_w_xi, j_w_o })
}

/// The ideal differential-drive configuration for a track width `b`:
/// `ξ = [0, b/2, -b/2, 1, 1]`, which reduces the model to
/// `v_x = (o_l + o_r)/2`, `ω_z = (o_r - o_l)/b`, `v_y = 0`.
pub fn ideal_params(track_width_b: f64) -> KinematicParams {
    KinematicParams::new(0.0, 0.5 * track_width_b, -0.5 * track_width_b, 1.0, 1.0)
}

/// Effective track width `b†` from simultaneous encoder and gyro readings
/// during rotation: `b† = mean |o_l - o_r| / |ω|` over samples with
/// `|ω| >` [`TRACK_WIDTH_GYRO_THRESHOLD`], requiring at least
/// [`TRACK_WIDTH_MIN_SAMPLES`] survivors.
pub fn initialize_track_width(
    encoder_samples: &[EncoderReading],
    gyro_yaw_samples: &[f64],
) -> Result<f64> {
    initialize_track_width_with(
        encoder_samples,
        gyro_yaw_samples,
        TRACK_WIDTH_GYRO_THRESHOLD,
        TRACK_WIDTH_MIN_SAMPLES,
    )
}

/// [`initialize_track_width`] with explicit gyro threshold and sample floor.
pub fn initialize_track_width_with(
    encoder_samples: &[EncoderReading],
    gyro_yaw_samples: &[f64],
    gyro_threshold: f64,
    min_samples: usize,
) -> Result<f64> {
    if encoder_samples.len() != gyro_yaw_samples.len() {
        return Err(Error::Precondition(format!(
            "encoder ({}) and gyro ({}) sequences must be time-aligned and equal length",
            encoder_samples.len(),
            gyro_yaw_samples.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (enc, &w) in encoder_samples.iter().zip(gyro_yaw_samples) {
        if w.abs() > gyro_threshold {
            sum += (enc.o_l - enc.o_r).abs() / w.abs();
            n += 1;
        }
    }
    if n < min_samples.max(1) {
        return Err(Error::InsufficientExcitation { retained: n, needed: min_samples.max(1) });
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_params(rng: &mut StdRng) -> KinematicParams {
        // |ΔY| >= 0.1 guaranteed by construction.
        KinematicParams::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(0.05..0.8),
            rng.random_range(-0.8..-0.05),
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
        )
    }

    #[test]
    fn ideal_configuration_reduces_to_differential_drive() {
        let b = 1.0;
        let xi = ideal_params(b);
        assert_eq!(xi.as_array(), [0.0, 0.5, -0.5, 1.0, 1.0]);
        let v = forward_kinematics(&xi, 2.0, 2.0).unwrap();
        assert_relative_eq!(v.v_x, 2.0);
        assert_relative_eq!(v.v_y, 0.0);
        assert_relative_eq!(v.omega_z, 0.0);
        // o_r - o_l = d  =>  omega = d / b
        let v = forward_kinematics(&xi, 1.0, 1.6).unwrap();
        assert_relative_eq!(v.omega_z, 0.6 / b, epsilon = 1e-15);
        assert_relative_eq!(v.v_x, 1.3, epsilon = 1e-15);
    }

    #[test]
    fn forward_hand_evaluation() {
        let xi = KinematicParams::new(0.1, 0.3, -0.3, 1.0, 1.0);
        let v = forward_kinematics(&xi, 1.0, 2.0).unwrap();
        assert_relative_eq!(v.v_x, 1.5, epsilon = 1e-15);
        assert_relative_eq!(v.v_y, -1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(v.omega_z, 5.0 / 3.0, epsilon = 1e-15);
        // Side-slip identity.
        assert_relative_eq!(v.v_y, -xi.x_v * v.omega_z, epsilon = 1e-15);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let xi = KinematicParams::new(-0.2, 0.4, -0.5, 1.2, 0.8);
        let v = forward_kinematics(&xi, 0.0, 0.0).unwrap();
        assert_eq!(v.as_vector(), Vector3::zeros());
    }

    #[test]
    fn degenerate_delta_y_is_an_error() {
        let xi = KinematicParams::new(0.0, 0.1, 0.1 - 1e-7, 1.0, 1.0);
        assert!(matches!(
            forward_kinematics(&xi, 1.0, 1.0),
            Err(Error::DegenerateParams(_))
        ));
        assert!(matches!(
            inverse_kinematics(&xi, 1.0, 1.0),
            Err(Error::DegenerateParams(_))
        ));
        assert!(matches!(jacobians(&xi, 1.0, 1.0), Err(Error::DegenerateParams(_))));
    }

    #[test]
    fn inverse_round_trip_hand_case() {
        let xi = KinematicParams::new(0.1, 0.3, -0.3, 1.0, 1.0);
        let (o_l, o_r) = inverse_kinematics(&xi, 1.5, 5.0 / 3.0).unwrap();
        assert_relative_eq!(o_l, 1.0, epsilon = 1e-12);
        assert_relative_eq!(o_r, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_trivial_cases() {
        let xi = ideal_params(0.6);
        let (o_l, o_r) = inverse_kinematics(&xi, 1.5, 0.0).unwrap();
        assert_relative_eq!(o_l, 1.5);
        assert_relative_eq!(o_r, 1.5);
        let (o_l, o_r) = inverse_kinematics(&xi, 0.0, 2.0).unwrap();
        assert_relative_eq!(o_l, -0.6, epsilon = 1e-15);
        assert_relative_eq!(o_r, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn forward_is_linear_in_wheel_speeds() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let xi = random_params(&mut rng);
            let (a, c) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (u1, u2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (w1, w2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs =
                forward_kinematics(&xi, a * u1 + c * w1, a * u2 + c * w2).unwrap().as_vector();
            let rhs = a * forward_kinematics(&xi, u1, u2).unwrap().as_vector()
                + c * forward_kinematics(&xi, w1, w2).unwrap().as_vector();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..1000 {
            let xi = random_params(&mut rng);
            let o_l = rng.random_range(-2.0..2.0);
            let o_r = rng.random_range(-2.0..2.0);
            let jac = jacobians(&xi, o_l, o_r).unwrap();
            // Parameter columns.
            for k in 0..5 {
                let mut plus = xi.as_array();
                let mut minus = xi.as_array();
                plus[k] += h;
                minus[k] -= h;
                let vp = forward_kinematics(&KinematicParams::from_array(plus), o_l, o_r)
                    .unwrap()
                    .as_vector();
                let vm = forward_kinematics(&KinematicParams::from_array(minus), o_l, o_r)
                    .unwrap()
                    .as_vector();
                let fd = (vp - vm) / (2.0 * h);
                for row in 0..3 {
                    let analytic = if row == 2 { jac.j_w_xi[(2, k)] } else { jac.j_v_xi[(row, k)] };
                    let scale = analytic.abs().max(fd[row].abs()).max(1e-3);
                    assert!(
                        (analytic - fd[row]).abs() / scale < 1e-5,
                        "param col {k} row {row}: analytic {analytic} vs fd {}",
                        fd[row]
                    );
                }
            }
            // Wheel-speed columns: J_*o is the noise Jacobian, o = o_m - n,
            // so it equals minus the finite difference w.r.t. the readings.
            for k in 0..2 {
                let (dl, dr) = if k == 0 { (h, 0.0) } else { (0.0, h) };
                let vp = forward_kinematics(&xi, o_l + dl, o_r + dr).unwrap().as_vector();
                let vm = forward_kinematics(&xi, o_l - dl, o_r - dr).unwrap().as_vector();
                let fd = (vp - vm) / (2.0 * h);
                for row in 0..3 {
                    let analytic = if row == 2 { jac.j_w_o[(2, k)] } else { jac.j_v_o[(row, k)] };
                    let scale = analytic.abs().max(fd[row].abs()).max(1e-3);
                    assert!(
                        ((-analytic) - fd[row]).abs() / scale < 1e-5,
                        "wheel col {k} row {row}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_structure_at_zero_input() {
        let xi = random_params(&mut StdRng::seed_from_u64(77));
        let jac = jacobians(&xi, 0.0, 0.0).unwrap();
        // Noise Jacobians depend only on xi.
        assert!(jac.j_v_o.norm() > 0.0);
        assert!(jac.j_w_o.norm() > 0.0);
        // ICR block of J_v_xi vanishes since α_l o_l - α_r o_r = 0.
        assert_eq!(jac.j_v_xi.fixed_view::<3, 3>(0, 0).norm(), 0.0);
    }

    #[test]
    fn jacobian_ideal_symbolic_case() {
        let b = 0.5;
        let jac = jacobians(&ideal_params(b), 1.0, 1.0).unwrap();
        let expected = Matrix3x2::new(0.0, 0.0, 0.0, 0.0, 1.0 / b, -1.0 / b);
        assert_relative_eq!(jac.j_w_o, expected, epsilon = 1e-15);
    }

    #[test]
    fn track_width_single_sample() {
        let enc = [EncoderReading { t: 0.0, o_l: -0.5, o_r: 0.5 }];
        let b = initialize_track_width_with(&enc, &[2.0], 0.05, 1).unwrap();
        assert_relative_eq!(b, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn track_width_below_threshold_is_insufficient() {
        let enc: Vec<EncoderReading> = (0..50)
            .map(|i| EncoderReading { t: i as f64, o_l: -0.1, o_r: 0.1 })
            .collect();
        let gyro = vec![0.01; 50];
        assert!(matches!(
            initialize_track_width(&enc, &gyro),
            Err(Error::InsufficientExcitation { .. })
        ));
    }

    #[test]
    fn track_width_spin_recovers_exact_width() {
        let b = 0.731;
        let xi = ideal_params(b);
        let mut enc = Vec::new();
        let mut gyro = Vec::new();
        for i in 0..100 {
            let omega = 0.4 + 0.01 * i as f64;
            let (o_l, o_r) = inverse_kinematics(&xi, 0.0, omega).unwrap();
            enc.push(EncoderReading { t: i as f64 * 0.01, o_l, o_r });
            gyro.push(omega);
        }
        let est = initialize_track_width(&enc, &gyro).unwrap();
        assert_relative_eq!(est, b, epsilon = 1e-12);
    }
}
