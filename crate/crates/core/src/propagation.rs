//! Dead-reckoning of encoder measurements with error-state information, and
//! IMU preintegration between keyframes.
//!
//! The odometry error state is ordered `[δθ (3), δp (3), δξ (5)]`. Wheel
//! speeds are integrated with the midpoint rule between consecutive encoder
//! samples (linear interpolation at step midpoints), and the returned
//! transition Jacobian is the exact first-order derivative of that discrete
//! update, so finite differences of the integrator reproduce it to rounding
//! error.
//!
//! Noise conventions: white measurement noises (`sigma_encoder`,
//! `sigma_gyro`, `sigma_accel`, `sigma_pixel`) are per-sample standard
//! deviations at the nominal stream rates; the `*_walk` entries are
//! random-walk densities per √s.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{self, skew, Pose, Rotation};
use crate::kinematics::{self, EncoderReading, KinematicParams};
use crate::Result;

/// Interior encoder gap beyond which propagation refuses to extrapolate.
pub const MAX_MEASUREMENT_GAP: f64 = 0.5;

/// Eigenvalue floor applied to the propagated covariance before inversion.
pub const INFORMATION_EIGENVALUE_FLOOR: f64 = 1e-12;

/// Odometry error-state dimension.
pub const ODOM_DIM: usize = 11;

/// IMU preintegration error-state dimension (`[δθ, δp, δv, δb_a, δb_ω]`).
pub const IMU_DIM: usize = 15;

/// Speed/bias block `[ᴳv_I (3), b_a (3), b_ω (3)]`.
pub type SpeedBias = SVector<f64, 9>;

/// Pose plus kinematic parameters: the state the odometry factor constrains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryState {
    pub pose: Pose,
    pub xi: KinematicParams,
}

impl OdometryState {
    pub fn new(pose: Pose, xi: KinematicParams) -> Self {
        OdometryState { pose, xi }
    }

    /// Retraction on the 11-dim error state `[δθ, δp, δξ]`.
    pub fn boxplus(&self, delta: &SVector<f64, ODOM_DIM>) -> OdometryState {
        let pose = geom::boxplus(&self.pose, &delta.fixed_rows::<6>(0).into_owned());
        let mut xi = self.xi.as_array();
        for i in 0..5 {
            xi[i] += delta[6 + i];
        }
        OdometryState { pose, xi: KinematicParams::from_array(xi) }
    }

    /// Inverse of [`OdometryState::boxplus`].
    pub fn boxminus(&self, other: &OdometryState) -> SVector<f64, ODOM_DIM> {
        let mut out = SVector::<f64, ODOM_DIM>::zeros();
        out.fixed_rows_mut::<6>(0)
            .copy_from(&geom::boxminus(&self.pose, &other.pose));
        let a = self.xi.as_array();
        let b = other.xi.as_array();
        for i in 0..5 {
            out[6 + i] = a[i] - b[i];
        }
        out
    }
}

/// Sensor noise levels used both to synthesize measurements and to weight
/// factors. All entries must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-sample encoder speed std (m/s, each wheel).
    pub sigma_encoder: f64,
    /// Random-walk density of each kinematic parameter (per √s).
    pub sigma_xi_walk: [f64; 5],
    /// Per-sample gyro std (rad/s).
    pub sigma_gyro: f64,
    /// Per-sample accelerometer std (m/s²).
    pub sigma_accel: f64,
    /// Gyro bias random-walk density (rad/s per √s).
    pub sigma_gyro_bias_walk: f64,
    /// Accel bias random-walk density (m/s² per √s).
    pub sigma_accel_bias_walk: f64,
    /// Feature noise std in normalized image coordinates.
    pub sigma_pixel: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let mut entries = vec![
            ("sigma_encoder", self.sigma_encoder),
            ("sigma_gyro", self.sigma_gyro),
            ("sigma_accel", self.sigma_accel),
            ("sigma_gyro_bias_walk", self.sigma_gyro_bias_walk),
            ("sigma_accel_bias_walk", self.sigma_accel_bias_walk),
            ("sigma_pixel", self.sigma_pixel),
        ];
        for (i, s) in self.sigma_xi_walk.iter().enumerate() {
            entries.push((["xi0", "xi1", "xi2", "xi3", "xi4"][i], *s));
        }
        for (name, v) in entries {
            if !(v > 0.0) {
                return Err(Error::ConfigParse {
                    field: format!("noise.{name}"),
                    message: format!("must be strictly positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Result of integrating encoder measurements over a keyframe interval.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub predicted: OdometryState,
    /// Exact first-order transition of the discrete integrator,
    /// error-state order `[δθ, δp, δξ]`; the `δξ` block is the identity.
    pub jacobian_wrt_prev: SMatrix<f64, ODOM_DIM, ODOM_DIM>,
    /// Information matrix `Λ_O` of the accumulated process noise
    /// (eigenvalue-floored inverse of the propagated covariance).
    pub noise_information: SMatrix<f64, ODOM_DIM, ODOM_DIM>,
    /// Propagated covariance before inversion (kept for diagnostics).
    pub noise_covariance: SMatrix<f64, ODOM_DIM, ODOM_DIM>,
    pub duration: f64,
}

fn interp_encoder(measurements: &[EncoderReading], t: f64) -> (f64, f64) {
    match measurements.binary_search_by(|m| m.t.partial_cmp(&t).unwrap()) {
        Ok(i) => (measurements[i].o_l, measurements[i].o_r),
        Err(0) => (measurements[0].o_l, measurements[0].o_r),
        Err(i) if i >= measurements.len() => {
            let m = measurements.last().unwrap();
            (m.o_l, m.o_r)
        }
        Err(i) => {
            let a = &measurements[i - 1];
            let b = &measurements[i];
            let s = (t - a.t) / (b.t - a.t);
            (a.o_l + s * (b.o_l - a.o_l), a.o_r + s * (b.o_r - a.o_r))
        }
    }
}

/// Floors the eigenvalues of a symmetric PSD matrix and inverts it.
pub fn floored_inverse_dyn(p: &nalgebra::DMatrix<f64>, floor: f64) -> nalgebra::DMatrix<f64> {
    let n = p.nrows();
    let sym = 0.5 * (p + p.transpose());
    let eig = sym.symmetric_eigen();
    let mut inv_diag = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        inv_diag[(i, i)] = 1.0 / eig.eigenvalues[i].max(floor);
    }
    let lambda = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    0.5 * (&lambda + lambda.transpose())
}

/// Fixed-size wrapper over [`floored_inverse_dyn`].
pub fn floored_inverse<const N: usize>(
    p: &SMatrix<f64, N, N>,
    floor: f64,
) -> SMatrix<f64, N, N> {
    let dyn_p = nalgebra::DMatrix::from_iterator(N, N, p.iter().cloned());
    let inv = floored_inverse_dyn(&dyn_p, floor);
    SMatrix::<f64, N, N>::from_iterator(inv.iter().cloned())
}

/// Integrates wheel-odometry over `[t_start, t_end]` from `prev`, chaining
/// the per-step error-state transitions and accumulating process noise.
///
/// `measurements` must bracket the interval (one sample at or before
/// `t_start`, one at or after `t_end`); interior gaps larger than
/// [`MAX_MEASUREMENT_GAP`] are an error. An empty interval returns the
/// identity result.
pub fn propagate_odometry(
    prev: &OdometryState,
    measurements: &[EncoderReading],
    t_start: f64,
    t_end: f64,
    noise: &NoiseConfig,
) -> Result<PropagationResult> {
    prev.xi.check_delta_y()?;
    let mut phi = SMatrix::<f64, ODOM_DIM, ODOM_DIM>::identity();
    let mut cov = SMatrix::<f64, ODOM_DIM, ODOM_DIM>::zeros();

    if t_end - t_start < 1e-12 {
        return Ok(PropagationResult {
            predicted: *prev,
            jacobian_wrt_prev: phi,
            noise_information: floored_inverse(&cov, INFORMATION_EIGENVALUE_FLOOR),
            noise_covariance: cov,
            duration: 0.0,
        });
    }

    if measurements.is_empty()
        || measurements[0].t > t_start + 1e-9
        || measurements.last().unwrap().t < t_end - 1e-9
    {
        return Err(Error::InsufficientCoverage { t_start, t_end });
    }

    // Integration knots: the interval endpoints plus interior sample times.
    let mut knots = vec![t_start];
    for m in measurements {
        if m.t > t_start + 1e-12 && m.t < t_end - 1e-12 {
            knots.push(m.t);
        }
    }
    knots.push(t_end);
    for w in knots.windows(2) {
        if w[1] - w[0] > MAX_MEASUREMENT_GAP {
            return Err(Error::MeasurementGap { gap: w[1] - w[0], t_start, t_end });
        }
    }

    let xi = prev.xi;
    let mut rot = prev.pose.rotation;
    let mut pos = prev.pose.position;
    let q_enc = noise.sigma_encoder * noise.sigma_encoder;

    for w in knots.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let dt = tb - ta;
        if dt < 1e-12 {
            continue;
        }
        let (o_l, o_r) = interp_encoder(measurements, 0.5 * (ta + tb));
        let vel = kinematics::forward_kinematics(&xi, o_l, o_r)?;
        let jac = kinematics::jacobians(&xi, o_l, o_r)?;
        let v = Vector3::new(vel.v_x, vel.v_y, 0.0);
        let omega = Vector3::new(0.0, 0.0, vel.omega_z);

        let half = Rotation::from_scaled_axis(omega * (0.5 * dt));
        let full = Rotation::from_scaled_axis(omega * dt);
        let r_mat = rot.matrix();
        let h_mat = half.matrix();
        let a_mat = full.matrix();
        let jr_full = geom::so3_right_jacobian(&(omega * dt));
        let jr_half = geom::so3_right_jacobian(&(omega * (0.5 * dt)));

        // Exact first-order transition of this midpoint step.
        let mut step = SMatrix::<f64, ODOM_DIM, ODOM_DIM>::identity();
        step.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_mat.transpose());
        step.fixed_view_mut::<3, 5>(0, 6)
            .copy_from(&(jr_full * jac.j_w_xi * dt));
        step.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-r_mat * skew(&(h_mat * v)) * dt));
        let p_xi = r_mat * h_mat * (jac.j_v_xi - skew(&v) * jr_half * jac.j_w_xi * (0.5 * dt)) * dt;
        step.fixed_view_mut::<3, 5>(3, 6).copy_from(&p_xi);

        // Discrete noise mapping for the per-sample encoder noise [n_l, n_r].
        let mut g = SMatrix::<f64, ODOM_DIM, 2>::zeros();
        g.fixed_view_mut::<3, 2>(0, 0)
            .copy_from(&(jr_full * jac.j_w_o * dt));
        let g_p = r_mat * h_mat * (jac.j_v_o - skew(&v) * jr_half * jac.j_w_o * (0.5 * dt)) * dt;
        g.fixed_view_mut::<3, 2>(3, 0).copy_from(&g_p);

        cov = step * cov * step.transpose() + g * g.transpose() * q_enc;
        for i in 0..5 {
            cov[(6 + i, 6 + i)] += noise.sigma_xi_walk[i] * noise.sigma_xi_walk[i] * dt;
        }
        phi = step * phi;

        // State update (midpoint rule).
        pos += (rot.compose(&half)).rotate(&v) * dt;
        rot = rot.compose(&full);
    }

    cov = 0.5 * (cov + cov.transpose());
    Ok(PropagationResult {
        predicted: OdometryState::new(Pose::new(rot, pos), xi),
        jacobian_wrt_prev: phi,
        noise_information: floored_inverse(&cov, INFORMATION_EIGENVALUE_FLOOR),
        noise_covariance: cov,
        duration: t_end - t_start,
    })
}

/// Residual of the odometer-induced kinematic constraint,
/// `x_k ⊟ f(x_{k-1}, O_m)`, error-state order `[δθ, δp, δξ]`.
///
/// `prop` must have been produced from `state_km1`'s linearization point;
/// the `state_km1` argument documents that contract at the call site.
pub fn odometry_factor_residual(
    state_k: &OdometryState,
    _state_km1: &OdometryState,
    prop: &PropagationResult,
) -> SVector<f64, ODOM_DIM> {
    state_k.boxminus(&prop.predicted)
}

/// One IMU sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuReading {
    pub t: f64,
    pub gyro: [f64; 3],
    pub accel: [f64; 3],
}

impl ImuReading {
    pub fn gyro_vec(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.gyro)
    }
    pub fn accel_vec(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.accel)
    }
}

/// Preintegrated IMU deltas between two keyframes, with first-order bias
/// correction Jacobians and the accumulated 15×15 covariance
/// (order `[δθ, δp, δv, δb_a, δb_ω]`). Gravity is not folded in.
#[derive(Debug, Clone)]
pub struct ImuPreintegration {
    pub delta_rotation: Rotation,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    /// Bias linearization point `[b_a, b_ω]`.
    pub bias_linearization_point: SVector<f64, 6>,
    pub covariance: SMatrix<f64, IMU_DIM, IMU_DIM>,
    pub duration: f64,
    pub j_theta_bw: Matrix3<f64>,
    pub j_v_ba: Matrix3<f64>,
    pub j_v_bw: Matrix3<f64>,
    pub j_p_ba: Matrix3<f64>,
    pub j_p_bw: Matrix3<f64>,
}

impl ImuPreintegration {
    /// Zero-duration identity preintegration with zero covariance.
    pub fn identity() -> Self {
        ImuPreintegration {
            delta_rotation: Rotation::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            bias_linearization_point: SVector::zeros(),
            covariance: SMatrix::zeros(),
            duration: 0.0,
            j_theta_bw: Matrix3::zeros(),
            j_v_ba: Matrix3::zeros(),
            j_v_bw: Matrix3::zeros(),
            j_p_ba: Matrix3::zeros(),
            j_p_bw: Matrix3::zeros(),
        }
    }
}

/// Midpoint preintegration of gyro/accel readings about the bias
/// linearization point `bias = [b_a, b_ω]`.
pub fn imu_preintegrate(
    measurements: &[ImuReading],
    bias: &SVector<f64, 6>,
    noise: &NoiseConfig,
) -> Result<ImuPreintegration> {
    if measurements.len() < 2 {
        return Err(Error::TooFewSamples {
            op: "imu_preintegrate",
            needed: 2,
            got: measurements.len(),
        });
    }
    let b_a = Vector3::new(bias[0], bias[1], bias[2]);
    let b_w = Vector3::new(bias[3], bias[4], bias[5]);

    let mut pre = ImuPreintegration::identity();
    pre.bias_linearization_point = *bias;
    let q_g = noise.sigma_gyro * noise.sigma_gyro;
    let q_a = noise.sigma_accel * noise.sigma_accel;

    for w in measurements.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(Error::Precondition("IMU timestamps must strictly increase".into()));
        }
        let omega = 0.5 * (w[0].gyro_vec() + w[1].gyro_vec()) - b_w;
        let accel = 0.5 * (w[0].accel_vec() + w[1].accel_vec()) - b_a;

        let half = pre.delta_rotation.compose(&Rotation::from_scaled_axis(omega * (0.5 * dt)));
        let rm = half.matrix();
        let a_full = Rotation::from_scaled_axis(omega * dt);
        let a_mat = a_full.matrix();
        let jr_full = geom::so3_right_jacobian(&(omega * dt));
        let jr_half = geom::so3_right_jacobian(&(omega * (0.5 * dt)));
        let dr_hat = pre.delta_rotation.matrix();
        let sk_acc = skew(&accel);
        let hm = Rotation::from_scaled_axis(omega * (0.5 * dt)).matrix();

        // Error-state transition, order [θ, p, v, ba, bω].
        let mut step = SMatrix::<f64, IMU_DIM, IMU_DIM>::identity();
        step.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_mat.transpose());
        step.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-jr_full * dt));
        let v_theta = -dr_hat * skew(&(hm * accel)) * dt;
        let v_ba = -rm * dt;
        let v_bw = rm * sk_acc * jr_half * (0.5 * dt * dt);
        step.fixed_view_mut::<3, 3>(6, 0).copy_from(&v_theta);
        step.fixed_view_mut::<3, 3>(6, 9).copy_from(&v_ba);
        step.fixed_view_mut::<3, 3>(6, 12).copy_from(&v_bw);
        step.fixed_view_mut::<3, 3>(3, 0).copy_from(&(0.5 * dt * v_theta));
        step.fixed_view_mut::<3, 3>(3, 6).copy_from(&(Matrix3::identity() * dt));
        step.fixed_view_mut::<3, 3>(3, 9).copy_from(&(0.5 * dt * v_ba));
        step.fixed_view_mut::<3, 3>(3, 12).copy_from(&(0.5 * dt * v_bw));

        // Per-sample white noise mapping [n_ω, n_a]; within one step n_ω
        // enters exactly like δb_ω and n_a like δb_a.
        let mut g = SMatrix::<f64, IMU_DIM, 6>::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_full * dt));
        g.fixed_view_mut::<3, 3>(6, 0).copy_from(&v_bw);
        g.fixed_view_mut::<3, 3>(6, 3).copy_from(&v_ba);
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&(0.5 * dt * v_bw));
        g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(0.5 * dt * v_ba));

        let mut q = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            q[(i, i)] = q_g;
            q[(3 + i, 3 + i)] = q_a;
        }
        pre.covariance = step * pre.covariance * step.transpose() + g * q * g.transpose();
        for i in 0..3 {
            pre.covariance[(9 + i, 9 + i)] +=
                noise.sigma_accel_bias_walk * noise.sigma_accel_bias_walk * dt;
            pre.covariance[(12 + i, 12 + i)] +=
                noise.sigma_gyro_bias_walk * noise.sigma_gyro_bias_walk * dt;
        }

        // Bias-correction Jacobians of the deltas themselves.
        let j_theta_new = a_mat.transpose() * pre.j_theta_bw - jr_full * dt;
        let jv_bw_new = pre.j_v_bw - dr_hat * skew(&(hm * accel)) * pre.j_theta_bw * dt
            + rm * sk_acc * jr_half * (0.5 * dt * dt);
        let jv_ba_new = pre.j_v_ba - rm * dt;
        let jp_bw_new = pre.j_p_bw
            + pre.j_v_bw * dt
            + 0.5 * dt * (-dr_hat * skew(&(hm * accel)) * pre.j_theta_bw * dt
                + rm * sk_acc * jr_half * (0.5 * dt * dt));
        let jp_ba_new = pre.j_p_ba + pre.j_v_ba * dt - 0.5 * rm * dt * dt;

        // Delta updates (midpoint rule).
        pre.delta_position += pre.delta_velocity * dt + rm * accel * (0.5 * dt * dt);
        pre.delta_velocity += rm * accel * dt;
        pre.delta_rotation = pre.delta_rotation.compose(&a_full);

        pre.j_theta_bw = j_theta_new;
        pre.j_v_bw = jv_bw_new;
        pre.j_v_ba = jv_ba_new;
        pre.j_p_bw = jp_bw_new;
        pre.j_p_ba = jp_ba_new;
        pre.duration += dt;
    }
    pre.covariance = 0.5 * (pre.covariance + pre.covariance.transpose());
    Ok(pre)
}

/// IMU factor residual `[δθ, δp, δv, δb_a, δb_ω]` between consecutive
/// keyframes, with first-order bias correction about the preintegration's
/// linearization point. Poses are odometer-frame; `extrinsics_oi` maps the
/// IMU frame into the odometer frame. Gravity is applied here.
pub fn imu_factor_residual(
    pose_k: &Pose,
    pose_km1: &Pose,
    speed_bias_k: &SpeedBias,
    speed_bias_km1: &SpeedBias,
    preint: &ImuPreintegration,
    gravity: &Vector3<f64>,
    extrinsics_oi: &Pose,
) -> SVector<f64, IMU_DIM> {
    let dt = preint.duration;
    let imu_km1 = pose_km1.compose(extrinsics_oi);
    let imu_k = pose_k.compose(extrinsics_oi);

    let v_km1 = Vector3::new(speed_bias_km1[0], speed_bias_km1[1], speed_bias_km1[2]);
    let v_k = Vector3::new(speed_bias_k[0], speed_bias_k[1], speed_bias_k[2]);
    let ba_km1 = Vector3::new(speed_bias_km1[3], speed_bias_km1[4], speed_bias_km1[5]);
    let bw_km1 = Vector3::new(speed_bias_km1[6], speed_bias_km1[7], speed_bias_km1[8]);
    let dba = ba_km1
        - Vector3::new(
            preint.bias_linearization_point[0],
            preint.bias_linearization_point[1],
            preint.bias_linearization_point[2],
        );
    let dbw = bw_km1
        - Vector3::new(
            preint.bias_linearization_point[3],
            preint.bias_linearization_point[4],
            preint.bias_linearization_point[5],
        );

    let corrected_rot = preint
        .delta_rotation
        .apply_attitude_error(&(preint.j_theta_bw * dbw));
    let corrected_v = preint.delta_velocity + preint.j_v_ba * dba + preint.j_v_bw * dbw;
    let corrected_p = preint.delta_position + preint.j_p_ba * dba + preint.j_p_bw * dbw;

    let rel_rot = imu_km1.rotation.inverse().compose(&imu_k.rotation);
    let r_theta = rel_rot.attitude_error(&corrected_rot);

    let rt = imu_km1.rotation.matrix().transpose();
    let r_v = rt * (v_k - v_km1 - gravity * dt) - corrected_v;
    let r_p = rt * (imu_k.position - imu_km1.position - v_km1 * dt - gravity * (0.5 * dt * dt))
        - corrected_p;

    let mut r = SVector::<f64, IMU_DIM>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&r_theta);
    r.fixed_rows_mut::<3>(3).copy_from(&r_p);
    r.fixed_rows_mut::<3>(6).copy_from(&r_v);
    for i in 0..3 {
        r[9 + i] = speed_bias_k[3 + i] - speed_bias_km1[3 + i];
        r[12 + i] = speed_bias_k[6 + i] - speed_bias_km1[6 + i];
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ideal_params;
    use approx::assert_relative_eq;

    fn default_noise() -> NoiseConfig {
        NoiseConfig {
            sigma_encoder: 0.0245,
            sigma_xi_walk: [1e-3; 5],
            sigma_gyro: 9e-4,
            sigma_accel: 1e-2,
            sigma_gyro_bias_walk: 1e-2,
            sigma_accel_bias_walk: 1e-2,
            sigma_pixel: 0.6 / 460.0,
        }
    }

    fn constant_encoders(o_l: f64, o_r: f64, t0: f64, t1: f64, rate: f64) -> Vec<EncoderReading> {
        let n = ((t1 - t0) * rate).round() as usize;
        (0..=n)
            .map(|i| EncoderReading { t: t0 + i as f64 / rate, o_l, o_r })
            .collect()
    }

    #[test]
    fn straight_line_analytic() {
        let xi = ideal_params(0.5);
        let prev = OdometryState::new(Pose::identity(), xi);
        let meas = constant_encoders(1.0, 1.0, 0.0, 2.0, 100.0);
        let out = propagate_odometry(&prev, &meas, 0.0, 2.0, &default_noise()).unwrap();
        assert_relative_eq!(
            out.predicted.pose.position,
            Vector3::new(2.0, 0.0, 0.0),
            epsilon = 1e-9
        );
        assert!(out.predicted.pose.rotation.angle() < 1e-12);
    }

    #[test]
    fn pure_spin_analytic() {
        let b = 0.4;
        let xi = ideal_params(b);
        // o_r - o_l = b * omega with omega = pi/2.
        let o = b * std::f64::consts::FRAC_PI_4;
        let meas = constant_encoders(-o, o, 0.0, 2.0, 100.0);
        let prev = OdometryState::new(Pose::identity(), xi);
        let out = propagate_odometry(&prev, &meas, 0.0, 2.0, &default_noise()).unwrap();
        // Yaw of pi; scaled_axis may report either sign of the half turn.
        let target = Rotation::from_yaw(std::f64::consts::PI);
        assert!(out.predicted.pose.rotation.frobenius_distance(&target) < 1e-9);
        assert!(out.predicted.pose.position.norm() < 1e-9);
    }

    #[test]
    fn empty_interval_is_identity() {
        let xi = ideal_params(0.5);
        let prev = OdometryState::new(Pose::identity(), xi);
        let out = propagate_odometry(&prev, &[], 1.0, 1.0, &default_noise()).unwrap();
        assert_eq!(out.jacobian_wrt_prev, SMatrix::<f64, 11, 11>::identity());
        assert_eq!(out.predicted, prev);
        // Information stays finite and PSD thanks to the floor.
        let eig = out.noise_information.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0 && l.is_finite()));
    }

    #[test]
    fn gap_detection() {
        let xi = ideal_params(0.5);
        let prev = OdometryState::new(Pose::identity(), xi);
        let mut meas = constant_encoders(1.0, 1.0, 0.0, 0.4, 100.0);
        meas.extend(constant_encoders(1.0, 1.0, 1.2, 2.0, 100.0));
        let err = propagate_odometry(&prev, &meas, 0.0, 2.0, &default_noise());
        assert!(matches!(err, Err(Error::MeasurementGap { .. })));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let xi = KinematicParams::new(0.08, 0.31, -0.27, 0.95, 1.06);
        let pose = Pose::new(
            Rotation::from_axis_angle(&Vector3::new(0.1, -0.2, 0.9), 0.8),
            Vector3::new(1.0, -2.0, 0.3),
        );
        let prev = OdometryState::new(pose, xi);
        let mut meas = Vec::new();
        let rate = 100.0;
        for i in 0..=40 {
            let t = i as f64 / rate;
            meas.push(EncoderReading {
                t,
                o_l: 0.8 + 0.3 * (2.0 * t).sin(),
                o_r: 1.1 - 0.2 * (3.0 * t).cos(),
            });
        }
        let noise = default_noise();
        let nominal = propagate_odometry(&prev, &meas, 0.0, 0.4, &noise).unwrap();
        let h = 1e-6;
        for k in 0..ODOM_DIM {
            let mut dp = SVector::<f64, ODOM_DIM>::zeros();
            dp[k] = h;
            let plus = propagate_odometry(&prev.boxplus(&dp), &meas, 0.0, 0.4, &noise).unwrap();
            dp[k] = -h;
            let minus = propagate_odometry(&prev.boxplus(&dp), &meas, 0.0, 0.4, &noise).unwrap();
            let fd = (plus.predicted.boxminus(&nominal.predicted)
                - minus.predicted.boxminus(&nominal.predicted))
                / (2.0 * h);
            let col = nominal.jacobian_wrt_prev.column(k).into_owned();
            for row in 0..ODOM_DIM {
                let scale = col[row].abs().max(fd[row].abs()).max(1e-3);
                assert!(
                    (col[row] - fd[row]).abs() / scale < 1e-4,
                    "row {row} col {k}: {} vs {}",
                    col[row],
                    fd[row]
                );
            }
        }
        // The ξ block is exactly the identity.
        assert_eq!(
            nominal.jacobian_wrt_prev.fixed_view::<5, 5>(6, 6).clone_owned(),
            SMatrix::<f64, 5, 5>::identity()
        );
        assert_eq!(nominal.jacobian_wrt_prev.fixed_view::<5, 6>(6, 0).norm(), 0.0);
    }

    #[test]
    fn markov_composition() {
        let xi = KinematicParams::new(0.05, 0.33, -0.31, 1.02, 0.97);
        let prev = OdometryState::new(Pose::identity(), xi);
        let mut meas = Vec::new();
        for i in 0..=100 {
            let t = i as f64 * 0.01;
            meas.push(EncoderReading {
                t,
                o_l: 1.0 + 0.2 * (4.0 * t).sin(),
                o_r: 1.0 - 0.3 * (2.0 * t).sin(),
            });
        }
        let noise = default_noise();
        let full = propagate_odometry(&prev, &meas, 0.0, 1.0, &noise).unwrap();
        let first = propagate_odometry(&prev, &meas, 0.0, 0.5, &noise).unwrap();
        let second = propagate_odometry(&first.predicted, &meas, 0.5, 1.0, &noise).unwrap();
        assert_relative_eq!(
            second.predicted.pose.position,
            full.predicted.pose.position,
            epsilon = 1e-9
        );
        assert!(second
            .predicted
            .pose
            .rotation
            .frobenius_distance(&full.predicted.pose.rotation)
            < 1e-9);
        let composed_cov = second.jacobian_wrt_prev * first.noise_covariance
            * second.jacobian_wrt_prev.transpose()
            + second.noise_covariance;
        let rel = (composed_cov - full.noise_covariance).norm() / full.noise_covariance.norm();
        assert!(rel < 1e-6, "information composition relative error {rel}");
    }

    #[test]
    fn residual_cases() {
        let xi = ideal_params(0.5);
        let prev = OdometryState::new(Pose::identity(), xi);
        let meas = constant_encoders(1.0, 1.2, 0.0, 0.5, 100.0);
        let prop = propagate_odometry(&prev, &meas, 0.0, 0.5, &default_noise()).unwrap();

        // Exactly the prediction: zero residual.
        let r = odometry_factor_residual(&prop.predicted.clone(), &prev, &prop);
        assert!(r.norm() < 1e-12);

        // Global-frame position offset shows up verbatim in the p block.
        let mut shifted = prop.predicted.clone();
        shifted.pose.position += Vector3::new(1e-3, 0.0, 0.0);
        let r = odometry_factor_residual(&shifted, &prev, &prop);
        assert_relative_eq!(r[3], 1e-3, epsilon = 1e-15);
        assert!(r.fixed_rows::<3>(0).norm() < 1e-15);

        // Retraction consistency: a boxplus perturbation is recovered.
        let mut delta = SVector::<f64, ODOM_DIM>::zeros();
        for (i, v) in [0.01, -0.02, 0.015, 0.03, -0.01, 0.02, 0.001, -0.002, 0.003, 0.0, 0.001]
            .iter()
            .enumerate()
        {
            delta[i] = *v;
        }
        let perturbed = prop.predicted.boxplus(&delta);
        let r = odometry_factor_residual(&perturbed, &prev, &prop);
        assert!((r - delta).norm() <= delta.norm_squared());
    }

    #[test]
    fn preintegrate_trivial_and_constant_rate() {
        let noise = default_noise();
        let zero_bias = SVector::<f64, 6>::zeros();
        let still: Vec<ImuReading> = (0..=100)
            .map(|i| ImuReading { t: i as f64 * 0.01, gyro: [0.0; 3], accel: [0.0; 3] })
            .collect();
        let pre = imu_preintegrate(&still, &zero_bias, &noise).unwrap();
        assert!(pre.delta_rotation.angle() < 1e-12);
        assert!(pre.delta_velocity.norm() < 1e-12);
        assert!(pre.delta_position.norm() < 1e-12);

        let spin: Vec<ImuReading> = (0..=200)
            .map(|i| ImuReading { t: i as f64 * 0.005, gyro: [0.0, 0.0, 1.0], accel: [0.0; 3] })
            .collect();
        let pre = imu_preintegrate(&spin, &zero_bias, &noise).unwrap();
        assert_relative_eq!(pre.delta_rotation.scaled_axis().z, 1.0, epsilon = 1e-8);

        assert!(matches!(
            imu_preintegrate(&still[..1], &zero_bias, &noise),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn preintegration_covariance_grows() {
        let noise = default_noise();
        let zero_bias = SVector::<f64, 6>::zeros();
        let readings: Vec<ImuReading> = (0..=400)
            .map(|i| ImuReading {
                t: i as f64 * 0.005,
                gyro: [0.02, -0.01, 0.3],
                accel: [0.1, 0.0, 9.81],
            })
            .collect();
        let one = imu_preintegrate(&readings[..=200], &zero_bias, &noise).unwrap();
        let two = imu_preintegrate(&readings, &zero_bias, &noise).unwrap();
        assert!(two.covariance.trace() > one.covariance.trace());
        let eig = two.covariance.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn imu_residual_zero_and_freefall() {
        let noise = default_noise();
        let zero_bias = SVector::<f64, 6>::zeros();
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let ext = Pose::identity();

        // Free fall: zero accel readings, stationary rotation.
        let readings: Vec<ImuReading> = (0..=100)
            .map(|i| ImuReading { t: i as f64 * 0.01, gyro: [0.0; 3], accel: [0.0; 3] })
            .collect();
        let pre = imu_preintegrate(&readings, &zero_bias, &noise).unwrap();
        let dt = pre.duration;
        let pose_a = Pose::identity();
        let mut sb_a = SpeedBias::zeros();
        sb_a[0] = 0.3;
        let mut sb_b = sb_a;
        sb_b.fixed_rows_mut::<3>(0)
            .copy_from(&(Vector3::new(0.3, 0.0, 0.0) + gravity * dt));
        let pose_b = Pose::new(
            Rotation::identity(),
            Vector3::new(0.3, 0.0, 0.0) * dt + gravity * (0.5 * dt * dt),
        );
        let r = imu_factor_residual(&pose_b, &pose_a, &sb_b, &sb_a, &pre, &gravity, &ext);
        assert!(r.norm() < 1e-9, "residual norm {}", r.norm());
    }

    #[test]
    fn imu_bias_jacobian_first_order() {
        let noise = default_noise();
        let zero_bias = SVector::<f64, 6>::zeros();
        let readings: Vec<ImuReading> = (0..=100)
            .map(|i| {
                let t = i as f64 * 0.01;
                ImuReading {
                    t,
                    gyro: [0.1 * (3.0 * t).sin(), -0.2, 0.5],
                    accel: [0.3, 0.1 * t, 9.7],
                }
            })
            .collect();
        let pre = imu_preintegrate(&readings, &zero_bias, &noise).unwrap();
        let db = 1e-4;
        for k in 0..3 {
            let mut bias = zero_bias;
            bias[3 + k] = db;
            let pre_b = imu_preintegrate(&readings, &bias, &noise).unwrap();
            let dtheta = pre_b.delta_rotation.attitude_error(&pre.delta_rotation);
            let predicted = pre.j_theta_bw.column(k) * db;
            assert!(
                (dtheta - predicted).norm() < 10.0 * db * db + 1e-9,
                "gyro-bias col {k}: {:?} vs {:?}",
                dtheta,
                predicted
            );
        }
    }
}
