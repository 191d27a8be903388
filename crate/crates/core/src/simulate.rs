//! Ground-truth trajectory generation and synthesis of noisy sensor streams.
//!
//! Trajectories are driven by a piecewise motion profile `(v_x, ω_z)` with
//! linear ramps, integrated with the same midpoint stepping the estimator's
//! odometry propagation uses, and lifted onto a quadratic ground manifold so
//! that `m_p(p) = 0` and the roll/pitch constraint hold at every sample.
//! Measurement synthesis is deterministic per seed (counter-based ChaCha
//! streams), and all white-noise injection scales with an explicit
//! `noise_scale` so noiseless data can be produced while keeping the
//! configured stds for weighting.

use nalgebra::{Matrix2, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{Pose, Rotation};
use crate::kinematics::{self, BodyVelocity, EncoderReading, KinematicParams};
use crate::propagation::{ImuReading, NoiseConfig};
use crate::Result;

/// Sanity bound on the manifold gradient norm along the path.
pub const MANIFOLD_GRADIENT_LIMIT: f64 = 10.0;

/// Landmark height band above the local ground (m).
pub const LANDMARK_HEIGHT_RANGE: (f64, f64) = (0.2, 3.0);

/// Quadratic ground-surface coefficients `m = [a1, a2, a3, b1, b2, c]`:
/// `m_p(p) = ½ p_xyᵀ [[a1,a2],[a2,a3]] p_xy + [b1,b2]ᵀ p_xy + p_z + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ManifoldParams {
    pub m: [f64; 6],
}

impl ManifoldParams {
    pub fn flat() -> Self {
        ManifoldParams::default()
    }

    pub fn new(m: [f64; 6]) -> Self {
        ManifoldParams { m }
    }

    pub fn quad(&self) -> Matrix2<f64> {
        Matrix2::new(self.m[0], self.m[1], self.m[1], self.m[2])
    }

    pub fn lin(&self) -> Vector2<f64> {
        Vector2::new(self.m[3], self.m[4])
    }

    /// Signed surface residual `m_p(p)`.
    pub fn m_p(&self, p: &Vector3<f64>) -> f64 {
        let xy = Vector2::new(p.x, p.y);
        0.5 * (xy.transpose() * self.quad() * xy)[(0, 0)] + self.lin().dot(&xy) + p.z + self.m[5]
    }

    /// Gradient `∂m_p/∂p` (the z component is always 1).
    pub fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let xy = Vector2::new(p.x, p.y);
        let g = self.quad() * xy + self.lin();
        Vector3::new(g.x, g.y, 1.0)
    }

    /// Height of the surface at `(x, y)` (solves `m_p = 0` for `p_z`).
    pub fn surface_z(&self, x: f64, y: f64) -> f64 {
        let xy = Vector2::new(x, y);
        -(0.5 * (xy.transpose() * self.quad() * xy)[(0, 0)] + self.lin().dot(&xy) + self.m[5])
    }

    /// Upward surface normal at `(x, y)`.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        self.gradient(&Vector3::new(x, y, 0.0)).normalize()
    }
}

/// One constant-command stretch of the motion profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub v_x: f64,
    pub omega_z: f64,
}

/// Piecewise motion profile with optional linear ramps at segment
/// boundaries, plus the ground manifold the trajectory rides on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub segments: Vec<Segment>,
    /// Ramp length (s) applied at the start of each segment after the first.
    #[serde(default)]
    pub ramp_time: f64,
    #[serde(default)]
    pub manifold: ManifoldParams,
}

impl MotionProfile {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::ConfigParse {
                field: "profile.segments".into(),
                message: "at least one segment required".into(),
            });
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) {
                return Err(Error::ConfigParse {
                    field: format!("profile.segments[{i}].duration"),
                    message: format!("must be > 0, got {}", s.duration),
                });
            }
        }
        if self.ramp_time < 0.0 {
            return Err(Error::ConfigParse {
                field: "profile.ramp_time".into(),
                message: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    /// Commanded `(v_x, ω_z)` at time `t`, with linear ramps.
    pub fn command(&self, t: f64) -> (f64, f64) {
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = start + seg.duration;
            if t < end || i + 1 == self.segments.len() {
                if i > 0 && self.ramp_time > 0.0 && t - start < self.ramp_time {
                    let prev = &self.segments[i - 1];
                    let s = ((t - start) / self.ramp_time).clamp(0.0, 1.0);
                    return (
                        prev.v_x + s * (seg.v_x - prev.v_x),
                        prev.omega_z + s * (seg.omega_z - prev.omega_z),
                    );
                }
                return (seg.v_x, seg.omega_z);
            }
            start = end;
        }
        unreachable!("validated profiles have at least one segment")
    }
}

/// Kinematic-parameter schedule over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum XiSchedule {
    Constant(KinematicParams),
    /// Step changes: `(t_start, params)` sorted by time; the first entry
    /// applies from the beginning.
    Steps(Vec<(f64, KinematicParams)>),
}

impl XiSchedule {
    pub fn eval(&self, t: f64) -> KinematicParams {
        match self {
            XiSchedule::Constant(p) => *p,
            XiSchedule::Steps(steps) => {
                let mut current = steps[0].1;
                for (t0, p) in steps {
                    if t >= *t0 {
                        current = *p;
                    }
                }
                current
            }
        }
    }

    pub fn initial(&self) -> KinematicParams {
        match self {
            XiSchedule::Constant(p) => *p,
            XiSchedule::Steps(steps) => steps[0].1,
        }
    }
}

/// One ground-truth sample.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
    pub velocity: BodyVelocity,
}

/// Camera/IMU mounting, gravity, and camera frustum limits.
#[derive(Debug, Clone, Copy)]
pub struct SensorRig {
    /// Camera in the odometer frame.
    pub extrinsics_oc: Pose,
    /// IMU in the odometer frame.
    pub extrinsics_oi: Pose,
    pub gravity: Vector3<f64>,
    pub fov_half_angle: f64,
    pub max_range: f64,
}

impl SensorRig {
    /// Forward-looking camera (optical axis along +x of the odometer frame,
    /// image x right, image y down) rolled about the optical axis, plus an
    /// IMU slightly above the odometer origin.
    pub fn default_forward(roll_about_axis: f64) -> Self {
        let base = Rotation::from_quaternion_wxyz(0.5, -0.5, 0.5, -0.5);
        let cam_rot = base.compose(&Rotation::from_yaw(roll_about_axis));
        SensorRig {
            extrinsics_oc: Pose::new(cam_rot, Vector3::new(0.15, 0.05, 0.25)),
            extrinsics_oi: Pose::new(Rotation::identity(), Vector3::new(-0.02, 0.01, 0.12)),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            fov_half_angle: 0.9,
            max_range: 18.0,
        }
    }
}

/// Point landmark in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: [f64; 3],
}

impl Landmark {
    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.position)
    }
}

/// A feature measurement in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub frame_t: f64,
    pub landmark_id: u64,
    pub uv: [f64; 2],
}

/// Minimal rotation taking the body z-axis onto the surface normal.
fn align_to_normal(normal: &Vector3<f64>) -> Rotation {
    let e3 = Vector3::z();
    match UnitQuaternion::rotation_between(&e3, normal) {
        Some(q) => Rotation::from_quaternion_wxyz(q.w, q.i, q.j, q.k),
        None => Rotation::from_axis_angle(&Vector3::x(), std::f64::consts::PI),
    }
}

/// Integrates the profile into a ground-truth trajectory sampled every `dt`.
///
/// Planar heading/position follow the midpoint rule on the commanded
/// velocities (with `v_y = -X_v ω` from the schedule); height and roll/pitch
/// are lifted onto the manifold, so `m_p = 0` and the rotation constraint
/// hold at every sample.
pub fn generate_trajectory(
    profile: &MotionProfile,
    xi_schedule: &XiSchedule,
    dt: f64,
) -> Result<Vec<TrajectorySample>> {
    profile.validate()?;
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(Error::Precondition(format!("dt must be in (0, 0.02], got {dt}")));
    }
    let manifold = &profile.manifold;
    let total = profile.total_duration();
    let n = (total / dt).round() as usize;

    let body_vel = |t: f64| -> BodyVelocity {
        let (v_x, omega) = profile.command(t);
        let xi = xi_schedule.eval(t);
        BodyVelocity::new(v_x, -xi.x_v * omega, omega)
    };

    let mut out = Vec::with_capacity(n + 1);
    let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=n {
        let t = i as f64 * dt;
        let grad = manifold.gradient(&Vector3::new(x, y, 0.0));
        if grad.norm() > MANIFOLD_GRADIENT_LIMIT {
            return Err(Error::ManifoldGradientBlowup {
                norm: grad.norm(),
                limit: MANIFOLD_GRADIENT_LIMIT,
                x,
                y,
            });
        }
        let rot = align_to_normal(&manifold.normal(x, y)).compose(&Rotation::from_yaw(psi));
        let pos = Vector3::new(x, y, manifold.surface_z(x, y));
        let vel = body_vel(t);
        out.push(TrajectorySample { t, pose: Pose::new(rot, pos), velocity: vel });

        if i == n {
            break;
        }
        let t_next = (i + 1) as f64 * dt;
        let v_now = vel;
        let v_next = body_vel(t_next);
        let omega_mid = 0.5 * (v_now.omega_z + v_next.omega_z);
        let v_mid = Vector3::new(
            0.5 * (v_now.v_x + v_next.v_x),
            0.5 * (v_now.v_y + v_next.v_y),
            0.0,
        );
        let rot_mid = align_to_normal(&manifold.normal(x, y))
            .compose(&Rotation::from_yaw(psi + 0.5 * omega_mid * dt));
        let step = rot_mid.rotate(&v_mid) * dt;
        x += step.x;
        y += step.y;
        psi += omega_mid * dt;
    }
    Ok(out)
}

fn interp_velocity(traj: &[TrajectorySample], t: f64) -> BodyVelocity {
    let idx = traj.partition_point(|s| s.t < t);
    if idx == 0 {
        return traj[0].velocity;
    }
    if idx >= traj.len() {
        return traj.last().unwrap().velocity;
    }
    let a = &traj[idx - 1];
    let b = &traj[idx];
    if (b.t - a.t).abs() < 1e-12 {
        return a.velocity;
    }
    let s = (t - a.t) / (b.t - a.t);
    BodyVelocity::new(
        a.velocity.v_x + s * (b.velocity.v_x - a.velocity.v_x),
        a.velocity.v_y + s * (b.velocity.v_y - a.velocity.v_y),
        a.velocity.omega_z + s * (b.velocity.omega_z - a.velocity.omega_z),
    )
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// The effective ξ(t) series at `rate` Hz: the schedule value plus a
/// deterministic random walk with densities `noise.sigma_xi_walk`, scaled
/// by `noise_scale`. This is the ground-truth parameter trajectory the
/// encoders are generated with.
pub fn xi_walk_series(
    xi_schedule: &XiSchedule,
    noise: &NoiseConfig,
    rate: f64,
    t_end: f64,
    seed: u64,
    noise_scale: f64,
) -> Vec<(f64, KinematicParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7869_7761_6c6b);
    let dt = 1.0 / rate;
    let n = (t_end * rate).floor() as usize;
    let mut walk = [0.0f64; 5];
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 * dt;
        if i > 0 {
            for w in walk.iter_mut().zip(noise.sigma_xi_walk) {
                *w.0 += w.1 * dt.sqrt() * noise_scale * normal_sample(&mut rng);
            }
        }
        let mut xi = xi_schedule.eval(t).as_array();
        for k in 0..5 {
            xi[k] += walk[k];
        }
        out.push((t, KinematicParams::from_array(xi)));
    }
    out
}

/// Emits encoder readings at `rate` Hz: the inverse kinematics of the
/// trajectory velocity under the (possibly drifting) ξ series from
/// [`xi_walk_series`], plus white noise.
pub fn synthesize_encoders(
    traj: &[TrajectorySample],
    xi_schedule: &XiSchedule,
    noise: &NoiseConfig,
    rate: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<EncoderReading>> {
    if traj.is_empty() {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    let t_end = traj.last().unwrap().t;
    let series = xi_walk_series(xi_schedule, noise, rate, t_end, seed, noise_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f_6465_7273);
    let mut out = Vec::with_capacity(series.len());
    for (t, xi) in series {
        let v = interp_velocity(traj, t);
        let (o_l, o_r) = kinematics::inverse_kinematics(&xi, v.v_x, v.omega_z)?;
        out.push(EncoderReading {
            t,
            o_l: o_l + noise.sigma_encoder * noise_scale * normal_sample(&mut rng),
            o_r: o_r + noise.sigma_encoder * noise_scale * normal_sample(&mut rng),
        });
    }
    Ok(out)
}

/// Emits IMU readings at `rate` Hz (must divide the trajectory grid rate):
/// body rates and specific force from central differences of the ground
/// truth, plus bias random walks and white noise.
pub fn synthesize_imu(
    traj: &[TrajectorySample],
    rig: &SensorRig,
    noise: &NoiseConfig,
    rate: f64,
    bias_walk_seed: u64,
    noise_scale: f64,
) -> Result<Vec<ImuReading>> {
    if traj.len() < 3 {
        return Err(Error::TooFewSamples { op: "synthesize_imu", needed: 3, got: traj.len() });
    }
    let grid_dt = traj[1].t - traj[0].t;
    let stride = (1.0 / (rate * grid_dt)).round() as usize;
    if stride == 0 || ((stride as f64) * grid_dt * rate - 1.0).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "imu rate {rate} Hz must divide the trajectory grid rate {}",
            1.0 / grid_dt
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(bias_walk_seed ^ 0x696d_755f);
    let mut b_gyro = Vector3::zeros();
    let mut b_accel = Vector3::zeros();
    let dt = stride as f64 * grid_dt;
    let mut out = Vec::new();
    let mut i = stride;
    // IMU pose samples for the finite differences.
    let imu_pose = |k: usize| traj[k].pose.compose(&rig.extrinsics_oi);
    while i + stride < traj.len() {
        let t = traj[i].t;
        // Angular velocity of the odometer frame, central difference.
        let q_prev = traj[i - stride].pose.rotation;
        let q_next = traj[i + stride].pose.rotation;
        let omega_o = q_prev.inverse().compose(&q_next).scaled_axis() / (2.0 * dt);
        let omega_i = rig.extrinsics_oi.rotation.inverse_rotate(&omega_o);
        // Specific force at the IMU position.
        let p_prev = imu_pose(i - stride).position;
        let p_now = imu_pose(i).position;
        let p_next = imu_pose(i + stride).position;
        let accel_g = (p_next - 2.0 * p_now + p_prev) / (dt * dt);
        let rot_i = imu_pose(i).rotation;
        let specific = rot_i.inverse_rotate(&(accel_g - rig.gravity));

        b_gyro += Vector3::new(
            normal_sample(&mut rng),
            normal_sample(&mut rng),
            normal_sample(&mut rng),
        ) * noise.sigma_gyro_bias_walk
            * dt.sqrt()
            * noise_scale;
        b_accel += Vector3::new(
            normal_sample(&mut rng),
            normal_sample(&mut rng),
            normal_sample(&mut rng),
        ) * noise.sigma_accel_bias_walk
            * dt.sqrt()
            * noise_scale;

        let gyro = omega_i
            + b_gyro
            + Vector3::new(
                normal_sample(&mut rng),
                normal_sample(&mut rng),
                normal_sample(&mut rng),
            ) * noise.sigma_gyro
                * noise_scale;
        let accel = specific
            + b_accel
            + Vector3::new(
                normal_sample(&mut rng),
                normal_sample(&mut rng),
                normal_sample(&mut rng),
            ) * noise.sigma_accel
                * noise_scale;
        out.push(ImuReading {
            t,
            gyro: [gyro.x, gyro.y, gyro.z],
            accel: [accel.x, accel.y, accel.z],
        });
        i += stride;
    }
    Ok(out)
}

/// Projects landmarks through the camera at `frame_rate` Hz with ideal data
/// association; emits observations for landmarks inside the frustum with
/// positive depth, perturbed by `sigma_pixel` (normalized units).
pub fn synthesize_features(
    traj: &[TrajectorySample],
    landmarks: &[Landmark],
    rig: &SensorRig,
    noise: &NoiseConfig,
    frame_rate: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<FeatureObservation>> {
    if landmarks.is_empty() {
        return Err(Error::Precondition("landmarks must be nonempty".into()));
    }
    let grid_dt = traj[1].t - traj[0].t;
    let stride = (1.0 / (frame_rate * grid_dt)).round() as usize;
    if stride == 0 || ((stride as f64) * grid_dt * frame_rate - 1.0).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "camera rate {frame_rate} Hz must divide the trajectory grid rate {}",
            1.0 / grid_dt
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6665_6174);
    let cos_fov = rig.fov_half_angle.cos();
    let mut out = Vec::new();
    let mut i = 0;
    while i < traj.len() {
        let cam = traj[i].pose.compose(&rig.extrinsics_oc);
        let cam_inv = cam.inverse();
        for lm in landmarks {
            let p_c = cam_inv.transform(&lm.position_vec());
            let depth = p_c.z;
            if depth <= 0.01 {
                continue;
            }
            let range = p_c.norm();
            if range > rig.max_range || p_c.z / range < cos_fov {
                continue;
            }
            out.push(FeatureObservation {
                frame_t: traj[i].t,
                landmark_id: lm.id,
                uv: [
                    p_c.x / depth + noise.sigma_pixel * noise_scale * normal_sample(&mut rng),
                    p_c.y / depth + noise.sigma_pixel * noise_scale * normal_sample(&mut rng),
                ],
            });
        }
        i += stride;
    }
    Ok(out)
}

/// Scatters `count` landmarks uniformly in a corridor of the given full
/// width around the path, at heights in [`LANDMARK_HEIGHT_RANGE`] above the
/// local ground. Deterministic per seed.
pub fn scatter_landmarks(
    traj: &[TrajectorySample],
    count: usize,
    corridor_width: f64,
    seed: u64,
) -> Result<Vec<Landmark>> {
    if count == 0 {
        return Err(Error::Precondition("landmark count must be > 0".into()));
    }
    if traj.is_empty() {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e64);
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let idx = rng.random_range(0..traj.len());
        let s = &traj[idx];
        let lateral = rng.random_range(-0.5..0.5) * corridor_width;
        let height = rng.random_range(LANDMARK_HEIGHT_RANGE.0..LANDMARK_HEIGHT_RANGE.1);
        let left = s.pose.rotation.rotate(&Vector3::y());
        let p = s.pose.position + left * lateral + Vector3::z() * height;
        out.push(Landmark { id: id as u64, position: [p.x, p.y, p.z] });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ideal_params;
    use approx::assert_relative_eq;

    fn flat_profile(segments: Vec<Segment>) -> MotionProfile {
        MotionProfile { segments, ramp_time: 0.0, manifold: ManifoldParams::flat() }
    }

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

    #[test]
    fn straight_flat_trajectory() {
        let profile = flat_profile(vec![Segment { duration: 10.0, v_x: 1.0, omega_z: 0.0 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.01).unwrap();
        let last = traj.last().unwrap();
        assert_relative_eq!(last.pose.position, Vector3::new(10.0, 0.0, 0.0), epsilon = 1e-9);
        assert!(last.pose.rotation.angle() < 1e-12);
    }

    #[test]
    fn circle_closes() {
        let dur = 4.0 * std::f64::consts::PI;
        let profile = flat_profile(vec![Segment { duration: dur, v_x: 1.0, omega_z: 0.5 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        // dt chosen to divide the duration so the final sample lands exactly
        // on the loop closure.
        let traj = generate_trajectory(&profile, &xi, dur / 1600.0).unwrap();
        let last = traj.last().unwrap();
        assert!(
            last.pose.position.norm() < 1e-6,
            "endpoint {:?} should close the loop",
            last.pose.position
        );
    }

    #[test]
    fn tilted_plane_pitch_matches_slope() {
        let b1 = 0.1;
        let profile = MotionProfile {
            segments: vec![Segment { duration: 5.0, v_x: 1.0, omega_z: 0.0 }],
            ramp_time: 0.0,
            manifold: ManifoldParams::new([0.0, 0.0, 0.0, b1, 0.0, 0.0]),
        };
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.01).unwrap();
        for s in &traj {
            // Every sample sits on the surface.
            assert!(profile.manifold.m_p(&s.pose.position).abs() < 1e-12);
            // Body x-axis dives with slope atan(b1): z-component is -sin(atan(b1)).
            let fwd = s.pose.rotation.rotate(&Vector3::x());
            assert_relative_eq!(fwd.z, -b1 / (1.0 + b1 * b1).sqrt(), epsilon = 1e-9);
            // Body z stays parallel to the surface normal.
            let nrm = profile.manifold.normal(s.pose.position.x, s.pose.position.y);
            assert_relative_eq!(s.pose.rotation.rotate(&Vector3::z()), nrm, epsilon = 1e-9);
        }
    }

    #[test]
    fn encoder_round_trip_zero_noise() {
        let profile = flat_profile(vec![
            Segment { duration: 3.0, v_x: 1.0, omega_z: 0.2 },
            Segment { duration: 3.0, v_x: 0.8, omega_z: -0.4 },
        ]);
        let xi = KinematicParams::new(0.05, 0.3, -0.26, 1.1, 0.92);
        let sched = XiSchedule::Constant(xi);
        let traj = generate_trajectory(&profile, &sched, 0.01).unwrap();
        let enc = synthesize_encoders(&traj, &sched, &default_noise(), 100.0, 7, 0.0).unwrap();
        for e in enc.iter().step_by(17) {
            let v = kinematics::forward_kinematics(&xi, e.o_l, e.o_r).unwrap();
            let truth = interp_velocity(&traj, e.t);
            assert_relative_eq!(v.v_x, truth.v_x, epsilon = 1e-12);
            assert_relative_eq!(v.omega_z, truth.omega_z, epsilon = 1e-12);
        }
    }

    #[test]
    fn encoder_noise_std_matches_config() {
        let profile = flat_profile(vec![Segment { duration: 100.0, v_x: 1.0, omega_z: 0.0 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.01).unwrap();
        let mut noise = default_noise();
        noise.sigma_xi_walk = [1e-12; 5];
        let enc = synthesize_encoders(&traj, &xi, &noise, 100.0, 3, 1.0).unwrap();
        let resid: Vec<f64> = enc
            .iter()
            .map(|e| {
                let truth = interp_velocity(&traj, e.t);
                let (o_l, _) =
                    kinematics::inverse_kinematics(&ideal_params(0.5), truth.v_x, truth.omega_z)
                        .unwrap();
                e.o_l - o_l
            })
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let std = (resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.023..=0.026).contains(&std), "empirical std {std}");
    }

    #[test]
    fn alpha_step_rescales_encoders() {
        let profile = flat_profile(vec![Segment { duration: 4.0, v_x: 1.0, omega_z: 0.0 }]);
        let xi0 = ideal_params(0.5);
        let mut xi1 = xi0;
        xi1.alpha_l = 1.25;
        let sched = XiSchedule::Steps(vec![(0.0, xi0), (2.0, xi1)]);
        let traj = generate_trajectory(&profile, &sched, 0.01).unwrap();
        let enc = synthesize_encoders(&traj, &sched, &default_noise(), 100.0, 1, 0.0).unwrap();
        let before = enc.iter().find(|e| (e.t - 1.0).abs() < 1e-9).unwrap();
        let after = enc.iter().find(|e| (e.t - 3.0).abs() < 1e-9).unwrap();
        assert_relative_eq!(after.o_l * 1.25, before.o_l, epsilon = 1e-12);
    }

    #[test]
    fn imu_stationary_levels_gravity() {
        let profile = flat_profile(vec![Segment { duration: 2.0, v_x: 0.0, omega_z: 0.0 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.005).unwrap();
        let rig = SensorRig::default_forward(0.3);
        let imu = synthesize_imu(&traj, &rig, &default_noise(), 200.0, 5, 0.0).unwrap();
        for r in &imu {
            assert_relative_eq!(r.gyro_vec(), Vector3::zeros(), epsilon = 1e-9);
            assert_relative_eq!(r.accel_vec(), Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-6);
        }
    }

    #[test]
    fn imu_constant_yaw_rate() {
        let profile = flat_profile(vec![Segment { duration: 4.0, v_x: 0.0, omega_z: 0.5 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.005).unwrap();
        let mut rig = SensorRig::default_forward(0.0);
        rig.extrinsics_oi = Pose::identity();
        let imu = synthesize_imu(&traj, &rig, &default_noise(), 200.0, 5, 0.0).unwrap();
        for r in imu.iter().skip(2).take(imu.len() - 4) {
            assert_relative_eq!(r.gyro_vec(), Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-8);
        }
    }

    #[test]
    fn imu_noise_std_matches_config() {
        let profile = flat_profile(vec![Segment { duration: 52.0, v_x: 0.0, omega_z: 0.0 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.005).unwrap();
        let mut noise = default_noise();
        noise.sigma_gyro_bias_walk = 1e-12;
        noise.sigma_accel_bias_walk = 1e-12;
        let rig = SensorRig::default_forward(0.3);
        let imu = synthesize_imu(&traj, &rig, &noise, 200.0, 9, 1.0).unwrap();
        assert!(imu.len() > 10_000);
        let xs: Vec<f64> = imu.iter().map(|r| r.gyro[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 9e-4).abs() / 9e-4 < 0.1, "gyro noise std {std}");
    }

    #[test]
    fn feature_geometry() {
        let profile = flat_profile(vec![Segment { duration: 1.0, v_x: 0.0, omega_z: 0.0 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.01).unwrap();
        let rig = SensorRig::default_forward(0.0);
        // A landmark straight down the optical axis.
        let cam = traj[0].pose.compose(&rig.extrinsics_oc);
        let on_axis = cam.transform(&Vector3::new(0.0, 0.0, 5.0));
        let behind = cam.transform(&Vector3::new(0.0, 0.0, -5.0));
        let lms = vec![
            Landmark { id: 0, position: [on_axis.x, on_axis.y, on_axis.z] },
            Landmark { id: 1, position: [behind.x, behind.y, behind.z] },
        ];
        let obs =
            synthesize_features(&traj, &lms, &rig, &default_noise(), 10.0, 3, 0.0).unwrap();
        assert!(obs.iter().all(|o| o.landmark_id == 0));
        assert_relative_eq!(obs[0].uv[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(obs[0].uv[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn landmarks_deterministic_and_in_corridor() {
        let profile = flat_profile(vec![Segment { duration: 10.0, v_x: 1.0, omega_z: 0.1 }]);
        let xi = XiSchedule::Constant(ideal_params(0.5));
        let traj = generate_trajectory(&profile, &xi, 0.01).unwrap();
        let a = scatter_landmarks(&traj, 100, 10.0, 42).unwrap();
        let b = scatter_landmarks(&traj, 100, 10.0, 42).unwrap();
        assert_eq!(a, b);
        for lm in &a {
            let min_lateral = traj
                .iter()
                .map(|s| {
                    let d = lm.position_vec() - s.pose.position;
                    Vector2::new(d.x, d.y).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(min_lateral <= 5.0 + 1e-9, "landmark {} at {min_lateral}", lm.id);
        }
        assert!(matches!(scatter_landmarks(&traj, 0, 10.0, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn manifold_gradient_guard() {
        let profile = MotionProfile {
            // Parabolic bowl: the slope keeps growing along the path until
            // the gradient guard has to fire.
            segments: vec![Segment { duration: 160.0, v_x: 1.0, omega_z: 0.0 }],
            ramp_time: 0.0,
            manifold: ManifoldParams::new([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
        };
        let xi = XiSchedule::Constant(ideal_params(0.5));
        assert!(matches!(
            generate_trajectory(&profile, &xi, 0.01),
            Err(Error::ManifoldGradientBlowup { .. })
        ));
    }
}
