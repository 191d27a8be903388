//! Scenario configuration: TOML-backed description of one experiment
//! (motion, true and initial kinematics, noise, rig, rates, estimator
//! tuning).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{CalibMode, EstimatorConfig};
use crate::geom::{Pose, PoseRecord};
use crate::kinematics::KinematicParams;
use crate::propagation::NoiseConfig;
use crate::simulate::{ManifoldParams, MotionProfile, Segment, SensorRig, XiSchedule};
use crate::Result;

use super::profiles;

/// Estimation setup, mirroring the experiment configurations compared in
/// the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Camera + IMU + odometer, all five ξ parameters online.
    VioXi5,
    /// Camera + odometer (no IMU), ICR parameters online, α frozen.
    VoIcr3,
    /// Camera + IMU + odometer with ξ frozen at its initial value.
    VioFixedXi,
    /// Camera + IMU + odometer, ICR parameters online only.
    VioIcr3,
}

impl Mode {
    pub fn use_imu(&self) -> bool {
        !matches!(self, Mode::VoIcr3)
    }

    pub fn calib_mode(&self) -> CalibMode {
        match self {
            Mode::VioXi5 => CalibMode::Full5,
            Mode::VoIcr3 | Mode::VioIcr3 => CalibMode::Icr3,
            Mode::VioFixedXi => CalibMode::Fixed,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::VioXi5 => "vio_xi5",
            Mode::VoIcr3 => "vo_icr3",
            Mode::VioFixedXi => "vio_fixed_xi",
            Mode::VioIcr3 => "vio_icr3",
        }
    }
}

/// Motion profile: a bundled preset or explicit segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Name of a bundled profile; mutually exclusive with `segments`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default = "default_ramp")]
    pub ramp_time: f64,
    /// Quadratic surface coefficients `[a1, a2, a3, b1, b2, c]`.
    #[serde(default)]
    pub manifold: [f64; 6],
}

fn default_ramp() -> f64 {
    0.5
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            preset: Some("general_motion".to_string()),
            segments: Vec::new(),
            ramp_time: default_ramp(),
            manifold: [0.0; 6],
        }
    }
}

impl ProfileConfig {
    pub fn resolve(&self, xi_true: &KinematicParams) -> Result<MotionProfile> {
        let mut profile = match (&self.preset, self.segments.is_empty()) {
            (Some(name), true) => profiles::by_name(name, xi_true).ok_or_else(|| {
                Error::ConfigParse {
                    field: "profile.preset".into(),
                    message: format!(
                        "unknown preset `{name}` (available: {})",
                        profiles::PRESET_NAMES.join(", ")
                    ),
                }
            })?,
            (None, false) => MotionProfile {
                segments: self.segments.clone(),
                ramp_time: self.ramp_time,
                manifold: ManifoldParams::new(self.manifold),
            },
            (Some(_), false) => {
                return Err(Error::ConfigParse {
                    field: "profile".into(),
                    message: "set either `preset` or `segments`, not both".into(),
                })
            }
            (None, true) => {
                return Err(Error::ConfigParse {
                    field: "profile".into(),
                    message: "one of `preset` or `segments` is required".into(),
                })
            }
        };
        if self.preset.is_some() && self.manifold != [0.0; 6] {
            profile.manifold = ManifoldParams::new(self.manifold);
        }
        profile.validate()?;
        Ok(profile)
    }
}

/// True kinematic parameters, optionally with step changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiTrueConfig {
    pub values: KinematicParams,
    /// Step changes `(t, values)` applied on top of (replacing) `values`.
    #[serde(default)]
    pub steps: Vec<XiStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiStep {
    pub t: f64,
    pub values: KinematicParams,
}

impl XiTrueConfig {
    pub fn schedule(&self) -> XiSchedule {
        if self.steps.is_empty() {
            XiSchedule::Constant(self.values)
        } else {
            let mut steps = vec![(0.0, self.values)];
            for s in &self.steps {
                steps.push((s.t, s.values));
            }
            XiSchedule::Steps(steps)
        }
    }
}

impl Default for XiTrueConfig {
    fn default() -> Self {
        XiTrueConfig {
            values: KinematicParams::new(0.06, 0.34, -0.3, 0.95, 1.05),
            steps: Vec::new(),
        }
    }
}

/// How the estimator's initial ξ is produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum XiInitialConfig {
    /// Use these values directly.
    Explicit { values: KinematicParams },
    /// True values plus zero-mean Gaussian error (std per element), drawn
    /// per seed.
    Perturbed { std: f64 },
    /// True values plus a fixed error vector.
    Offset { delta: [f64; 5] },
    /// Effective track width from a synthesized calibration spin, then the
    /// ideal configuration for that width.
    TrackWidth {},
}

impl Default for XiInitialConfig {
    fn default() -> Self {
        XiInitialConfig::Perturbed { std: 8e-2 }
    }
}

/// Sensor mounting and camera limits, in config form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigConfig {
    pub extrinsics_oc: PoseRecord,
    pub extrinsics_oi: PoseRecord,
    pub gravity: [f64; 3],
    pub fov_half_angle: f64,
    pub max_range: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        let rig = SensorRig::default_forward(0.3);
        RigConfig {
            extrinsics_oc: (&rig.extrinsics_oc).into(),
            extrinsics_oi: (&rig.extrinsics_oi).into(),
            gravity: [0.0, 0.0, -9.81],
            fov_half_angle: rig.fov_half_angle,
            max_range: rig.max_range,
        }
    }
}

impl RigConfig {
    pub fn resolve(&self) -> Result<SensorRig> {
        let oc: Pose = (&self.extrinsics_oc).into();
        let oi: Pose = (&self.extrinsics_oi).into();
        for (name, p) in [("extrinsics_oc", &oc), ("extrinsics_oi", &oi)] {
            let q = p.rotation.wxyz();
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if !(0.5..2.0).contains(&norm) {
                return Err(Error::ConfigParse {
                    field: format!("rig.{name}.quat_wxyz"),
                    message: "quaternion is not normalizable".into(),
                });
            }
        }
        Ok(SensorRig {
            extrinsics_oc: oc,
            extrinsics_oi: oi,
            gravity: Vector3::from_column_slice(&self.gravity),
            fov_half_angle: self.fov_half_angle,
            max_range: self.max_range,
        })
    }
}

/// Stream rates and the simulation grid step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatesConfig {
    pub encoder_hz: f64,
    pub imu_hz: f64,
    pub camera_hz: f64,
    pub sim_dt: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig { encoder_hz: 100.0, imu_hz: 200.0, camera_hz: 10.0, sim_dt: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub count: usize,
    pub corridor_width: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        LandmarkConfig { count: 350, corridor_width: 12.0 }
    }
}

/// Noise levels in config units: pixel noise is given in pixels together
/// with the nominal focal length, and converted to normalized image
/// coordinates for the pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfigFile {
    pub sigma_encoder: f64,
    pub sigma_xi_walk: [f64; 5],
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub sigma_gyro_bias_walk: f64,
    pub sigma_accel_bias_walk: f64,
    pub sigma_pixel_px: f64,
    pub focal_length_px: f64,
}

impl Default for NoiseConfigFile {
    fn default() -> Self {
        NoiseConfigFile {
            sigma_encoder: 0.0245,
            sigma_xi_walk: [1e-3; 5],
            sigma_gyro: 9e-4,
            sigma_accel: 1e-2,
            sigma_gyro_bias_walk: 1e-2,
            sigma_accel_bias_walk: 1e-2,
            sigma_pixel_px: 0.6,
            focal_length_px: 460.0,
        }
    }
}

impl NoiseConfigFile {
    pub fn resolve(&self) -> Result<NoiseConfig> {
        if !(self.focal_length_px > 0.0) {
            return Err(Error::ConfigParse {
                field: "noise.focal_length_px".into(),
                message: "must be positive".into(),
            });
        }
        let noise = NoiseConfig {
            sigma_encoder: self.sigma_encoder,
            sigma_xi_walk: self.sigma_xi_walk,
            sigma_gyro: self.sigma_gyro,
            sigma_accel: self.sigma_accel,
            sigma_gyro_bias_walk: self.sigma_gyro_bias_walk,
            sigma_accel_bias_walk: self.sigma_accel_bias_walk,
            sigma_pixel: self.sigma_pixel_px / self.focal_length_px,
        };
        noise.validate()?;
        Ok(noise)
    }
}

/// Estimator tuning in config form (subset of [`EstimatorConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorTuning {
    pub keyframe_translation_gate: f64,
    pub keyframe_rotation_gate: f64,
    pub window_size: usize,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub huber_enabled: bool,
    pub manifold_weights: [f64; 3],
    pub xi_prior_std: [f64; 5],
}

impl Default for EstimatorTuning {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorTuning {
            keyframe_translation_gate: d.keyframe_translation_gate,
            keyframe_rotation_gate: d.keyframe_rotation_gate,
            window_size: d.window_size,
            max_iterations: d.max_iterations,
            convergence_tol: d.convergence_tol,
            huber_enabled: d.huber_enabled,
            manifold_weights: d.manifold_weights,
            xi_prior_std: d.xi_prior_std,
        }
    }
}

impl EstimatorTuning {
    pub fn resolve(&self, mode: Mode) -> Result<EstimatorConfig> {
        if self.window_size < 3 {
            return Err(Error::ConfigParse {
                field: "estimator.window_size".into(),
                message: format!("must be >= 3, got {}", self.window_size),
            });
        }
        for (name, g) in [
            ("keyframe_translation_gate", self.keyframe_translation_gate),
            ("keyframe_rotation_gate", self.keyframe_rotation_gate),
        ] {
            if !(g > 0.0) {
                return Err(Error::ConfigParse {
                    field: format!("estimator.{name}"),
                    message: "must be positive".into(),
                });
            }
        }
        Ok(EstimatorConfig {
            keyframe_translation_gate: self.keyframe_translation_gate,
            keyframe_rotation_gate: self.keyframe_rotation_gate,
            window_size: self.window_size,
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            huber_enabled: self.huber_enabled,
            use_imu: mode.use_imu(),
            calib_mode: mode.calib_mode(),
            manifold_weights: self.manifold_weights,
            xi_prior_std: self.xi_prior_std,
            ..EstimatorConfig::default()
        })
    }
}

/// One experiment: simulation inputs plus estimation setup.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ScenarioConfig {
    pub mode: Option<Mode>,
    pub seeds: Vec<u64>,
    pub noise_scale: Option<f64>,
    pub profile: ProfileConfig,
    pub xi: XiTrueConfig,
    pub xi_initial: XiInitialConfig,
    pub noise: NoiseConfigFile,
    pub rig: RigConfig,
    pub rates: RatesConfig,
    pub landmarks: LandmarkConfig,
    pub estimator: EstimatorTuning,
    /// RPE segment-length grid (meters).
    pub rpe_segment_lengths: Vec<f64>,
}

impl ScenarioConfig {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::VioXi5)
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale.unwrap_or(1.0)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![0]
        } else {
            self.seeds.clone()
        }
    }

    pub fn rpe_lengths(&self) -> Vec<f64> {
        if self.rpe_segment_lengths.is_empty() {
            vec![9.0, 15.0, 18.0, 27.0, 30.0, 36.0, 45.0, 60.0, 75.0]
        } else {
            self.rpe_segment_lengths.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            field: e
                .span()
                .map(|s| format!("offset {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<unknown>".into()),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)?;
        ScenarioConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.xi.values.validate()?;
        for s in &self.xi.steps {
            s.values.validate()?;
        }
        self.noise.resolve()?;
        self.rig.resolve()?;
        self.profile.resolve(&self.xi.values)?;
        self.estimator.resolve(self.mode())?;
        if let Some(ns) = self.noise_scale {
            if ns < 0.0 {
                return Err(Error::ConfigParse {
                    field: "noise_scale".into(),
                    message: "must be >= 0".into(),
                });
            }
        }
        if self.landmarks.count == 0 {
            return Err(Error::ConfigParse {
                field: "landmarks.count".into(),
                message: "must be > 0".into(),
            });
        }
        let r = &self.rates;
        if !(r.sim_dt > 0.0 && r.sim_dt <= 0.02) {
            return Err(Error::ConfigParse {
                field: "rates.sim_dt".into(),
                message: format!("must be in (0, 0.02], got {}", r.sim_dt),
            });
        }
        for (name, hz) in [
            ("encoder_hz", r.encoder_hz),
            ("imu_hz", r.imu_hz),
            ("camera_hz", r.camera_hz),
        ] {
            if !(hz > 0.0) {
                return Err(Error::ConfigParse {
                    field: format!("rates.{name}"),
                    message: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        let mut cfg = ScenarioConfig::default();
        cfg.profile.preset = Some("does_not_exist".into());
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.category(), "config-parse");
        assert!(err.to_string().contains("profile.preset"));
    }

    #[test]
    fn pixel_noise_conversion() {
        let cfg = ScenarioConfig::default();
        let noise = cfg.noise.resolve().unwrap();
        assert!((noise.sigma_pixel - 0.6 / 460.0).abs() < 1e-15);
    }
}
