//! Tightly-coupled sliding-window bundle adjustment over keyframe poses,
//! IMU speed/bias, the motion manifold, and the skid-steering parameters ξ.
//!
//! Each step appends one keyframe, builds the odometer and IMU constraints
//! against the previous keyframe only, rebuilds visual factors from the
//! tracked features (landmarks are solved per window and never enter the
//! persistent state), solves by damped Gauss-Newton, and then marginalizes
//! the previous ξ/speed-bias/manifold generations plus the oldest keyframe
//! once the window is full.

pub mod factors;
pub mod solve;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

pub use factors::{
    manifold_jacobians, manifold_residual, triangulate, visual_residual,
    visual_residual_jacobians, BlockKey, BlockLayout, BlockValue, Factor, ImuFactor,
    ManifoldFactor, OdometryFactor, PriorFactor, WindowValues,
};
pub use solve::{marginalize, solve_window, LandmarkBlock, Marginalized, SolveStats, VisualParams};

use crate::error::Error;
use crate::geom::Pose;
use crate::kinematics::{EncoderReading, KinematicParams};
use crate::propagation::{
    self, propagate_odometry, ImuReading, NoiseConfig, OdometryState, SpeedBias,
};
use crate::simulate::{FeatureObservation, SensorRig};
use crate::Result;

/// Which kinematic parameters are estimated online.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibMode {
    /// All five of `[X_v, Y_l, Y_r, α_l, α_r]`.
    Full5,
    /// ICR parameters only; the correction factors stay frozen.
    Icr3,
    /// ξ frozen at its initial value.
    Fixed,
}

impl CalibMode {
    pub fn xi_dof(&self) -> usize {
        match self {
            CalibMode::Full5 => 5,
            CalibMode::Icr3 => 3,
            CalibMode::Fixed => 0,
        }
    }
}

/// Estimator tuning. Defaults follow the keyframe gates (0.2 m / 3°) and a
/// ten-keyframe window.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub keyframe_translation_gate: f64,
    pub keyframe_rotation_gate: f64,
    pub window_size: usize,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_solver_rejects: usize,
    /// Huber robustification of visual residuals (threshold 1.345 on the
    /// whitened norm); disable for solver-equivalence oracles.
    pub huber_enabled: bool,
    pub use_imu: bool,
    pub calib_mode: CalibMode,
    /// Disable to run as a full-batch solver (nothing is ever marginalized).
    pub marginalization_enabled: bool,
    /// Diagonal information of the manifold factor rows
    /// `[walk (6 rows), m_p, m_r (2 rows)]`. Tuning values, not calibrated.
    pub manifold_weights: [f64; 3],
    /// Bootstrap prior stds.
    pub first_pose_prior_std: f64,
    pub xi_prior_std: [f64; 5],
    pub velocity_prior_std: f64,
    pub bias_prior_std: f64,
    pub manifold_prior_std: f64,
    pub min_triangulation_baseline: f64,
    /// Compute the smallest eigenvalue of the reduced normal matrix after
    /// each solve (diagnostics; costs an eigendecomposition per step).
    pub compute_spectrum: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            keyframe_translation_gate: 0.2,
            keyframe_rotation_gate: 3.0_f64.to_radians(),
            window_size: 10,
            max_iterations: 10,
            convergence_tol: 1e-9,
            lambda_init: 1e-8,
            lambda_min: 1e-9,
            lambda_max: 1e4,
            max_solver_rejects: 5,
            huber_enabled: true,
            use_imu: true,
            calib_mode: CalibMode::Full5,
            marginalization_enabled: true,
            manifold_weights: [1e2, 1e4, 1e4],
            first_pose_prior_std: 1e-6,
            xi_prior_std: [8e-2; 5],
            velocity_prior_std: 0.5,
            bias_prior_std: 0.1,
            manifold_prior_std: 1.0,
            min_triangulation_baseline: 0.05,
            compute_spectrum: false,
        }
    }
}

/// Keyframe gate: true iff the odometry prediction moved more than the
/// translation gate or rotated more than the rotation gate since the last
/// keyframe.
pub fn should_create_keyframe(last_kf_pose: &Pose, predicted: &Pose, cfg: &EstimatorConfig) -> bool {
    let dp = (predicted.position - last_kf_pose.position).norm();
    let dr = predicted.rotation.attitude_error(&last_kf_pose.rotation).norm();
    dp > cfg.keyframe_translation_gate || dr > cfg.keyframe_rotation_gate
}

/// Measurements attached to one new keyframe.
pub struct KeyframeInput<'a> {
    pub t: f64,
    pub features: &'a [FeatureObservation],
    /// Encoder samples covering `[previous keyframe, t]`.
    pub encoders: &'a [EncoderReading],
    /// IMU samples covering the same interval (ignored without IMU).
    pub imu: &'a [ImuReading],
}

/// Initial state for the first keyframe.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub xi: KinematicParams,
    pub manifold: [f64; 6],
}

/// Per-step output record.
#[derive(Debug, Clone)]
pub struct StepSummary {
    pub seq: u64,
    pub t: f64,
    pub pose: Pose,
    pub xi: KinematicParams,
    /// Marginal stds of the ξ elements (zeros for frozen entries).
    pub xi_std: [f64; 5],
    /// Marginal covariance of the ξ error state, row-major 5×5 (frozen
    /// entries zero).
    pub xi_cov: [f64; 25],
    pub stats: Option<SolveStats>,
}

#[derive(Debug, Clone, Default)]
struct Track {
    observations: Vec<(u64, Vector2<f64>)>,
    position: Option<Vector3<f64>>,
}

/// The sliding-window estimator.
pub struct SlidingWindowEstimator {
    pub cfg: EstimatorConfig,
    pub noise: NoiseConfig,
    rig: SensorRig,
    values: WindowValues,
    keyframes: Vec<(u64, f64)>,
    prior: PriorFactor,
    live_factors: Vec<Factor>,
    tracks: BTreeMap<u64, Track>,
    next_seq: u64,
}

impl SlidingWindowEstimator {
    pub fn new(cfg: EstimatorConfig, noise: NoiseConfig, rig: SensorRig) -> Self {
        let xi_dof = cfg.calib_mode.xi_dof();
        SlidingWindowEstimator {
            cfg,
            noise,
            rig,
            values: WindowValues { xi_dof, ..Default::default() },
            keyframes: Vec::new(),
            prior: PriorFactor {
                keys: Vec::new(),
                lin: Vec::new(),
                information: DMatrix::zeros(0, 0),
                gradient: DVector::zeros(0),
            },
            live_factors: Vec::new(),
            tracks: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    /// `(sequence, timestamp)` of the keyframes currently in the window.
    pub fn keyframes(&self) -> &[(u64, f64)] {
        &self.keyframes
    }

    pub fn latest_pose(&self) -> Option<&Pose> {
        self.keyframes.last().map(|(s, _)| self.values.pose(*s))
    }

    pub fn latest_xi(&self) -> Option<&KinematicParams> {
        self.keyframes.last().map(|(s, _)| self.values.xi(*s))
    }

    pub fn values(&self) -> &WindowValues {
        &self.values
    }

    pub fn prior(&self) -> &PriorFactor {
        &self.prior
    }

    fn visual_params(&self) -> VisualParams {
        VisualParams {
            information: 1.0 / (self.noise.sigma_pixel * self.noise.sigma_pixel),
            huber_delta: if self.cfg.huber_enabled { Some(1.345) } else { None },
            extrinsics_oc: self.rig.extrinsics_oc,
        }
    }

    /// Creates the first keyframe and its bootstrap priors.
    pub fn bootstrap(&mut self, boot: &Bootstrap, input: &KeyframeInput) -> Result<StepSummary> {
        if !self.keyframes.is_empty() {
            return Err(Error::Precondition("estimator already bootstrapped".into()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.keyframes.push((seq, input.t));
        self.values.poses.push((seq, boot.pose));
        self.values.manifolds.push((seq, boot.manifold));
        self.values.xis.push((seq, boot.xi));
        if self.cfg.use_imu {
            let mut sb = SpeedBias::zeros();
            sb.fixed_rows_mut::<3>(0).copy_from(&boot.velocity);
            self.values.speed_biases.push((seq, sb));
        }
        self.ingest_features(seq, input.features);

        // Bootstrap prior: a hard anchor on the first pose (gauge fixing)
        // plus soft priors on the remaining blocks.
        let mut keys = vec![BlockKey::Pose(seq)];
        if self.cfg.use_imu {
            keys.push(BlockKey::SpeedBias(seq));
        }
        keys.push(BlockKey::Manifold(seq));
        if self.values.xi_dof > 0 {
            keys.push(BlockKey::Xi(seq));
        }
        let dim: usize = keys.iter().map(|k| self.values.block_dim(k)).sum();
        let mut info = DMatrix::zeros(dim, dim);
        let mut off = 0;
        for key in &keys {
            let d = self.values.block_dim(key);
            match key {
                BlockKey::Pose(_) => {
                    let w = 1.0 / (self.cfg.first_pose_prior_std * self.cfg.first_pose_prior_std);
                    for i in 0..d {
                        info[(off + i, off + i)] = w;
                    }
                }
                BlockKey::SpeedBias(_) => {
                    let wv = 1.0 / (self.cfg.velocity_prior_std * self.cfg.velocity_prior_std);
                    let wb = 1.0 / (self.cfg.bias_prior_std * self.cfg.bias_prior_std);
                    for i in 0..3 {
                        info[(off + i, off + i)] = wv;
                        info[(off + 3 + i, off + 3 + i)] = wb;
                        info[(off + 6 + i, off + 6 + i)] = wb;
                    }
                }
                BlockKey::Manifold(_) => {
                    let w = 1.0 / (self.cfg.manifold_prior_std * self.cfg.manifold_prior_std);
                    for i in 0..d {
                        info[(off + i, off + i)] = w;
                    }
                }
                BlockKey::Xi(_) => {
                    for i in 0..d {
                        let s = self.cfg.xi_prior_std[i];
                        info[(off + i, off + i)] = 1.0 / (s * s);
                    }
                }
            }
            off += d;
        }
        let lin = keys.iter().map(|k| self.values.value(k)).collect();
        self.prior = PriorFactor { keys, lin, information: info, gradient: DVector::zeros(dim) };

        let xi_std = self.prior_xi_std();
        let mut xi_cov = [0.0; 25];
        for i in 0..5 {
            xi_cov[5 * i + i] = xi_std[i] * xi_std[i];
        }
        Ok(StepSummary {
            seq,
            t: input.t,
            pose: boot.pose,
            xi: boot.xi,
            xi_std,
            xi_cov,
            stats: None,
        })
    }

    fn prior_xi_std(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for i in 0..self.values.xi_dof {
            out[i] = self.cfg.xi_prior_std[i];
        }
        out
    }

    fn ingest_features(&mut self, seq: u64, features: &[FeatureObservation]) {
        for f in features {
            let track = self.tracks.entry(f.landmark_id).or_default();
            track.observations.push((seq, Vector2::new(f.uv[0], f.uv[1])));
        }
    }

    /// Predicts the pose at `t` by integrating encoders from the newest
    /// keyframe (the input to the keyframe gate).
    pub fn predict_pose(&self, t: f64, encoders: &[EncoderReading]) -> Result<Pose> {
        let (seq, t_prev) = *self
            .keyframes
            .last()
            .ok_or_else(|| Error::Precondition("estimator not bootstrapped".into()))?;
        let state = OdometryState::new(*self.values.pose(seq), *self.values.xi(seq));
        Ok(propagate_odometry(&state, encoders, t_prev, t, &self.noise)?.predicted.pose)
    }

    /// Appends a keyframe, solves the window, marginalizes.
    pub fn step(&mut self, input: &KeyframeInput) -> Result<StepSummary> {
        let (prev_seq, prev_t) = *self
            .keyframes
            .last()
            .ok_or_else(|| Error::Precondition("bootstrap the estimator first".into()))?;

        // Odometry propagation from the previous keyframe.
        let state_prev = OdometryState::new(*self.values.pose(prev_seq), *self.values.xi(prev_seq));
        let prop = propagate_odometry(&state_prev, input.encoders, prev_t, input.t, &self.noise)?;

        let seq = self.next_seq;
        self.next_seq += 1;
        self.keyframes.push((seq, input.t));
        self.values.poses.push((seq, prop.predicted.pose));
        let xi_prev_val = *self.values.xi(prev_seq);
        self.values.xis.push((seq, xi_prev_val));
        let m_prev_val = *self.values.manifold(prev_seq);
        self.values.manifolds.push((seq, m_prev_val));

        // Odometer-induced kinematic factor, information conditioned on the
        // frozen ξ directions.
        let xi_dof = self.values.xi_dof;
        let dim = 6 + xi_dof;
        let full = prop.noise_information;
        let mut info = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                info[(r, c)] = full[(r, c)];
            }
        }
        self.live_factors.push(Factor::Odometry(OdometryFactor {
            prev_pose: prev_seq,
            next_pose: seq,
            prev_xi: prev_seq,
            next_xi: seq,
            encoders: input.encoders.to_vec(),
            t_start: prev_t,
            t_end: input.t,
            information: info,
            noise: self.noise,
        }));

        if self.cfg.use_imu {
            let sb_prev = *self.values.speed_bias(prev_seq);
            let bias = nalgebra::SVector::<f64, 6>::from_iterator(sb_prev.iter().skip(3).cloned());
            let preint = propagation::imu_preintegrate(input.imu, &bias, &self.noise)?;
            let dt = preint.duration;
            let rot_imu_prev = self
                .values
                .pose(prev_seq)
                .compose(&self.rig.extrinsics_oi)
                .rotation;
            let mut sb_new = sb_prev;
            let v_new = Vector3::new(sb_prev[0], sb_prev[1], sb_prev[2])
                + self.rig.gravity * dt
                + rot_imu_prev.rotate(&preint.delta_velocity);
            sb_new.fixed_rows_mut::<3>(0).copy_from(&v_new);
            self.values.speed_biases.push((seq, sb_new));

            let info = propagation::floored_inverse_dyn(
                &DMatrix::from_iterator(15, 15, preint.covariance.iter().cloned()),
                propagation::INFORMATION_EIGENVALUE_FLOOR,
            );
            self.live_factors.push(Factor::Imu(ImuFactor {
                prev_pose: prev_seq,
                next_pose: seq,
                prev_sb: prev_seq,
                next_sb: seq,
                preint,
                information: info,
                gravity: self.rig.gravity,
                extrinsics_oi: self.rig.extrinsics_oi,
            }));
        }

        // Manifold constraint for the new keyframe.
        let mut m_info = DMatrix::zeros(9, 9);
        for i in 0..6 {
            m_info[(i, i)] = self.cfg.manifold_weights[0];
        }
        m_info[(6, 6)] = self.cfg.manifold_weights[1];
        m_info[(7, 7)] = self.cfg.manifold_weights[2];
        m_info[(8, 8)] = self.cfg.manifold_weights[2];
        self.live_factors.push(Factor::Manifold(ManifoldFactor {
            pose: seq,
            m_new: seq,
            m_prev: prev_seq,
            information: m_info,
        }));

        self.ingest_features(seq, input.features);

        // Active landmarks: triangulate fresh tracks, reuse refined ones.
        let mut landmarks = self.active_landmarks();

        let mut factors: Vec<Factor> = vec![Factor::Prior(self.prior.clone())];
        factors.extend(std::mem::take(&mut self.live_factors));

        let vp = self.visual_params();
        let stats = solve_window(&mut self.values, &factors, &mut landmarks, &vp, &self.cfg)?;

        // Persist refined landmark estimates.
        for lm in &landmarks {
            if let Some(track) = self.tracks.get_mut(&lm.landmark_id) {
                track.position = Some(lm.position);
            }
        }

        let (xi_std, xi_cov) = self.marginal_xi_std(&factors, &landmarks, &vp, seq)?;

        // Restore live factors (without the prior).
        self.live_factors = factors
            .into_iter()
            .filter(|f| !matches!(f, Factor::Prior(_)))
            .collect();

        if self.cfg.marginalization_enabled {
            self.marginalize_step()?;
        }

        Ok(StepSummary {
            seq,
            t: input.t,
            pose: *self.values.pose(seq),
            xi: *self.values.xi(seq),
            xi_std,
            xi_cov,
            stats: Some(stats),
        })
    }

    /// Snapshot of the current window problem (prior + live factors, active
    /// landmark blocks, and visual weighting) for external solver oracles.
    pub fn snapshot_problem(&mut self) -> (Vec<Factor>, Vec<LandmarkBlock>, VisualParams) {
        let landmarks = self.active_landmarks();
        let mut factors: Vec<Factor> = vec![Factor::Prior(self.prior.clone())];
        for f in &self.live_factors {
            factors.push(match f {
                Factor::Prior(p) => Factor::Prior(p.clone()),
                Factor::Odometry(o) => Factor::Odometry(OdometryFactor {
                    prev_pose: o.prev_pose,
                    next_pose: o.next_pose,
                    prev_xi: o.prev_xi,
                    next_xi: o.next_xi,
                    encoders: o.encoders.clone(),
                    t_start: o.t_start,
                    t_end: o.t_end,
                    information: o.information.clone(),
                    noise: o.noise,
                }),
                Factor::Imu(i) => Factor::Imu(ImuFactor {
                    prev_pose: i.prev_pose,
                    next_pose: i.next_pose,
                    prev_sb: i.prev_sb,
                    next_sb: i.next_sb,
                    preint: i.preint.clone(),
                    information: i.information.clone(),
                    gravity: i.gravity,
                    extrinsics_oi: i.extrinsics_oi,
                }),
                Factor::Manifold(m) => Factor::Manifold(ManifoldFactor {
                    pose: m.pose,
                    m_new: m.m_new,
                    m_prev: m.m_prev,
                    information: m.information.clone(),
                }),
            });
        }
        (factors, landmarks, self.visual_params())
    }

    /// Re-solves the current window without adding a keyframe (used by the
    /// batch oracle to iterate to convergence).
    pub fn resolve(&mut self) -> Result<SolveStats> {
        let mut landmarks = self.active_landmarks();
        let mut factors: Vec<Factor> = vec![Factor::Prior(self.prior.clone())];
        factors.extend(std::mem::take(&mut self.live_factors));
        let vp = self.visual_params();
        let stats = solve_window(&mut self.values, &factors, &mut landmarks, &vp, &self.cfg)?;
        for lm in &landmarks {
            if let Some(track) = self.tracks.get_mut(&lm.landmark_id) {
                track.position = Some(lm.position);
            }
        }
        self.live_factors = factors
            .into_iter()
            .filter(|f| !matches!(f, Factor::Prior(_)))
            .collect();
        Ok(stats)
    }

    fn active_landmarks(&mut self) -> Vec<LandmarkBlock> {
        let window: Vec<u64> = self.keyframes.iter().map(|(s, _)| *s).collect();
        let mut out = Vec::new();
        let cam_ext = self.rig.extrinsics_oc;
        let min_baseline = self.cfg.min_triangulation_baseline;
        let sigma = self.noise.sigma_pixel;
        let values = &self.values;
        for (id, track) in self.tracks.iter_mut() {
            let obs: Vec<(u64, Vector2<f64>)> = track
                .observations
                .iter()
                .filter(|(s, _)| window.contains(s))
                .cloned()
                .collect();
            if obs.len() < 2 {
                continue;
            }
            let cams: Vec<Pose> =
                obs.iter().map(|(s, _)| values.pose(*s).compose(&cam_ext)).collect();
            if track.position.is_none() {
                let uvs: Vec<Vector2<f64>> = obs.iter().map(|(_, uv)| *uv).collect();
                match triangulate(&cams, &uvs, min_baseline, sigma) {
                    Ok(p) => track.position = Some(p),
                    Err(_) => continue,
                }
            }
            // Parallax gate: far points over short baselines make the
            // landmark normal equations nearly singular and destabilize the
            // Gauss-Newton steps; leave them tracked until the baseline
            // grows.
            let position = track.position.unwrap();
            let mut baseline = 0.0f64;
            for i in 0..cams.len() {
                for j in (i + 1)..cams.len() {
                    baseline = baseline.max((cams[i].position - cams[j].position).norm());
                }
            }
            let depth = cams
                .iter()
                .map(|c| (position - c.position).norm())
                .fold(f64::INFINITY, f64::min);
            if depth > 40.0 * baseline {
                continue;
            }
            out.push(LandmarkBlock { landmark_id: *id, position, observations: obs });
        }
        out
    }

    /// Marginal stds and covariance of the newest ξ block from the reduced
    /// normal matrix.
    fn marginal_xi_std(
        &self,
        factors: &[Factor],
        landmarks: &[LandmarkBlock],
        vp: &VisualParams,
        newest_seq: u64,
    ) -> Result<([f64; 5], [f64; 25])> {
        let mut std = [0.0; 5];
        let mut cov_out = [0.0; 25];
        if self.values.xi_dof == 0 {
            return Ok((std, cov_out));
        }
        let cov = solve::marginal_covariance(
            &self.values,
            factors,
            landmarks,
            vp,
            &BlockKey::Xi(newest_seq),
        )?;
        for i in 0..self.values.xi_dof {
            std[i] = cov[(i, i)].max(0.0).sqrt();
            for j in 0..self.values.xi_dof {
                cov_out[5 * i + j] = cov[(i, j)];
            }
        }
        Ok((std, cov_out))
    }

    /// Folds every live factor (they all touch the outgoing generations)
    /// plus the visual tracks seen by the departing keyframe into the prior,
    /// then drops the marginalized blocks.
    fn marginalize_step(&mut self) -> Result<()> {
        let drop_pose = if self.keyframes.len() > self.cfg.window_size {
            Some(self.keyframes[0].0)
        } else {
            None
        };
        let prev_gen = self.keyframes[self.keyframes.len() - 2].0;

        let mut marg_keys = Vec::new();
        if let Some(p0) = drop_pose {
            marg_keys.push(BlockKey::Pose(p0));
        }
        if self.cfg.use_imu {
            marg_keys.push(BlockKey::SpeedBias(prev_gen));
        }
        marg_keys.push(BlockKey::Manifold(prev_gen));
        if self.values.xi_dof > 0 {
            marg_keys.push(BlockKey::Xi(prev_gen));
        }

        // Retiring tracks: triangulated tracks observed by the dropped pose.
        let mut retiring: Vec<LandmarkBlock> = Vec::new();
        if let Some(p0) = drop_pose {
            let window: Vec<u64> = self.keyframes.iter().map(|(s, _)| *s).collect();
            for (id, track) in &self.tracks {
                if track.position.is_some()
                    && track.observations.iter().any(|(s, _)| *s == p0)
                    && track.observations.iter().filter(|(s, _)| window.contains(s)).count() >= 2
                {
                    retiring.push(LandmarkBlock {
                        landmark_id: *id,
                        position: track.position.unwrap(),
                        observations: track
                            .observations
                            .iter()
                            .filter(|(s, _)| window.contains(s))
                            .cloned()
                            .collect(),
                    });
                }
            }
        }

        // Fold layout: all window blocks, then one 3-dim block per retiring
        // landmark appended at the end.
        let keys = solve::collect_keys(&self.values);
        let layout = factors::BlockLayout::build(&keys, &self.values);
        let n_lm = retiring.len() * 3;
        let n = layout.total + n_lm;
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);

        {
            let mut h_top = DMatrix::zeros(layout.total, layout.total);
            let mut b_top = DVector::zeros(layout.total);
            solve::assemble_for_fold(
                &self.values,
                &self.prior,
                &self.live_factors,
                &layout,
                &mut h_top,
                &mut b_top,
            )?;
            h.view_mut((0, 0), (layout.total, layout.total)).copy_from(&h_top);
            b.rows_mut(0, layout.total).copy_from(&b_top);
        }

        // Visual factors of retiring tracks, with landmark columns appended.
        let vp = self.visual_params();
        for (lm_idx, lm) in retiring.iter().enumerate() {
            let lcol = layout.total + 3 * lm_idx;
            for (s, uv) in &lm.observations {
                let (po, _) = layout.offset(&BlockKey::Pose(*s));
                let Ok((r, j_pose, j_lm)) = visual_residual_jacobians(
                    self.values.pose(*s),
                    &lm.position,
                    uv,
                    &vp.extrinsics_oc,
                    lm.landmark_id,
                ) else {
                    continue;
                };
                let chi = (r.norm_squared() * vp.information).sqrt();
                let w = vp.information * factors::huber_weight(chi, vp.huber_delta);
                let hpp = j_pose.transpose() * j_pose * w;
                let hpl = j_pose.transpose() * j_lm * w;
                let hll = j_lm.transpose() * j_lm * w;
                let gp = -j_pose.transpose() * r * w;
                let gl = -j_lm.transpose() * r * w;
                for a in 0..6 {
                    b[po + a] += gp[a];
                    for c in 0..6 {
                        h[(po + a, po + c)] += hpp[(a, c)];
                    }
                    for c in 0..3 {
                        h[(po + a, lcol + c)] += hpl[(a, c)];
                        h[(lcol + c, po + a)] += hpl[(a, c)];
                    }
                }
                for a in 0..3 {
                    b[lcol + a] += gl[a];
                    for c in 0..3 {
                        h[(lcol + a, lcol + c)] += hll[(a, c)];
                    }
                }
            }
        }
        // The scatter helpers accumulate -∇ into b; marginalize() expects +∇.
        let grad = -b;

        // Scalar indices to marginalize: marg blocks + all landmark columns.
        let mut idx = Vec::new();
        for key in &marg_keys {
            let (off, dim) = layout.offset(key);
            idx.extend(off..off + dim);
        }
        idx.extend(layout.total..n);

        let marg = marginalize(&h, &grad, &idx)?;

        // Remaining keys, in layout order.
        let kept: Vec<BlockKey> = layout
            .entries
            .iter()
            .filter(|(k, _, d)| !marg_keys.contains(k) && *d > 0)
            .map(|(k, _, _)| *k)
            .collect();
        let lin = kept.iter().map(|k| self.values.value(k)).collect();
        self.prior = PriorFactor {
            keys: kept,
            lin,
            information: marg.information,
            gradient: marg.gradient,
        };

        // Drop marginalized blocks and stale tracks.
        for key in &marg_keys {
            match key {
                BlockKey::Pose(s) => {
                    self.values.poses.retain(|(q, _)| q != s);
                    self.keyframes.retain(|(q, _)| q != s);
                }
                BlockKey::SpeedBias(s) => self.values.speed_biases.retain(|(q, _)| q != s),
                BlockKey::Manifold(s) => self.values.manifolds.retain(|(q, _)| q != s),
                BlockKey::Xi(s) => self.values.xis.retain(|(q, _)| q != s),
            }
        }
        // Fixed-mode ξ blocks are not part of the layout; still prune the
        // stale generation so the window state stays bounded.
        if self.values.xi_dof == 0 {
            self.values.xis.retain(|(q, _)| *q != prev_gen);
        }
        if !self.cfg.use_imu {
            self.values.speed_biases.retain(|(q, _)| *q != prev_gen);
        }

        if let Some(p0) = drop_pose {
            let retired_ids: Vec<u64> = retiring.iter().map(|l| l.landmark_id).collect();
            for id in &retired_ids {
                self.tracks.remove(id);
            }
            for track in self.tracks.values_mut() {
                track.observations.retain(|(s, _)| *s != p0);
            }
            self.tracks.retain(|_, t| !t.observations.is_empty());
        }
        // All live factors were folded into the prior.
        self.live_factors.clear();
        Ok(())
    }
}
