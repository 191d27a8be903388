//! Residuals and analytic Jacobians for the five factor kinds.
//!
//! Every Jacobian here is the exact first-order derivative of the coded
//! residual (including the quaternion boxminus and the odometry integrator),
//! which is what lets the finite-difference test suite hold them to 1e-5.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::error::Error;
use crate::geom::{attitude_error_jacobians, skew, Pose};
use crate::kinematics::{EncoderReading, KinematicParams};
use crate::propagation::{
    self, propagate_odometry, ImuPreintegration, NoiseConfig, OdometryState, SpeedBias,
};
use crate::simulate::ManifoldParams;
use crate::Result;

/// Stable identity of a state block in the sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockKey {
    /// Keyframe pose, by keyframe sequence number (6 error dims).
    Pose(u64),
    /// IMU speed/bias attached to a keyframe (9 dims).
    SpeedBias(u64),
    /// Motion-manifold coefficients for a window generation (6 dims).
    Manifold(u64),
    /// Kinematic parameters for a window generation (5, 3 or 0 error dims).
    Xi(u64),
}

/// Value of a block at some linearization point.
#[derive(Debug, Clone, Copy)]
pub enum BlockValue {
    Pose(Pose),
    SpeedBias(SpeedBias),
    Manifold([f64; 6]),
    Xi(KinematicParams),
}

impl BlockValue {
    /// Error `self ⊟ other` in the block's tangent space, truncated to `dim`.
    pub fn boxminus(&self, other: &BlockValue, dim: usize) -> DVector<f64> {
        match (self, other) {
            (BlockValue::Pose(a), BlockValue::Pose(b)) => {
                DVector::from_column_slice(crate::geom::boxminus(a, b).as_slice())
            }
            (BlockValue::SpeedBias(a), BlockValue::SpeedBias(b)) => {
                DVector::from_column_slice((a - b).as_slice())
            }
            (BlockValue::Manifold(a), BlockValue::Manifold(b)) => {
                DVector::from_iterator(6, a.iter().zip(b).map(|(x, y)| x - y))
            }
            (BlockValue::Xi(a), BlockValue::Xi(b)) => {
                let av = a.as_array();
                let bv = b.as_array();
                DVector::from_iterator(dim, (0..dim).map(|i| av[i] - bv[i]))
            }
            _ => panic!("mismatched block kinds"),
        }
    }

    pub fn boxplus(&self, delta: &[f64]) -> BlockValue {
        match self {
            BlockValue::Pose(p) => {
                let mut d = SVector::<f64, 6>::zeros();
                d.copy_from_slice(delta);
                BlockValue::Pose(crate::geom::boxplus(p, &d))
            }
            BlockValue::SpeedBias(v) => {
                let mut out = *v;
                for (i, d) in delta.iter().enumerate() {
                    out[i] += d;
                }
                BlockValue::SpeedBias(out)
            }
            BlockValue::Manifold(m) => {
                let mut out = *m;
                for (i, d) in delta.iter().enumerate() {
                    out[i] += d;
                }
                BlockValue::Manifold(out)
            }
            BlockValue::Xi(x) => {
                let mut arr = x.as_array();
                for (i, d) in delta.iter().enumerate() {
                    arr[i] += d;
                }
                BlockValue::Xi(KinematicParams::from_array(arr))
            }
        }
    }
}

/// Current estimates of every block active in the window.
#[derive(Debug, Clone, Default)]
pub struct WindowValues {
    pub poses: Vec<(u64, Pose)>,
    pub speed_biases: Vec<(u64, SpeedBias)>,
    pub manifolds: Vec<(u64, [f64; 6])>,
    pub xis: Vec<(u64, KinematicParams)>,
    /// Estimated ξ error dimensions: 5 (full), 3 (ICR only), or 0 (frozen).
    pub xi_dof: usize,
}

impl WindowValues {
    pub fn pose(&self, seq: u64) -> &Pose {
        &self.poses.iter().find(|(s, _)| *s == seq).expect("missing pose").1
    }
    pub fn speed_bias(&self, seq: u64) -> &SpeedBias {
        &self
            .speed_biases
            .iter()
            .find(|(s, _)| *s == seq)
            .expect("missing speed/bias")
            .1
    }
    pub fn manifold(&self, seq: u64) -> &[f64; 6] {
        &self.manifolds.iter().find(|(s, _)| *s == seq).expect("missing manifold").1
    }
    pub fn xi(&self, seq: u64) -> &KinematicParams {
        &self.xis.iter().find(|(s, _)| *s == seq).expect("missing xi").1
    }

    pub fn value(&self, key: &BlockKey) -> BlockValue {
        match key {
            BlockKey::Pose(s) => BlockValue::Pose(*self.pose(*s)),
            BlockKey::SpeedBias(s) => BlockValue::SpeedBias(*self.speed_bias(*s)),
            BlockKey::Manifold(s) => BlockValue::Manifold(*self.manifold(*s)),
            BlockKey::Xi(s) => BlockValue::Xi(*self.xi(*s)),
        }
    }

    pub fn set_value(&mut self, key: &BlockKey, value: BlockValue) {
        match (key, value) {
            (BlockKey::Pose(s), BlockValue::Pose(v)) => {
                self.poses.iter_mut().find(|(q, _)| q == s).expect("pose").1 = v;
            }
            (BlockKey::SpeedBias(s), BlockValue::SpeedBias(v)) => {
                self.speed_biases.iter_mut().find(|(q, _)| q == s).expect("sb").1 = v;
            }
            (BlockKey::Manifold(s), BlockValue::Manifold(v)) => {
                self.manifolds.iter_mut().find(|(q, _)| q == s).expect("m").1 = v;
            }
            (BlockKey::Xi(s), BlockValue::Xi(v)) => {
                self.xis.iter_mut().find(|(q, _)| q == s).expect("xi").1 = v;
            }
            _ => panic!("mismatched block kinds"),
        }
    }

    pub fn block_dim(&self, key: &BlockKey) -> usize {
        match key {
            BlockKey::Pose(_) => 6,
            BlockKey::SpeedBias(_) => 9,
            BlockKey::Manifold(_) => 6,
            BlockKey::Xi(_) => self.xi_dof,
        }
    }
}

/// Dense column layout over a set of blocks.
#[derive(Debug, Clone, Default)]
pub struct BlockLayout {
    pub entries: Vec<(BlockKey, usize, usize)>,
    pub total: usize,
}

impl BlockLayout {
    pub fn build(keys: &[BlockKey], values: &WindowValues) -> BlockLayout {
        let mut entries = Vec::with_capacity(keys.len());
        let mut off = 0;
        for k in keys {
            let dim = values.block_dim(k);
            entries.push((*k, off, dim));
            off += dim;
        }
        BlockLayout { entries, total: off }
    }

    pub fn find(&self, key: &BlockKey) -> Option<(usize, usize)> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, o, d)| (*o, *d))
    }

    pub fn offset(&self, key: &BlockKey) -> (usize, usize) {
        self.find(key).expect("block not in layout")
    }
}

/// One linearized factor: residual, per-key Jacobians, information.
pub struct FactorLin {
    pub keys: Vec<BlockKey>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub residual: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl FactorLin {
    pub fn cost(&self) -> f64 {
        0.5 * (self.residual.transpose() * &self.information * &self.residual)[(0, 0)]
    }
}

/// Marginalization prior `½‖x ⊟ x̂‖²_Λ + gᵀ(x ⊟ x̂)`.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub keys: Vec<BlockKey>,
    pub lin: Vec<BlockValue>,
    pub information: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl PriorFactor {
    pub fn dim(&self, values: &WindowValues) -> usize {
        self.keys.iter().map(|k| values.block_dim(k)).sum()
    }

    pub fn error(&self, values: &WindowValues) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim(values));
        let mut off = 0;
        for (key, lin) in self.keys.iter().zip(&self.lin) {
            let dim = values.block_dim(key);
            let e = values.value(key).boxminus(lin, dim);
            d.rows_mut(off, dim).copy_from(&e);
            off += dim;
        }
        d
    }

    pub fn cost(&self, values: &WindowValues) -> f64 {
        let d = self.error(values);
        0.5 * (d.transpose() * &self.information * &d)[(0, 0)] + self.gradient.dot(&d)
    }
}

/// Odometer-induced kinematic constraint between consecutive keyframes.
pub struct OdometryFactor {
    pub prev_pose: u64,
    pub next_pose: u64,
    pub prev_xi: u64,
    pub next_xi: u64,
    pub encoders: Vec<EncoderReading>,
    pub t_start: f64,
    pub t_end: f64,
    /// Λ_O reduced to the estimated dimensions (6 + xi_dof).
    pub information: DMatrix<f64>,
    pub noise: NoiseConfig,
}

impl OdometryFactor {
    /// Residual dimension given the ξ mode.
    pub fn dim(&self, xi_dof: usize) -> usize {
        6 + xi_dof
    }

    pub fn linearize(&self, values: &WindowValues) -> Result<FactorLin> {
        let xi_dof = values.xi_dof;
        let state_prev = OdometryState::new(*values.pose(self.prev_pose), *values.xi(self.prev_xi));
        let prop = propagate_odometry(&state_prev, &self.encoders, self.t_start, self.t_end, &self.noise)?;
        let state_next = OdometryState::new(*values.pose(self.next_pose), *values.xi(self.next_xi));
        let full_res = propagation::odometry_factor_residual(&state_next, &state_prev, &prop);

        let dim = self.dim(xi_dof);
        let mut residual = DVector::zeros(dim);
        for i in 0..6 {
            residual[i] = full_res[i];
        }
        for i in 0..xi_dof {
            residual[6 + i] = full_res[6 + i];
        }

        // Boxminus Jacobians of the rotation block.
        let jac_rot =
            attitude_error_jacobians(&state_next.pose.rotation, &prop.predicted.pose.rotation);
        let phi = prop.jacobian_wrt_prev;

        // d r / d δx_next.
        let mut j_next_pose = DMatrix::zeros(dim, 6);
        j_next_pose.view_mut((0, 0), (3, 3)).copy_from(&jac_rot.wrt_a);
        j_next_pose.view_mut((3, 3), (3, 3)).copy_from(&Matrix3::identity());
        let mut j_next_xi = DMatrix::zeros(dim, xi_dof);
        for i in 0..xi_dof {
            j_next_xi[(6 + i, i)] = 1.0;
        }

        // d r / d δx_prev = [d r / d δx_pred] · Φ, sliced to estimated dims.
        let mut dr_dpred = DMatrix::zeros(dim, 11);
        dr_dpred.view_mut((0, 0), (3, 3)).copy_from(&jac_rot.wrt_b);
        for i in 0..3 {
            dr_dpred[(3 + i, 3 + i)] = -1.0;
        }
        for i in 0..xi_dof {
            dr_dpred[(6 + i, 6 + i)] = -1.0;
        }
        let phi_dyn = DMatrix::from_iterator(11, 11, phi.iter().cloned());
        let dr_dprev_full = &dr_dpred * &phi_dyn;
        let mut j_prev_pose = DMatrix::zeros(dim, 6);
        j_prev_pose.copy_from(&dr_dprev_full.view((0, 0), (dim, 6)));
        let mut j_prev_xi = DMatrix::zeros(dim, xi_dof);
        j_prev_xi.copy_from(&dr_dprev_full.view((0, 6), (dim, xi_dof)));

        let mut keys = vec![BlockKey::Pose(self.prev_pose), BlockKey::Pose(self.next_pose)];
        let mut jacobians = vec![j_prev_pose, j_next_pose];
        if xi_dof > 0 {
            keys.push(BlockKey::Xi(self.prev_xi));
            jacobians.push(j_prev_xi);
            keys.push(BlockKey::Xi(self.next_xi));
            jacobians.push(j_next_xi);
        }
        Ok(FactorLin { keys, jacobians, residual, information: self.information.clone() })
    }
}

/// Preintegrated IMU constraint between consecutive keyframes.
pub struct ImuFactor {
    pub prev_pose: u64,
    pub next_pose: u64,
    pub prev_sb: u64,
    pub next_sb: u64,
    pub preint: ImuPreintegration,
    pub information: DMatrix<f64>,
    pub gravity: Vector3<f64>,
    pub extrinsics_oi: Pose,
}

impl ImuFactor {
    pub fn linearize(&self, values: &WindowValues) -> FactorLin {
        let pose1 = values.pose(self.prev_pose);
        let pose2 = values.pose(self.next_pose);
        let sb1 = values.speed_bias(self.prev_sb);
        let sb2 = values.speed_bias(self.next_sb);
        let res = propagation::imu_factor_residual(
            pose2,
            pose1,
            sb2,
            sb1,
            &self.preint,
            &self.gravity,
            &self.extrinsics_oi,
        );
        let dt = self.preint.duration;
        let r_oi = self.extrinsics_oi.rotation.matrix();
        let r1 = pose1.rotation.matrix();
        let r2 = pose2.rotation.matrix();
        let imu1 = pose1.compose(&self.extrinsics_oi);
        let imu2 = pose2.compose(&self.extrinsics_oi);
        let r1i_t = imu1.rotation.matrix().transpose();

        let v1 = Vector3::new(sb1[0], sb1[1], sb1[2]);
        let v2 = Vector3::new(sb2[0], sb2[1], sb2[2]);
        let bw1 = Vector3::new(sb1[6], sb1[7], sb1[8]);
        let dbw = bw1
            - Vector3::new(
                self.preint.bias_linearization_point[3],
                self.preint.bias_linearization_point[4],
                self.preint.bias_linearization_point[5],
            );

        let corrected_rot = self
            .preint
            .delta_rotation
            .apply_attitude_error(&(self.preint.j_theta_bw * dbw));
        let rel_rot = imu1.rotation.inverse().compose(&imu2.rotation);
        let jac_rot = attitude_error_jacobians(&rel_rot, &corrected_rot);
        let rel_mat = rel_rot.matrix();

        let dv_g = v2 - v1 - self.gravity * dt;
        let dp_g = imu2.position - imu1.position - v1 * dt - self.gravity * (0.5 * dt * dt);

        let mut j_pose1 = DMatrix::zeros(15, 6);
        let mut j_pose2 = DMatrix::zeros(15, 6);
        let mut j_sb1 = DMatrix::zeros(15, 9);
        let mut j_sb2 = DMatrix::zeros(15, 9);

        // rθ rows. The bias correction applies the quaternion [1, Jδb/2], so
        // its exact derivative at the current δb carries the normalization
        // chain (I - ⌊a⌋)/(1+|a|²) with a = J δb / 2.
        let drth_dth1 = jac_rot.wrt_a * (-rel_mat.transpose()) * r_oi.transpose();
        let drth_dth2 = jac_rot.wrt_a * r_oi.transpose();
        let a_half = self.preint.j_theta_bw * dbw * 0.5;
        let corr_chain = (Matrix3::identity() - skew(&a_half)) * self.preint.j_theta_bw
            / (1.0 + a_half.norm_squared());
        let drth_dbw = jac_rot.wrt_b * corr_chain;
        j_pose1.view_mut((0, 0), (3, 3)).copy_from(&drth_dth1);
        j_pose2.view_mut((0, 0), (3, 3)).copy_from(&drth_dth2);
        j_sb1.view_mut((0, 6), (3, 3)).copy_from(&drth_dbw);

        // rp rows (indices 3..6).
        let drp_dth1 = r_oi.transpose() * (skew(&(r1.transpose() * dp_g)) + skew(&self.extrinsics_oi.position));
        let drp_dth2 = -r1i_t * r2 * skew(&self.extrinsics_oi.position);
        j_pose1.view_mut((3, 0), (3, 3)).copy_from(&drp_dth1);
        j_pose1.view_mut((3, 3), (3, 3)).copy_from(&(-r1i_t));
        j_pose2.view_mut((3, 0), (3, 3)).copy_from(&drp_dth2);
        j_pose2.view_mut((3, 3), (3, 3)).copy_from(&r1i_t);
        j_sb1.view_mut((3, 0), (3, 3)).copy_from(&(-r1i_t * dt));
        j_sb1.view_mut((3, 3), (3, 3)).copy_from(&(-self.preint.j_p_ba));
        j_sb1.view_mut((3, 6), (3, 3)).copy_from(&(-self.preint.j_p_bw));

        // rv rows (indices 6..9).
        let drv_dth1 = r_oi.transpose() * skew(&(r1.transpose() * dv_g));
        j_pose1.view_mut((6, 0), (3, 3)).copy_from(&drv_dth1);
        j_sb1.view_mut((6, 0), (3, 3)).copy_from(&(-r1i_t));
        j_sb2.view_mut((6, 0), (3, 3)).copy_from(&r1i_t);
        j_sb1.view_mut((6, 3), (3, 3)).copy_from(&(-self.preint.j_v_ba));
        j_sb1.view_mut((6, 6), (3, 3)).copy_from(&(-self.preint.j_v_bw));

        // Bias rows.
        for i in 0..3 {
            j_sb2[(9 + i, 3 + i)] = 1.0;
            j_sb1[(9 + i, 3 + i)] = -1.0;
            j_sb2[(12 + i, 6 + i)] = 1.0;
            j_sb1[(12 + i, 6 + i)] = -1.0;
        }

        FactorLin {
            keys: vec![
                BlockKey::Pose(self.prev_pose),
                BlockKey::SpeedBias(self.prev_sb),
                BlockKey::Pose(self.next_pose),
                BlockKey::SpeedBias(self.next_sb),
            ],
            jacobians: vec![j_pose1, j_sb1, j_pose2, j_sb2],
            residual: DVector::from_column_slice(res.as_slice()),
            information: self.information.clone(),
        }
    }
}

/// Motion-manifold constraint `[m_k - m_{k-1}; m_p(p); m_r(R, p)]`.
pub struct ManifoldFactor {
    pub pose: u64,
    pub m_new: u64,
    pub m_prev: u64,
    pub information: DMatrix<f64>,
}

/// The 9-vector manifold residual for one keyframe.
pub fn manifold_residual(
    pose: &Pose,
    m: &ManifoldParams,
    m_prev: &ManifoldParams,
) -> SVector<f64, 9> {
    let mut r = SVector::<f64, 9>::zeros();
    for i in 0..6 {
        r[i] = m.m[i] - m_prev.m[i];
    }
    r[6] = m.m_p(&pose.position);
    let grad = m.gradient(&pose.position);
    let mr = skew(&pose.rotation.rotate(&Vector3::z())) * grad;
    r[7] = mr.x;
    r[8] = mr.y;
    r
}

/// Jacobians of [`manifold_residual`] w.r.t. `[δθ, δp]`, `δm`, `δm_prev`.
pub fn manifold_jacobians(
    pose: &Pose,
    m: &ManifoldParams,
) -> (SMatrix<f64, 9, 6>, SMatrix<f64, 9, 6>, SMatrix<f64, 9, 6>) {
    let p = pose.position;
    let grad = m.gradient(&p);
    let rz = pose.rotation.rotate(&Vector3::z());
    let r_mat = pose.rotation.matrix();

    let mut j_pose = SMatrix::<f64, 9, 6>::zeros();
    // m_p row: d/dδp = gradᵀ.
    j_pose.fixed_view_mut::<1, 3>(6, 3).copy_from(&grad.transpose());
    // m_r rows: d/dδθ = [⌊grad⌋ R ⌊e₃⌋]₁₂  (from δ(Re₃) = -R⌊e₃⌋δθ).
    let dmr_dtheta = skew(&grad) * r_mat * skew(&Vector3::z());
    j_pose.fixed_view_mut::<2, 3>(7, 0).copy_from(&dmr_dtheta.fixed_view::<2, 3>(0, 0));
    // m_r rows: d/dδp = ⌊Re₃⌋ · d grad/dp.
    let mut dgrad_dp = Matrix3::zeros();
    dgrad_dp[(0, 0)] = m.m[0];
    dgrad_dp[(0, 1)] = m.m[1];
    dgrad_dp[(1, 0)] = m.m[1];
    dgrad_dp[(1, 1)] = m.m[2];
    let dmr_dp = skew(&rz) * dgrad_dp;
    j_pose.fixed_view_mut::<2, 3>(7, 3).copy_from(&dmr_dp.fixed_view::<2, 3>(0, 0));

    let mut j_m = SMatrix::<f64, 9, 6>::zeros();
    for i in 0..6 {
        j_m[(i, i)] = 1.0;
    }
    // m_p row: [x²/2, xy, y²/2, x, y, 1].
    j_m[(6, 0)] = 0.5 * p.x * p.x;
    j_m[(6, 1)] = p.x * p.y;
    j_m[(6, 2)] = 0.5 * p.y * p.y;
    j_m[(6, 3)] = p.x;
    j_m[(6, 4)] = p.y;
    j_m[(6, 5)] = 1.0;
    // m_r rows via d grad/dm.
    let mut dgrad_dm = SMatrix::<f64, 3, 6>::zeros();
    dgrad_dm[(0, 0)] = p.x;
    dgrad_dm[(0, 1)] = p.y;
    dgrad_dm[(0, 3)] = 1.0;
    dgrad_dm[(1, 1)] = p.x;
    dgrad_dm[(1, 2)] = p.y;
    dgrad_dm[(1, 4)] = 1.0;
    let dmr_dm = skew(&rz) * dgrad_dm;
    j_m.fixed_view_mut::<2, 6>(7, 0).copy_from(&dmr_dm.fixed_view::<2, 6>(0, 0));

    let mut j_m_prev = SMatrix::<f64, 9, 6>::zeros();
    for i in 0..6 {
        j_m_prev[(i, i)] = -1.0;
    }

    (j_pose, j_m, j_m_prev)
}

impl ManifoldFactor {
    pub fn linearize(&self, values: &WindowValues) -> FactorLin {
        let pose = values.pose(self.pose);
        let m = ManifoldParams::new(*values.manifold(self.m_new));
        let m_prev = ManifoldParams::new(*values.manifold(self.m_prev));
        let r = manifold_residual(pose, &m, &m_prev);
        let (j_pose, j_m, j_m_prev) = manifold_jacobians(pose, &m);
        FactorLin {
            keys: vec![
                BlockKey::Pose(self.pose),
                BlockKey::Manifold(self.m_new),
                BlockKey::Manifold(self.m_prev),
            ],
            jacobians: vec![
                DMatrix::from_iterator(9, 6, j_pose.iter().cloned()),
                DMatrix::from_iterator(9, 6, j_m.iter().cloned()),
                DMatrix::from_iterator(9, 6, j_m_prev.iter().cloned()),
            ],
            residual: DVector::from_column_slice(r.as_slice()),
            information: self.information.clone(),
        }
    }
}

/// Non-visual factors of a window problem.
pub enum Factor {
    Prior(PriorFactor),
    Odometry(OdometryFactor),
    Imu(ImuFactor),
    Manifold(ManifoldFactor),
}

impl Factor {
    /// Keys this factor touches.
    pub fn keys(&self, xi_dof: usize) -> Vec<BlockKey> {
        match self {
            Factor::Prior(p) => p.keys.clone(),
            Factor::Odometry(f) => {
                let mut k = vec![BlockKey::Pose(f.prev_pose), BlockKey::Pose(f.next_pose)];
                if xi_dof > 0 {
                    k.push(BlockKey::Xi(f.prev_xi));
                    k.push(BlockKey::Xi(f.next_xi));
                }
                k
            }
            Factor::Imu(f) => vec![
                BlockKey::Pose(f.prev_pose),
                BlockKey::SpeedBias(f.prev_sb),
                BlockKey::Pose(f.next_pose),
                BlockKey::SpeedBias(f.next_sb),
            ],
            Factor::Manifold(f) => vec![
                BlockKey::Pose(f.pose),
                BlockKey::Manifold(f.m_new),
                BlockKey::Manifold(f.m_prev),
            ],
        }
    }
}

/// Visual reprojection residual `z - π(p_C)` in normalized coordinates.
///
/// Returns an error if the landmark is within 1 cm of (or behind) the image
/// plane, in which case the observation is dropped from the problem.
pub fn visual_residual(
    pose: &Pose,
    landmark: &Vector3<f64>,
    obs: &Vector2<f64>,
    extrinsics_oc: &Pose,
    landmark_id: u64,
) -> Result<Vector2<f64>> {
    let cam = pose.compose(extrinsics_oc);
    let p_c = cam.inverse().transform(landmark);
    if p_c.z <= 0.01 {
        return Err(Error::NegativeDepth { landmark: landmark_id, depth: p_c.z });
    }
    Ok(Vector2::new(obs.x - p_c.x / p_c.z, obs.y - p_c.y / p_c.z))
}

/// Residual plus Jacobians w.r.t. the pose `[δθ, δp]` and the landmark.
pub fn visual_residual_jacobians(
    pose: &Pose,
    landmark: &Vector3<f64>,
    obs: &Vector2<f64>,
    extrinsics_oc: &Pose,
    landmark_id: u64,
) -> Result<(Vector2<f64>, SMatrix<f64, 2, 6>, Matrix2x3<f64>)> {
    let cam = pose.compose(extrinsics_oc);
    let p_c = cam.inverse().transform(landmark);
    if p_c.z <= 0.01 {
        return Err(Error::NegativeDepth { landmark: landmark_id, depth: p_c.z });
    }
    let r = Vector2::new(obs.x - p_c.x / p_c.z, obs.y - p_c.y / p_c.z);

    let iz = 1.0 / p_c.z;
    // d π / d p_C.
    let proj = Matrix2x3::new(iz, 0.0, -p_c.x * iz * iz, 0.0, iz, -p_c.y * iz * iz);
    let r_oc_t = extrinsics_oc.rotation.matrix().transpose();
    let r_c_t = cam.rotation.matrix().transpose();
    // p_C = R_OCᵀ (R_Oᵀ (l - p_O) - p_OC).
    let y = pose.rotation.inverse_rotate(&(landmark - pose.position));
    let dpc_dtheta = r_oc_t * skew(&y);
    let dpc_dp = -r_c_t;
    let dpc_dl = r_c_t;

    let mut j_pose = SMatrix::<f64, 2, 6>::zeros();
    j_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-proj * dpc_dtheta));
    j_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-proj * dpc_dp));
    let j_lm = -proj * dpc_dl;
    Ok((r, j_pose, j_lm))
}

/// Linear (DLT) triangulation followed by Gauss-Newton refinement of the
/// reprojection error. `cameras` are camera-in-global poses.
pub fn triangulate(
    cameras: &[Pose],
    observations: &[Vector2<f64>],
    min_baseline: f64,
    sigma_pixel: f64,
) -> Result<Vector3<f64>> {
    if cameras.len() < 2 || cameras.len() != observations.len() {
        return Err(Error::Triangulation(format!(
            "need >= 2 paired views, got {} poses / {} observations",
            cameras.len(),
            observations.len()
        )));
    }
    let mut max_baseline = 0.0f64;
    for i in 0..cameras.len() {
        for j in (i + 1)..cameras.len() {
            max_baseline = max_baseline.max((cameras[i].position - cameras[j].position).norm());
        }
    }
    if max_baseline < min_baseline {
        return Err(Error::Triangulation(format!(
            "baseline {max_baseline:.4} m below minimum {min_baseline}"
        )));
    }

    // DLT: for each view, two rows of (u r3ᵀ - r1ᵀ)(X - c) = 0.
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (cam, uv) in cameras.iter().zip(observations) {
        let rt = cam.rotation.matrix().transpose();
        let r1 = rt.row(0).transpose();
        let r2 = rt.row(1).transpose();
        let r3 = rt.row(2).transpose();
        for (coord, row_axis) in [(uv.x, r1), (uv.y, r2)] {
            let a = coord * r3 - row_axis;
            let b = a.dot(&cam.position);
            ata += a * a.transpose();
            atb += a * b;
        }
    }
    let mut x = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Triangulation("degenerate DLT system".into()))?;

    // Gauss-Newton refinement on the reprojection error.
    for _ in 0..5 {
        let mut h = Matrix3::<f64>::zeros();
        let mut b = Vector3::<f64>::zeros();
        for (cam, uv) in cameras.iter().zip(observations) {
            let p_c = cam.inverse().transform(&x);
            if p_c.z <= 1e-6 {
                return Err(Error::Triangulation("refinement drove point behind camera".into()));
            }
            let iz = 1.0 / p_c.z;
            let proj = Matrix2x3::new(iz, 0.0, -p_c.x * iz * iz, 0.0, iz, -p_c.y * iz * iz);
            let j = -proj * cam.rotation.matrix().transpose();
            let r = Vector2::new(uv.x - p_c.x * iz, uv.y - p_c.y * iz);
            h += j.transpose() * j;
            b += -j.transpose() * r;
        }
        match h.cholesky() {
            Some(ch) => x += ch.solve(&b),
            None => break,
        }
    }

    // Acceptance gates.
    let mut rms = 0.0;
    for (cam, uv) in cameras.iter().zip(observations) {
        let p_c = cam.inverse().transform(&x);
        if p_c.z < 0.1 {
            return Err(Error::Triangulation(format!("depth {:.3} m below 0.1 m", p_c.z)));
        }
        let r = Vector2::new(uv.x - p_c.x / p_c.z, uv.y - p_c.y / p_c.z);
        rms += r.norm_squared();
    }
    rms = (rms / (2.0 * cameras.len() as f64)).sqrt();
    if rms > 3.0 * sigma_pixel {
        return Err(Error::Triangulation(format!(
            "reprojection rms {rms:.2e} above 3σ = {:.2e}",
            3.0 * sigma_pixel
        )));
    }
    Ok(x)
}

/// Huber weight on the whitened residual norm; `None` when disabled.
pub fn huber_weight(chi: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if chi > d => d / chi,
        _ => 1.0,
    }
}

/// Robust cost of a whitened squared norm under the same Huber kernel.
pub fn huber_cost(chi2: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) => {
            let chi = chi2.sqrt();
            if chi <= d {
                0.5 * chi2
            } else {
                d * chi - 0.5 * d * d
            }
        }
        None => 0.5 * chi2,
    }
}
