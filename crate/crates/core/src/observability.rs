//! Numerical observability analysis of the kinematic-calibration problem.
//!
//! From a noiseless motion we build the inferred measurements (yaw rate and
//! up-to-scale camera velocity), stack the constraint Jacobians into an
//! observability matrix for the chosen parameter set, and examine its rank
//! and nullspace. Degenerate motions are classified by signal tests, and the
//! analytically predicted kernel directions are matched against the
//! numerical kernel.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{skew, Pose};
use crate::kinematics::{self, KinematicParams};
use crate::simulate::{SensorRig, TrajectorySample};
use crate::Result;

/// Relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL_RATIO: f64 = 1e-8;

/// Kernel-membership gate for analytic direction matching (degrees).
pub const MATCH_ANGLE_DEG: f64 = 1.0;

/// A signal is "zero" if its largest magnitude is below this fraction of
/// the overall signal scale.
const ZERO_THRESHOLD: f64 = 1e-6;

/// A signal is "constant" if std/(|mean|+1e-6) is below this.
const CONSTANT_THRESHOLD: f64 = 1e-3;

/// Two signals are "proportional" if the relative residual of the 1-D
/// least-squares fit is below this.
const PROPORTIONAL_THRESHOLD: f64 = 1e-3;

/// One sample of the inferred measurements.
#[derive(Debug, Clone, Copy)]
pub struct InferredMotionSample {
    pub t: f64,
    /// Yaw component of the rotated inferred angular velocity.
    pub omega_breve: f64,
    /// Rotated inferred camera velocity (odometer frame).
    pub v_breve: Vector3<f64>,
    /// Camera-frame inferred velocity (for the extrinsic-rotation case).
    pub v_breve_c: Vector3<f64>,
    pub o_l: f64,
    pub o_r: f64,
}

/// The inferred-measurement stream the observability matrices are built from.
#[derive(Debug, Clone)]
pub struct InferredMotion {
    pub samples: Vec<InferredMotionSample>,
}

/// Parameter set variant under analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Camera + odometer, all five parameters plus the vision scale:
    /// `[Y_l, dY, X_v, beta_l, beta_r, s]`.
    Mono5,
    /// Camera + odometer, ICR parameters plus scale: `[Y_l, dY, X_v, s]`.
    Mono3,
    /// Camera + IMU + odometer: `[Y_l, dY, X_v, beta_l, beta_r]`.
    Vio5,
    /// Vio5 plus the camera-odometer extrinsic translation (8 columns).
    ExtP,
    /// Vio5 plus the extrinsic rotation error (8 columns).
    ExtTheta,
}

impl Variant {
    pub fn columns(&self) -> usize {
        match self {
            Variant::Mono5 => 6,
            Variant::Mono3 => 4,
            Variant::Vio5 => 5,
            Variant::ExtP | Variant::ExtTheta => 8,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Mono5 => "mono5",
            Variant::Mono3 => "mono3",
            Variant::Vio5 => "vio5",
            Variant::ExtP => "ext_p",
            Variant::ExtTheta => "ext_theta",
        }
    }
}

/// Linearization point for the observability matrices.
#[derive(Debug, Clone, Copy)]
pub struct ParamSet {
    pub variant: Variant,
    pub xi: KinematicParams,
    /// Vision scale factor `s` (1 with an IMU).
    pub scale: f64,
    /// Camera in odometer frame.
    pub extrinsics_oc: Pose,
}

impl ParamSet {
    pub fn beta_l(&self) -> f64 {
        self.xi.alpha_l / self.xi.delta_y()
    }
    pub fn beta_r(&self) -> f64 {
        self.xi.alpha_r / self.xi.delta_y()
    }
}

/// Degenerate-motion classes from the identifiability lemmas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyClass {
    ZeroOl,
    ZeroOr,
    ZeroOmega,
    AllConstant,
    ProportionalWheels,
    OmegaProportionalOl,
}

impl DegeneracyClass {
    pub fn label(&self) -> &'static str {
        match self {
            DegeneracyClass::ZeroOl => "zero-o_l",
            DegeneracyClass::ZeroOr => "zero-o_r",
            DegeneracyClass::ZeroOmega => "zero-omega",
            DegeneracyClass::AllConstant => "all-constant",
            DegeneracyClass::ProportionalWheels => "proportional-wheels",
            DegeneracyClass::OmegaProportionalOl => "omega-proportional-o_l",
        }
    }
}

/// Rank/nullspace analysis of one observability matrix.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    pub variant: Variant,
    pub rows: usize,
    pub columns: usize,
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Orthonormal kernel basis, one column per null direction.
    pub nullspace_basis: DMatrix<f64>,
    /// `(label, alignment angle in degrees)` for every analytic direction
    /// that lies in the numerical kernel within [`MATCH_ANGLE_DEG`].
    pub matched_null_directions: Vec<(String, f64)>,
    pub degeneracy_classes: BTreeSet<DegeneracyClass>,
}

impl ObservabilityReport {
    pub fn nullity(&self) -> usize {
        self.columns - self.rank
    }
}

/// Builds the inferred measurements from a ground-truth trajectory.
///
/// The scale `s` is applied only when `use_imu` is false (a visual-inertial
/// system provides metric velocity). Wheel speeds come from the inverse
/// kinematics at the true xi.
pub fn infer_motion(
    traj: &[TrajectorySample],
    xi_true: &KinematicParams,
    rig: &SensorRig,
    use_imu: bool,
    scale: f64,
) -> Result<InferredMotion> {
    if traj.len() < 2 {
        return Err(Error::TooFewSamples { op: "infer_motion", needed: 2, got: traj.len() });
    }
    let s = if use_imu { 1.0 } else { scale };
    if s.abs() < 1e-9 {
        return Err(Error::Precondition("scale must be nonzero".into()));
    }
    let p_c = rig.extrinsics_oc.position;
    let r_oc = rig.extrinsics_oc.rotation;
    let mut samples = Vec::with_capacity(traj.len());
    for sample in traj {
        let vel = sample.velocity;
        let omega_vec = Vector3::new(0.0, 0.0, vel.omega_z);
        let v_o = Vector3::new(vel.v_x, vel.v_y, 0.0);
        // v_breve = (v_O + omega x p_C) / s.
        let v_breve = (v_o + omega_vec.cross(&p_c)) / s;
        let v_breve_c = r_oc.inverse_rotate(&v_breve);
        let (o_l, o_r) = kinematics::inverse_kinematics(xi_true, vel.v_x, vel.omega_z)?;
        samples.push(InferredMotionSample {
            t: sample.t,
            omega_breve: vel.omega_z,
            v_breve,
            v_breve_c,
            o_l,
            o_r,
        });
    }
    Ok(InferredMotion { samples })
}

/// Stacks the per-sample 3-row constraint Jacobian for the variant
/// (the un-reduced forms).
pub fn build_matrix(motion: &InferredMotion, params: &ParamSet) -> Result<DMatrix<f64>> {
    build_matrix_impl(motion, params, false)
}

/// The row-reduced forms used in the identifiability proofs; available for
/// `Mono3`, `Vio5` and `ExtTheta`.
pub fn build_matrix_reduced(motion: &InferredMotion, params: &ParamSet) -> Result<DMatrix<f64>> {
    match params.variant {
        Variant::Mono3 | Variant::Vio5 | Variant::ExtTheta => {
            build_matrix_impl(motion, params, true)
        }
        _ => Err(Error::VariantMismatch(format!(
            "{} has no row-reduced form",
            params.variant.label()
        ))),
    }
}

fn build_matrix_impl(
    motion: &InferredMotion,
    params: &ParamSet,
    reduced: bool,
) -> Result<DMatrix<f64>> {
    if motion.samples.is_empty() {
        return Err(Error::Precondition("empty motion".into()));
    }
    params.xi.check_delta_y()?;
    let cols = params.variant.columns();
    let n = motion.samples.len();
    let mut m = DMatrix::zeros(3 * n, cols);
    let beta_l = params.beta_l();
    let dy = params.xi.delta_y();
    let r_oc = params.extrinsics_oc.rotation.matrix();

    for (i, s) in motion.samples.iter().enumerate() {
        let r = 3 * i;
        let w = s.omega_breve;
        match (params.variant, reduced) {
            (Variant::Mono5, _) => {
                m[(r, 0)] = -w;
                m[(r, 1)] = -beta_l * s.o_l;
                m[(r, 3)] = -dy * s.o_l;
                m[(r, 5)] = s.v_breve.x;
                m[(r + 1, 2)] = w;
                m[(r + 1, 5)] = s.v_breve.y;
                m[(r + 2, 3)] = s.o_l;
                m[(r + 2, 4)] = -s.o_r;
            }
            (Variant::Mono3, false) => {
                m[(r, 0)] = -w;
                m[(r, 3)] = s.v_breve.x;
                m[(r + 1, 2)] = w;
                m[(r + 1, 3)] = s.v_breve.y;
                m[(r + 2, 1)] = (s.o_r - s.o_l) / (dy * dy);
            }
            (Variant::Mono3, true) => {
                m[(r, 0)] = -w;
                m[(r, 3)] = s.o_l;
                m[(r + 1, 2)] = w;
                m[(r + 2, 1)] = s.o_r - s.o_l;
            }
            (Variant::Vio5, false) => {
                m[(r, 0)] = -w;
                m[(r, 1)] = -beta_l * s.o_l;
                m[(r, 3)] = -dy * s.o_l;
                m[(r + 1, 2)] = w;
                m[(r + 2, 3)] = s.o_l;
                m[(r + 2, 4)] = -s.o_r;
            }
            (Variant::Vio5, true) => {
                m[(r, 0)] = -w;
                m[(r, 1)] = s.o_l;
                m[(r + 1, 2)] = w;
                m[(r + 2, 3)] = s.o_l;
                m[(r + 2, 4)] = -s.o_r;
            }
            (Variant::ExtP, _) => {
                m[(r, 0)] = -w;
                m[(r, 1)] = -beta_l * s.o_l;
                m[(r, 3)] = -dy * s.o_l;
                m[(r, 6)] = w;
                m[(r + 1, 2)] = w;
                m[(r + 1, 5)] = -w;
                m[(r + 2, 3)] = s.o_l;
                m[(r + 2, 4)] = -s.o_r;
            }
            (Variant::ExtTheta, red) => {
                m[(r, 0)] = -w;
                if red {
                    m[(r, 1)] = s.o_l;
                } else {
                    m[(r, 1)] = -beta_l * s.o_l;
                    m[(r, 3)] = -dy * s.o_l;
                }
                m[(r + 1, 2)] = w;
                m[(r + 2, 3)] = s.o_l;
                m[(r + 2, 4)] = -s.o_r;
                // Rotation-derivative blocks -e_i^T R_OC [v_breve_C]x.
                let block = r_oc * skew(&s.v_breve_c);
                for c in 0..3 {
                    m[(r, 5 + c)] = -block[(0, c)];
                    m[(r + 1, 5 + c)] = -block[(1, c)];
                }
            }
        }
    }
    Ok(m)
}

fn zero_signal(xs: &[f64], scale: f64) -> bool {
    xs.iter().all(|x| x.abs() <= ZERO_THRESHOLD * scale.max(1.0))
}

fn constant_signal(xs: &[f64]) -> bool {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / (mean.abs() + 1e-6) < CONSTANT_THRESHOLD
}

/// Least-squares fit `x ~ c*y`; returns `(c, relative residual)`.
fn proportional_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sy2: f64 = ys.iter().map(|y| y * y).sum();
    if sy2 < 1e-18 {
        return (0.0, f64::INFINITY);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let c = sxy / sy2;
    let res: f64 = xs.iter().zip(ys).map(|(x, y)| (x - c * y) * (x - c * y)).sum();
    let sx2: f64 = xs.iter().map(|x| x * x).sum();
    (c, (res / sx2.max(1e-18)).sqrt())
}

/// Flags the lemma degeneracy conditions on the signal triple
/// `(o_l, o_r, omega)` using relative-variation thresholds.
pub fn classify_motion(motion: &InferredMotion) -> Result<BTreeSet<DegeneracyClass>> {
    if motion.samples.len() < 10 {
        return Err(Error::TooFewSamples {
            op: "classify_motion",
            needed: 10,
            got: motion.samples.len(),
        });
    }
    let o_l: Vec<f64> = motion.samples.iter().map(|s| s.o_l).collect();
    let o_r: Vec<f64> = motion.samples.iter().map(|s| s.o_r).collect();
    let w: Vec<f64> = motion.samples.iter().map(|s| s.omega_breve).collect();
    let scale = o_l
        .iter()
        .chain(&o_r)
        .chain(&w)
        .fold(0.0f64, |acc, x| acc.max(x.abs()));

    let mut classes = BTreeSet::new();
    let zl = zero_signal(&o_l, scale);
    let zr = zero_signal(&o_r, scale);
    let zw = zero_signal(&w, scale);
    if zl {
        classes.insert(DegeneracyClass::ZeroOl);
    }
    if zr {
        classes.insert(DegeneracyClass::ZeroOr);
    }
    if zw {
        classes.insert(DegeneracyClass::ZeroOmega);
    }
    if constant_signal(&o_l) && constant_signal(&o_r) && constant_signal(&w) {
        classes.insert(DegeneracyClass::AllConstant);
    }
    if !zl && !zr {
        let (_, res) = proportional_fit(&o_l, &o_r);
        if res < PROPORTIONAL_THRESHOLD {
            classes.insert(DegeneracyClass::ProportionalWheels);
        }
    }
    if !zw && !zl {
        let (_, res) = proportional_fit(&w, &o_l);
        if res < PROPORTIONAL_THRESHOLD {
            classes.insert(DegeneracyClass::OmegaProportionalOl);
        }
    }
    Ok(classes)
}

/// The analytic kernel candidates for a variant given the linearization
/// point, the motion (for proportionality coefficients), and the flagged
/// degeneracy classes. Labels identify the lemma case.
pub fn candidate_vectors(
    params: &ParamSet,
    motion: &InferredMotion,
    classes: &BTreeSet<DegeneracyClass>,
    reduced: bool,
) -> Vec<(String, DVector<f64>)> {
    let mut out = Vec::new();
    let cols = params.variant.columns();
    let e = |i: usize| {
        let mut v = DVector::zeros(cols);
        v[i] = 1.0;
        v
    };
    let o_l: Vec<f64> = motion.samples.iter().map(|s| s.o_l).collect();
    let o_r: Vec<f64> = motion.samples.iter().map(|s| s.o_r).collect();
    let w: Vec<f64> = motion.samples.iter().map(|s| s.omega_breve).collect();

    match params.variant {
        Variant::Mono5 => {
            // Unconditional scale/kinematics indistinguishability.
            let mut v = DVector::zeros(6);
            v[0] = params.xi.y_l - params.extrinsics_oc.position.y;
            v[1] = params.xi.delta_y();
            v[2] = params.xi.x_v - params.extrinsics_oc.position.x;
            v[5] = params.scale;
            out.push(("lemma1-scale-kinematics".to_string(), v));
        }
        Variant::Mono3 if reduced => {
            if classes.contains(&DegeneracyClass::ZeroOl) {
                out.push(("lemma2-zero-ol".to_string(), e(3)));
            }
            if classes.contains(&DegeneracyClass::ZeroOmega) {
                out.push(("lemma2-zero-omega".to_string(), e(2)));
            }
            if classes.contains(&DegeneracyClass::AllConstant) {
                out.push(("lemma2-all-constant".to_string(), e(1)));
            }
            if classes.contains(&DegeneracyClass::ProportionalWheels) {
                out.push(("lemma2-identical-wheels".to_string(), e(1)));
            }
            if classes.contains(&DegeneracyClass::OmegaProportionalOl) {
                let (c, _) = proportional_fit(&o_l, &w);
                let mut v = DVector::zeros(4);
                v[0] = c;
                v[3] = 1.0;
                out.push(("lemma2-omega-prop-ol".to_string(), v));
            }
        }
        Variant::Vio5 if reduced => {
            if classes.contains(&DegeneracyClass::ZeroOl) {
                out.push(("lemma3-zero-ol-a".to_string(), e(1)));
                out.push(("lemma3-zero-ol-b".to_string(), e(3)));
            }
            if classes.contains(&DegeneracyClass::ZeroOr) {
                out.push(("lemma3-zero-or".to_string(), e(4)));
            }
            if classes.contains(&DegeneracyClass::ZeroOmega) {
                out.push(("lemma3-zero-omega-a".to_string(), e(0)));
                out.push(("lemma3-zero-omega-b".to_string(), e(2)));
            }
            if classes.contains(&DegeneracyClass::AllConstant) {
                out.push(("lemma3-all-constant".to_string(), e(2)));
            }
            if classes.contains(&DegeneracyClass::ProportionalWheels) {
                let (c, _) = proportional_fit(&o_l, &o_r);
                let mut v = DVector::zeros(5);
                v[3] = 1.0;
                v[4] = c;
                out.push(("lemma3-proportional-wheels".to_string(), v));
            }
            if classes.contains(&DegeneracyClass::OmegaProportionalOl) {
                let (c, _) = proportional_fit(&o_l, &w);
                let mut v = DVector::zeros(5);
                v[0] = c;
                v[1] = 1.0;
                out.push(("lemma3-omega-prop-ol".to_string(), v));
            }
        }
        Variant::ExtP => {
            let mut k1 = DVector::zeros(8);
            k1[0] = 1.0;
            k1[6] = 1.0;
            out.push(("lemma4-k1-yl-yc".to_string(), k1));
            let mut k2 = DVector::zeros(8);
            k2[2] = 1.0;
            k2[5] = 1.0;
            out.push(("lemma4-k2-xv-xc".to_string(), k2));
            out.push(("lemma4-k3-zc".to_string(), e(7)));
        }
        Variant::ExtTheta => {
            out.push(("lemma5-third-rotation".to_string(), e(7)));
        }
        _ => {}
    }
    out
}

/// SVD-based rank/nullspace analysis with analytic-direction matching.
pub fn analyze(
    matrix: &DMatrix<f64>,
    params: &ParamSet,
    motion: &InferredMotion,
    reduced: bool,
    tol_ratio: f64,
) -> Result<ObservabilityReport> {
    let (rows, cols) = matrix.shape();
    if rows < cols {
        return Err(Error::Precondition(format!(
            "matrix must have at least as many rows ({rows}) as columns ({cols})"
        )));
    }
    let svd = matrix.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut sv: Vec<(f64, usize)> =
        svd.singular_values.iter().cloned().zip(0..cols).collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let singular_values: Vec<f64> = sv.iter().map(|(s, _)| *s).collect();
    let sigma_max = singular_values.first().cloned().unwrap_or(0.0);
    let tol = tol_ratio * sigma_max;
    let rank = singular_values.iter().filter(|s| **s > tol).count();
    let nullity = cols - rank;

    let mut nullspace_basis = DMatrix::zeros(cols, nullity);
    for (j, (_, idx)) in sv.iter().skip(rank).enumerate() {
        for i in 0..cols {
            nullspace_basis[(i, j)] = v_t[(*idx, i)];
        }
    }

    let degeneracy_classes = classify_motion(motion)?;
    let candidates = candidate_vectors(params, motion, &degeneracy_classes, reduced);
    let mut matched = Vec::new();
    for (label, v) in candidates {
        if let Some(angle) = kernel_alignment_deg(&nullspace_basis, &v) {
            if angle < MATCH_ANGLE_DEG {
                matched.push((label, angle));
            }
        }
    }

    Ok(ObservabilityReport {
        variant: params.variant,
        rows,
        columns: cols,
        rank,
        singular_values,
        nullspace_basis,
        matched_null_directions: matched,
        degeneracy_classes,
    })
}

/// Angle in degrees between `v` and its projection onto the kernel span;
/// `None` when the kernel is empty.
pub fn kernel_alignment_deg(nullspace_basis: &DMatrix<f64>, v: &DVector<f64>) -> Option<f64> {
    if nullspace_basis.ncols() == 0 || v.norm() == 0.0 {
        return None;
    }
    // Basis columns are orthonormal (right singular vectors).
    let coeffs = nullspace_basis.transpose() * v;
    let proj_norm = coeffs.norm();
    let cosine = (proj_norm / v.norm()).clamp(0.0, 1.0);
    Some(cosine.acos().to_degrees())
}

/// Side-by-side empirical and analytic identifiability for one scenario.
#[derive(Debug, Clone)]
pub struct EmpiricalReport {
    pub variant: Variant,
    /// `std(bootstrap) / std(final)` per ξ element (values > 1 mean the
    /// marginal uncertainty contracted). Frozen elements report 0.
    pub contraction: [f64; 5],
    /// Contraction of the variance along a probe direction in ξ space, when
    /// one was supplied (e.g. the scale/kinematics kernel direction).
    pub direction_contraction: Option<f64>,
    pub analytic: ObservabilityReport,
}

/// Runs the estimator on the scenario under the sensor configuration implied
/// by `variant` and compares per-parameter marginal-std contraction with the
/// analytic rank analysis of the same motion.
///
/// `probe_direction` optionally measures the variance contraction along a
/// fixed direction in the 5-dim ξ error space.
pub fn empirical_identifiability(
    scenario: &crate::harness::ScenarioConfig,
    variant: Variant,
    probe_direction: Option<[f64; 5]>,
) -> Result<EmpiricalReport> {
    use crate::estimator::CalibMode;
    let (use_imu, calib) = match variant {
        Variant::Mono5 => (false, CalibMode::Full5),
        Variant::Mono3 => (false, CalibMode::Icr3),
        Variant::Vio5 => (true, CalibMode::Full5),
        Variant::ExtP | Variant::ExtTheta => {
            return Err(Error::VariantMismatch(
                "camera-odometer extrinsics are not estimated online".into(),
            ))
        }
    };
    let seed = scenario.seeds()[0];
    let log = crate::harness::simulate_log(scenario, seed)?;
    let label = variant.label();
    let result = crate::harness::run_estimate_custom(&log, scenario, use_imu, calib, label)?;

    let dof = calib.xi_dof();
    let first = &result.keyframes[0];
    let last = result.keyframes.last().unwrap();
    let mut contraction = [0.0; 5];
    for i in 0..dof {
        if last.xi_std[i] > 0.0 {
            contraction[i] = first.xi_std[i] / last.xi_std[i];
        }
    }
    let direction_contraction = probe_direction.map(|d| {
        let quad = |cov: &[f64; 25]| {
            let mut q = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    q += d[i] * cov[5 * i + j] * d[j];
                }
            }
            q
        };
        let v0 = quad(&result.xi_covariances[0]);
        let v1 = quad(result.xi_covariances.last().unwrap());
        if v1 > 0.0 {
            (v0 / v1).sqrt()
        } else {
            f64::INFINITY
        }
    });

    // Analytic report on the same motion.
    let profile = scenario.profile.resolve(&scenario.xi.values)?;
    let schedule = crate::simulate::XiSchedule::Constant(scenario.xi.values);
    let traj = crate::simulate::generate_trajectory(&profile, &schedule, 0.02)?;
    let rig = scenario.rig.resolve()?;
    let motion = infer_motion(&traj, &scenario.xi.values, &rig, use_imu, 1.0)?;
    let params = ParamSet {
        variant,
        xi: scenario.xi.values,
        scale: 1.0,
        extrinsics_oc: rig.extrinsics_oc,
    };
    let matrix = match variant {
        Variant::Mono3 | Variant::Vio5 => build_matrix_reduced(&motion, &params)?,
        _ => build_matrix(&motion, &params)?,
    };
    let analytic = analyze(
        &matrix,
        &params,
        &motion,
        matches!(variant, Variant::Mono3 | Variant::Vio5),
        DEFAULT_RANK_TOL_RATIO,
    )?;

    Ok(EmpiricalReport { variant, contraction, direction_contraction, analytic })
}
