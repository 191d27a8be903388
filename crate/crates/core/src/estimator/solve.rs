//! Damped Gauss-Newton over a window problem, with the landmark blocks
//! eliminated by Schur complement inside every linear solve, and the exact
//! Schur-complement marginalization used to form the prior.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use crate::error::Error;
use crate::Result;

use super::factors::{
    huber_cost, huber_weight, visual_residual_jacobians, BlockKey, BlockLayout, Factor,
    PriorFactor, WindowValues,
};
use super::EstimatorConfig;
use crate::geom::Pose;

/// Eigenvalue floor used when inverting the marginal block.
pub const MARGINALIZATION_EIGENVALUE_FLOOR: f64 = 1e-10;

/// A landmark actively solved (and Schur-eliminated) in this window.
#[derive(Debug, Clone)]
pub struct LandmarkBlock {
    pub landmark_id: u64,
    pub position: Vector3<f64>,
    /// Observations as (pose keyframe seq, normalized uv).
    pub observations: Vec<(u64, Vector2<f64>)>,
}

/// Visual-measurement weighting for the solver.
#[derive(Debug, Clone, Copy)]
pub struct VisualParams {
    /// Information of one normalized-coordinate residual component (1/σ²).
    pub information: f64,
    /// Huber threshold on the whitened residual norm, if robustified.
    pub huber_delta: Option<f64>,
    pub extrinsics_oc: Pose,
}

/// Outcome of one window solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_lambda: f64,
    /// Smallest eigenvalue of the (undamped) reduced normal matrix at the
    /// solution, when spectrum computation is enabled.
    pub min_eigenvalue: Option<f64>,
}

fn factor_cost(factors: &[Factor], values: &WindowValues) -> Result<f64> {
    let mut cost = 0.0;
    let debug = std::env::var_os("SKIDSTEER_COST_DEBUG").is_some();
    let mut parts = [0.0f64; 4];
    for f in factors {
        let (slot, c) = match f {
            Factor::Prior(p) => (0, p.cost(values)),
            Factor::Odometry(o) => (1, o.linearize(values)?.cost()),
            Factor::Imu(i) => (2, i.linearize(values).cost()),
            Factor::Manifold(m) => (3, m.linearize(values).cost()),
        };
        parts[slot] += c;
        cost += c;
    }
    if debug {
        eprintln!(
            "    cost parts: prior {:.3e} odo {:.3e} imu {:.3e} manifold {:.3e}",
            parts[0], parts[1], parts[2], parts[3]
        );
    }
    Ok(cost)
}

fn visual_cost(
    landmarks: &[LandmarkBlock],
    values: &WindowValues,
    vp: &VisualParams,
) -> f64 {
    let mut cost = 0.0;
    let mut n_obs = 0usize;
    for lm in landmarks {
        for (seq, uv) in &lm.observations {
            let pose = values.pose(*seq);
            // The observation set is pinned at solve start; a trial that
            // pushes a pinned observation behind the camera leaves the
            // valid region.
            match super::factors::visual_residual(
                pose,
                &lm.position,
                uv,
                &vp.extrinsics_oc,
                lm.landmark_id,
            ) {
                Ok(r) => {
                    n_obs += 1;
                    cost += huber_cost(r.norm_squared() * vp.information, vp.huber_delta);
                }
                Err(_) => return f64::INFINITY,
            }
        }
    }
    if std::env::var_os("SKIDSTEER_COST_DEBUG").is_some() {
        eprintln!("    visual: {} landmarks, {} obs, cost {:.3e}", landmarks.len(), n_obs, cost);
    }
    cost
}

/// Scatter-adds a linearized factor into dense normal equations.
fn scatter(
    lin: &super::factors::FactorLin,
    layout: &BlockLayout,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
    grad_sign: f64,
) {
    let weighted = &lin.information * &lin.residual;
    for (i, key_i) in lin.keys.iter().enumerate() {
        let Some((oi, di)) = layout.find(key_i) else { continue };
        let ji = &lin.jacobians[i];
        let jti = ji.transpose() * &lin.information;
        let gi = &jti * &lin.residual;
        let _ = &weighted;
        for r in 0..di {
            b[oi + r] += grad_sign * gi[r];
        }
        for (j, key_j) in lin.keys.iter().enumerate() {
            let Some((oj, dj)) = layout.find(key_j) else { continue };
            let block = &jti * &lin.jacobians[j];
            for r in 0..di {
                for c in 0..dj {
                    h[(oi + r, oj + c)] += block[(r, c)];
                }
            }
        }
    }
}

/// Adds a prior factor to normal equations: `H += Λ`, `grad += Λ d + g`.
fn scatter_prior(
    prior: &PriorFactor,
    values: &WindowValues,
    layout: &BlockLayout,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
    grad_sign: f64,
) {
    let d = prior.error(values);
    let grad = &prior.information * &d + &prior.gradient;
    let mut offsets = Vec::with_capacity(prior.keys.len());
    let mut local = 0usize;
    for key in &prior.keys {
        let dim = values.block_dim(key);
        offsets.push((layout.find(key), local, dim));
        local += dim;
    }
    for (dst_i, li, di) in &offsets {
        let Some((oi, _)) = dst_i else { continue };
        for r in 0..*di {
            b[oi + r] += grad_sign * grad[li + r];
        }
        for (dst_j, lj, dj) in &offsets {
            let Some((oj, _)) = dst_j else { continue };
            for r in 0..*di {
                for c in 0..*dj {
                    h[(oi + r, oj + c)] += prior.information[(li + r, lj + c)];
                }
            }
        }
    }
}

/// Per-landmark Schur data built during linearization.
struct LandmarkLin {
    h_ll: Matrix3<f64>,
    b_l: Vector3<f64>,
    /// (pose offset, H_pl block 6x3) per observing pose.
    h_pl: Vec<(usize, DMatrix<f64>)>,
}

/// Linearizes the visual factors: dense pose-side contributions go straight
/// into `(h, b)`, the landmark-side blocks are returned for elimination.
fn linearize_visual(
    landmarks: &[LandmarkBlock],
    values: &WindowValues,
    vp: &VisualParams,
    layout: &BlockLayout,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
) -> Vec<LandmarkLin> {
    let mut out = Vec::with_capacity(landmarks.len());
    for lm in landmarks {
        let mut ll = LandmarkLin {
            h_ll: Matrix3::zeros(),
            b_l: Vector3::zeros(),
            h_pl: Vec::new(),
        };
        for (seq, uv) in &lm.observations {
            let key = BlockKey::Pose(*seq);
            let Some((off, _)) = layout.find(&key) else { continue };
            let pose = values.pose(*seq);
            let Ok((r, j_pose, j_lm)) = visual_residual_jacobians(
                pose,
                &lm.position,
                uv,
                &vp.extrinsics_oc,
                lm.landmark_id,
            ) else {
                continue;
            };
            let chi = (r.norm_squared() * vp.information).sqrt();
            let w = vp.information * huber_weight(chi, vp.huber_delta);

            ll.h_ll += j_lm.transpose() * j_lm * w;
            ll.b_l += -j_lm.transpose() * r * w;
            let hp = j_pose.transpose() * j_lm * w;
            let entry = ll.h_pl.iter_mut().find(|(o, _)| *o == off);
            match entry {
                Some((_, m)) => {
                    for rr in 0..6 {
                        for cc in 0..3 {
                            m[(rr, cc)] += hp[(rr, cc)];
                        }
                    }
                }
                None => {
                    ll.h_pl.push((off, DMatrix::from_iterator(6, 3, hp.iter().cloned())));
                }
            }
            let hpp = j_pose.transpose() * j_pose * w;
            let bp = -j_pose.transpose() * r * w;
            for rr in 0..6 {
                b[off + rr] += bp[rr];
                for cc in 0..6 {
                    h[(off + rr, off + cc)] += hpp[(rr, cc)];
                }
            }
        }
        out.push(ll);
    }
    out
}

/// Builds the full (undamped) normal equations for the current values.
fn build_normal_equations(
    values: &WindowValues,
    factors: &[Factor],
    landmarks: &[LandmarkBlock],
    vp: &VisualParams,
    layout: &BlockLayout,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<LandmarkLin>)> {
    let n = layout.total;
    let mut h = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for f in factors {
        match f {
            Factor::Prior(p) => scatter_prior(p, values, layout, &mut h, &mut b, -1.0),
            Factor::Odometry(o) => scatter(&o.linearize(values)?, layout, &mut h, &mut b, -1.0),
            Factor::Imu(i) => scatter(&i.linearize(values), layout, &mut h, &mut b, -1.0),
            Factor::Manifold(m) => scatter(&m.linearize(values), layout, &mut h, &mut b, -1.0),
        }
    }
    let lms = linearize_visual(landmarks, values, vp, layout, &mut h, &mut b);
    Ok((h, b, lms))
}

fn retract_all(
    values: &WindowValues,
    layout: &BlockLayout,
    delta: &DVector<f64>,
) -> WindowValues {
    let mut out = values.clone();
    for (key, off, dim) in &layout.entries {
        if *dim == 0 {
            continue;
        }
        let v = values.value(key).boxplus(&delta.as_slice()[*off..*off + *dim]);
        out.set_value(key, v);
    }
    out
}

/// Damped Gauss-Newton with multiplicative λ adaptation, landmark Schur
/// elimination inside each linear solve, and retraction via boxplus.
///
/// The total robust cost is non-increasing across accepted steps; the solver
/// reports divergence after five consecutive rejected escalations that do
/// not reach a stationary point.
pub fn solve_window(
    values: &mut WindowValues,
    factors: &[Factor],
    landmarks: &mut Vec<LandmarkBlock>,
    vp: &VisualParams,
    cfg: &EstimatorConfig,
) -> Result<SolveStats> {
    // Pin the observation set: drop observations that are invalid at the
    // linearization point (behind the camera), per-landmark, and landmarks
    // left with fewer than two views.
    for lm in landmarks.iter_mut() {
        lm.observations.retain(|(seq, uv)| {
            super::factors::visual_residual(
                values.pose(*seq),
                &lm.position,
                uv,
                &vp.extrinsics_oc,
                lm.landmark_id,
            )
            .is_ok()
        });
    }
    landmarks.retain(|lm| lm.observations.len() >= 2);

    let keys = collect_keys(values);
    let layout = BlockLayout::build(&keys, values);
    let n = layout.total;

    let mut lambda = cfg.lambda_init;
    let mut cost = factor_cost(factors, values)? + visual_cost(landmarks, values, vp);
    let initial_cost = cost;
    let mut iterations = 0;
    let mut consecutive_rejects = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let (h, b, lms) = build_normal_equations(values, factors, landmarks, vp, &layout)?;

        let mut accepted = false;
        while !accepted {
            // Damped reduced system.
            let mut h_red = h.clone();
            for i in 0..n {
                h_red[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let mut b_red = b.clone();
            let mut ll_inv = Vec::with_capacity(lms.len());
            for lm in &lms {
                let mut hll = lm.h_ll;
                for i in 0..3 {
                    hll[(i, i)] += lambda * lm.h_ll[(i, i)].max(1e-12);
                }
                let inv = hll.try_inverse().unwrap_or_else(Matrix3::zeros);
                for (oi, hpl_i) in &lm.h_pl {
                    let left = hpl_i * inv;
                    let gb = &left * lm.b_l;
                    for r in 0..6 {
                        b_red[oi + r] -= gb[r];
                    }
                    for (oj, hpl_j) in &lm.h_pl {
                        let block = &left * hpl_j.transpose();
                        for r in 0..6 {
                            for c in 0..6 {
                                h_red[(oi + r, oj + c)] -= block[(r, c)];
                            }
                        }
                    }
                }
                ll_inv.push(inv);
            }

            let delta = match h_red.clone().cholesky() {
                Some(ch) => ch.solve(&b_red),
                None => {
                    lambda = (lambda * 10.0).min(cfg.lambda_max);
                    consecutive_rejects += 1;
                    if consecutive_rejects >= cfg.max_solver_rejects {
                        return Err(Error::SolverDiverged {
                            escalations: consecutive_rejects,
                            cost,
                        });
                    }
                    continue;
                }
            };
            // A negligible step means the normal equations are solved to
            // floating-point precision; further trials only chase rounding
            // noise in the cost.
            if delta.amax() < 1e-10 {
                return finish(values, factors, landmarks, vp, cfg, &layout,
                    iterations, initial_cost, cost, lambda);
            }

            // Back-substitute landmarks.
            let mut trial_landmarks = landmarks.clone();
            for (lm_idx, lm) in lms.iter().enumerate() {
                let mut rhs = lm.b_l;
                for (oi, hpl_i) in &lm.h_pl {
                    let mut dp = nalgebra::Vector6::zeros();
                    for r in 0..6 {
                        dp[r] = delta[oi + r];
                    }
                    rhs -= hpl_i.transpose() * dp;
                }
                trial_landmarks[lm_idx].position += ll_inv[lm_idx] * rhs;
            }

            let trial = retract_all(values, &layout, &delta);
            let trial_cost =
                factor_cost(factors, &trial)? + visual_cost(&trial_landmarks, &trial, vp);

            if std::env::var_os("SKIDSTEER_SOLVE_DEBUG").is_some() {
                eprintln!(
                    "  trial: lambda {lambda:.1e} cost {cost:.6e} -> {trial_cost:.6e} |delta| {:.3e}",
                    delta.norm()
                );
            }
            if trial_cost <= cost + cost.abs() * 1e-12 {
                let decrease = cost - trial_cost;
                *values = trial;
                *landmarks = trial_landmarks;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(cfg.lambda_min);
                consecutive_rejects = 0;
                accepted = true;
                if decrease <= cfg.convergence_tol * cost.abs().max(1e-30) {
                    return finish(values, factors, landmarks, vp, cfg, &layout,
                        iterations, initial_cost, cost, lambda);
                }
            } else {
                let factor = if trial_cost.is_finite() { 10.0 } else { 100.0 };
                lambda = (lambda * factor).min(cfg.lambda_max);
                consecutive_rejects += 1;
                if consecutive_rejects >= cfg.max_solver_rejects {
                    // Could not decrease the cost any further. A stall at an
                    // already-accepted state is convergence; divergence is a
                    // stall with a substantial relative gap still open.
                    if (trial_cost - cost) / cost.abs().max(1e-30) < 1e-6 {
                        return finish(values, factors, landmarks, vp, cfg, &layout,
                            iterations, initial_cost, cost, lambda);
                    }
                    return Err(Error::SolverDiverged {
                        escalations: consecutive_rejects,
                        cost,
                    });
                }
            }
        }
    }
    finish(values, factors, landmarks, vp, cfg, &layout, iterations, initial_cost, cost, lambda)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    values: &WindowValues,
    factors: &[Factor],
    landmarks: &[LandmarkBlock],
    vp: &VisualParams,
    cfg: &EstimatorConfig,
    layout: &BlockLayout,
    iterations: usize,
    initial_cost: f64,
    final_cost: f64,
    final_lambda: f64,
) -> Result<SolveStats> {
    let min_eigenvalue = if cfg.compute_spectrum {
        let (h, _, lms) = build_normal_equations(values, factors, landmarks, vp, layout)?;
        let mut h_red = h;
        for lm in &lms {
            let inv = lm.h_ll.try_inverse().unwrap_or_else(Matrix3::zeros);
            for (oi, hpl_i) in &lm.h_pl {
                let left = hpl_i * inv;
                for (oj, hpl_j) in &lm.h_pl {
                    let block = &left * hpl_j.transpose();
                    for r in 0..6 {
                        for c in 0..6 {
                            h_red[(oi + r, oj + c)] -= block[(r, c)];
                        }
                    }
                }
            }
        }
        let eig = h_red.symmetric_eigen();
        Some(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
    } else {
        None
    };
    Ok(SolveStats { iterations, initial_cost, final_cost, final_lambda, min_eigenvalue })
}

/// Assembles the prior plus the given non-visual factors into `(h, b)` at
/// the current values (used when folding information into a new prior).
pub fn assemble_for_fold(
    values: &WindowValues,
    prior: &PriorFactor,
    live: &[Factor],
    layout: &BlockLayout,
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
) -> Result<()> {
    scatter_prior(prior, values, layout, h, b, -1.0);
    for f in live {
        match f {
            Factor::Prior(p) => scatter_prior(p, values, layout, h, b, -1.0),
            Factor::Odometry(o) => scatter(&o.linearize(values)?, layout, h, b, -1.0),
            Factor::Imu(i) => scatter(&i.linearize(values), layout, h, b, -1.0),
            Factor::Manifold(m) => scatter(&m.linearize(values), layout, h, b, -1.0),
        }
    }
    Ok(())
}

/// Marginal covariance of one block: builds the reduced normal matrix at the
/// current values (landmarks eliminated) and solves for the block columns.
pub fn marginal_covariance(
    values: &WindowValues,
    factors: &[Factor],
    landmarks: &[LandmarkBlock],
    vp: &VisualParams,
    key: &BlockKey,
) -> Result<DMatrix<f64>> {
    let keys = collect_keys(values);
    let layout = BlockLayout::build(&keys, values);
    let (h, _, lms) = build_normal_equations(values, factors, landmarks, vp, &layout)?;
    let mut h_red = h;
    for lm in &lms {
        let Some(inv) = lm.h_ll.try_inverse() else { continue };
        for (oi, hpl_i) in &lm.h_pl {
            let left = hpl_i * inv;
            for (oj, hpl_j) in &lm.h_pl {
                let block = &left * hpl_j.transpose();
                for r in 0..6 {
                    for c in 0..6 {
                        h_red[(oi + r, oj + c)] -= block[(r, c)];
                    }
                }
            }
        }
    }
    let (off, dim) = layout
        .find(key)
        .ok_or_else(|| Error::Precondition("block not in window layout".into()))?;
    let n = layout.total;
    let chol = h_red
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Precondition("normal matrix not positive definite".into()))?;
    let mut cov = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let mut e = DVector::zeros(n);
        e[off + c] = 1.0;
        let col = chol.solve(&e);
        for r in 0..dim {
            cov[(r, c)] = col[off + r];
        }
    }
    Ok(cov)
}

/// Deterministic block ordering for the window: poses by sequence, then
/// speed/bias, manifold, ξ generations.
pub fn collect_keys(values: &WindowValues) -> Vec<BlockKey> {
    let mut keys = Vec::new();
    for (s, _) in &values.poses {
        keys.push(BlockKey::Pose(*s));
    }
    for (s, _) in &values.speed_biases {
        keys.push(BlockKey::SpeedBias(*s));
    }
    for (s, _) in &values.manifolds {
        keys.push(BlockKey::Manifold(*s));
    }
    if values.xi_dof > 0 {
        for (s, _) in &values.xis {
            keys.push(BlockKey::Xi(*s));
        }
    }
    keys
}

/// Result of [`marginalize`].
#[derive(Debug, Clone)]
pub struct Marginalized {
    pub information: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// True when `Λ_mm` had an eigenvalue below the floor and was regularized.
    pub regularized: bool,
}

/// Exact Schur-complement marginalization of the listed scalar indices out
/// of `(hessian, gradient)` (gradient convention: `∇½‖r‖² = JᵀΛr`).
///
/// `Λ_mm` eigenvalues below [`MARGINALIZATION_EIGENVALUE_FLOOR`] are floored
/// (and reported) before inversion.
pub fn marginalize(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    marg_indices: &[usize],
) -> Result<Marginalized> {
    let n = hessian.nrows();
    if hessian.ncols() != n || gradient.len() != n {
        return Err(Error::Precondition("marginalize: dimension mismatch".into()));
    }
    let marg: Vec<usize> = marg_indices.to_vec();
    for &i in &marg {
        if i >= n {
            return Err(Error::Precondition(format!("marginalize: index {i} out of range")));
        }
    }
    let keep: Vec<usize> = (0..n).filter(|i| !marg.contains(i)).collect();
    let m = marg.len();
    let k = keep.len();

    let mut h_mm = DMatrix::zeros(m, m);
    let mut h_km = DMatrix::zeros(k, m);
    let mut h_kk = DMatrix::zeros(k, k);
    let mut g_m = DVector::zeros(m);
    let mut g_k = DVector::zeros(k);
    for (a, &ia) in marg.iter().enumerate() {
        g_m[a] = gradient[ia];
        for (b, &ib) in marg.iter().enumerate() {
            h_mm[(a, b)] = hessian[(ia, ib)];
        }
    }
    for (a, &ia) in keep.iter().enumerate() {
        g_k[a] = gradient[ia];
        for (b, &ib) in keep.iter().enumerate() {
            h_kk[(a, b)] = hessian[(ia, ib)];
        }
        for (b, &ib) in marg.iter().enumerate() {
            h_km[(a, b)] = hessian[(ia, ib)];
        }
    }

    let sym = 0.5 * (&h_mm + h_mm.transpose());
    let eig = sym.symmetric_eigen();
    let regularized = eig.eigenvalues.iter().any(|&l| l < MARGINALIZATION_EIGENVALUE_FLOOR);
    let mut inv_diag = DMatrix::zeros(m, m);
    for i in 0..m {
        inv_diag[(i, i)] = 1.0 / eig.eigenvalues[i].max(MARGINALIZATION_EIGENVALUE_FLOOR);
    }
    let h_mm_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();

    let lambda = &h_kk - &h_km * &h_mm_inv * h_km.transpose();
    let information = 0.5 * (&lambda + lambda.transpose());
    let gradient_out = g_k - &h_km * &h_mm_inv * g_m;
    Ok(Marginalized { information, gradient: gradient_out, regularized })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diagonal_marginalization_is_exact_subblock() {
        let mut h = DMatrix::zeros(5, 5);
        for i in 0..5 {
            h[(i, i)] = (i + 1) as f64;
        }
        let g = DVector::from_fn(5, |i, _| i as f64);
        let out = marginalize(&h, &g, &[3, 4]).unwrap();
        assert_eq!(out.information.nrows(), 3);
        for i in 0..3 {
            assert_eq!(out.information[(i, i)], (i + 1) as f64);
            assert_eq!(out.gradient[i], i as f64);
        }
        assert!(!out.regularized);
    }

    #[test]
    fn scalar_schur_complement_hand_case() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let g = DVector::from_column_slice(&[1.0, 1.0]);
        let out = marginalize(&h, &g, &[1]).unwrap();
        assert!((out.information[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((out.gradient[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marginalization_never_adds_information() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 6;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let out = marginalize(&h, &g, &[4, 5]).unwrap();
            let h_kk = h.view((0, 0), (4, 4)).clone_owned();
            let diff = h_kk - &out.information;
            let eig = (0.5 * (&diff + diff.transpose())).symmetric_eigen();
            assert!(
                eig.eigenvalues.iter().all(|&l| l > -1e-9),
                "Λ_marg must be ⪯ Λ_rr"
            );
        }
    }

    #[test]
    fn singular_block_is_reported_and_floored() {
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 0)] = 1.0;
        // h[(1..3)] block singular.
        h[(1, 1)] = 1.0;
        h[(1, 2)] = 1.0;
        h[(2, 1)] = 1.0;
        h[(2, 2)] = 1.0;
        let g = DVector::zeros(3);
        let out = marginalize(&h, &g, &[1, 2]).unwrap();
        assert!(out.regularized);
        assert!(out.information[(0, 0)].is_finite());
    }
}
