//! Solver-correctness oracles: the window solver against an independent
//! dense batch Gauss-Newton, and the sliding-window estimator against the
//! full-batch MAP on the same factor graph.

use nalgebra::{DMatrix, DVector};
use skidsteer_core::estimator::{
    solve::collect_keys, visual_residual, visual_residual_jacobians, BlockKey, BlockLayout,
    Factor, LandmarkBlock, VisualParams, WindowValues,
};
use skidsteer_core::geom::Pose;
use skidsteer_core::harness::config::{Mode, ProfileConfig, ScenarioConfig, XiInitialConfig};
use skidsteer_core::harness::{run_batch_oracle, run_estimate, simulate_log};

/// Test-local dense solver: every landmark is an explicit column block; no
/// Schur elimination, no damping schedule — plain Gauss-Newton with a fixed
/// tiny ridge and backtracking line search. Shares only the residual
/// definitions with the production solver.
fn naive_batch_cost(
    values: &WindowValues,
    factors: &[Factor],
    landmarks: &[LandmarkBlock],
    vp: &VisualParams,
) -> f64 {
    let mut cost = 0.0;
    for f in factors {
        cost += match f {
            Factor::Prior(p) => p.cost(values),
            Factor::Odometry(o) => o.linearize(values).unwrap().cost(),
            Factor::Imu(i) => i.linearize(values).cost(),
            Factor::Manifold(m) => m.linearize(values).cost(),
        };
    }
    for lm in landmarks {
        for (seq, uv) in &lm.observations {
            if let Ok(r) =
                visual_residual(values.pose(*seq), &lm.position, uv, &vp.extrinsics_oc, lm.landmark_id)
            {
                cost += 0.5 * r.norm_squared() * vp.information;
            }
        }
    }
    cost
}

fn naive_batch_solve(
    values: &mut WindowValues,
    factors: &[Factor],
    landmarks: &mut [LandmarkBlock],
    vp: &VisualParams,
) -> f64 {
    let keys = collect_keys(values);
    let layout = BlockLayout::build(&keys, values);
    let n_state = layout.total;
    let n = n_state + 3 * landmarks.len();

    let mut cost = naive_batch_cost(values, factors, landmarks, vp);
    for _ in 0..60 {
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for f in factors {
            match f {
                Factor::Prior(p) => {
                    let d = p.error(values);
                    let grad = &p.information * &d + &p.gradient;
                    let mut offsets = Vec::new();
                    let mut local = 0usize;
                    for key in &p.keys {
                        let dim = values.block_dim(key);
                        offsets.push((layout.find(key), local, dim));
                        local += dim;
                    }
                    for (dst_i, li, di) in &offsets {
                        let Some((oi, _)) = dst_i else { continue };
                        for r in 0..*di {
                            b[oi + r] -= grad[li + r];
                        }
                        for (dst_j, lj, dj) in &offsets {
                            let Some((oj, _)) = dst_j else { continue };
                            for r in 0..*di {
                                for c in 0..*dj {
                                    h[(oi + r, oj + c)] += p.information[(li + r, lj + c)];
                                }
                            }
                        }
                    }
                }
                other => {
                    let lin = match other {
                        Factor::Odometry(o) => o.linearize(values).unwrap(),
                        Factor::Imu(i) => i.linearize(values),
                        Factor::Manifold(m) => m.linearize(values),
                        Factor::Prior(_) => unreachable!(),
                    };
                    let keys: Vec<_> = lin.keys.clone();
                    for (i, key_i) in keys.iter().enumerate() {
                        let Some((oi, di)) = layout.find(key_i) else { continue };
                        let jti = lin.jacobians[i].transpose() * &lin.information;
                        let gi = &jti * &lin.residual;
                        for r in 0..di {
                            b[oi + r] -= gi[r];
                        }
                        for (j, key_j) in keys.iter().enumerate() {
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
            }
        }
        for (li, lm) in landmarks.iter().enumerate() {
            let lcol = n_state + 3 * li;
            for (seq, uv) in &lm.observations {
                let Some((po, _)) = layout.find(&BlockKey::Pose(*seq)) else { continue };
                let Ok((r, j_pose, j_lm)) = visual_residual_jacobians(
                    values.pose(*seq),
                    &lm.position,
                    uv,
                    &vp.extrinsics_oc,
                    lm.landmark_id,
                ) else {
                    continue;
                };
                let w = vp.information;
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
        for i in 0..n {
            h[(i, i)] += 1e-9 * h[(i, i)].max(1.0);
        }
        let Some(chol) = h.cholesky() else { break };
        let delta = chol.solve(&b);

        // Backtracking line search on the true cost.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let mut trial = values.clone();
            for (key, off, dim) in &layout.entries {
                if *dim == 0 {
                    continue;
                }
                let step: Vec<f64> =
                    (0..*dim).map(|k| alpha * delta[off + k]).collect();
                trial.set_value(key, trial.value(key).boxplus(&step));
            }
            let mut trial_lms: Vec<LandmarkBlock> = landmarks.to_vec();
            for (li, lm) in trial_lms.iter_mut().enumerate() {
                let lcol = n_state + 3 * li;
                for k in 0..3 {
                    lm.position[k] += alpha * delta[lcol + k];
                }
            }
            let trial_cost = naive_batch_cost(&trial, factors, &trial_lms, vp);
            if trial_cost < cost {
                *values = trial;
                landmarks.clone_from_slice(&trial_lms);
                cost = trial_cost;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved || delta.norm() < 1e-12 {
            break;
        }
    }
    cost
}

fn short_noisy_scenario(window: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.mode = Some(Mode::VioXi5);
    cfg.profile = ProfileConfig {
        preset: None,
        segments: vec![
            skidsteer_core::simulate::Segment { duration: 3.0, v_x: 1.0, omega_z: 0.25 },
            skidsteer_core::simulate::Segment { duration: 3.0, v_x: 0.9, omega_z: -0.35 },
            skidsteer_core::simulate::Segment { duration: 2.0, v_x: 1.1, omega_z: 0.15 },
        ],
        ramp_time: 0.5,
        manifold: [0.0; 6],
    };
    cfg.xi_initial = XiInitialConfig::Offset { delta: [0.02, 0.03, -0.02, 0.04, 0.03] };
    cfg.estimator.window_size = window;
    cfg.estimator.huber_enabled = false;
    cfg.landmarks.count = 120;
    cfg
}

#[test]
fn window_cost_matches_independent_batch_solver() {
    // Run a handful of keyframes with marginalization disabled so the window
    // holds the whole problem, then compare the production solver's final
    // cost against the naive dense solver from the same starting point.
    let mut cfg = short_noisy_scenario(100);
    cfg.noise_scale = Some(0.5);
    let log = simulate_log(&cfg, 13).unwrap();

    // Build the estimator by hand so the problem can be snapshotted.
    let mut est_cfg = cfg.estimator.resolve(cfg.mode()).unwrap();
    est_cfg.marginalization_enabled = false;
    est_cfg.huber_enabled = false;
    let rig = log.header.rig.resolve().unwrap();
    let noise = log.header.noise;
    let xi0 = skidsteer_core::harness::resolve_xi_initial(&cfg, 13).unwrap();
    let mut est = skidsteer_core::estimator::SlidingWindowEstimator::new(
        est_cfg.clone(),
        noise,
        rig,
    );

    let mut frames: Vec<(f64, Vec<skidsteer_core::simulate::FeatureObservation>)> = Vec::new();
    for (_, f) in &log.features {
        match frames.last_mut() {
            Some((t, obs)) if (*t - f.frame_t).abs() < 1e-9 => obs.push(*f),
            _ => frames.push((f.frame_t, vec![*f])),
        }
    }
    let gt = log.ground_truth.as_ref().unwrap();
    let mut last_t = 0.0;
    let mut steps = 0;
    for (t, features) in &frames {
        if *t < log.imu[0].t - 1e-9 {
            continue;
        }
        if est.keyframe_count() == 0 {
            let pose0 = skidsteer_core::harness::interpolate_pose(&gt.poses, *t);
            let boot = skidsteer_core::estimator::Bootstrap {
                pose: pose0,
                velocity: nalgebra::Vector3::new(1.0, 0.0, 0.0),
                xi: xi0,
                manifold: [0.0; 6],
            };
            est.bootstrap(
                &boot,
                &skidsteer_core::estimator::KeyframeInput { t: *t, features, encoders: &[], imu: &[] },
            )
            .unwrap();
            last_t = *t;
            continue;
        }
        let enc: Vec<_> = log
            .encoders
            .iter()
            .filter(|e| e.t >= last_t - 0.05 && e.t <= t + 0.05)
            .cloned()
            .collect();
        let imu: Vec<_> = log
            .imu
            .iter()
            .filter(|m| m.t >= last_t - 1e-9 && m.t <= t + 1e-9)
            .cloned()
            .collect();
        est.step(&skidsteer_core::estimator::KeyframeInput {
            t: *t,
            features,
            encoders: &enc,
            imu: &imu,
        })
        .unwrap();
        last_t = *t;
        steps += 1;
        if steps >= 6 {
            break;
        }
    }

    // Converge the production solver fully on the frozen problem.
    let final_stats = est.resolve().unwrap();
    let (factors, mut landmarks, vp) = est.snapshot_problem();
    let mut values = est.values().clone();
    let oracle_cost = naive_batch_solve(&mut values, &factors, &mut landmarks, &vp);
    let rel = (final_stats.final_cost - oracle_cost).abs() / oracle_cost.abs().max(1e-12);
    assert!(
        rel < 1e-6,
        "production {} vs oracle {} (rel {rel})",
        final_stats.final_cost,
        oracle_cost
    );
}

#[test]
fn sliding_window_matches_full_batch_map() {
    // ~30 keyframes with active marginalization (window 8) against the
    // identical factor graph solved in one batch. Uses mild noise and
    // near-zero process noise on ξ.
    let mut cfg = short_noisy_scenario(8);
    cfg.noise_scale = Some(0.2);
    cfg.noise.sigma_xi_walk = [1e-9; 5];
    cfg.estimator.max_iterations = 25;
    let log = simulate_log(&cfg, 21).unwrap();

    let sliding = run_estimate(&log, &cfg).unwrap();
    let batch = run_batch_oracle(&log, &cfg, Mode::VioXi5).unwrap();
    assert!(sliding.keyframes.len() >= 28, "want ~30 keyframes, got {}", sliding.keyframes.len());
    assert_eq!(sliding.keyframes.len(), batch.keyframes.len());

    let s_last = sliding.keyframes.last().unwrap();
    let b_last = batch.keyframes.last().unwrap();
    assert_eq!(s_last.t, b_last.t);
    let sp = Pose::from(&s_last.pose);
    let bp = Pose::from(&b_last.pose);
    let dp = (sp.position - bp.position).norm();
    let dr = sp.rotation.attitude_error(&bp.rotation).norm();
    assert!(dp < 1e-4, "final position gap {dp}");
    assert!(dr < 1e-5, "final rotation gap {dr}");
}

#[test]
fn batch_recovers_ground_truth_zero_noise() {
    // Zero-noise batch solve on a smooth (corner-free) arc: the optimum is
    // the ground truth.
    let mut cfg = short_noisy_scenario(100);
    cfg.profile = ProfileConfig {
        preset: None,
        segments: vec![skidsteer_core::simulate::Segment {
            duration: 6.0,
            v_x: 1.0,
            omega_z: 0.3,
        }],
        ramp_time: 0.0,
        manifold: [0.0; 6],
    };
    cfg.noise_scale = Some(0.0);
    cfg.xi_initial = XiInitialConfig::Explicit { values: cfg.xi.values };
    let log = simulate_log(&cfg, 5).unwrap();
    let batch = run_batch_oracle(&log, &cfg, Mode::VioXi5).unwrap();
    let gt = log.ground_truth.as_ref().unwrap();
    for k in batch.keyframes.iter().rev().take(3) {
        let gt_pose = skidsteer_core::harness::interpolate_pose(&gt.poses, k.t);
        let p = Pose::from(&k.pose);
        assert!(
            (p.position - gt_pose.position).norm() < 1e-5,
            "pos gap {}",
            (p.position - gt_pose.position).norm()
        );
    }
}
