//! End-to-end behavior of the simulate → estimate pipeline.

use skidsteer_core::harness::config::{Mode, ProfileConfig, ScenarioConfig, XiInitialConfig};
use skidsteer_core::harness::{run_estimate, run_estimate_with, simulate_log, xi_true_at};
use skidsteer_core::propagation::{propagate_odometry, OdometryState};
use skidsteer_core::simulate::generate_trajectory;

fn base_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.mode = Some(Mode::VioXi5);
    cfg.profile = ProfileConfig {
        preset: Some("general_motion_quarter".into()),
        ..ProfileConfig::default()
    };
    cfg
}

#[test]
fn zero_noise_dead_reckoning_recovers_ground_truth() {
    // With the simulation grid equal to the encoder grid, odometry
    // propagation of the emitted encoders reproduces the ground-truth path
    // to integration tolerance (1e-6 m per 100 m and better).
    let mut cfg = base_config();
    cfg.noise_scale = Some(0.0);
    cfg.rates.sim_dt = 0.01; // == encoder rate
    cfg.rates.imu_hz = 100.0; // must divide the coarser grid
    cfg.xi_initial = XiInitialConfig::Explicit { values: cfg.xi.values };
    let noise = cfg.noise.resolve().unwrap();
    let profile = cfg.profile.resolve(&cfg.xi.values).unwrap();
    let schedule = cfg.xi.schedule();
    let traj = generate_trajectory(&profile, &schedule, cfg.rates.sim_dt).unwrap();
    let log = simulate_log(&cfg, 3).unwrap();

    let t_end = traj.last().unwrap().t;
    let state = OdometryState::new(traj[0].pose, cfg.xi.values);
    let prop = propagate_odometry(&state, &log.encoders, 0.0, t_end, &noise).unwrap();
    let gt_end = traj.last().unwrap().pose;
    let err = (prop.predicted.pose.position - gt_end.position).norm();
    let path_len: f64 = 51.35; // quarter of the 205.4 m profile
    assert!(
        err < 1e-6 * (path_len / 100.0).max(1.0),
        "dead-reckoning error {err} over {path_len} m"
    );
    assert!(prop.predicted.pose.rotation.frobenius_distance(&gt_end.rotation) < 1e-7);
}

#[test]
fn zero_noise_estimator_tracks_ground_truth() {
    // Noiseless measurements, ξ fixed at the true values: the estimate must
    // sit on the ground truth to solver tolerance.
    let mut cfg = base_config();
    cfg.mode = Some(Mode::VioFixedXi);
    cfg.noise_scale = Some(0.0);
    cfg.xi_initial = XiInitialConfig::Explicit { values: cfg.xi.values };
    let log = simulate_log(&cfg, 1).unwrap();
    let result = run_estimate(&log, &cfg).unwrap();
    assert!(result.diverged_at.is_none());
    let metrics = result.metrics.unwrap();
    assert!(
        metrics.ate_rmse < 1e-5,
        "zero-noise ATE must be < 1e-5 m, got {}",
        metrics.ate_rmse
    );
    assert!(metrics.rotation_rmse < 1e-5);
}

#[test]
fn zero_noise_online_xi_stays_at_truth() {
    // Online ξ estimation on noiseless data starting from the truth: no
    // innovation, so ξ must not drift. The constant-circle profile keeps
    // every derivative smooth, so the synthesized IMU is exactly
    // consistent with the other streams.
    let mut cfg = base_config();
    cfg.profile = ProfileConfig { preset: Some("constant_circle".into()), ..ProfileConfig::default() };
    cfg.noise_scale = Some(0.0);
    cfg.xi_initial = XiInitialConfig::Explicit { values: cfg.xi.values };
    let log = simulate_log(&cfg, 2).unwrap();
    let result = run_estimate(&log, &cfg).unwrap();
    assert!(result.diverged_at.is_none());
    let truth = cfg.xi.values.as_array();
    let n = result.keyframes.len() as f64;
    for k in &result.keyframes {
        for i in 0..5 {
            assert!(
                (k.xi[i] - truth[i]).abs() < 1e-9 * n,
                "xi[{i}] drifted to {} at t={}",
                k.xi[i],
                k.t
            );
        }
    }
}

#[test]
fn noisy_run_converges_and_calibrates() {
    // Paper noise levels on the quarter profile with a perturbed initial ξ:
    // the online estimate should move toward the truth.
    let mut cfg = base_config();
    cfg.xi_initial = XiInitialConfig::Offset { delta: [0.05, 0.08, -0.06, 0.1, 0.1] };
    let log = simulate_log(&cfg, 7).unwrap();
    let result = run_estimate(&log, &cfg).unwrap();
    assert!(result.diverged_at.is_none(), "diverged at {:?}", result.diverged_at);

    let gt = log.ground_truth.as_ref().unwrap();
    let last = result.keyframes.last().unwrap();
    let truth = xi_true_at(gt, last.t).unwrap().as_array();
    let init = result.xi_initial;
    let mut init_err = 0.0;
    let mut final_err = 0.0;
    for i in 0..5 {
        init_err += (init[i] - truth[i]) * (init[i] - truth[i]);
        final_err += (last.xi[i] - truth[i]) * (last.xi[i] - truth[i]);
    }
    assert!(
        final_err.sqrt() < 0.5 * init_err.sqrt(),
        "calibration must contract: init {} final {}",
        init_err.sqrt(),
        final_err.sqrt()
    );
    // Marginal stds contract as well.
    let first_std = &result.keyframes[0].xi_std;
    let last_std = &last.xi_std;
    for i in 0..5 {
        assert!(last_std[i] < first_std[i], "std[{i}] must contract");
    }
    // The window never grows beyond its bound.
    assert!(result.keyframes.len() > 50);
}

#[test]
fn fixed_xi_baseline_is_worse_on_noisy_data() {
    let mut cfg = base_config();
    cfg.xi_initial = XiInitialConfig::Perturbed { std: 8e-2 };
    let log = simulate_log(&cfg, 11).unwrap();
    let online = run_estimate(&log, &cfg).unwrap();
    let fixed = run_estimate_with(&log, &cfg, Mode::VioFixedXi).unwrap();
    let on = online.metrics.unwrap().ate_rmse;
    let fx = fixed.metrics.unwrap().ate_rmse;
    assert!(
        on < fx,
        "online calibration should beat the fixed wrong-ξ baseline: {on} vs {fx}"
    );
}

#[test]
fn vo_mode_runs_without_imu() {
    let mut cfg = base_config();
    cfg.mode = Some(Mode::VoIcr3);
    cfg.xi_initial = XiInitialConfig::Offset { delta: [0.05, 0.08, -0.06, 0.0, 0.0] };
    let log = simulate_log(&cfg, 5).unwrap();
    let result = run_estimate(&log, &cfg).unwrap();
    assert!(result.diverged_at.is_none());
    // α is frozen in this mode.
    let init = result.xi_initial;
    for k in &result.keyframes {
        assert_eq!(k.xi[3], init[3]);
        assert_eq!(k.xi[4], init[4]);
        assert_eq!(k.xi_std[3], 0.0);
    }
    // The ICR parameters should still move toward the truth.
    let gt = log.ground_truth.as_ref().unwrap();
    let last = result.keyframes.last().unwrap();
    let truth = xi_true_at(gt, last.t).unwrap().as_array();
    let mut init_err = 0.0;
    let mut final_err = 0.0;
    for i in 0..3 {
        init_err += (init[i] - truth[i]) * (init[i] - truth[i]);
        final_err += (last.xi[i] - truth[i]) * (last.xi[i] - truth[i]);
    }
    assert!(final_err.sqrt() < 0.7 * init_err.sqrt(), "{} vs {}", final_err.sqrt(), init_err.sqrt());
}

#[test]
fn track_width_initialization_pipeline() {
    let mut cfg = base_config();
    cfg.xi_initial = XiInitialConfig::TrackWidth {};
    let xi = skidsteer_core::harness::resolve_xi_initial(&cfg, 3).unwrap();
    // b-dagger lands near the effective track width Y_l - Y_r (equal to it
    // for ideal alphas; correction factors skew it slightly).
    assert!(xi.y_l > 0.0 && xi.y_r < 0.0);
    let b = xi.y_l - xi.y_r;
    assert!((b - cfg.xi.values.delta_y()).abs() < 0.1, "b-dagger {b}");
}
