use skidsteer_core::geom::Pose;
use skidsteer_core::harness::config::*;
use skidsteer_core::harness::*;

fn main() {
    for scale in [0.4, 0.2, 0.1, 0.05] {
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
        cfg.estimator.window_size = 8;
        cfg.estimator.huber_enabled = false;
        cfg.estimator.max_iterations = 25;
        cfg.landmarks.count = 120;
        cfg.noise_scale = Some(scale);
        cfg.noise.sigma_xi_walk = [1e-9; 5];
        let log = simulate_log(&cfg, 21).unwrap();
        let sliding = run_estimate(&log, &cfg).unwrap();
        let batch = run_batch_oracle(&log, &cfg, Mode::VioXi5).unwrap();
        let sp = Pose::from(&sliding.keyframes.last().unwrap().pose);
        let bp = Pose::from(&batch.keyframes.last().unwrap().pose);
        let dp = (sp.position - bp.position).norm();
        let dr = sp.rotation.attitude_error(&bp.rotation).norm();
        println!("scale {scale}: pos gap {dp:.3e} rot gap {dr:.3e}  (kf {} vs {})",
            sliding.keyframes.len(), batch.keyframes.len());
    }
}
