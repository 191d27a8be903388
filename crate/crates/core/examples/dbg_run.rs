use skidsteer_core::estimator::*;
use skidsteer_core::geom::Pose;
use skidsteer_core::harness::config::*;
use skidsteer_core::harness::*;
use skidsteer_core::simulate::FeatureObservation;
use nalgebra::Vector3;

fn main() {
    let mut cfg = ScenarioConfig::default();
    cfg.mode = Some(Mode::VoIcr3);
    
    cfg.profile = ProfileConfig { preset: Some("general_motion_quarter".into()), ..Default::default() };
    cfg.xi_initial = XiInitialConfig::Offset { delta: [0.05, 0.08, -0.06, 0.0, 0.0] };
    let log = simulate_log(&cfg, 5).unwrap();
    println!("enc {} imu {} feats {}", log.encoders.len(), log.imu.len(), log.features.len());

    let mut est_cfg = cfg.estimator.resolve(cfg.mode()).unwrap();
    est_cfg.use_imu = false;
    est_cfg.calib_mode = CalibMode::Icr3;
    let rig = log.header.rig.resolve().unwrap();
    let noise = log.header.noise;
    let xi0 = resolve_xi_initial(&cfg, 5).unwrap();
    let mut est = SlidingWindowEstimator::new(est_cfg.clone(), noise, rig);

    let mut frames: Vec<(f64, Vec<FeatureObservation>)> = Vec::new();
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
        
        if est.keyframe_count() == 0 {
            let pose0 = interpolate_pose(&gt.poses, *t);
            let v0 = (interpolate_pose(&gt.poses, *t + 0.2).position - pose0.position) / 0.2;
            let boot = Bootstrap { pose: pose0, velocity: v0, xi: xi0, manifold: [0.0,0.0,0.0,0.0,0.0, -pose0.position.z] };
            est.bootstrap(&boot, &KeyframeInput { t: *t, features, encoders: &[], imu: &[] }).unwrap();
            last_t = *t;
            continue;
        }
        let enc: Vec<_> = log.encoders.iter().filter(|e| e.t >= last_t - 0.02 && e.t <= t + 0.02).cloned().collect();
        let predicted = est.predict_pose(*t, &enc).unwrap();
        if !should_create_keyframe(est.latest_pose().unwrap(), &predicted, &est_cfg) { continue; }
        let imu: Vec<skidsteer_core::propagation::ImuReading> = Vec::new();
        match est.step(&KeyframeInput { t: *t, features, encoders: &enc, imu: &imu }) {
            Ok(s) => {
                let stats = s.stats.unwrap();
                let gtp = interpolate_pose(&gt.poses, *t);
                let err = (s.pose.position - gtp.position).norm();
                if steps < 12 || steps % 20 == 0 {
                    println!("step {steps} t={t:.1} iters={} cost {:.3e} -> {:.3e} poserr {err:.2e}",
                        stats.iterations, stats.initial_cost, stats.final_cost);
                }
                steps += 1;
                last_t = *t;
            }
            Err(e) => { println!("STEP FAILED at t={t}: {e}"); break; }
        }
    }
    println!("total steps {steps}");
    let _ = Pose::identity();
    let _ = Vector3::<f64>::zeros();
}
