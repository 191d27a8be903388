use skidsteer_core::harness::config::*;
use skidsteer_core::harness::*;
use std::time::Instant;

fn main() {
    let mut cfg = ScenarioConfig::default();
    cfg.mode = Some(Mode::VioXi5);
    cfg.xi_initial = XiInitialConfig::Perturbed { std: 8e-2 };
    let t0 = Instant::now();
    let log = simulate_log(&cfg, 0).unwrap();
    println!("simulate: {:.1} s ({} enc, {} imu, {} feat)", t0.elapsed().as_secs_f64(),
        log.encoders.len(), log.imu.len(), log.features.len());
    let t1 = Instant::now();
    let rr = run_estimate(&log, &cfg).unwrap();
    println!("estimate: {:.1} s, {} keyframes, diverged {:?}", t1.elapsed().as_secs_f64(),
        rr.keyframes.len(), rr.diverged_at);
    let m = rr.metrics.as_ref().unwrap();
    println!("ate {:.3} m rot {:.4} rad drift {:.3} m", m.ate_rmse, m.rotation_rmse, m.final_drift.norm);
    let gt = log.ground_truth.as_ref().unwrap();
    let last = rr.keyframes.last().unwrap();
    let truth = xi_true_at(gt, last.t).unwrap().as_array();
    println!("xi_init {:?}", rr.xi_initial);
    println!("xi_final {:?}", last.xi);
    println!("xi_true {:?}", truth);
}
