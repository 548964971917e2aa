use std::time::Instant;
use surfrec_core::networks::PoseMode;
use surfrec_core::rendering::SamplingConfig;
use surfrec_core::scenes::{default_intrinsics, AnalyticScene, RigConfig, SceneKind};
use surfrec_core::trainer::{Dtype, TrainConfig, Trainer};

fn bench<T: surfrec_core::num::Real>(name: &str, rays: usize, coarse: usize, rounds: usize, per: usize, full_loss: bool) {
    let ds = surfrec_core::scenes::SceneDataset::generate(
        AnalyticScene::new(SceneKind::Sphere { radius: 0.5 }),
        RigConfig::default(),
        default_intrinsics(96),
        1,
    ).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.rays_per_batch = rays;
    cfg.sampling = SamplingConfig { n_coarse: coarse, n_importance_rounds: rounds, n_importance_per_round: per, jitter: true, up_sample_s_base: 32.0 };
    cfg.pose_mode = if full_loss { PoseMode::Delta } else { PoseMode::FrozenGt };
    cfg.pose_init_noise_rot = 0.05;
    cfg.pose_init_noise_trans = 0.02;
    if !full_loss { cfg.loss_weights.feature = 0.0; cfg.loss_weights.depth = 0.0; }
    cfg.total_steps = 8000;
    let mut tr: Trainer<T> = Trainer::new(cfg, ds).unwrap();
    for s in 0..3 { tr.train_step(s).unwrap(); }
    let t0 = Instant::now();
    let n = 10;
    for s in 3..3+n { tr.train_step(s).unwrap(); }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("{name}: {:.1} ms/step -> 5000 steps = {:.1} min, 8000 = {:.1} min", dt*1e3, dt*5000.0/60.0, dt*8000.0/60.0);
}

fn main() {
    let _ = Dtype::F32;
    bench::<f32>("f32 rays=32 s=16+2x4 rgb-only ", 32, 16, 2, 4, false);
    bench::<f32>("f32 rays=32 s=16+2x8 rgb-only ", 32, 16, 2, 8, false);
    bench::<f32>("f32 rays=48 s=16+2x8 rgb-only ", 48, 16, 2, 8, false);
    bench::<f32>("f32 rays=48 s=16+2x8 full     ", 48, 16, 2, 8, true);
    bench::<f32>("f32 rays=64 s=24+2x8 full     ", 64, 24, 2, 8, true);
    bench::<f64>("f64 rays=32 s=16+2x8 rgb-only ", 32, 16, 2, 8, false);
}
