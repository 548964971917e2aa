surfrec_core::use_fast_alloc!();
use std::time::Instant;
use surfrec_core::networks::{NetworkConfig, PoseMode};
use surfrec_core::rendering::SamplingConfig;
use surfrec_core::scenes::{default_intrinsics, AnalyticScene, RigConfig, SceneKind};
use surfrec_core::trainer::{TrainConfig, Trainer};

fn desk_network(width: usize) -> NetworkConfig {
    NetworkConfig {
        sdf_hidden_size: width,
        n_features: width,
        color_hidden_size: width,
        ..NetworkConfig::default()
    }
}

fn bench(name: &str, width: usize, rays: usize, coarse: usize, rounds: usize, per: usize, full: bool) {
    let ds = surfrec_core::scenes::SceneDataset::generate(
        AnalyticScene::new(SceneKind::Sphere { radius: 0.5 }),
        RigConfig::default(),
        default_intrinsics(96),
        1,
    ).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.network = desk_network(width);
    cfg.rays_per_batch = rays;
    cfg.sampling = SamplingConfig { n_coarse: coarse, n_importance_rounds: rounds, n_importance_per_round: per, jitter: true, up_sample_s_base: 32.0 };
    if full {
        cfg.pose_mode = PoseMode::Delta;
        cfg.pose_init_noise_rot = 0.08;
        cfg.pose_init_noise_trans = 0.05;
    } else {
        cfg.pose_mode = PoseMode::FrozenGt;
        cfg.loss_weights.feature = 0.0;
        cfg.loss_weights.depth = 0.0;
    }
    cfg.total_steps = 8000;
    let mut tr: Trainer<f32> = Trainer::new(cfg, ds).unwrap();
    for s in 0..2 { tr.train_step(s).unwrap(); }
    let t0 = Instant::now();
    let n = 20;
    for s in 2..2+n { tr.train_step(s).unwrap(); }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("{name}: {:.0} ms/step | 5000 = {:.1} min | 8000 = {:.1} min", dt*1e3, dt*5000.0/60.0, dt*8000.0/60.0);
}

fn main() {
    surfrec_core::runtime::init(None);
    bench("w64  rays=32 16+2x8 rgb ", 64, 32, 16, 2, 8, false);
    bench("w64  rays=48 16+2x8 full", 64, 48, 16, 2, 8, true);
    bench("w64  rays=64 24+2x8 full", 64, 64, 24, 2, 8, true);
    bench("w96  rays=48 16+2x8 full", 96, 48, 16, 2, 8, true);
}
