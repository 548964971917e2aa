use std::time::Instant;
use surfrec_core::networks::PoseMode;
use surfrec_core::rendering::SamplingConfig;
use surfrec_core::scenes::{default_intrinsics, AnalyticScene, RigConfig, SceneKind};
use surfrec_core::trainer::{TrainConfig, Trainer};

fn main() {
    let t0 = Instant::now();
    let ds = surfrec_core::scenes::SceneDataset::generate(
        AnalyticScene::new(SceneKind::Sphere { radius: 0.5 }),
        RigConfig::default(),
        default_intrinsics(96),
        1,
    ).unwrap();
    println!("dataset: {:.2}s", t0.elapsed().as_secs_f64());
    let mut cfg = TrainConfig::default();
    cfg.rays_per_batch = 32;
    cfg.sampling = SamplingConfig { n_coarse: 16, n_importance_rounds: 2, n_importance_per_round: 4, jitter: true, up_sample_s_base: 32.0 };
    cfg.pose_mode = PoseMode::FrozenGt;
    cfg.loss_weights.feature = 0.0;
    cfg.loss_weights.depth = 0.0;
    cfg.total_steps = 5000;
    let t0 = Instant::now();
    let mut tr: Trainer<f32> = Trainer::new(cfg, ds).unwrap();
    println!("trainer init: {:.2}s", t0.elapsed().as_secs_f64());
    for s in 0..5 {
        let t0 = Instant::now();
        tr.train_step(s).unwrap();
        println!("step {s}: {:.1} ms", t0.elapsed().as_secs_f64()*1e3);
    }
}
