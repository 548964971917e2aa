surfrec_core::use_fast_alloc!();

use std::time::Instant;
use surfrec_core::evalx::{chamfer, marching_cubes, sample_mesh_surface};
use surfrec_core::networks::{NetworkConfig, PoseMode};
use surfrec_core::rendering::SamplingConfig;
use surfrec_core::scenes::{default_intrinsics, AnalyticScene, RigConfig, SceneKind};
use surfrec_core::trainer::{TrainConfig, Trainer};

fn main() {
    surfrec_core::runtime::init(None);
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let scene = AnalyticScene::new(SceneKind::Sphere { radius: 0.5 });
    let ds = surfrec_core::scenes::SceneDataset::generate(
        scene, RigConfig::default(), default_intrinsics(96), 1,
    ).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.network = NetworkConfig { sdf_hidden_size: 64, n_features: 64, color_hidden_size: 64, ..NetworkConfig::default() };
    cfg.rays_per_batch = 32;
    cfg.sampling = SamplingConfig { n_coarse: 16, n_importance_rounds: 2, n_importance_per_round: 8, jitter: true, up_sample_s_base: 32.0 };
    cfg.pose_mode = PoseMode::FrozenGt;
    cfg.loss_weights.feature = 0.0;
    cfg.loss_weights.depth = 0.0;
    cfg.total_steps = steps;
    cfg.seed = 5;
    cfg.rays_per_batch = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    cfg.group_lr.deviation = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    cfg.geometry_warmup_steps = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut tr: Trainer<f32> = Trainer::new(cfg, ds).unwrap();
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join("surfrec_c3_quality");
    let _ = std::fs::remove_dir_all(&dir);
    let (first, last) = tr.run(&dir).unwrap();
    println!("train {:.1} min; loss {:.4} -> {:.4}; s = {:.1}", t0.elapsed().as_secs_f64()/60.0, first.total, last.total, tr.model.deviation.s_value(&tr.model.params));

    // mesh + chamfer vs analytic sphere
    let t0 = Instant::now();
    let model = &tr.model;
    let mut sdf = |pts: &[f64]| -> Vec<f64> {
        let p: Vec<f32> = pts.iter().map(|&v| v as f32).collect();
        model.sdf.sdf_values(&model.params, &p, 6.0).into_iter().map(|v| v as f64).collect()
    };
    let mut grad = |pts: &[f64]| -> Vec<[f64; 3]> {
        let p: Vec<f32> = pts.iter().map(|&v| v as f32).collect();
        let (_, n) = model.sdf.sdf_values_and_normals(&model.params, &p, 6.0);
        n.into_iter().map(|g| [g[0] as f64, g[1] as f64, g[2] as f64]).collect()
    };
    let mesh = marching_cubes(&mut sdf, &mut grad, ([-1.0; 3], [1.0; 3]), 64);
    println!("mesh: {} verts, {} tris, closed={}, euler={}", mesh.vertices.len(), mesh.triangles.len(), mesh.is_closed(), mesh.euler_characteristic());
    let mesh_pts = sample_mesh_surface(&mesh, 100_000, 2);
    let sphere = AnalyticScene::new(SceneKind::Sphere { radius: 0.5 });
    let sphere_pts = sphere.sample_surface_exact(100_000, 3).unwrap();
    let d = chamfer(&mesh_pts, &sphere_pts);
    println!("chamfer vs analytic sphere: {:.5} (limit 0.02); eval {:.1}s", d, t0.elapsed().as_secs_f64());
}
