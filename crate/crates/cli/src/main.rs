//! surfrec: synthetic-scene generation, joint pose + neural-SDF training,
//! rendering, mesh extraction, and evaluation, as one deterministic binary.

surfrec_core::use_fast_alloc!();

mod util;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use surfrec_core::cameras::Pose;
use surfrec_core::evalx;
use surfrec_core::networks::Model;
use surfrec_core::num::Real;
use surfrec_core::rendering::render_image;
use surfrec_core::scenes::{
    self, default_intrinsics, read_json, write_json, AnalyticScene, PoseRecord, RigConfig,
    SceneDataset, SceneKind,
};
use surfrec_core::trainer::{Dtype, Trainer};

use util::{data_err, CmdError, CmdResult, RunSnapshot};

#[derive(Parser)]
#[command(name = "surfrec", version, about = "Neural SDF surface reconstruction with joint camera-pose optimization (synthetic desk-scale harness)", disable_help_subcommand = true)]
struct Cli {
    /// Cap the worker-thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Force the fixed reduction order (always on; flag kept for interface
    /// stability).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images, masks, distorted depth, poses).
    Gen(GenArgs),
    /// Train the joint pose + surface model on a dataset.
    Train(TrainArgs),
    /// Render a view through the trained volume renderer.
    Render(RenderArgs),
    /// Extract the SDF zero level set as an OBJ mesh.
    ExtractMesh(ExtractArgs),
    /// Relative pose error between estimated and reference pose files.
    EvalPose(EvalPoseArgs),
    /// Chamfer distance of a mesh against the dataset's analytic surface or
    /// a reference OBJ.
    EvalMesh(EvalMeshArgs),
    /// Finite-difference gradient-integrity suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene kind: sphere | box | torus | two_spheres.
    #[arg(long, default_value = "sphere")]
    scene: String,
    #[arg(long, default_value_t = 8)]
    views: usize,
    /// Square image resolution in pixels.
    #[arg(long, default_value_t = 96)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3.0)]
    camera_radius: f64,
    /// Add a view-dependent specular term (stress test).
    #[arg(long)]
    specular: bool,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key: --set total_steps=100 or
    /// --set loss_weights.feature=0.0 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Convenience override for config.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RenderArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory (defaults to the one recorded in the run).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint tag inside the run directory.
    #[arg(long, default_value = "final")]
    checkpoint: String,
    /// View index to render.
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "final")]
    checkpoint: String,
    /// Marching-cubes grid resolution (cells per axis).
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Half-width of the extraction cube.
    #[arg(long, default_value_t = 1.0)]
    bounds: f64,
    /// Output OBJ path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Estimated poses (JSON array of {view, r, t}).
    #[arg(long)]
    estimated: PathBuf,
    /// Reference poses in the same format.
    #[arg(long)]
    reference: PathBuf,
    /// Optional JSON report output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EvalMeshArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Dataset whose analytic scene is the reference surface.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Reference mesh instead of an analytic surface.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Surface sample count per side.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random seeds per check.
    #[arg(long, default_value_t = 100)]
    seeds: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    surfrec_core::runtime::init(if cli.threads == 0 {
        None
    } else {
        Some(cli.threads)
    });
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::ExtractMesh(a) => cmd_extract(a),
        Command::EvalPose(a) => cmd_eval_pose(a),
        Command::EvalMesh(a) => cmd_eval_mesh(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

fn cmd_gen(a: GenArgs) -> CmdResult<()> {
    let kind = SceneKind::by_name(&a.scene)
        .ok_or_else(|| CmdError::Usage(format!("unknown scene `{}` (sphere|box|torus|two_spheres)", a.scene)))?;
    if a.views < 2 {
        return Err(CmdError::Usage(format!("need at least 2 views, got {}", a.views)));
    }
    let mut scene = AnalyticScene::new(kind);
    scene.specular = a.specular;
    let rig = RigConfig {
        n_views: a.views,
        camera_radius: a.camera_radius,
        ..RigConfig::default()
    };
    let ds = SceneDataset::generate(scene, rig, default_intrinsics(a.res), a.seed)
        .map_err(CmdError::Usage)?;
    ds.save(&a.out).map_err(data_err)?;
    let interior: usize = ds.views.iter().map(|v| v.mask.iter().filter(|&&m| m).count()).sum();
    println!(
        "dataset: {} views at {}x{} ({} masked pixels), scene {:?}, seed {} -> {}",
        ds.meta.views,
        ds.meta.width,
        ds.meta.height,
        interior,
        kind,
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult<()> {
    let mut overrides = a.overrides.clone();
    if let Some(seed) = a.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = util::resolve_config(a.config.as_deref(), &overrides)?;
    let dataset = SceneDataset::load(&a.dataset).map_err(data_err)?;
    let snapshot = RunSnapshot {
        config: cfg.clone(),
        dataset: a.dataset.clone(),
    };
    util::write_snapshot(&a.out, &snapshot)?;
    match cfg.dtype {
        Dtype::F32 => run_train::<f32>(snapshot, dataset, &a.out),
        Dtype::F64 => run_train::<f64>(snapshot, dataset, &a.out),
    }
}

fn run_train<T: Real>(snapshot: RunSnapshot, dataset: SceneDataset, out: &std::path::Path) -> CmdResult<()> {
    let mut trainer =
        Trainer::<T>::new(snapshot.config, dataset).map_err(|e| CmdError::Usage(e.to_string()))?;
    let started = std::time::Instant::now();
    let (first, last) = trainer.run(out).map_err(|e| match e {
        surfrec_core::trainer::TrainError::NumericalFailure(_) => CmdError::Numerical(e.to_string()),
        other => CmdError::Data(other.to_string()),
    })?;
    println!(
        "trained {} steps in {:.1} min: total loss {:.5} -> {:.5}; outputs in {}",
        trainer.step,
        started.elapsed().as_secs_f64() / 60.0,
        first.total,
        last.total,
        out.display()
    );
    Ok(())
}

fn cmd_render(a: RenderArgs) -> CmdResult<()> {
    let snapshot = util::read_snapshot(&a.run)?;
    match snapshot.config.dtype {
        Dtype::F32 => run_render::<f32>(a),
        Dtype::F64 => run_render::<f64>(a),
    }
}

fn run_render<T: Real>(a: RenderArgs) -> CmdResult<()> {
    let (snapshot, dataset, model) =
        util::load_trained_model::<T>(&a.run, a.dataset.as_deref(), &a.checkpoint)?;
    if a.view >= dataset.meta.views {
        return Err(CmdError::Usage(format!(
            "view {} out of range ({} views)",
            a.view, dataset.meta.views
        )));
    }
    let pose = current_pose(&model, &dataset, &snapshot, a.view);
    let img = render_image(
        &model,
        &pose,
        &dataset.intrinsics,
        &snapshot.config.sampling,
        dataset.meta.bounding_radius,
        snapshot.config.encoding.num_freqs_position as f64,
        snapshot.config.encoding.num_freqs_direction as f64,
        snapshot.config.seed,
    );
    std::fs::create_dir_all(&a.out).map_err(data_err)?;
    scenes::formats::write_ppm(&a.out.join(format!("color_{:03}.ppm", a.view)), img.width, img.height, &img.rgb)
        .map_err(data_err)?;
    scenes::formats::write_pfm(&a.out.join(format!("depth_{:03}.pfm", a.view)), img.width, img.height, &img.depth)
        .map_err(data_err)?;
    let normal_rgb: Vec<[f64; 3]> = img
        .normal
        .iter()
        .map(|n| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 1e-9 {
                [
                    0.5 + 0.5 * n[0] / len,
                    0.5 + 0.5 * n[1] / len,
                    0.5 + 0.5 * n[2] / len,
                ]
            } else {
                [0.5; 3]
            }
        })
        .collect();
    scenes::formats::write_ppm(
        &a.out.join(format!("normal_{:03}.ppm", a.view)),
        img.width,
        img.height,
        &normal_rgb,
    )
    .map_err(data_err)?;
    println!("rendered view {} -> {}", a.view, a.out.display());
    Ok(())
}

fn current_pose<T: Real>(
    model: &Model<T>,
    dataset: &SceneDataset,
    snapshot: &RunSnapshot,
    view: usize,
) -> Pose {
    match snapshot.config.pose_mode {
        surfrec_core::networks::PoseMode::FrozenGt => dataset.views[view].pose_gt,
        _ => model.pose.eval_pose(&model.params, view),
    }
}

fn cmd_extract(a: ExtractArgs) -> CmdResult<()> {
    let snapshot = util::read_snapshot(&a.run)?;
    match snapshot.config.dtype {
        Dtype::F32 => run_extract::<f32>(a),
        Dtype::F64 => run_extract::<f64>(a),
    }
}

fn run_extract<T: Real>(a: ExtractArgs) -> CmdResult<()> {
    if a.resolution < 8 {
        return Err(CmdError::Usage(format!(
            "marching-cubes resolution must be >= 8, got {}",
            a.resolution
        )));
    }
    let (snapshot, _dataset, model) =
        util::load_trained_model::<T>(&a.run, a.dataset.as_deref(), &a.checkpoint)?;
    let level = snapshot.config.encoding.num_freqs_position as f64;
    let mut sdf = |pts: &[f64]| -> Vec<f64> {
        let p: Vec<T> = pts.iter().map(|&v| T::from_f64(v)).collect();
        model
            .sdf
            .sdf_values(&model.params, &p, level)
            .into_iter()
            .map(|v| v.to_f64())
            .collect()
    };
    let mut grad = |pts: &[f64]| -> Vec<[f64; 3]> {
        let p: Vec<T> = pts.iter().map(|&v| T::from_f64(v)).collect();
        let (_, normals) = model.sdf.sdf_values_and_normals(&model.params, &p, level);
        normals
            .into_iter()
            .map(|n| [n[0].to_f64(), n[1].to_f64(), n[2].to_f64()])
            .collect()
    };
    let b = a.bounds;
    let mesh = evalx::marching_cubes(&mut sdf, &mut grad, ([-b, -b, -b], [b, b, b]), a.resolution);
    if mesh.is_empty() {
        eprintln!("warning: empty zero-level set, writing empty mesh");
    }
    if let Some(parent) = a.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(data_err)?;
        }
    }
    evalx::write_obj(&mesh, &a.out).map_err(data_err)?;
    println!(
        "mesh: {} vertices, {} triangles at {}^3 -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        a.resolution,
        a.out.display()
    );
    Ok(())
}

fn load_poses(path: &std::path::Path) -> CmdResult<Vec<Pose>> {
    let records: Vec<PoseRecord> = read_json(path).map_err(data_err)?;
    let mut sorted = records.clone();
    sorted.sort_by_key(|r| r.view);
    for (i, r) in sorted.iter().enumerate() {
        if r.view != i {
            return Err(CmdError::Data(format!(
                "{}: missing pose for view {i}",
                path.display()
            )));
        }
    }
    Ok(sorted.iter().map(|r| r.to_pose()).collect())
}

fn cmd_eval_pose(a: EvalPoseArgs) -> CmdResult<()> {
    let est = load_poses(&a.estimated)?;
    let refp = load_poses(&a.reference)?;
    let report = evalx::relative_pose_error(&est, &refp).map_err(CmdError::Data)?;
    println!("pairs evaluated: {}", report.pairs.len());
    println!("translation gauge scale: {:.6}", report.translation_scale);
    println!("{:>4} {:>4} {:>12} {:>12}", "i", "j", "rpe_r (deg)", "rpe_t (x100)");
    for (i, j, r, t) in &report.pairs {
        println!("{i:>4} {j:>4} {r:>12.6} {t:>12.6}");
    }
    println!("mean rpe_r: {:.6} deg", report.mean_rpe_r);
    println!("mean rpe_t: {:.6} (x100)", report.mean_rpe_t);
    if let Some(path) = a.json {
        write_json(&path, &report).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_eval_mesh(a: EvalMeshArgs) -> CmdResult<()> {
    let mesh = evalx::read_obj(&a.mesh).map_err(data_err)?;
    if mesh.is_empty() {
        return Err(CmdError::Data(format!("{}: empty mesh", a.mesh.display())));
    }
    let seed = a.seed.unwrap_or(0);
    let mesh_pts = evalx::sample_mesh_surface(&mesh, a.samples, seed ^ 1);
    let ref_pts: Vec<[f64; 3]> = match (&a.dataset, &a.reference) {
        (Some(ds_path), None) => {
            let ds = SceneDataset::load(ds_path).map_err(data_err)?;
            let scene = ds.meta.scene;
            match scene.sample_surface_exact(a.samples, seed ^ 2) {
                Some(pts) => pts,
                None => {
                    // no closed-form sampler: sample a fine reference mesh of
                    // the analytic field
                    let mut sdf = |pts: &[f64]| -> Vec<f64> {
                        pts.chunks_exact(3).map(|p| scene.sdf([p[0], p[1], p[2]])).collect()
                    };
                    let mut grad = |pts: &[f64]| -> Vec<[f64; 3]> {
                        pts.chunks_exact(3).map(|p| scene.normal([p[0], p[1], p[2]])).collect()
                    };
                    let ref_mesh = evalx::marching_cubes(
                        &mut sdf,
                        &mut grad,
                        ([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]),
                        96,
                    );
                    evalx::sample_mesh_surface(&ref_mesh, a.samples, seed ^ 2)
                }
            }
        }
        (None, Some(ref_path)) => {
            let ref_mesh = evalx::read_obj(ref_path).map_err(data_err)?;
            if ref_mesh.is_empty() {
                return Err(CmdError::Data(format!("{}: empty mesh", ref_path.display())));
            }
            evalx::sample_mesh_surface(&ref_mesh, a.samples, seed ^ 2)
        }
        _ => {
            return Err(CmdError::Usage(
                "eval-mesh needs exactly one of --dataset or --reference".into(),
            ))
        }
    };
    let d = evalx::chamfer(&mesh_pts, &ref_pts);
    println!("chamfer: {d:.6}");
    if let Some(path) = a.json {
        write_json(&path, &serde_json::json!({ "chamfer": d, "samples": a.samples }))
            .map_err(data_err)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult<()> {
    let outcomes = surfrec_core::gradcheck::run_suite(a.seeds);
    let mut all_ok = true;
    for o in &outcomes {
        let status = if o.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<14} seeds={} checked={} skipped_nonsmooth={} worst_rel_err={:.3e}",
            o.name, o.seeds, o.coords_checked, o.coords_skipped_nonsmooth, o.worst_rel_err
        );
        if let Some(f) = &o.failure {
            println!("      {f}");
            all_ok = false;
        }
    }
    if all_ok {
        Ok(())
    } else {
        Err(CmdError::Numerical("gradient check failed".into()))
    }
}
