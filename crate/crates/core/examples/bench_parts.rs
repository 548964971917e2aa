use std::time::Instant;
use surfrec_core::autodiff::{gemm_nn, gemm_nt, gemm_tn, Binding, Tape, Tensor};
use surfrec_core::networks::{Model, NetworkConfig, PoseMode};
use surfrec_core::cameras::Pose;

fn main() {
    // raw gemm throughput inside the crate build
    let (m, k, n) = (2208usize, 256usize, 256usize);
    let a: Vec<f32> = (0..m*k).map(|i| (i % 97) as f32 * 0.01).collect();
    let b: Vec<f32> = (0..k*n).map(|i| (i % 89) as f32 * 0.01).collect();
    let mut c = vec![0.0f32; m*n];
    let flops = (2*m*k*n) as f64;
    for name in ["nn", "nt", "tn"] {
        let reps = 20;
        let t0 = Instant::now();
        for _ in 0..reps {
            c.iter_mut().for_each(|v| *v = 0.0);
            match name {
                "nn" => gemm_nn(m, k, n, &a, &b, &mut c),
                "nt" => gemm_nt(m, n, k, &a, &b, &mut c),
                "tn" => { let b2: Vec<f32> = (0..m*n).map(|i| (i % 83) as f32 * 0.01).collect(); let mut ct = vec![0.0f32; k*n]; gemm_tn(m, k, n, &a, &b2, &mut ct); }
                _ => unreachable!(),
            }
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!("gemm {name}: {:.1} GFLOP/s", flops / dt / 1e9);
    }

    // sdf network graph eval: forward only, with tangents, with backward
    let model: Model<f32> = Model::new(&NetworkConfig::default(), 2, PoseMode::Absolute, vec![Pose::identity(); 2], 1);
    let npts = 736usize;
    let pts: Vec<f32> = (0..npts*3).map(|i| ((i%617) as f32)*0.003 - 0.9).collect();
    for (name, normals, bwd) in [("sdf fwd", false, false), ("sdf fwd+tan", true, false), ("sdf fwd+tan+bwd", true, true)] {
        let reps = 5;
        let t0 = Instant::now();
        for _ in 0..reps {
            let tape = Tape::<f32>::new();
            let binding = if bwd { Binding::bind_all(&tape, &model.params) } else { Binding::bind_constants(&tape, &model.params) };
            let x = tape.constant(Tensor::new(vec![npts, 3], pts.clone()));
            let ev = model.sdf.eval_graph(&tape, &binding, x, 6.0, normals);
            if bwd {
                let root = tape.mean_all(ev.sdf);
                let root = if let Some(nr) = ev.normals { tape.add(root, tape.mean_all(nr)) } else { root };
                tape.backward(root);
            } else {
                std::hint::black_box(tape.value(ev.sdf).data()[0]);
            }
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!("{name} ({npts} pts): {:.1} ms", dt * 1e3);
    }
}
