use std::time::Instant;
use surfrec_core::autodiff::{gemm_nn, gemm_nt, gemm_tn};

fn t(name: &str, f: impl Fn(), flops: f64, reps: usize) {
    f();
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    let dt = t0.elapsed().as_secs_f64()/reps as f64;
    println!("{name}: {:.2} ms ({:.1} GF/s)", dt*1e3, flops/dt/1e9);
}

fn main() {
    // tangent layer backward shapes at width 64, rays=32, S=31 (2976 tangent rows)
    let m = 2976usize; let k = 64usize; let n = 64usize;
    let a: Vec<f32> = (0..m*k).map(|i| (i%97) as f32*0.01).collect();
    let g: Vec<f32> = (0..m*n).map(|i| (i%89) as f32*0.01).collect();
    let w: Vec<f32> = (0..k*n).map(|i| (i%83) as f32*0.01).collect();
    let fl = (2*m*k*n) as f64;
    t("dX  gemm_nt [2976x64]@[64x64]T", || { let mut c = vec![0.0f32; m*k]; gemm_nt(m, n, k, &g, &w, &mut c); }, fl, 50);
    t("dW  gemm_tn [2976x64]T@[2976x64]", || { let mut c = vec![0.0f32; k*n]; gemm_tn(m, k, n, &a, &g, &mut c); }, fl, 50);
    t("fwd gemm_nn [2976x64]@[64x64]", || { let mut c = vec![0.0f32; m*n]; gemm_nn(m, k, n, &a, &w, &mut c); }, fl, 50);
    // smaller primal shapes
    let m2 = 992usize;
    let a2: Vec<f32> = (0..m2*k).map(|i| (i%97) as f32*0.01).collect();
    let g2: Vec<f32> = (0..m2*n).map(|i| (i%89) as f32*0.01).collect();
    let fl2 = (2*m2*k*n) as f64;
    t("dW  gemm_tn [992x64]T@[992x64] ", || { let mut c = vec![0.0f32; k*n]; gemm_tn(m2, k, n, &a2, &g2, &mut c); }, fl2, 50);
}
