use std::time::Instant;
use surfrec_core::autodiff::{gemm_nn, Tape, Tensor};

fn main() {
    let n = 736usize;
    let w: Vec<f32> = (0..256*256).map(|i| (i % 89) as f32 * 0.001).collect();
    let x: Vec<f32> = (0..n*256).map(|i| (i % 97) as f32 * 0.001).collect();

    // raw gemm chain
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let mut cur = x.clone();
        for _ in 0..8 {
            let mut out = vec![0.0f32; n * 256];
            gemm_nn(n, 256, 256, &cur, &w, &mut out);
            cur = out;
        }
        std::hint::black_box(cur[0]);
    }
    println!("raw 8x gemm [{}x256]@[256x256]: {:.1} ms", n, t0.elapsed().as_secs_f64()/reps as f64*1e3);

    // tape matmul chain
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let wn = tape.constant(Tensor::new(vec![256, 256], w.clone()));
        let mut cur = tape.constant(Tensor::new(vec![n, 256], x.clone()));
        for _ in 0..8 {
            cur = tape.matmul(cur, wn);
        }
        std::hint::black_box(tape.value(cur).data()[0]);
    }
    println!("tape 8x matmul: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    // tape elementwise chain
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let mut cur = tape.constant(Tensor::new(vec![n, 256], x.clone()));
        for _ in 0..24 {
            cur = tape.softplus(cur);
        }
        std::hint::black_box(tape.value(cur).data()[0]);
    }
    println!("tape 24x softplus [{}x256]: {:.1} ms", n, t0.elapsed().as_secs_f64()/reps as f64*1e3);

    // tape concat_rows (the tangent stack triple)
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let cur = tape.constant(Tensor::new(vec![n, 256], x.clone()));
        for _ in 0..16 {
            let c3 = tape.concat_rows(&[cur, cur, cur]);
            std::hint::black_box(tape.value(c3).numel());
        }
    }
    println!("tape 16x concat3+value [{}x256]: {:.1} ms", n, t0.elapsed().as_secs_f64()/reps as f64*1e3);
}
