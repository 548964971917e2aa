use std::time::Instant;
use surfrec_core::autodiff::{Tape, Tensor};

fn time_case(name: &str, n: usize, layers: usize, reps: usize, bwd: bool) {
    let w: Vec<f32> = (0..256*256).map(|i| (i % 89) as f32 * 0.001).collect();
    let x: Vec<f32> = (0..n*256).map(|i| (i % 97) as f32 * 0.001).collect();
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let mut cur = tape.constant(Tensor::new(vec![n, 256], x.clone()));
        let mut ws = Vec::new();
        for _ in 0..layers {
            let wn = tape.leaf(Tensor::new(vec![256, 256], w.clone()));
            ws.push(wn);
            cur = tape.matmul(cur, wn);
        }
        if bwd {
            let root = tape.mean_all(cur);
            tape.backward(root);
            std::hint::black_box(tape.grad(ws[0]).unwrap().data()[0]);
        } else {
            std::hint::black_box(tape.value(cur).data()[0]);
        }
    }
    println!("{name}: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);
}

fn main() {
    time_case("8x matmul [2208x256] fwd      ", 2208, 8, 5, false);
    time_case("8x matmul [2208x256] fwd+bwd  ", 2208, 8, 5, true);

    // elementwise chain backward
    let n = 2208usize;
    let x: Vec<f32> = (0..n*256).map(|i| (i % 97) as f32 * 0.001 - 0.1).collect();
    let t0 = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let mut cur = tape.leaf(Tensor::new(vec![n, 256], x.clone()));
        for _ in 0..16 {
            cur = tape.sigmoid(cur);
        }
        let root = tape.mean_all(cur);
        tape.backward(root);
        std::hint::black_box(tape.grad(cur).is_some());
    }
    println!("16x sigmoid [2208x256] fwd+bwd: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    // mul with block broadcast backward
    let d: Vec<f32> = (0..736*256).map(|i| (i % 83) as f32 * 0.001).collect();
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::<f32>::new();
        let big = tape.leaf(Tensor::new(vec![n, 256], x.clone()));
        let small = tape.leaf(Tensor::new(vec![736, 256], d.clone()));
        let mut cur = big;
        for _ in 0..8 {
            cur = tape.mul(cur, small);
        }
        let root = tape.mean_all(cur);
        tape.backward(root);
        std::hint::black_box(tape.grad(big).is_some());
    }
    println!("8x mul-block [2208x256] fwd+bwd: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);
}
