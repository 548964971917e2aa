use std::time::Instant;
use rayon::prelude::*;

fn main() {
    let mut v = vec![1.0f32; 32 * 1024];
    for _ in 0..10 {
        v.par_chunks_mut(16 * 1024).for_each(|c| { for x in c { *x += 1.0; } });
    }
    let reps = 500;
    let t0 = Instant::now();
    for _ in 0..reps {
        v.par_chunks_mut(16 * 1024).for_each(|c| { for x in c { *x += 1.0; } });
    }
    println!("par map 32k f32 (2 chunks): {:.3} ms/call", t0.elapsed().as_secs_f64()/reps as f64 * 1e3);
    let t0 = Instant::now();
    for _ in 0..reps {
        for x in v.iter_mut() { *x += 1.0; }
    }
    println!("serial map 32k f32: {:.3} ms/call", t0.elapsed().as_secs_f64()/reps as f64 * 1e3);
    let mut big = vec![1.0f32; 2 * 1024 * 1024];
    let t0 = Instant::now();
    for _ in 0..50 {
        big.par_chunks_mut(64 * 1024).for_each(|c| { for x in c { *x = x.exp().ln() + 0.1; } });
    }
    println!("par heavy 2M f32: {:.2} ms/call", t0.elapsed().as_secs_f64()/50.0 * 1e3);
    let t0 = Instant::now();
    for _ in 0..50 {
        for x in big.iter_mut() { *x = x.exp().ln() + 0.1; }
    }
    println!("serial heavy 2M f32: {:.2} ms/call", t0.elapsed().as_secs_f64()/50.0 * 1e3);
}
