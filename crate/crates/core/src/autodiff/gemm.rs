//! Deterministic parallel matrix kernels.
//!
//! Work is split into fixed-size row chunks with disjoint output slices and
//! partial sums are reduced in fixed chunk order, so results are bit-identical
//! for any worker count. `--threads` only changes speed, never values.

use crate::num::Real;
use crate::runtime::init_thread_fp;
use rayon::prelude::*;

/// Row-chunk granularity. A constant (never derived from the thread count) so
/// the summation order is a pure function of the problem size.
const ROW_CHUNK: usize = 64;
/// Below this many multiply-adds the rayon dispatch costs more than it saves.
const PAR_THRESHOLD: usize = 8 * 1024 * 1024;

/// C[m,n] += A[m,k] · B[k,n]
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    init_thread_fp();
    let body = |row0: usize, c_chunk: &mut [T]| {
        init_thread_fp();
        let rows = c_chunk.len() / n;
        for i in 0..rows {
            let arow = &a[(row0 + i) * k..(row0 + i + 1) * k];
            let crow = &mut c_chunk[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv += aik * bv;
                }
            }
        }
    };
    if m * k * n < PAR_THRESHOLD || m == 1 {
        body(0, c);
    } else {
        c.par_chunks_mut(ROW_CHUNK * n)
            .enumerate()
            .for_each(|(ci, chunk)| body(ci * ROW_CHUNK, chunk));
    }
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ  (B stored row-major as [n,k])
///
/// Materializes Bᵀ once and runs the axpy kernel; dot-product kernels leave
/// most of the machine idle at the small inner sizes this crate uses.
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let mut bt = vec![T::ZERO; k * n];
    for j in 0..n {
        for l in 0..k {
            bt[l * n + j] = b[j * k + l];
        }
    }
    gemm_nn(m, k, n, a, &bt, c);
}

/// C[k,n] += A[m,k]ᵀ · B[m,n]
///
/// Parallelized over m-chunks into per-chunk partial buffers which are then
/// reduced sequentially in chunk order.
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    init_thread_fp();
    let body = |m0: usize, m1: usize, out: &mut [T]| {
        init_thread_fp();
        for mm in m0..m1 {
            let arow = &a[mm * k..(mm + 1) * k];
            let brow = &b[mm * n..(mm + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                let orow = &mut out[i * n..(i + 1) * n];
                for (ov, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *ov += av * bv;
                }
            }
        }
    };
    const M_CHUNK: usize = 256;
    if m * k * n < PAR_THRESHOLD || m <= M_CHUNK {
        body(0, m, c);
        return;
    }
    let nchunks = m.div_ceil(M_CHUNK);
    let partials: Vec<Vec<T>> = (0..nchunks)
        .into_par_iter()
        .map(|ci| {
            let mut part = vec![T::ZERO; k * n];
            body(ci * M_CHUNK, ((ci + 1) * M_CHUNK).min(m), &mut part);
            part
        })
        .collect();
    for part in &partials {
        for (cv, &pv) in c.iter_mut().zip(part.iter()) {
            *cv += pv;
        }
    }
}
