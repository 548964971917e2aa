//! Process-wide runtime setup: worker pool and floating-point mode.
//!
//! The tangent pathway scales values by logistic tails, which drives large
//! parts of the f32 graph into subnormal range; subnormal arithmetic runs in
//! microcode at a 10-100x penalty. Flush-to-zero + denormals-are-zero is set
//! on the main thread and every rayon worker so all threads share one FP
//! mode (results must not depend on which worker computes a chunk).

use std::sync::atomic::{AtomicBool, Ordering};

static INITIALIZED: AtomicBool = AtomicBool::new(false);

/// Set FTZ/DAZ on the calling thread. Cheap enough to call at every kernel
/// entry, which keeps the FP mode uniform no matter which thread runs a
/// chunk.
#[inline]
pub fn init_thread_fp() {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        // bit 15 = flush-to-zero, bit 6 = denormals-are-zero
        let mut csr: u32 = 0;
        std::arch::asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack));
        let want = csr | 0x8040;
        if want != csr {
            csr = want;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack, readonly));
        }
    }
}

/// Build the global worker pool (optionally capped) with a uniform FP mode
/// and set that mode on the calling thread. Call once at program start;
/// later calls only fix up the calling thread.
pub fn init(threads: Option<usize>) {
    init_thread_fp();
    if INITIALIZED.swap(true, Ordering::SeqCst) {
        return;
    }
    let mut builder = rayon::ThreadPoolBuilder::new().start_handler(|_| init_thread_fp());
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    // fails only if a global pool already exists; harmless (that pool keeps
    // the default FP mode, and mixed modes across workers would break
    // determinism, so we leave the calling thread authoritative only when
    // the pool is ours)
    let _ = builder.build_global();
}
