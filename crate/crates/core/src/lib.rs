//! Joint camera-pose and neural-SDF surface optimization via volume
//! rendering, with a synthetic-scene harness that makes every stage
//! independently verifiable on a CPU: no GPUs, no external datasets.
//!
//! Pipeline: `scenes` generates ground truth (analytic SDFs, camera rigs,
//! sphere-traced renders, distorted depth); `trainer` jointly optimizes the
//! SDF/color/pose networks plus per-view depth undistortion by volume
//! rendering (`rendering`) under the losses in `losses`; `evalx` extracts
//! meshes and scores geometry (Chamfer) and poses (relative pose error).

pub mod autodiff;
pub mod cameras;
pub mod encoding;
pub mod evalx;
pub mod features;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod num;
pub mod rendering;
pub mod scenes;
pub mod so3;
pub mod trainer;
pub mod rngs;

/// Large tensor buffers churn through the allocator once per graph node per
/// step; glibc's mmap threshold turns that into page-fault traffic. Binaries
/// and test targets opt in via `surfrec_core::use_fast_alloc!()`.
#[macro_export]
macro_rules! use_fast_alloc {
    () => {
        #[global_allocator]
        static GLOBAL_ALLOC: $crate::mimalloc::MiMalloc = $crate::mimalloc::MiMalloc;
    };
}

pub use mimalloc;
pub mod runtime;
