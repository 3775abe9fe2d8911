//! Probabilistic recurrent graph autoencoder for dynamic functional
//! connectivity networks, with an adversarially regularized classifier head
//! and downstream brain-state analysis.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`]: tape-based reverse-mode autodiff over dense tensors.
//! * [`dynconn`]: sliding-window graph construction from ROI time series
//!   (Ledoit-Wolf shrinkage correlation, proportional thresholding).
//! * [`model`]: the variational recurrent graph autoencoder: conditional
//!   prior, attention message passing, spatial-aware GRU, inner-product
//!   decoder, reconstruction and divergence losses.
//! * [`classifier`]: final-step readout and the subject-level classifier.
//! * [`trainer`]: joint adversarial optimization with Adam.
//! * [`evaluation`]: nested stratified cross validation and metrics.
//! * [`state_analysis`]: embedding-based dynamic connectivity states,
//!   k-means clustering, Markov transition statistics.
//! * [`synthgen`]: synthetic labeled dynamic-graph generator.
//! * [`io`]: manifests, sequence caches, checkpoints, reports.
//!
//! All numeric kernels are generic over [`scalar::Scalar`]; the pipeline
//! itself runs at `f64` (see the aliases below).

// Index-based loops are the clearest form for the dense matrix kernels here.
#![allow(clippy::needless_range_loop)]

pub mod classifier;
pub mod dynconn;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod mat;
pub mod scalar;
pub mod state_analysis;
pub mod synthgen;
pub mod trainer;
pub mod tensor;

pub use mat::Mat;
pub use scalar::Scalar;

/// Double-precision tensor, the pipeline default.
pub type Tensor64 = tensor::Tensor<f64>;
/// Double-precision tape.
pub type Tape64 = tensor::Tape<f64>;
/// Single-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Single-precision tape.
pub type Tape32 = tensor::Tape<f32>;
/// Double-precision dense matrix.
pub type Mat64 = Mat<f64>;

/// Caps the global worker pool. Call once, before any parallel work; later
/// calls are ignored.
pub fn set_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}
