//! Learned coordinatewise LSTM optimizers informed by dynamic mode
//! decomposition (DMD) eigenvalues of the ongoing optimization trajectory.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! * [`linalg`]: thin SVD, pseudoinverse and small nonsymmetric eigenvalues.
//! * [`dmd`]: snapshot window and DMD eigenvalue features.
//! * [`optimizer_net`]: the two-layer coordinatewise LSTM optimizer.
//! * [`classic`]: Adam and SGD, used as baselines and as the meta-optimizer.
//! * [`optimizee`]: quadratic and MLP-classifier tasks.
//! * [`datasets`]: IDX and CIFAR-10 readers and a seeded batch sampler.
//! * [`meta_train`]: truncated-BPTT meta-training and evaluation.
//! * [`tasks`] and [`report`]: the benchmark task registry and CSV/SVG output.

// Numeric kernels index several arrays with one loop variable.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod classic;
pub mod datasets;
pub mod dmd;
pub mod linalg;
pub mod meta_train;
pub mod optimizee;
pub mod optimizer_net;
pub mod report;
pub mod rng;
pub mod tasks;
