//! Learning-from-noise denoising of ASL perfusion (CBF) images.
//!
//! The crate holds everything that is pure computation:
//!
//! * [`tensor`], [`conv`] and [`graph`]: a dense tensor type and a small
//!   reverse-mode autodiff engine covering the ops the network needs.
//! * [`network`]: the dilated wide activation network (DWAN), its parameter
//!   set and a structural audit.
//! * [`optim`] and [`trainer`]: L1/L2 losses, ADAM and the mini-batch
//!   training loop for noisy input/reference pairs.
//! * [`phantom`]: a synthetic ASL subject generator with segment averaging
//!   and a pseudo gold standard.
//! * [`metrics`]: PSNR, SSIM, ROI SNR, GM/WM contrast and voxelwise
//!   correlation maps.
//!
//! File formats, dataset layout and the command line live in the `asldn`
//! companion crate.

#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod conv;
mod error;
pub mod filter;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod optim;
pub mod phantom;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use loss::LossKind;
pub use network::{Dwan, DwanSpec, InitScheme, NetworkParameters};
pub use tensor::{DType, Scalar, Tensor};
