//! Modular affinity-based knowledge distillation (mAKD).
//!
//! A distillation objective is assembled from three swappable stages applied
//! to a batch of penultimate features `z` (one row per sample):
//!
//! 1. an [`affinity`] metric turning `z` into a `b x b` matrix `G`,
//! 2. a [`normalise`] function producing `f(G)`,
//! 3. a [`loss`] comparing the student's and teacher's normalised matrices.
//!
//! Every stage exposes a forward function and a vector-Jacobian product, and
//! [`makd`] chains them into the value and gradient of the full objective for
//! all 80 combinations. [`gnorp`] adjusts the distillation weight so that the
//! distillation gradient norm tracks a fixed multiple of the classification
//! gradient norm. [`train`] is a small MLP teacher/student kit used to run the
//! objectives end to end, and [`fit`] holds the double-exponential curve fit
//! used to pick a static weight from a random search.
//!
//! The crate is `no_std` and only needs `alloc`. Transcendental functions go
//! through `libm`, so results are bit-identical across platforms.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod affinity;
pub mod error;
pub mod fit;
pub mod gnorp;
pub mod gradcheck;
pub mod loss;
pub mod makd;
pub(crate) mod math;
pub mod matrix;
pub mod normalise;
pub mod rng;
pub mod train;

pub use affinity::AffinityKind;
pub use error::{Error, Result};
pub use gnorp::{AdamParams, GnorpState};
pub use loss::LossKind;
pub use makd::MakdVariant;
pub use matrix::Matrix;
pub use normalise::NormKind;
pub use rng::Rng;

/// Guard used by every division whose denominator can vanish.
pub const EPS: f64 = 1e-12;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
