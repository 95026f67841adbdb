//! Local differential privacy for multi-user distributed autoencoders.
//!
//! Two mechanisms train the same model:
//!
//! - **SPOF** perturbs the coefficients of a second-order Taylor expansion of
//!   the reconstruction loss once per user step, with an optional stabilizing
//!   shift of the decoder weights.
//! - **DP-SGD** clips and perturbs each user's gradient.
//!
//! Around them sit the sensitivity analysis, the environmental input-noise
//! analysis, a macro-operation complexity model and an experiment harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision variants.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod da_model;
pub mod dp_mech;
pub mod env_noise;
pub mod error;
pub mod harness;
pub mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod taylor_loss;
pub mod trainers;

pub use complexity::{ComplexityReport, OpCosts};
pub use da_model::{accuracy, corpus_accuracy, DaParams, Encoding};
pub use dp_mech::{empirical_dp_ratio, make_neighbor, Dataset, LaplaceScale, NeighborPair, PrivacyBudget};
pub use env_noise::{DensityForm, EnvNoiseProfile, VarianceConvention};
pub use error::{Error, Result};
pub use harness::{Corpus, ExperimentSpec, Mechanism};
pub use scalar::Scalar;
pub use sensitivity::{GradRegime, SensitivityConfig, SensitivityReport};
pub use taylor_loss::{LossCoeffs, NoisyLossCoeffs, ShiftConvention, StabilizedCoeffs};
pub use trainers::{grad_check, train_dpsgd, train_nonprivate, train_spof, OpCounters, TrainConfig, TrainOutcome};

pub type DaParams64 = DaParams<f64>;
pub type Dataset64 = Dataset<f64>;
pub type LossCoeffs64 = LossCoeffs<f64>;
pub type StabilizedCoeffs64 = StabilizedCoeffs<f64>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type TrainOutcome64 = TrainOutcome<f64>;
pub type PrivacyBudget64 = PrivacyBudget<f64>;
pub type LaplaceScale64 = LaplaceScale<f64>;
