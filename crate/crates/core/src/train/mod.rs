//! Small MLP models, synthetic data, optimisation and linear probing.

pub mod data;
pub mod mlp;
pub mod optim;
pub mod probe;
pub mod trainer;

pub use data::{make_synthetic, Dataset, Splits, SyntheticSpec};
pub use mlp::{accuracy, cross_entropy, predict, MlpModel};
pub use optim::{Sgd, TrainConfig};
pub use probe::{linear_probe, LinearProbe, ProbeConfig, ProbeResult};
pub use trainer::{
    distill_student, epoch_batches, evaluate, init_model, train_feature_extractor, train_teacher, EpochLog,
    LambdaPolicy, StepLog, TrainOutcome,
};
