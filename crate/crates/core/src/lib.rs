//! Class-wise SVD bases ("eigenhearts") for image ensembles, projection onto truncated
//! bases, a nearest-subspace baseline classifier, and a small convolutional network
//! trained from scratch with RMSprop.

pub mod binio;
pub mod config;
pub mod convnet;
pub mod dataset;
pub mod eigenbasis;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod subspace;
pub mod svd;

pub use convnet::{
    forward, init_model, loss_and_grad, predict, rmsprop_step, train, ConvNetArch, ConvNetModel,
    TrainConfig, TrainHistory,
};
pub use dataset::{
    assemble_snapshot_matrix, flatten_image, generate_synthetic, load_dataset, split_dataset,
    unflatten_image, ClassLabel, DatasetSplit, Image, LabeledFrame, Partition, Sample,
    SnapshotMatrix, SplitPolicy, SyntheticSpec,
};
pub use eigenbasis::{
    build_class_basis, build_library, load_library, project_dataset, project_image, save_library,
    EigenBasis, EigenBasisLibrary, Provenance,
};
pub use error::{Error, ErrorKind, Result};
pub use evaluator::{
    accuracy, aggregate, confusion, ConfusionMatrix, EvaluationReport, RunAggregate,
};
pub use experiment::{run_experiment, Arm, DataSource, ExperimentConfig, ExperimentOutcome};
pub use subspace::{classify_residual, classify_split, ResidualReport};
pub use svd::{
    gavish_donoho_rank, singular_spectrum, svd_auto, svd_gram, svd_thin, truncate, SvdFactors,
    TruncationRule,
};
