//! Exact t-SNE with pluggable similarity kernels and initializations, plus
//! the k-ary neighborhood preservation metrics (`R(k)`, `AUC_RNX`) used to
//! score the resulting embeddings.
//!
//! The pipeline is: [`ingest`] sequences or points, [`featurize`] sequences
//! into k-mer spectra, build a [`kernels`] matrix and its joint distribution,
//! produce a starting layout with [`init`], optimize it with [`engine`] and
//! score checkpoints with [`eval`].

pub mod engine;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod ingest;
pub mod init;
pub mod kernels;
mod pairwise;

/// `N x D` matrix of high-dimensional points, one row per sample.
pub type FeatureMatrix = ndarray::Array2<f64>;

pub use engine::{
    gradient, kl_divergence, low_dim_affinities, run_tsne, run_tsne_with, Checkpoint, OptimizerParams, Trajectory,
};
pub use error::{Error, Result};
pub use eval::{auc_rnx, knn_table, neighborhood_agreement, quality_curve, r_of_k, NeighborTable, QualityCurve};
pub use featurize::{build_feature_matrix, infer_alphabet, kmer_spectrum, Alphabet};
pub use ingest::{
    generate_circle, parse_fasta, parse_labeled_csv, read_points_csv, write_fasta, write_points_csv, PointDataset,
    SequenceRecord,
};
pub use init::{ensemble_init, ica_init, pca_init, random_init, rescale_init, Embedding, Provenance};
pub use kernels::{
    approximate_kernel, gaussian_joint, isolation_kernel, kernel_to_joint, laplacian_kernel,
    JointDistribution, JointMode, KernelKind, KernelMatrix,
};
