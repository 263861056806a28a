//! Prototype-based anomaly segmentation on patch embeddings.
//!
//! A truncated Dirichlet-process mixture of diagonal Gaussians is fit to
//! embeddings of normal images with batched EM. The means of components
//! that keep a non-negligible weight act as prototypes; a patch is scored
//! by its distance to the closest prototype and the patch grid is
//! interpolated to a pixel map.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod error;
pub mod fit;
pub mod metrics;
pub mod mixture;
pub mod score;
pub mod special;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use fit::{
    effective_components, fit, fit_resume, init_model, m_step, update_alpha, update_stats, FitConfig, FitReport, Fitted,
};
pub use metrics::{
    aupr, auroc, dice, paired_permutation_test, DiceCounts, LabeledScores, PairedImageScores, PermutationResult,
};
pub use mixture::{
    diag_gaussian_logpdf, mixture_log_likelihood, responsibilities, stick_breaking_weights, DpmmModel, EmbeddingBatch,
    SufficientStats,
};
pub use score::{
    anomaly_scores, binarize, component_assignment, patch_to_pixel, select_threshold, AnomalyMap, PatchGrid,
    ScoreMethod, Scorer,
};
pub use special::digamma;
pub use synth::{sample_synthetic, SyntheticSpec};
