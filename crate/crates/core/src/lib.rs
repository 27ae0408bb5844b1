//! Data-quality tooling for ML pipelines.
//!
//! - [`cpclean`]: which training cell to clean next, via certain predictions
//!   over possible worlds of an incomplete dataset.
//! - [`snoopy`]: is the target accuracy realistic, via nearest-neighbor
//!   bounds on the Bayes error rate.
//! - [`ci`]: statistically sound pass/fail tests for new models with a
//!   budget on test-set reuse.
//! - [`picker`]: which stream items to label when picking among
//!   pre-trained models.

pub mod ci;
pub mod cpclean;
pub mod jobs;
pub mod knn;
pub mod picker;
pub mod model;
pub mod snoopy;
pub mod synth;

pub use model::{
    accuracy, load_dataset, zero_one_loss, DataError, DataFormat, FeatureVector, LabelSpace,
    LabeledDataset, PredictionMatrix, Seed,
};
