//! Distance-guided adversarial data augmentation for binary
//! classification on low-dimensional vectors.
//!
//! A hinge classifier is trained and frozen; its separating hyperplane
//! defines vertical distances (margins) and horizontal distances (along
//! the hyperplane). Four generators translate samples between and within
//! the two domains conditioned on those distances, and a second
//! classifier learns from real and generated samples alike.

pub mod classifier;
pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod explain;
pub mod gan;
pub mod geometry;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod plot;

pub use classifier::{freeze, hinge_loss, train_classifier, AuxiliaryClassifier, ClassifierConfig, ClassifierNet};
pub use config::RunConfig;
pub use data::{Dataset, DatasetSpec, Label, Sample};
pub use error::{Error, Result};
pub use explain::{accuracy, auc, cdm, distance_curve_report, MetricReport};
pub use gan::{GanBundle, GanConfig, Generator, LossReport, LossWeights, Mapping};
pub use geometry::{coordinate_distance, horizontal_distance, vertical_distance};
pub use pipeline::{run_algorithm1, wrap_index, AugmentationArchive, RunOutput, TrainConfig};
