//! Hybrid CNN + SVM classification pipeline for lung-nodule CT slices.
//!
//! The crate implements the full workflow at desk scale: synthetic phantom
//! generation, Hounsfield-unit preprocessing (windowing, lung segmentation,
//! denoising, augmentation, resizing), a small convolutional feature
//! extractor trained with SGD and verified by finite-difference gradient
//! checks, an SMO-trained soft-margin SVM head with Platt-calibrated risk
//! scores, end-to-end training/evaluation/persistence, and a command line
//! front end.
//!
//! Typical use goes through [`pipeline::train_pipeline`] and
//! [`pipeline::predict_pipeline`]; the lower-level modules ([`preprocess`],
//! [`cnn`], [`svm`]) are usable on their own. See the `examples/` directory
//! for runnable walkthroughs of each capability.

pub mod cli;
pub mod cnn;
pub mod data;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod svm;
