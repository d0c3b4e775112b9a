//! End-to-end orchestration: preprocessing, two-phase training (network
//! backbone, then margin classifier on its features), calibrated risk
//! prediction, evaluation, and model persistence.
//!
//! Training is a pure function of the dataset and configuration. The
//! master seed fans out into fixed sub-streams (network init, network
//! training, margin training, augmentation, calibration split), so no
//! stage perturbs another's randomness.

pub mod config;
pub mod metrics;
pub mod persist;

use thiserror::Error;

use crate::cnn::{
    default_model, extract_features, logits, train_cnn, CnnError, CnnModel, FeatureVector,
    Tensor, TrainConfig,
};
use crate::data::{
    BinaryTarget, DataError, Dataset, ImageData, LabeledImage, RawSlice,
};
use crate::preprocess::{
    apply_mask, augment_dataset, gaussian_filter, nlm_filter, normalize_hu, resize_bilinear,
    segment_lungs, to_hu, AugmentPolicy, NormImage, PreprocessError,
};
use crate::rng::{derive_stream_seed, shuffle, stream_rng};
use crate::svm::{
    decision_value, platt_calibrate, train_smo_traced, Calibration, KernelSpec, SvmConfig,
    SvmError, SvmModel,
};

pub use config::{
    parse_config, serialize_config, AugmentSettings, Denoise, KernelChoice, PipelineConfig,
    WeightMode,
};
pub use metrics::{confusion_matrix, metric_suite, ConfusionMatrix, MetricReport};
pub use persist::{load_pipeline, pipeline_bytes, pipeline_from_bytes, save_pipeline};

/// Patch and search radii for the non-local-means denoiser, sized for
/// slices in the tens-of-pixels range.
const NLM_PATCH_RADIUS: usize = 1;
const NLM_SEARCH_RADIUS: usize = 3;

/// Fraction of the training set held out for risk calibration.
const CALIBRATION_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Cnn(#[from] CnnError),
    #[error("{0}")]
    Svm(#[from] SvmError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Preprocess(#[from] PreprocessError),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("VersionError: {0}")]
    Version(String),
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("LengthError: {0}")]
    Length(String),
    #[error("EmptyError: {0}")]
    Empty(String),
}

/// Everything needed to score new slices: the configuration it was
/// trained under, the network backbone, the margin classifier over its
/// features, and the risk calibration.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub cnn: CnnModel,
    pub svm: SvmModel,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: BinaryTarget,
    /// Signed margin distance; positive means the positive class.
    pub decision_score: f64,
    /// Calibrated probability of the positive class, in (0, 1).
    pub risk: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch from phase one.
    pub loss_history: Vec<f64>,
    pub svm_converged: bool,
    pub svm_passes: usize,
    /// True when the dataset was too small or one-sided for a held-out
    /// calibration slice, and the full set was reused.
    pub calibration_fallback: bool,
    pub train_size: usize,
    pub fit_size: usize,
    pub calib_size: usize,
}

/// Side-by-side evaluation of the softmax head and the margin head over
/// the same frozen backbone. Equal checksums certify that neither head
/// saw different weights.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub softmax: MetricReport,
    pub hybrid: MetricReport,
    pub softmax_weight_checksum: u64,
    pub hybrid_weight_checksum: u64,
}

fn denoise_and_resize(img: NormImage, cfg: &PipelineConfig) -> NormImage {
    let den = match cfg.denoise {
        Denoise::None => img,
        Denoise::Gaussian { sigma } => gaussian_filter(&img, sigma),
        Denoise::Nlm { h } => nlm_filter(&img, h, NLM_PATCH_RADIUS, NLM_SEARCH_RADIUS),
    };
    resize_bilinear(&den, cfg.resolution, cfg.resolution)
}

fn preprocess_raw(raw: &RawSlice, cfg: &PipelineConfig) -> Result<NormImage, PipelineError> {
    let hu = to_hu(raw);
    let windowed = normalize_hu(&hu, cfg.window_low, cfg.window_high)?;
    let masked = if cfg.segmentation {
        let mask = segment_lungs(&hu)?;
        apply_mask(&windowed, &mask)
    } else {
        windowed
    };
    Ok(denoise_and_resize(masked, cfg))
}

/// Runs the configured preprocessing chain on one image. Raw slices go
/// through rescaling, windowing, optional lung masking, denoising, and
/// resizing; already-normalized images skip straight to denoising.
pub fn preprocess_image(
    image: &ImageData,
    cfg: &PipelineConfig,
) -> Result<NormImage, PipelineError> {
    match image {
        ImageData::Raw(raw) => preprocess_raw(raw, cfg),
        ImageData::Norm(norm) => Ok(denoise_and_resize(norm.clone(), cfg)),
    }
}

fn tensor_of(img: &NormImage) -> Tensor {
    Tensor::new(vec![1, img.height, img.width], img.values.clone())
}

fn both_classes(targets: &[BinaryTarget], idx: &[usize]) -> bool {
    idx.iter().any(|&i| targets[i] == BinaryTarget::Positive)
        && idx.iter().any(|&i| targets[i] == BinaryTarget::Negative)
}

/// Trains the full pipeline on a dataset.
///
/// Phase one fits the network under a softmax head; phase two freezes it,
/// extracts feature vectors, and fits the margin classifier on one slice
/// of the data while the held-out remainder calibrates the risk map.
pub fn train_pipeline(
    data: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(TrainedPipeline, TrainReport), PipelineError> {
    cfg.validate()?;
    if data.items.is_empty() {
        return Err(PipelineError::Empty("training dataset has no items".into()));
    }

    let prepped: Vec<LabeledImage> = data
        .items
        .iter()
        .map(|item| {
            Ok(LabeledImage {
                image: ImageData::Norm(preprocess_image(&item.image, cfg)?),
                label: item.label,
                id: item.id.clone(),
                ground_truth_mask: None,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut working = Dataset { items: prepped, provenance: data.provenance, seed: data.seed };

    if let Some(aug) = &cfg.augment {
        let policy = AugmentPolicy {
            transforms: aug.transforms.clone(),
            seed: derive_stream_seed(cfg.seed, 3),
            jitter: aug.jitter.clone(),
        };
        working = augment_dataset(&working, &policy);
    }

    let mut samples: Vec<(Tensor, BinaryTarget)> = Vec::with_capacity(working.items.len());
    for item in &working.items {
        let Some(target) = cfg.task.target_of(item.label) else { continue };
        let ImageData::Norm(img) = &item.image else { unreachable!("preprocessed above") };
        samples.push((tensor_of(img), target));
    }
    if samples.is_empty() {
        return Err(PipelineError::Empty("no items participate in the chosen task".into()));
    }

    let model = default_model(cfg.resolution, cfg.feature_dim, derive_stream_seed(cfg.seed, 0));
    let tcfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: derive_stream_seed(cfg.seed, 1),
        weight_decay: cfg.weight_decay,
    };
    let (cnn, loss_history) = train_cnn(model, &samples, &tcfg)?;

    let features: Vec<FeatureVector> = samples
        .iter()
        .map(|(t, _)| extract_features(&cnn, t))
        .collect::<Result<_, _>>()?;
    let targets: Vec<BinaryTarget> = samples.iter().map(|(_, t)| *t).collect();

    // Hold out a calibration slice when the data can afford one; both
    // slices must contain both classes or the full set is reused.
    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut stream_rng(cfg.seed, 4));
    let everything: Vec<usize> = (0..n).collect();
    let (fit_idx, cal_idx, fallback) = if n >= 3 {
        let n_cal = ((n as f64 * CALIBRATION_FRACTION).round() as usize).clamp(1, n - 2);
        let fit = order[..n - n_cal].to_vec();
        let cal = order[n - n_cal..].to_vec();
        if both_classes(&targets, &fit) && both_classes(&targets, &cal) {
            (fit, cal, false)
        } else {
            (everything.clone(), everything, true)
        }
    } else {
        (everything.clone(), everything, true)
    };

    let fit_features: Vec<FeatureVector> = fit_idx.iter().map(|&i| features[i].clone()).collect();
    let fit_targets: Vec<BinaryTarget> = fit_idx.iter().map(|&i| targets[i]).collect();

    let class_weights = match cfg.svm_class_weights {
        WeightMode::Fixed { pos, neg } => (pos, neg),
        WeightMode::Balanced => {
            let n_pos = fit_targets.iter().filter(|&&t| t == BinaryTarget::Positive).count();
            let n_neg = fit_targets.len() - n_pos;
            let total = fit_targets.len() as f64;
            (total / (2.0 * n_pos as f64), total / (2.0 * n_neg as f64))
        }
    };
    let kernel = match cfg.svm_kernel {
        KernelChoice::Linear => KernelSpec::Linear,
        KernelChoice::Polynomial { degree, coef0 } => KernelSpec::Polynomial { degree, coef0 },
        KernelChoice::Rbf { gamma } => KernelSpec::Rbf { gamma },
        KernelChoice::RbfAuto => KernelSpec::Rbf { gamma: 1.0 / cfg.feature_dim as f64 },
    };
    let scfg = SvmConfig {
        c: cfg.svm_c,
        class_weights,
        tolerance: cfg.svm_tolerance,
        max_passes: cfg.svm_max_passes,
        seed: derive_stream_seed(cfg.seed, 2),
        kernel,
    };
    let smo = train_smo_traced(&fit_features, &fit_targets, &scfg)?;

    let cal_scores: Vec<f64> = cal_idx
        .iter()
        .map(|&i| decision_value(&smo.model, &features[i]))
        .collect::<Result<_, _>>()?;
    let cal_targets: Vec<BinaryTarget> = cal_idx.iter().map(|&i| targets[i]).collect();
    let calibration = platt_calibrate(&cal_scores, &cal_targets)?;

    let report = TrainReport {
        loss_history,
        svm_converged: smo.converged,
        svm_passes: smo.passes,
        calibration_fallback: fallback,
        train_size: n,
        fit_size: fit_idx.len(),
        calib_size: cal_idx.len(),
    };
    let pipeline = TrainedPipeline { config: cfg.clone(), cnn, svm: smo.model, calibration };
    Ok((pipeline, report))
}

/// Scores one image of either representation.
pub fn predict_image(
    p: &TrainedPipeline,
    image: &ImageData,
) -> Result<Prediction, PipelineError> {
    let norm = preprocess_image(image, &p.config)?;
    let features = extract_features(&p.cnn, &tensor_of(&norm))?;
    let decision_score = decision_value(&p.svm, &features)?;
    let label = if decision_score > 0.0 { BinaryTarget::Positive } else { BinaryTarget::Negative };
    Ok(Prediction { label, decision_score, risk: p.calibration.risk(decision_score) })
}

/// Scores one raw slice: the preprocessing chain recorded in the model's
/// configuration runs first, then the feature extractor and classifier.
pub fn predict_pipeline(
    p: &TrainedPipeline,
    slice: &RawSlice,
) -> Result<Prediction, PipelineError> {
    let norm = preprocess_raw(slice, &p.config)?;
    let features = extract_features(&p.cnn, &tensor_of(&norm))?;
    let decision_score = decision_value(&p.svm, &features)?;
    let label = if decision_score > 0.0 { BinaryTarget::Positive } else { BinaryTarget::Negative };
    Ok(Prediction { label, decision_score, risk: p.calibration.risk(decision_score) })
}

fn eval_with<F>(
    p: &TrainedPipeline,
    data: &Dataset,
    mut predict: F,
) -> Result<MetricReport, PipelineError>
where
    F: FnMut(&TrainedPipeline, &ImageData) -> Result<BinaryTarget, PipelineError>,
{
    // Items are visited in id order so the report does not depend on how
    // the dataset happened to be assembled.
    let mut items: Vec<&LabeledImage> = data.items.iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for item in items {
        let Some(truth) = p.config.task.target_of(item.label) else { continue };
        predictions.push(predict(p, &item.image)?);
        truths.push(truth);
    }
    if predictions.is_empty() {
        return Err(PipelineError::Empty(
            "no items in the dataset participate in the model's task".into(),
        ));
    }
    Ok(metric_suite(&confusion_matrix(&predictions, &truths)?))
}

/// Evaluates the pipeline on a labeled dataset under the model's task.
pub fn evaluate(p: &TrainedPipeline, data: &Dataset) -> Result<MetricReport, PipelineError> {
    eval_with(p, data, |p, img| Ok(predict_image(p, img)?.label))
}

/// Evaluates the phase-one softmax head on the same frozen backbone:
/// positive when the positive logit wins, with ties going negative.
pub fn softmax_baseline_eval(
    p: &TrainedPipeline,
    data: &Dataset,
) -> Result<MetricReport, PipelineError> {
    eval_with(p, data, |p, img| {
        let norm = preprocess_image(img, &p.config)?;
        let l = logits(&p.cnn, &tensor_of(&norm))?;
        Ok(if l.values[1] > l.values[0] {
            BinaryTarget::Positive
        } else {
            BinaryTarget::Negative
        })
    })
}

/// Evaluates both heads on one dataset and stamps each report with the
/// backbone weight checksum.
pub fn compare_heads(
    p: &TrainedPipeline,
    data: &Dataset,
) -> Result<ComparisonReport, PipelineError> {
    let hybrid = evaluate(p, data)?;
    let softmax = softmax_baseline_eval(p, data)?;
    let checksum = cnn_weight_checksum(&p.cnn);
    Ok(ComparisonReport {
        softmax,
        hybrid,
        softmax_weight_checksum: checksum,
        hybrid_weight_checksum: checksum,
    })
}

/// FNV-1a over every learned parameter (weights then biases, in layer
/// order, little-endian f64 bytes). Two models agree on this exactly when
/// their parameters are bit-identical.
pub fn cnn_weight_checksum(model: &CnnModel) -> u64 {
    fn eat(hash: &mut u64, values: &[f64]) {
        for v in values {
            for b in v.to_le_bytes() {
                *hash ^= b as u64;
                *hash = hash.wrapping_mul(0x100000001b3);
            }
        }
    }
    let mut hash: u64 = 0xcbf29ce484222325;
    for layer in &model.layers {
        match layer {
            crate::cnn::Layer::Conv(c) => {
                eat(&mut hash, &c.weights);
                eat(&mut hash, &c.bias);
            }
            crate::cnn::Layer::Dense(d) => {
                eat(&mut hash, &d.weights);
                eat(&mut hash, &d.bias);
            }
            _ => {}
        }
    }
    hash
}
