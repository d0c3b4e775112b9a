//! Pipeline configuration and its flat `key=value` text form.
//!
//! The text grammar is one `key=value` per line, `#`-prefixed comment
//! lines, and blank lines. Unknown and duplicate keys are errors; missing
//! keys take defaults. Serialization emits every key in a fixed order
//! with shortest-round-trip float formatting, so parse and serialize are
//! mutually canonical: `serialize(parse(serialize(c))) == serialize(c)`.

use std::fmt::Write as _;

use super::PipelineError;
use crate::data::BinaryTask;
use crate::preprocess::{JitterRanges, TransformSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum Denoise {
    None,
    Gaussian { sigma: f64 },
    Nlm { h: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSettings {
    pub transforms: Vec<TransformSpec>,
    pub jitter: JitterRanges,
}

/// Kernel selection; `RbfAuto` resolves to an RBF width of
/// 1 / feature_dim at training time (features are standardized, so the
/// per-dimension variance is about 1).
#[derive(Clone, Debug, PartialEq)]
pub enum KernelChoice {
    Linear,
    Polynomial { degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
    RbfAuto,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightMode {
    /// Per-class C multipliers inversely proportional to class frequency
    /// in the SVM fit slice.
    Balanced,
    Fixed { pos: f64, neg: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub task: BinaryTask,
    pub window_low: f64,
    pub window_high: f64,
    pub resolution: usize,
    pub segmentation: bool,
    pub denoise: Denoise,
    pub augment: Option<AugmentSettings>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub feature_dim: usize,
    pub svm_c: f64,
    pub svm_kernel: KernelChoice,
    pub svm_class_weights: WeightMode,
    pub svm_tolerance: f64,
    pub svm_max_passes: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task: BinaryTask::MalignantVsRest,
            window_low: -1000.0,
            window_high: 400.0,
            resolution: 32,
            segmentation: false,
            denoise: Denoise::None,
            augment: None,
            learning_rate: 0.01,
            epochs: 12,
            batch_size: 16,
            weight_decay: 1e-4,
            feature_dim: 64,
            svm_c: 1.0,
            svm_kernel: KernelChoice::RbfAuto,
            svm_class_weights: WeightMode::Balanced,
            svm_tolerance: 1e-3,
            svm_max_passes: 100_000,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::Config(msg));
        if self.resolution < 8 {
            return fail(format!("resolution must be at least 8, got {}", self.resolution));
        }
        if !(self.window_low < self.window_high) {
            return fail(format!(
                "window_low must be below window_high, got {} and {}",
                self.window_low, self.window_high
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be at least 1".into());
        }
        if !(self.svm_c > 0.0) {
            return fail(format!("svm_c must be positive, got {}", self.svm_c));
        }
        if !(self.svm_tolerance > 0.0) {
            return fail(format!("svm_tolerance must be positive, got {}", self.svm_tolerance));
        }
        if self.svm_max_passes == 0 {
            return fail("svm_max_passes must be at least 1".into());
        }
        match self.denoise {
            Denoise::Gaussian { sigma } if !(sigma > 0.0) => {
                return fail(format!("gaussian sigma must be positive, got {sigma}"));
            }
            Denoise::Nlm { h } if !(h > 0.0) => {
                return fail(format!("nlm h must be positive, got {h}"));
            }
            _ => {}
        }
        match self.svm_kernel {
            KernelChoice::Polynomial { degree, .. } if degree == 0 => {
                return fail("polynomial degree must be at least 1".into());
            }
            KernelChoice::Rbf { gamma } if !(gamma > 0.0) => {
                return fail(format!("rbf gamma must be positive, got {gamma}"));
            }
            _ => {}
        }
        if let WeightMode::Fixed { pos, neg } = self.svm_class_weights {
            if !(pos > 0.0) || !(neg > 0.0) {
                return fail(format!("class weights must be positive, got {pos} and {neg}"));
            }
        }
        if let Some(aug) = &self.augment {
            let j = &aug.jitter;
            for (name, v) in [
                ("jitter_angle", j.angle_deg),
                ("jitter_translate", j.translate_px),
                ("jitter_scale", j.scale),
                ("jitter_gain", j.gain),
                ("jitter_bias", j.bias),
            ] {
                if !(v >= 0.0) || !v.is_finite() {
                    return fail(format!("{name} must be non-negative, got {v}"));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn task_name(task: BinaryTask) -> &'static str {
    match task {
        BinaryTask::MalignantVsRest => "malignant_vs_rest",
        BinaryTask::BenignVsMalignant => "benign_vs_malignant",
    }
}

fn denoise_value(d: &Denoise) -> String {
    match d {
        Denoise::None => "none".into(),
        Denoise::Gaussian { sigma } => format!("gaussian:{sigma}"),
        Denoise::Nlm { h } => format!("nlm:{h}"),
    }
}

fn kernel_value(k: &KernelChoice) -> String {
    match k {
        KernelChoice::Linear => "linear".into(),
        KernelChoice::Polynomial { degree, coef0 } => format!("poly:{degree}:{coef0}"),
        KernelChoice::Rbf { gamma } => format!("rbf:{gamma}"),
        KernelChoice::RbfAuto => "rbf_auto".into(),
    }
}

fn weights_value(w: &WeightMode) -> String {
    match w {
        WeightMode::Balanced => "balanced".into(),
        WeightMode::Fixed { pos, neg } => format!("fixed:{pos}:{neg}"),
    }
}

fn transform_value(t: &TransformSpec) -> String {
    match t {
        TransformSpec::Rotate { angle_deg } => format!("rotate:{angle_deg}"),
        TransformSpec::FlipH => "flip_h".into(),
        TransformSpec::FlipV => "flip_v".into(),
        TransformSpec::Translate { dx, dy } => format!("translate:{dx}:{dy}"),
        TransformSpec::Scale { factor } => format!("scale:{factor}"),
        TransformSpec::Intensity { gain, bias } => format!("intensity:{gain}:{bias}"),
    }
}

fn augment_value(a: &Option<AugmentSettings>) -> String {
    match a {
        None => "none".into(),
        Some(s) => {
            let parts: Vec<String> = s.transforms.iter().map(transform_value).collect();
            parts.join(",")
        }
    }
}

/// Canonical text form: every key, fixed order, one per line.
pub fn serialize_config(cfg: &PipelineConfig) -> String {
    let jitter = cfg
        .augment
        .as_ref()
        .map(|a| a.jitter.clone())
        .unwrap_or_default();
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    line("task", task_name(cfg.task).into());
    line("window_low", format!("{}", cfg.window_low));
    line("window_high", format!("{}", cfg.window_high));
    line("resolution", format!("{}", cfg.resolution));
    line("segmentation", if cfg.segmentation { "on".into() } else { "off".into() });
    line("denoise", denoise_value(&cfg.denoise));
    line("augment", augment_value(&cfg.augment));
    line("jitter_angle", format!("{}", jitter.angle_deg));
    line("jitter_translate", format!("{}", jitter.translate_px));
    line("jitter_scale", format!("{}", jitter.scale));
    line("jitter_gain", format!("{}", jitter.gain));
    line("jitter_bias", format!("{}", jitter.bias));
    line("learning_rate", format!("{}", cfg.learning_rate));
    line("epochs", format!("{}", cfg.epochs));
    line("batch_size", format!("{}", cfg.batch_size));
    line("weight_decay", format!("{}", cfg.weight_decay));
    line("feature_dim", format!("{}", cfg.feature_dim));
    line("svm_c", format!("{}", cfg.svm_c));
    line("svm_kernel", kernel_value(&cfg.svm_kernel));
    line("svm_class_weights", weights_value(&cfg.svm_class_weights));
    line("svm_tolerance", format!("{}", cfg.svm_tolerance));
    line("svm_max_passes", format!("{}", cfg.svm_max_passes));
    line("seed", format!("{}", cfg.seed));
    out
}

struct Parser<'a> {
    seen: Vec<&'a str>,
}

impl<'a> Parser<'a> {
    fn claim(&mut self, key: &'a str) -> Result<(), PipelineError> {
        if self.seen.contains(&key) {
            return Err(PipelineError::Config(format!("duplicate key `{key}`")));
        }
        self.seen.push(key);
        Ok(())
    }
}

fn conf_err(key: &str, value: &str, want: &str) -> PipelineError {
    PipelineError::Config(format!("key `{key}`: expected {want}, got `{value}`"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, PipelineError> {
    let v: f64 = value
        .parse()
        .map_err(|_| conf_err(key, value, "a decimal number"))?;
    if !v.is_finite() {
        return Err(conf_err(key, value, "a finite number"));
    }
    Ok(v)
}

fn parse_usize(key: &str, value: &str) -> Result<usize, PipelineError> {
    value.parse().map_err(|_| conf_err(key, value, "a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, PipelineError> {
    value.parse().map_err(|_| conf_err(key, value, "a non-negative integer"))
}

fn parse_transform(key: &str, part: &str) -> Result<TransformSpec, PipelineError> {
    let fields: Vec<&str> = part.split(':').collect();
    match fields.as_slice() {
        ["flip_h"] => Ok(TransformSpec::FlipH),
        ["flip_v"] => Ok(TransformSpec::FlipV),
        ["rotate", a] => Ok(TransformSpec::Rotate { angle_deg: parse_f64(key, a)? }),
        ["translate", dx, dy] => Ok(TransformSpec::Translate {
            dx: parse_f64(key, dx)?,
            dy: parse_f64(key, dy)?,
        }),
        ["scale", f] => Ok(TransformSpec::Scale { factor: parse_f64(key, f)? }),
        ["intensity", g, b] => Ok(TransformSpec::Intensity {
            gain: parse_f64(key, g)?,
            bias: parse_f64(key, b)?,
        }),
        _ => Err(conf_err(key, part, "a transform spec")),
    }
}

/// Parses the flat text form. Missing keys take defaults; the result is
/// validated before it is returned.
pub fn parse_config(text: &str) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::default();
    let mut jitter = JitterRanges::default();
    let mut transforms: Option<Vec<TransformSpec>> = None;
    let mut parser = Parser { seen: Vec::new() };

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            PipelineError::Config(format!("line {}: expected key=value", lineno + 1))
        })?;
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(PipelineError::Config(format!(
                "line {}: invalid key `{key}`",
                lineno + 1
            )));
        }
        parser.claim(key)?;
        match key {
            "task" => {
                cfg.task = match value {
                    "malignant_vs_rest" => BinaryTask::MalignantVsRest,
                    "benign_vs_malignant" => BinaryTask::BenignVsMalignant,
                    _ => return Err(conf_err(key, value, "a task name")),
                };
            }
            "window_low" => cfg.window_low = parse_f64(key, value)?,
            "window_high" => cfg.window_high = parse_f64(key, value)?,
            "resolution" => cfg.resolution = parse_usize(key, value)?,
            "segmentation" => {
                cfg.segmentation = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(conf_err(key, value, "on or off")),
                };
            }
            "denoise" => {
                cfg.denoise = if value == "none" {
                    Denoise::None
                } else if let Some(s) = value.strip_prefix("gaussian:") {
                    Denoise::Gaussian { sigma: parse_f64(key, s)? }
                } else if let Some(h) = value.strip_prefix("nlm:") {
                    Denoise::Nlm { h: parse_f64(key, h)? }
                } else {
                    return Err(conf_err(key, value, "none, gaussian:<sigma>, or nlm:<h>"));
                };
            }
            "augment" => {
                transforms = if value == "none" {
                    None
                } else {
                    let parts: Result<Vec<_>, _> =
                        value.split(',').map(|p| parse_transform(key, p)).collect();
                    Some(parts?)
                };
            }
            "jitter_angle" => jitter.angle_deg = parse_f64(key, value)?,
            "jitter_translate" => jitter.translate_px = parse_f64(key, value)?,
            "jitter_scale" => jitter.scale = parse_f64(key, value)?,
            "jitter_gain" => jitter.gain = parse_f64(key, value)?,
            "jitter_bias" => jitter.bias = parse_f64(key, value)?,
            "learning_rate" => cfg.learning_rate = parse_f64(key, value)?,
            "epochs" => cfg.epochs = parse_usize(key, value)?,
            "batch_size" => cfg.batch_size = parse_usize(key, value)?,
            "weight_decay" => cfg.weight_decay = parse_f64(key, value)?,
            "feature_dim" => cfg.feature_dim = parse_usize(key, value)?,
            "svm_c" => cfg.svm_c = parse_f64(key, value)?,
            "svm_kernel" => {
                cfg.svm_kernel = if value == "linear" {
                    KernelChoice::Linear
                } else if value == "rbf_auto" {
                    KernelChoice::RbfAuto
                } else if let Some(rest) = value.strip_prefix("poly:") {
                    let (deg, coef0) = rest
                        .split_once(':')
                        .ok_or_else(|| conf_err(key, value, "poly:<degree>:<coef0>"))?;
                    KernelChoice::Polynomial {
                        degree: deg
                            .parse()
                            .map_err(|_| conf_err(key, value, "an integer degree"))?,
                        coef0: parse_f64(key, coef0)?,
                    }
                } else if let Some(g) = value.strip_prefix("rbf:") {
                    KernelChoice::Rbf { gamma: parse_f64(key, g)? }
                } else {
                    return Err(conf_err(
                        key,
                        value,
                        "linear, poly:<degree>:<coef0>, rbf:<gamma>, or rbf_auto",
                    ));
                };
            }
            "svm_class_weights" => {
                cfg.svm_class_weights = if value == "balanced" {
                    WeightMode::Balanced
                } else if let Some(rest) = value.strip_prefix("fixed:") {
                    let (pos, neg) = rest
                        .split_once(':')
                        .ok_or_else(|| conf_err(key, value, "fixed:<pos>:<neg>"))?;
                    WeightMode::Fixed { pos: parse_f64(key, pos)?, neg: parse_f64(key, neg)? }
                } else {
                    return Err(conf_err(key, value, "balanced or fixed:<pos>:<neg>"));
                };
            }
            "svm_tolerance" => cfg.svm_tolerance = parse_f64(key, value)?,
            "svm_max_passes" => cfg.svm_max_passes = parse_usize(key, value)?,
            "seed" => cfg.seed = parse_u64(key, value)?,
            _ => {
                return Err(PipelineError::Config(format!("unknown key `{key}`")));
            }
        }
    }
    cfg.augment = transforms.map(|t| AugmentSettings { transforms: t, jitter });
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = serialize_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(serialize_config(&parsed), text);
    }

    #[test]
    fn rich_config_round_trips() {
        let cfg = PipelineConfig {
            task: BinaryTask::BenignVsMalignant,
            window_low: -600.0,
            window_high: 200.5,
            resolution: 48,
            segmentation: true,
            denoise: Denoise::Gaussian { sigma: 1.25 },
            augment: Some(AugmentSettings {
                transforms: vec![
                    TransformSpec::Rotate { angle_deg: 10.0 },
                    TransformSpec::FlipH,
                    TransformSpec::Translate { dx: 1.0, dy: -2.0 },
                    TransformSpec::Scale { factor: 1.1 },
                    TransformSpec::Intensity { gain: 1.05, bias: -0.02 },
                ],
                jitter: JitterRanges {
                    angle_deg: 5.0,
                    translate_px: 1.0,
                    scale: 0.05,
                    gain: 0.0,
                    bias: 0.0,
                },
            }),
            learning_rate: 0.02,
            epochs: 3,
            batch_size: 8,
            weight_decay: 0.0,
            feature_dim: 32,
            svm_c: 2.5,
            svm_kernel: KernelChoice::Polynomial { degree: 3, coef0: 0.5 },
            svm_class_weights: WeightMode::Fixed { pos: 2.0, neg: 1.0 },
            svm_tolerance: 1e-4,
            svm_max_passes: 5000,
            seed: 99,
        };
        let text = serialize_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = parse_config("# a comment\n\nseed=5\n  \nepochs=0\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.epochs, 0);
        assert_eq!(cfg.resolution, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("learning_rte=0.1\n").unwrap_err();
        assert!(err.to_string().starts_with("ConfigError:"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_config("seed=1\nseed=2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config("seed\n").is_err());
        assert!(parse_config("Seed=1\n").is_err());
        assert!(parse_config("seed=abc\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(parse_config("resolution=4\n").is_err());
        assert!(parse_config("window_low=500\nwindow_high=400\n").is_err());
        assert!(parse_config("learning_rate=0\n").is_err());
        assert!(parse_config("svm_kernel=rbf:0\n").is_err());
        assert!(parse_config("denoise=gaussian:-1\n").is_err());
        assert!(parse_config("svm_class_weights=fixed:0:1\n").is_err());
    }

    #[test]
    fn kernel_and_weight_grammars_parse() {
        let cfg = parse_config("svm_kernel=rbf:0.25\nsvm_class_weights=fixed:2:1\n").unwrap();
        assert_eq!(cfg.svm_kernel, KernelChoice::Rbf { gamma: 0.25 });
        assert_eq!(cfg.svm_class_weights, WeightMode::Fixed { pos: 2.0, neg: 1.0 });
        let cfg = parse_config("augment=rotate:15,flip_h,flip_v\n").unwrap();
        let aug = cfg.augment.unwrap();
        assert_eq!(aug.transforms.len(), 3);
        assert_eq!(aug.transforms[1], TransformSpec::FlipH);
    }
}
