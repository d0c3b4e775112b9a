//! Command-line front end.
//!
//! Exit codes follow one contract everywhere: 0 success, 1 usage error
//! (bad flags, unparseable configuration), 2 runtime error (IO, bad
//! data, failed checks). All output is deterministic for fixed inputs
//! and seeds except the wall-time column of evaluation reports.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::Rng;

use crate::cnn::{default_model, grad_check, Tensor};
use crate::data::{
    generate_phantoms, load_dataset, load_image, write_dataset_tree, BinaryTarget, BinaryTask,
    ClassLabel, PhantomSpec, RawSlice,
};
use crate::pipeline::config::task_name;
use crate::pipeline::{
    evaluate, load_pipeline, parse_config, predict_pipeline, preprocess_image, save_pipeline,
    softmax_baseline_eval, train_pipeline, MetricReport, PipelineConfig, PipelineError,
};
use crate::rng::stream_rng;

const REPORT_HEADER: &str =
    "run_id,task,tp,fp,fn,tn,precision,recall,f1,accuracy,specificity,wall_time_seconds";

// 12x12 keeps the check fast while giving every parameter a healthy
// gradient magnitude; at 8x8 a few second-conv weights sit so close to
// zero that finite-difference round-off dominates the comparison.
const GRADCHECK_RESOLUTION: usize = 12;
const GRADCHECK_FEATURE_DIM: usize = 16;
const GRADCHECK_EPSILON: f64 = 1e-5;
const GRADCHECK_LIMIT: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "hybridct",
    version,
    about = "Lung nodule classification with a convolutional feature extractor and a margin classifier head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset tree
    Phantom {
        /// Output directory; normal/, benign/ and malignant/ are created inside
        #[arg(long)]
        out: PathBuf,
        /// Class counts as normal,benign,malignant
        #[arg(long)]
        counts: String,
        /// Image size as width,height
        #[arg(long, default_value = "32,32")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Preview the preprocessing chain on one image
    Preprocess {
        /// Input PGM image
        #[arg(long)]
        image: PathBuf,
        /// Configuration file (flat key=value text); defaults apply if omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the preprocessed 16-bit PGM
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory
    Train {
        /// Dataset root with normal/, benign/, malignant/ subdirectories
        #[arg(long)]
        data: PathBuf,
        /// Configuration file (flat key=value text); defaults apply if omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one image with a trained model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Emit a single JSON object instead of CSV
        #[arg(long)]
        json: bool,
    },
    /// Score a model against a labeled dataset and write a CSV report
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output path for the report CSV
        #[arg(long)]
        report: PathBuf,
    },
    /// Score the softmax head and the margin head on the same dataset
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::data::DataError> for CliError {
    fn from(e: crate::data::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("IoError: {e}"))
    }
}

/// Entry point used by the binary: parses arguments (the first element
/// is the program name) and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    run_with_io(args, &mut out, &mut err)
}

/// Same as [`run`] but with injectable output streams, for tests.
pub fn run_with_io<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Phantom { out: dir, counts, size, seed } => {
            cmd_phantom(out, &dir, &counts, &size, seed)
        }
        Command::Preprocess { image, config, out: dest } => {
            cmd_preprocess(out, &image, config.as_deref(), &dest)
        }
        Command::Train { data, config, out: dest } => {
            cmd_train(out, &data, config.as_deref(), &dest)
        }
        Command::Predict { model, image, json } => cmd_predict(out, &model, &image, json),
        Command::Evaluate { model, data, report } => cmd_evaluate(out, &model, &data, &report),
        Command::Compare { model, data } => cmd_compare(out, &model, &data),
        Command::Gradcheck { seed } => cmd_gradcheck(out, seed),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn parse_pair_list(flag: &str, value: &str, want: usize) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != want {
        return Err(CliError::Usage(format!(
            "{flag} expects {want} comma-separated integers, got `{value}`"
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| {
                CliError::Usage(format!("{flag}: `{p}` is not a non-negative integer"))
            })
        })
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(parse_config(&text)?)
        }
    }
}

fn cmd_phantom(
    out: &mut dyn Write,
    dir: &Path,
    counts: &str,
    size: &str,
    seed: u64,
) -> Result<i32, CliError> {
    let c = parse_pair_list("--counts", counts, 3)?;
    let s = parse_pair_list("--size", size, 2)?;
    let spec = PhantomSpec {
        count_normal: c[0],
        count_benign: c[1],
        count_malignant: c[2],
        width: s[0],
        height: s[1],
        seed,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;
    write_dataset_tree(dir, &data)?;
    let mut manifest = String::from("id,label,has_nodule\n");
    for item in &data.items {
        let has_nodule = item.label != ClassLabel::Normal;
        manifest.push_str(&format!("{},{},{}\n", item.id, item.label.dir_name(), has_nodule));
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    writeln!(out, "wrote,{},{}", data.items.len(), dir.display())?;
    Ok(0)
}

fn cmd_preprocess(
    out: &mut dyn Write,
    image: &Path,
    config: Option<&Path>,
    dest: &Path,
) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let raw = load_image(image)?;
    let norm = preprocess_image(&crate::data::ImageData::Raw(raw), &cfg)?;
    let pixels: Vec<u32> = norm
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u32)
        .collect();
    let slice = RawSlice::new(norm.width, norm.height, 16, pixels, 1.0, 0.0)?;
    crate::data::write_pgm(dest, &slice)?;
    writeln!(out, "wrote,{},{},{}", norm.width, norm.height, dest.display())?;
    Ok(0)
}

fn cmd_train(
    out: &mut dyn Write,
    data_dir: &Path,
    config: Option<&Path>,
    dest: &Path,
) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let data = load_dataset(data_dir)?;
    let (pipeline, report) = train_pipeline(&data, &cfg)?;
    for (i, loss) in report.loss_history.iter().enumerate() {
        writeln!(out, "epoch,{},{}", i + 1, loss)?;
    }
    save_pipeline(&pipeline, dest)?;
    writeln!(
        out,
        "trained,{},{},{},{},{}",
        report.train_size,
        report.fit_size,
        report.calib_size,
        report.svm_converged,
        report.svm_passes
    )?;
    Ok(0)
}

fn label_text(label: BinaryTarget) -> &'static str {
    match label {
        BinaryTarget::Positive => "malignant",
        BinaryTarget::Negative => "non-malignant",
    }
}

fn cmd_predict(
    out: &mut dyn Write,
    model: &Path,
    image: &Path,
    json: bool,
) -> Result<i32, CliError> {
    let pipeline = load_pipeline(model)?;
    let raw = load_image(image)?;
    let pred = predict_pipeline(&pipeline, &raw)?;
    let label = label_text(pred.label);
    if json {
        writeln!(
            out,
            "{{\"label\":\"{label}\",\"decision_score\":{:.6},\"risk\":{:.6}}}",
            pred.decision_score, pred.risk
        )?;
    } else {
        writeln!(out, "{label},{:.6},{:.6}", pred.decision_score, pred.risk)?;
    }
    Ok(0)
}

fn report_row(run_id: &str, task: BinaryTask, m: &MetricReport, wall: f64) -> String {
    let c = m.confusion;
    format!(
        "{run_id},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3}",
        task_name(task),
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        m.precision,
        m.recall,
        m.f1,
        m.accuracy,
        m.specificity,
        wall
    )
}

fn cmd_evaluate(
    out: &mut dyn Write,
    model: &Path,
    data_dir: &Path,
    report_path: &Path,
) -> Result<i32, CliError> {
    let pipeline = load_pipeline(model)?;
    let data = load_dataset(data_dir)?;
    let start = Instant::now();
    let metrics = evaluate(&pipeline, &data)?;
    let wall = start.elapsed().as_secs_f64();
    let run_id = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let row = report_row(&run_id, pipeline.config.task, &metrics, wall);
    std::fs::write(report_path, format!("{REPORT_HEADER}\n{row}\n"))?;
    writeln!(out, "{REPORT_HEADER}")?;
    writeln!(out, "{row}")?;
    Ok(0)
}

fn cmd_compare(out: &mut dyn Write, model: &Path, data_dir: &Path) -> Result<i32, CliError> {
    let pipeline = load_pipeline(model)?;
    let data = load_dataset(data_dir)?;
    let start = Instant::now();
    let softmax = softmax_baseline_eval(&pipeline, &data)?;
    let softmax_wall = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let hybrid = evaluate(&pipeline, &data)?;
    let hybrid_wall = start.elapsed().as_secs_f64();
    writeln!(out, "{REPORT_HEADER}")?;
    writeln!(out, "{}", report_row("softmax", pipeline.config.task, &softmax, softmax_wall))?;
    writeln!(out, "{}", report_row("hybrid", pipeline.config.task, &hybrid, hybrid_wall))?;
    Ok(0)
}

fn cmd_gradcheck(out: &mut dyn Write, seed: u64) -> Result<i32, CliError> {
    let model = default_model(GRADCHECK_RESOLUTION, GRADCHECK_FEATURE_DIM, seed);
    let mut rng = stream_rng(seed, 1);
    let values: Vec<f64> = (0..GRADCHECK_RESOLUTION * GRADCHECK_RESOLUTION)
        .map(|_| rng.gen::<f64>())
        .collect();
    let sample = Tensor::new(vec![1, GRADCHECK_RESOLUTION, GRADCHECK_RESOLUTION], values);
    let worst = grad_check(&model, &sample, BinaryTarget::Positive, GRADCHECK_EPSILON);
    writeln!(out, "max_rel_error,{worst}")?;
    Ok(if worst < GRADCHECK_LIMIT { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::metrics::ConfusionMatrix;
    use crate::pipeline::metric_suite;

    #[test]
    fn count_lists_parse_strictly() {
        assert_eq!(parse_pair_list("--counts", "1,2,3", 3).unwrap(), vec![1, 2, 3]);
        assert!(parse_pair_list("--counts", "1,2", 3).is_err());
        assert!(parse_pair_list("--counts", "1,2,x", 3).is_err());
        assert!(parse_pair_list("--size", "-3,4", 2).is_err());
    }

    #[test]
    fn report_rows_have_the_documented_shape() {
        let m = metric_suite(&ConfusionMatrix { tp: 8, fp: 2, fn_: 1, tn: 9 });
        let row = report_row("run", BinaryTask::MalignantVsRest, &m, 1.25);
        assert_eq!(row.split(',').count(), REPORT_HEADER.split(',').count());
        assert!(row.starts_with("run,malignant_vs_rest,8,2,1,9,0.8000,0.8889,0.8421,"));
        assert!(row.ends_with(",1.250"));
    }

    #[test]
    fn help_exits_zero_and_bad_flags_exit_one() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run_with_io(["hybridct", "--help"], &mut out, &mut err), 0);
        assert!(!out.is_empty());

        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with_io(["hybridct", "gradcheck", "--bogus"], &mut out, &mut err);
        assert_eq!(code, 1);
        assert!(!err.is_empty());
    }
}
