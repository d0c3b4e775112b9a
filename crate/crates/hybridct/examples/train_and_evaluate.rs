//! Trains the full two-phase pipeline on synthetic phantoms and scores
//! it on a held-out split: phase one fits the convolutional feature
//! extractor, phase two fits a margin classifier on the frozen features.

use hybridct::data::{generate_phantoms, split_dataset, PhantomSpec};
use hybridct::pipeline::{evaluate, train_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        count_normal: 30,
        count_benign: 30,
        count_malignant: 30,
        seed: 11,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;
    let (train, test) = split_dataset(&data, 0.2, 11)?;
    println!("{} training slices, {} held out", train.items.len(), test.items.len());

    let cfg = PipelineConfig {
        resolution: 16,
        feature_dim: 16,
        epochs: 8,
        batch_size: 16,
        ..PipelineConfig::default()
    };
    let (pipeline, report) = train_pipeline(&train, &cfg)?;

    println!("\nphase one (cross-entropy per epoch):");
    for (epoch, loss) in report.loss_history.iter().enumerate() {
        println!("  epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    println!(
        "\nphase two: margin fit on {} slices ({} reserved for calibration), \
         converged={} after {} passes",
        report.fit_size, report.calib_size, report.svm_converged, report.svm_passes
    );

    let metrics = evaluate(&pipeline, &test)?;
    println!("\nheld-out performance:");
    println!("  precision   {:.4}", metrics.precision);
    println!("  recall      {:.4}", metrics.recall);
    println!("  f1          {:.4}", metrics.f1);
    println!("  accuracy    {:.4}", metrics.accuracy);
    println!("  specificity {:.4}", metrics.specificity);
    let cm = metrics.confusion;
    println!("  confusion   tp={} fp={} fn={} tn={}", cm.tp, cm.fp, cm.fn_, cm.tn);
    Ok(())
}
