//! Scores the phase-one softmax head and the phase-two margin head on
//! the same frozen backbone, the experiment behind the hybrid design:
//! both rows carry the backbone checksum proving the features match.

use hybridct::data::{generate_phantoms, split_dataset, PhantomSpec};
use hybridct::pipeline::{compare_heads, train_pipeline, MetricReport, PipelineConfig};

fn row(name: &str, m: &MetricReport) {
    println!(
        "{name:<8} precision {:.4}  recall {:.4}  f1 {:.4}  accuracy {:.4}",
        m.precision, m.recall, m.f1, m.accuracy
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        count_normal: 25,
        count_benign: 25,
        count_malignant: 25,
        seed: 19,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;
    let (train, test) = split_dataset(&data, 0.25, 19)?;

    let cfg = PipelineConfig {
        resolution: 16,
        feature_dim: 16,
        epochs: 8,
        batch_size: 16,
        ..PipelineConfig::default()
    };
    let (pipeline, _) = train_pipeline(&train, &cfg)?;

    let comparison = compare_heads(&pipeline, &test)?;
    row("softmax", &comparison.softmax);
    row("hybrid", &comparison.hybrid);
    assert_eq!(comparison.softmax_weight_checksum, comparison.hybrid_weight_checksum);
    println!("shared backbone checksum {:016x}", comparison.hybrid_weight_checksum);
    Ok(())
}
