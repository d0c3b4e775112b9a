//! Trains a small model, saves it, reloads it, and scores individual
//! slices: each prediction carries the hard label, the signed margin
//! distance, and a calibrated malignancy risk in (0, 1).

use hybridct::data::{generate_phantoms, split_dataset, PhantomSpec};
use hybridct::pipeline::{load_pipeline, predict_image, save_pipeline, train_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        count_normal: 20,
        count_benign: 20,
        count_malignant: 20,
        seed: 5,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;
    let (train, test) = split_dataset(&data, 0.15, 5)?;

    let cfg = PipelineConfig {
        resolution: 16,
        feature_dim: 16,
        epochs: 10,
        batch_size: 8,
        ..PipelineConfig::default()
    };
    let (pipeline, _) = train_pipeline(&train, &cfg)?;

    let path = std::env::temp_dir().join("hybridct-demo-model.hcsv");
    save_pipeline(&pipeline, &path)?;
    let reloaded = load_pipeline(&path)?;
    println!("model round-tripped through {}\n", path.display());

    println!("{:<30} {:<10} {:>8} {:>8}", "slice", "truth", "margin", "risk");
    for item in &test.items {
        let p = predict_image(&reloaded, &item.image)?;
        println!(
            "{:<30} {:<10} {:>8.3} {:>8.3}",
            item.id,
            item.label.dir_name(),
            p.decision_score,
            p.risk
        );
    }
    Ok(())
}
