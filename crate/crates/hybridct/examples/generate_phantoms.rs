//! Generates a small synthetic CT phantom dataset and writes it to disk
//! in the directory layout the training tools expect (one subdirectory
//! per class plus a manifest).

use hybridct::data::{generate_phantoms, ClassLabel, ImageData, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        count_normal: 4,
        count_benign: 4,
        count_malignant: 4,
        seed: 7,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;

    let out = std::env::temp_dir().join("hybridct-phantoms");
    hybridct::data::write_dataset_tree(&out, &data)?;
    println!("wrote {} slices under {}", data.items.len(), out.display());

    for label in ClassLabel::ALL {
        let n = data.items.iter().filter(|i| i.label == label).count();
        println!("  {:<9} {n}", label.dir_name());
    }

    // Render one malignant phantom as ASCII so the anatomy is visible:
    // air background, two bright lung fields, and a spiculated nodule.
    let item = data.items.iter().find(|i| i.label == ClassLabel::Malignant).unwrap();
    let ImageData::Raw(raw) = &item.image else { unreachable!() };
    println!("\n{} ({}x{}):", item.id, raw.width, raw.height);
    let shades = [' ', '.', ':', 'o', '#'];
    let max = *raw.pixels.iter().max().unwrap() as f64;
    for y in 0..raw.height {
        let row: String = (0..raw.width)
            .map(|x| {
                let v = raw.pixels[y * raw.width + x] as f64 / max;
                shades[((v * 4.0).round() as usize).min(4)]
            })
            .collect();
        println!("  {row}");
    }
    Ok(())
}
