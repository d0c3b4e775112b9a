//! Walks one CT slice through every preprocessing stage by hand and
//! reports the value range after each step: HU conversion, windowing,
//! lung segmentation, masking, denoising, and resizing.

use hybridct::data::{generate_phantoms, ImageData, PhantomSpec};
use hybridct::preprocess::{
    apply_mask, gaussian_filter, normalize_hu, resize_bilinear, segment_lungs, to_hu,
};

fn stats(label: &str, values: &[f64]) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!("{label:<22} min {min:8.3}  max {max:8.3}  mean {mean:8.3}");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        count_normal: 0,
        count_benign: 0,
        count_malignant: 1,
        seed: 3,
        ..PhantomSpec::default()
    };
    let data = generate_phantoms(&spec)?;
    let ImageData::Raw(raw) = &data.items[0].image else { unreachable!() };
    println!(
        "raw slice: {}x{} at {} bits, rescale {}x + {}",
        raw.width, raw.height, raw.bit_depth, raw.rescale_slope, raw.rescale_intercept
    );

    let hu = to_hu(raw);
    stats("hounsfield units", &hu.values);

    let windowed = normalize_hu(&hu, -1000.0, 400.0)?;
    stats("lung window [0,1]", &windowed.values);

    let mask = segment_lungs(&hu)?;
    let coverage = mask.count() as f64 / mask.bits.len() as f64;
    println!("{:<22} {:.1}% of the slice", "lung mask", coverage * 100.0);

    let masked = apply_mask(&windowed, &mask);
    stats("masked", &masked.values);

    let smooth = gaussian_filter(&masked, 0.8);
    stats("gaussian sigma 0.8", &smooth.values);

    let resized = resize_bilinear(&smooth, 16, 16);
    stats("resized to 16x16", &resized.values);

    Ok(())
}
