//! CT-style preprocessing: HU conversion and windowing, lung segmentation,
//! denoising, resizing, and seeded augmentation.

pub mod filter;
pub mod segment;
pub mod transform;

use thiserror::Error;

use crate::data::RawSlice;

pub use filter::{gaussian_filter, nlm_filter};

/// Default display window in HU, covering air through soft tissue.
pub const DEFAULT_WINDOW_LOW: f64 = -1000.0;
pub const DEFAULT_WINDOW_HIGH: f64 = 400.0;
pub use segment::{apply_mask, mask_iou, segment_lungs};
pub use transform::{
    apply_transform, augment_dataset, resize_bilinear, AugmentPolicy, JitterRanges, TransformSpec,
};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("WindowError: {0}")]
    Window(String),
    #[error("TooSmallError: {0}")]
    TooSmall(String),
}

/// 2D grid of Hounsfield-unit values.
#[derive(Debug, Clone, PartialEq)]
pub struct HuImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// 2D grid normalized into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Binary mask with the same dimensions as the image it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Applies the scanner rescale: `HU = slope * pixel + intercept`.
pub fn to_hu(raw: &RawSlice) -> HuImage {
    HuImage {
        width: raw.width,
        height: raw.height,
        values: raw
            .pixels
            .iter()
            .map(|&p| raw.rescale_slope * p as f64 + raw.rescale_intercept)
            .collect(),
    }
}

/// Windows HU values into [0, 1]: `clamp((v - low) / (high - low), 0, 1)`.
pub fn normalize_hu(
    img: &HuImage,
    window_low: f64,
    window_high: f64,
) -> Result<NormImage, PreprocessError> {
    if !(window_low < window_high) {
        return Err(PreprocessError::Window(format!(
            "window low {window_low} must be below window high {window_high}"
        )));
    }
    let span = window_high - window_low;
    Ok(NormImage {
        width: img.width,
        height: img.height,
        values: img.values.iter().map(|&v| ((v - window_low) / span).clamp(0.0, 1.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hu(values: Vec<f64>) -> HuImage {
        HuImage { width: values.len(), height: 1, values }
    }

    #[test]
    fn to_hu_is_the_affine_rescale() {
        let raw = RawSlice::new(2, 1, 16, vec![24, 1424], 1.0, -1024.0).unwrap();
        let img = to_hu(&raw);
        assert_eq!(img.values, vec![-1000.0, 400.0]);
        let raw = RawSlice::new(2, 1, 8, vec![0, 200], 1.0, 0.0).unwrap();
        assert_eq!(to_hu(&raw).values, vec![0.0, 200.0]);
    }

    #[test]
    fn normalize_hits_the_window_endpoints() {
        let img = hu(vec![-1000.0, 400.0, -300.0, -1300.0, 900.0]);
        let n = normalize_hu(&img, -1000.0, 400.0).unwrap();
        assert_eq!(n.values, vec![0.0, 1.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn inverted_window_is_rejected() {
        let img = hu(vec![0.0]);
        let err = normalize_hu(&img, 400.0, -1000.0).unwrap_err();
        assert!(err.to_string().starts_with("WindowError"));
        assert!(normalize_hu(&img, 10.0, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_bounded_and_monotone(
            a in -2000.0f64..1000.0,
            b in -2000.0f64..1000.0,
        ) {
            let img = hu(vec![a.min(b), a.max(b)]);
            let n = normalize_hu(&img, -1000.0, 400.0).unwrap();
            prop_assert!(n.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(n.values[0] <= n.values[1]);
        }
    }
}
