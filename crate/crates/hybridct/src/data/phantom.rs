//! Synthetic chest-phantom generator.
//!
//! Each phantom is a soft-tissue field (about +40 HU) holding two
//! elliptical low-density lung regions (about -850 HU). Malignant phantoms
//! carry a bright disk nodule inside one lung, benign phantoms a smaller
//! and fainter one, normal phantoms none. Per-pixel Gaussian noise is added
//! everywhere and the result is quantized to 16-bit raw values with rescale
//! slope 1 and intercept -1024.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ClassLabel, DataError, Dataset, ImageData, LabeledImage, Provenance, RawSlice};
use crate::preprocess::Mask;
use crate::rng::stream_rng;

pub const LUNG_HU: f64 = -850.0;
pub const TISSUE_HU: f64 = 40.0;

/// Parameters of the phantom generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub count_normal: usize,
    pub count_benign: usize,
    pub count_malignant: usize,
    pub width: usize,
    pub height: usize,
    /// Uniform sampling range for the malignant nodule radius, in pixels.
    /// Benign nodules use 0.6x the drawn radius.
    pub nodule_radius_range: (f64, f64),
    /// Absolute HU value of malignant nodule pixels. Benign nodules sit at
    /// 60% of the way from lung to this value.
    pub nodule_intensity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            count_normal: 0,
            count_benign: 0,
            count_malignant: 0,
            width: 32,
            height: 32,
            nodule_radius_range: (2.0, 3.0),
            nodule_intensity: 100.0,
            noise_sigma: 20.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn total_count(&self) -> usize {
        self.count_normal + self.count_benign + self.count_malignant
    }

    pub fn count_for(&self, label: ClassLabel) -> usize {
        match label {
            ClassLabel::Normal => self.count_normal,
            ClassLabel::Benign => self.count_benign,
            ClassLabel::Malignant => self.count_malignant,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.width < 16 || self.height < 16 {
            return Err(DataError::Spec("phantom images must be at least 16x16".into()));
        }
        let (lo, hi) = self.nodule_radius_range;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(DataError::Spec(format!(
                "nodule radius range ({lo}, {hi}) must be positive and ordered"
            )));
        }
        let half = (self.width.min(self.height) as f64) / 2.0;
        if hi >= half {
            return Err(DataError::Spec(format!(
                "nodule radius {hi} must be smaller than half the image ({half})"
            )));
        }
        // The nodule must fit inside a lung ellipse even at the smallest
        // jittered axes (5% shrink), with half a pixel of margin.
        let min_axis = 0.95 * (0.16 * self.width as f64).min(0.33 * self.height as f64);
        if hi > min_axis - 1.0 {
            return Err(DataError::Spec(format!(
                "nodule radius {hi} is too large for the lung geometry (limit {:.2})",
                min_axis - 1.0
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(DataError::Spec("noise sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Where the generator put things, one record per phantom; this is the
/// ground truth behind `manifest.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementRecord {
    pub id: String,
    pub label: ClassLabel,
    pub has_nodule: bool,
}

pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Dataset, DataError> {
    generate_phantoms_with_records(spec).map(|(data, _)| data)
}

/// Generates the dataset together with the placement records. Every phantom
/// is produced from its own stream derived from `(seed, global index)`, so
/// the output is a pure function of the spec.
pub fn generate_phantoms_with_records(
    spec: &PhantomSpec,
) -> Result<(Dataset, Vec<PlacementRecord>), DataError> {
    spec.validate()?;
    if spec.total_count() == 0 {
        return Err(DataError::EmptyDataset("phantom counts are all zero".into()));
    }
    let mut items = Vec::with_capacity(spec.total_count());
    let mut records = Vec::with_capacity(spec.total_count());
    let mut global: u64 = 0;
    for label in ClassLabel::ALL {
        for i in 0..spec.count_for(label) {
            let (item, record) = generate_one(spec, label, i, global);
            items.push(item);
            records.push(record);
            global += 1;
        }
    }
    let data = Dataset { items, provenance: Provenance::Phantom, seed: Some(spec.seed) };
    Ok((data, records))
}

fn generate_one(
    spec: &PhantomSpec,
    label: ClassLabel,
    index_in_class: usize,
    global_index: u64,
) -> (LabeledImage, PlacementRecord) {
    let mut rng = stream_rng(spec.seed, global_index);
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f64, h as f64);

    // Lung ellipses with a little per-image jitter; margins keep them away
    // from the border so segmentation's ambient-air removal cannot eat them.
    let ax = 0.16 * wf * (1.0 + rng.gen_range(-0.05..=0.05));
    let ay = 0.33 * hf * (1.0 + rng.gen_range(-0.05..=0.05));
    let cy = hf * (0.50 + rng.gen_range(-0.01..=0.01));
    let cx_left = wf * (0.30 + rng.gen_range(-0.01..=0.01));
    let cx_right = wf * (0.70 + rng.gen_range(-0.01..=0.01));

    // Nodule placement: uniform inside a shrunken ellipse so the full disk
    // stays inside the lung with at least half a pixel to spare.
    let nodule = if label == ClassLabel::Normal {
        None
    } else {
        let drawn = rng.gen_range(spec.nodule_radius_range.0..=spec.nodule_radius_range.1);
        let (r, value) = match label {
            ClassLabel::Malignant => (drawn, spec.nodule_intensity),
            ClassLabel::Benign => (0.6 * drawn, LUNG_HU + 0.6 * (spec.nodule_intensity - LUNG_HU)),
            ClassLabel::Normal => unreachable!(),
        };
        let cx = if rng.gen_range(0..2) == 1 { cx_right } else { cx_left };
        let (u, v) = loop {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            let v: f64 = rng.gen_range(-1.0..=1.0);
            if u * u + v * v <= 1.0 {
                break (u, v);
            }
        };
        let reach_x = (ax - r - 0.5).max(0.0);
        let reach_y = (ay - r - 0.5).max(0.0);
        Some((cx + u * reach_x, cy + v * reach_y, r, value))
    };

    let inside = |px: f64, py: f64, cx: f64| {
        let dx = (px - cx) / ax;
        let dy = (py - cy) / ay;
        dx * dx + dy * dy <= 1.0
    };

    let mut hu = vec![0.0f64; w * h];
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let in_lung = inside(px, py, cx_left) || inside(px, py, cx_right);
            let mut value = if in_lung { LUNG_HU } else { TISSUE_HU };
            if let Some((ncx, ncy, r, nv)) = nodule {
                let dx = px - ncx;
                let dy = py - ncy;
                if dx * dx + dy * dy <= r * r {
                    value = nv;
                }
            }
            hu[y * w + x] = value;
            bits[y * w + x] = in_lung;
        }
    }
    for value in hu.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *value += spec.noise_sigma * z;
    }
    let pixels: Vec<u32> =
        hu.iter().map(|v| (v + 1024.0).round().clamp(0.0, 65535.0) as u32).collect();
    let slice = RawSlice::new(w, h, 16, pixels, 1.0, -1024.0)
        .expect("phantom construction produces a valid slice");

    let id = format!("{0}/{0}_{1:04}.pgm", label.dir_name(), index_in_class);
    let item = LabeledImage {
        image: ImageData::Raw(slice),
        label,
        id: id.clone(),
        ground_truth_mask: Some(Mask { width: w, height: h, bits }),
    };
    let record = PlacementRecord { id, label, has_nodule: nodule.is_some() };
    (item, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::to_hu;

    fn spec(n: usize, b: usize, m: usize, seed: u64) -> PhantomSpec {
        PhantomSpec { count_normal: n, count_benign: b, count_malignant: m, seed, ..PhantomSpec::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(2, 2, 2, 42);
        let a = generate_phantoms(&s).unwrap();
        let b = generate_phantoms(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn zero_counts_are_an_empty_dataset() {
        let err = generate_phantoms(&spec(0, 0, 0, 1)).unwrap_err();
        assert!(err.to_string().starts_with("EmptyDatasetError"));
    }

    #[test]
    fn malignant_nodule_is_visible_inside_the_mask() {
        let s = spec(0, 0, 5, 9);
        let data = generate_phantoms(&s).unwrap();
        for item in &data.items {
            let raw = match &item.image {
                ImageData::Raw(r) => r,
                _ => unreachable!(),
            };
            let hu = to_hu(raw);
            let mask = item.ground_truth_mask.as_ref().unwrap();
            let lung: Vec<f64> = hu
                .values
                .iter()
                .zip(&mask.bits)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            let mean = lung.iter().sum::<f64>() / lung.len() as f64;
            let threshold = mean + s.nodule_intensity / 2.0;
            assert!(
                lung.iter().any(|&v| v > threshold),
                "no pixel above {threshold:.1} inside the mask"
            );
        }
    }

    #[test]
    fn placement_records_separate_the_classes() {
        let data = generate_phantoms_with_records(&spec(100, 0, 100, 3)).unwrap();
        for record in &data.1 {
            match record.label {
                ClassLabel::Malignant => assert!(record.has_nodule),
                ClassLabel::Normal => assert!(!record.has_nodule),
                ClassLabel::Benign => unreachable!(),
            }
        }
    }

    #[test]
    fn invalid_geometry_is_a_spec_error() {
        let mut s = spec(1, 0, 0, 0);
        s.nodule_radius_range = (4.0, 20.0);
        assert!(generate_phantoms(&s).unwrap_err().to_string().starts_with("SpecError"));
        let mut s = spec(1, 0, 0, 0);
        s.width = 8;
        s.height = 8;
        assert!(generate_phantoms(&s).unwrap_err().to_string().starts_with("SpecError"));
    }

    #[test]
    fn benign_nodules_are_fainter_than_malignant() {
        let data = generate_phantoms(&spec(0, 20, 20, 5)).unwrap();
        let max_in_mask = |item: &LabeledImage| {
            let raw = match &item.image {
                ImageData::Raw(r) => r,
                _ => unreachable!(),
            };
            let hu = to_hu(raw);
            let mask = item.ground_truth_mask.as_ref().unwrap();
            hu.values
                .iter()
                .zip(&mask.bits)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let benign: Vec<f64> = data
            .items
            .iter()
            .filter(|i| i.label == ClassLabel::Benign)
            .map(max_in_mask)
            .collect();
        let malignant: Vec<f64> = data
            .items
            .iter()
            .filter(|i| i.label == ClassLabel::Malignant)
            .map(max_in_mask)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&benign) < mean(&malignant) - 100.0);
    }
}
