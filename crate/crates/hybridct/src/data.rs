//! Image and dataset ingestion, the label scheme, stratified train/test
//! splitting, and a synthetic phantom-CT generator used for desk-scale
//! experiments.
//!
//! Datasets live on disk as a directory with `normal/`, `benign/` and
//! `malignant/` subdirectories of PGM files; an optional `<image>.meta`
//! sidecar carries the rescale slope/intercept used for HU conversion.

pub mod pgm;
pub mod phantom;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::preprocess::{Mask, NormImage};
use crate::rng::stream_rng;

pub use pgm::{load_image, sidecar_path, write_pgm};
pub use phantom::{generate_phantoms, generate_phantoms_with_records, PhantomSpec, PlacementRecord};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("EmptyDatasetError: {0}")]
    EmptyDataset(String),
    #[error("SpecError: {0}")]
    Spec(String),
    #[error("SplitError: {0}")]
    Split(String),
}

/// Three-way class of a CT slice, mirroring the dataset directory layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Normal,
    Benign,
    Malignant,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Normal, ClassLabel::Benign, ClassLabel::Malignant];

    /// Dataset subdirectory name for this class.
    pub fn dir_name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Benign => "benign",
            ClassLabel::Malignant => "malignant",
        }
    }
}

/// Binary classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryTarget {
    Positive,
    Negative,
}

impl BinaryTarget {
    /// Signed representation used by the SVM: +1 for Positive, -1 for Negative.
    pub fn sign(self) -> f64 {
        match self {
            BinaryTarget::Positive => 1.0,
            BinaryTarget::Negative => -1.0,
        }
    }

    /// Logit index used by the softmax head: Negative is 0, Positive is 1.
    pub fn index(self) -> usize {
        match self {
            BinaryTarget::Negative => 0,
            BinaryTarget::Positive => 1,
        }
    }
}

/// How class labels map onto the binary target.
///
/// The default task treats malignant slices as positive against everything
/// else; the strict task pits benign against malignant and excludes normals
/// entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryTask {
    MalignantVsRest,
    BenignVsMalignant,
}

impl BinaryTask {
    /// Binary target for a class label, or `None` when the label does not
    /// participate in the task (normals under benign-vs-malignant).
    pub fn target_of(self, label: ClassLabel) -> Option<BinaryTarget> {
        match (self, label) {
            (_, ClassLabel::Malignant) => Some(BinaryTarget::Positive),
            (BinaryTask::MalignantVsRest, _) => Some(BinaryTarget::Negative),
            (BinaryTask::BenignVsMalignant, ClassLabel::Benign) => Some(BinaryTarget::Negative),
            (BinaryTask::BenignVsMalignant, ClassLabel::Normal) => None,
        }
    }
}

/// Raw scanner pixels before HU conversion, with the affine rescale that
/// maps them into Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSlice {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub pixels: Vec<u32>,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
}

impl RawSlice {
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: u8,
        pixels: Vec<u32>,
        rescale_slope: f64,
        rescale_intercept: f64,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Format("image dimensions must be at least 1x1".into()));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(DataError::Format(format!("unsupported bit depth {bit_depth}")));
        }
        let count = width
            .checked_mul(height)
            .ok_or_else(|| DataError::Format("image dimensions overflow".into()))?;
        if pixels.len() != count {
            return Err(DataError::Format(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        let limit = 1u32 << bit_depth;
        if pixels.iter().any(|&p| p >= limit) {
            return Err(DataError::Format(format!("pixel value exceeds {}-bit range", bit_depth)));
        }
        Ok(RawSlice { width, height, bit_depth, pixels, rescale_slope, rescale_intercept })
    }
}

/// Image payload of a dataset item: raw scanner pixels straight from disk
/// or an already-normalized image (produced by preprocessing/augmentation).
#[derive(Debug, Clone, PartialEq)]
pub enum ImageData {
    Raw(RawSlice),
    Norm(NormImage),
}

impl ImageData {
    pub fn width(&self) -> usize {
        match self {
            ImageData::Raw(r) => r.width,
            ImageData::Norm(n) => n.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            ImageData::Raw(r) => r.height,
            ImageData::Norm(n) => n.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageData,
    pub label: ClassLabel,
    pub id: String,
    /// Lung mask for phantoms; `None` for loaded data.
    pub ground_truth_mask: Option<Mask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Loaded,
    Phantom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_count(&self, label: ClassLabel) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }
}

/// Loads a dataset from a directory with `normal/`, `benign/` and
/// `malignant/` subdirectories of `.pgm` files. Missing subdirectories are
/// treated as empty. Items are sorted by their relative-path id so loading
/// is independent of filesystem enumeration order.
pub fn load_dataset(root: &Path) -> Result<Dataset, DataError> {
    let mut items = Vec::new();
    for label in ClassLabel::ALL {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.ends_with(".pgm") || !entry.path().is_file() {
                continue;
            }
            let slice = pgm::load_image(&entry.path())?;
            items.push(LabeledImage {
                image: ImageData::Raw(slice),
                label,
                id: format!("{}/{}", label.dir_name(), name),
                ground_truth_mask: None,
            });
        }
    }
    if items.is_empty() {
        return Err(DataError::EmptyDataset(format!("no PGM images under {}", root.display())));
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Dataset { items, provenance: Provenance::Loaded, seed: None })
}

/// Writes a dataset of raw slices back to the on-disk layout, one PGM per
/// item id, with a `.meta` sidecar whenever the rescale differs from the
/// (1.0, 0.0) default.
pub fn write_dataset_tree(root: &Path, data: &Dataset) -> Result<(), DataError> {
    for item in &data.items {
        let slice = match &item.image {
            ImageData::Raw(s) => s,
            ImageData::Norm(_) => {
                return Err(DataError::Format(format!(
                    "item {} is not a raw slice; only raw datasets can be written",
                    item.id
                )))
            }
        };
        let path = root.join(&item.id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        pgm::write_pgm(&path, slice)?;
        if slice.rescale_slope != 1.0 || slice.rescale_intercept != 0.0 {
            let meta = format!("{} {}\n", slice.rescale_slope, slice.rescale_intercept);
            fs::write(pgm::sidecar_path(&path), meta)?;
        }
    }
    Ok(())
}

/// Stratified train/test split. Per class the test count is
/// `round(test_fraction * class_size)` clamped to leave at least one item on
/// each side. Ties are broken by sorting ids and shuffling with a seeded
/// stream per class, so the split does not depend on input order.
pub fn split_dataset(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "test_fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    if data.items.is_empty() {
        return Err(DataError::EmptyDataset("cannot split an empty dataset".into()));
    }
    let mut test_ids: BTreeSet<&str> = BTreeSet::new();
    for (class_idx, label) in ClassLabel::ALL.iter().enumerate() {
        let mut members: Vec<&LabeledImage> =
            data.items.iter().filter(|it| it.label == *label).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(DataError::Split(format!(
                "class {} has {} item(s); at least 2 are needed to split",
                label.dir_name(),
                members.len()
            )));
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = stream_rng(seed, class_idx as u64);
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        test_ids.extend(members[..k].iter().map(|it| it.id.as_str()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for item in &data.items {
        if test_ids.contains(item.id.as_str()) {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((
        Dataset { items: train, provenance: data.provenance, seed: data.seed },
        Dataset { items: test, provenance: data.provenance, seed: data.seed },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(per_class: &[(ClassLabel, usize)]) -> Dataset {
        let mut items = Vec::new();
        for &(label, count) in per_class {
            for i in 0..count {
                let slice = RawSlice::new(2, 2, 8, vec![0, 1, 2, 3], 1.0, 0.0).unwrap();
                items.push(LabeledImage {
                    image: ImageData::Raw(slice),
                    label,
                    id: format!("{}/{}_{:04}.pgm", label.dir_name(), label.dir_name(), i),
                    ground_truth_mask: None,
                });
            }
        }
        Dataset { items, provenance: Provenance::Loaded, seed: None }
    }

    #[test]
    fn raw_slice_rejects_bad_shapes() {
        assert!(RawSlice::new(0, 2, 8, vec![], 1.0, 0.0).is_err());
        assert!(RawSlice::new(2, 2, 12, vec![0; 4], 1.0, 0.0).is_err());
        assert!(RawSlice::new(2, 2, 8, vec![0; 3], 1.0, 0.0).is_err());
        assert!(RawSlice::new(2, 2, 8, vec![0, 0, 0, 256], 1.0, 0.0).is_err());
        assert!(RawSlice::new(2, 2, 16, vec![0, 0, 0, 65535], 1.0, 0.0).is_ok());
    }

    #[test]
    fn task_mapping_matches_contract() {
        use BinaryTarget::*;
        let t = BinaryTask::MalignantVsRest;
        assert_eq!(t.target_of(ClassLabel::Malignant), Some(Positive));
        assert_eq!(t.target_of(ClassLabel::Benign), Some(Negative));
        assert_eq!(t.target_of(ClassLabel::Normal), Some(Negative));
        let t = BinaryTask::BenignVsMalignant;
        assert_eq!(t.target_of(ClassLabel::Malignant), Some(Positive));
        assert_eq!(t.target_of(ClassLabel::Benign), Some(Negative));
        assert_eq!(t.target_of(ClassLabel::Normal), None);
    }

    #[test]
    fn split_is_stratified_and_exact() {
        let data = tiny_dataset(&[(ClassLabel::Normal, 50), (ClassLabel::Malignant, 50)]);
        let (train, test) = split_dataset(&data, 0.2, 7).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        assert_eq!(test.class_count(ClassLabel::Normal), 10);
        assert_eq!(test.class_count(ClassLabel::Malignant), 10);
        let train_ids: BTreeSet<_> = train.items.iter().map(|i| i.id.clone()).collect();
        let test_ids: BTreeSet<_> = test.items.iter().map(|i| i.id.clone()).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(train_ids.len() + test_ids.len(), data.len());
    }

    #[test]
    fn split_is_deterministic() {
        let data = tiny_dataset(&[(ClassLabel::Benign, 9), (ClassLabel::Malignant, 5)]);
        let a = split_dataset(&data, 0.3, 11).unwrap();
        let b = split_dataset(&data, 0.3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let data = tiny_dataset(&[(ClassLabel::Normal, 1), (ClassLabel::Malignant, 4)]);
        let err = split_dataset(&data, 0.5, 0).unwrap_err();
        assert!(err.to_string().starts_with("SplitError"));
    }

    #[test]
    fn split_keeps_at_least_one_item_per_side() {
        let data = tiny_dataset(&[(ClassLabel::Normal, 2)]);
        let (train, test) = split_dataset(&data, 0.9, 3).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
    }
}
