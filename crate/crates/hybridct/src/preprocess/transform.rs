//! Geometric and intensity transforms plus dataset augmentation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normalize_hu, to_hu, NormImage, DEFAULT_WINDOW_HIGH, DEFAULT_WINDOW_LOW};
use crate::data::{Dataset, ImageData, LabeledImage};
use crate::rng::stream_rng;

/// A single image transform. Geometric transforms resample with zero fill
/// outside the original footprint; `Intensity` is pixel-wise.
#[derive(Clone, Debug, PartialEq)]
pub enum TransformSpec {
    /// Rotation about the image center, counterclockwise in degrees.
    /// Exact multiples of 90 degrees are pure index permutations on
    /// square images.
    Rotate { angle_deg: f64 },
    FlipH,
    FlipV,
    /// Shift by (dx, dy) pixels; positive dx moves content right.
    Translate { dx: f64, dy: f64 },
    /// Zoom about the image center. Non-positive factors act as identity.
    Scale { factor: f64 },
    /// v -> clamp(gain * v + bias, 0, 1).
    Intensity { gain: f64, bias: f64 },
}

/// Half-widths of the uniform jitter applied to each transform parameter
/// during augmentation. A range of zero disables jitter for that parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct JitterRanges {
    pub angle_deg: f64,
    pub translate_px: f64,
    pub scale: f64,
    pub gain: f64,
    pub bias: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges { angle_deg: 15.0, translate_px: 2.0, scale: 0.1, gain: 0.1, bias: 0.05 }
    }
}

/// Augmentation policy: one jittered copy per listed transform per item.
#[derive(Clone, Debug)]
pub struct AugmentPolicy {
    pub transforms: Vec<TransformSpec>,
    pub seed: u64,
    pub jitter: JitterRanges,
}

/// Applies one transform to a normalized image.
pub fn apply_transform(img: &NormImage, spec: &TransformSpec) -> NormImage {
    let (w, h) = (img.width, img.height);
    match spec {
        TransformSpec::FlipH => {
            let mut values = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    values[y * w + x] = img.values[y * w + (w - 1 - x)];
                }
            }
            NormImage { width: w, height: h, values }
        }
        TransformSpec::FlipV => {
            let mut values = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    values[y * w + x] = img.values[(h - 1 - y) * w + x];
                }
            }
            NormImage { width: w, height: h, values }
        }
        TransformSpec::Rotate { angle_deg } => rotate(img, *angle_deg),
        TransformSpec::Translate { dx, dy } => {
            resample(img, |x, y| (x - dx, y - dy))
        }
        TransformSpec::Scale { factor } => {
            if !(*factor > 0.0) {
                return img.clone();
            }
            let cx = (w as f64 - 1.0) / 2.0;
            let cy = (h as f64 - 1.0) / 2.0;
            let inv = 1.0 / factor;
            resample(img, |x, y| ((x - cx) * inv + cx, (y - cy) * inv + cy))
        }
        TransformSpec::Intensity { gain, bias } => {
            let values = img.values.iter().map(|&v| (gain * v + bias).clamp(0.0, 1.0)).collect();
            NormImage { width: w, height: h, values }
        }
    }
}

fn rotate(img: &NormImage, angle_deg: f64) -> NormImage {
    let (w, h) = (img.width, img.height);
    let a = angle_deg.rem_euclid(360.0);
    if a == 0.0 {
        return img.clone();
    }
    if w == h {
        let n = w;
        let mut values = vec![0.0; n * n];
        if a == 90.0 {
            for y in 0..n {
                for x in 0..n {
                    values[y * n + x] = img.values[(n - 1 - x) * n + y];
                }
            }
            return NormImage { width: n, height: n, values };
        }
        if a == 180.0 {
            for y in 0..n {
                for x in 0..n {
                    values[y * n + x] = img.values[(n - 1 - y) * n + (n - 1 - x)];
                }
            }
            return NormImage { width: n, height: n, values };
        }
        if a == 270.0 {
            for y in 0..n {
                for x in 0..n {
                    values[y * n + x] = img.values[x * n + (n - 1 - y)];
                }
            }
            return NormImage { width: n, height: n, values };
        }
    }
    let theta = a.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    resample(img, |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
    })
}

/// Inverse-map resampling with bilinear interpolation and zero fill.
fn resample(img: &NormImage, src_of: impl Fn(f64, f64) -> (f64, f64)) -> NormImage {
    let (w, h) = (img.width, img.height);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x as f64, y as f64);
            values[y * w + x] = sample_zero(img, sx, sy);
        }
    }
    NormImage { width: w, height: h, values }
}

fn sample_zero(img: &NormImage, sx: f64, sy: f64) -> f64 {
    let (w, h) = (img.width as f64, img.height as f64);
    if sx <= -1.0 || sy <= -1.0 || sx >= w || sy >= h {
        return 0.0;
    }
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let tap = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            0.0
        } else {
            img.values[y as usize * img.width + x as usize]
        }
    };
    let v00 = tap(x0, y0);
    let v01 = tap(x0 + 1.0, y0);
    let v10 = tap(x0, y0 + 1.0);
    let v11 = tap(x0 + 1.0, y0 + 1.0);
    let top = v00 + fx * (v01 - v00);
    let bot = v10 + fx * (v11 - v10);
    top + fy * (bot - top)
}

/// Bilinear resize with pixel-center alignment and edge clamping. Equal
/// dimensions return a bit-identical copy.
pub fn resize_bilinear(img: &NormImage, new_w: usize, new_h: usize) -> NormImage {
    assert!(new_w > 0 && new_h > 0, "resize target must be non-empty");
    let (w, h) = (img.width, img.height);
    if new_w == w && new_h == h {
        return img.clone();
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let mut values = vec![0.0; new_w * new_h];
    for y in 0..new_h {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for x in 0..new_w {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            let top = img.values[y0 * w + x0] + fx * (img.values[y0 * w + x1] - img.values[y0 * w + x0]);
            let bot = img.values[y1 * w + x0] + fx * (img.values[y1 * w + x1] - img.values[y1 * w + x0]);
            values[y * new_w + x] = top + fy * (bot - top);
        }
    }
    NormImage { width: new_w, height: new_h, values }
}

/// Expands a dataset with one jittered copy per policy transform per item.
/// Originals pass through unchanged (first, in input order); copies are
/// normalized images with ids `{id}#aug{j}` and no ground-truth mask.
pub fn augment_dataset(data: &Dataset, policy: &AugmentPolicy) -> Dataset {
    let mut items = Vec::with_capacity(data.items.len() * (1 + policy.transforms.len()));
    for (i, item) in data.items.iter().enumerate() {
        let mut rng = stream_rng(policy.seed, i as u64);
        items.push(item.clone());
        if policy.transforms.is_empty() {
            continue;
        }
        let base = normalized_view(item);
        for (j, spec) in policy.transforms.iter().enumerate() {
            let jittered = jitter_spec(spec, &policy.jitter, &mut rng);
            let image = apply_transform(&base, &jittered);
            items.push(LabeledImage {
                image: ImageData::Norm(image),
                label: item.label,
                id: format!("{}#aug{}", item.id, j),
                ground_truth_mask: None,
            });
        }
    }
    Dataset { items, provenance: data.provenance, seed: data.seed }
}

/// Transforms operate on normalized intensities; raw slices are windowed
/// with the default soft-tissue window first.
fn normalized_view(item: &LabeledImage) -> NormImage {
    match &item.image {
        ImageData::Norm(n) => n.clone(),
        ImageData::Raw(raw) => {
            let hu = to_hu(raw);
            normalize_hu(&hu, DEFAULT_WINDOW_LOW, DEFAULT_WINDOW_HIGH)
                .expect("default window is valid")
        }
    }
}

fn jitter_spec(spec: &TransformSpec, jr: &JitterRanges, rng: &mut ChaCha8Rng) -> TransformSpec {
    match spec {
        TransformSpec::Rotate { angle_deg } => {
            TransformSpec::Rotate { angle_deg: angle_deg + sym(rng, jr.angle_deg) }
        }
        TransformSpec::FlipH => TransformSpec::FlipH,
        TransformSpec::FlipV => TransformSpec::FlipV,
        TransformSpec::Translate { dx, dy } => TransformSpec::Translate {
            dx: dx + sym(rng, jr.translate_px),
            dy: dy + sym(rng, jr.translate_px),
        },
        TransformSpec::Scale { factor } => {
            TransformSpec::Scale { factor: factor + sym(rng, jr.scale) }
        }
        TransformSpec::Intensity { gain, bias } => TransformSpec::Intensity {
            gain: gain + sym(rng, jr.gain),
            bias: bias + sym(rng, jr.bias),
        },
    }
}

/// Uniform draw from [-range, range]; a non-positive range consumes no
/// randomness and returns zero.
fn sym(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range <= 0.0 {
        0.0
    } else {
        rng.gen_range(-range..=range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassLabel, Provenance};

    fn image(w: usize, h: usize, values: Vec<f64>) -> NormImage {
        assert_eq!(values.len(), w * h);
        NormImage { width: w, height: h, values }
    }

    fn ramp(w: usize, h: usize) -> NormImage {
        image(w, h, (0..w * h).map(|i| i as f64 / (w * h) as f64).collect())
    }

    #[test]
    fn flips_are_involutions() {
        let img = ramp(5, 4);
        for spec in [TransformSpec::FlipH, TransformSpec::FlipV] {
            let twice = apply_transform(&apply_transform(&img, &spec), &spec);
            assert_eq!(twice, img);
        }
    }

    #[test]
    fn identity_parameters_leave_the_image_bit_identical() {
        let img = ramp(6, 6);
        let identities = [
            TransformSpec::Rotate { angle_deg: 0.0 },
            TransformSpec::Rotate { angle_deg: 360.0 },
            TransformSpec::Translate { dx: 0.0, dy: 0.0 },
            TransformSpec::Scale { factor: 1.0 },
            TransformSpec::Intensity { gain: 1.0, bias: 0.0 },
        ];
        for spec in identities {
            assert_eq!(apply_transform(&img, &spec), img, "{spec:?}");
        }
    }

    #[test]
    fn rotate_90_matches_the_index_permutation() {
        let img = ramp(3, 3);
        let out = apply_transform(&img, &TransformSpec::Rotate { angle_deg: 90.0 });
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.values[y * 3 + x], img.values[(2 - x) * 3 + y]);
            }
        }
        // Four quarter turns compose to the identity.
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = apply_transform(&cur, &TransformSpec::Rotate { angle_deg: 90.0 });
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn rotation_by_any_angle_fixes_the_center_of_an_odd_image() {
        let img = ramp(5, 5);
        let out = apply_transform(&img, &TransformSpec::Rotate { angle_deg: 37.5 });
        assert!((out.values[2 * 5 + 2] - img.values[2 * 5 + 2]).abs() < 1e-12);
    }

    #[test]
    fn integer_translation_shifts_exactly_with_zero_fill() {
        let img = ramp(4, 4);
        let out = apply_transform(&img, &TransformSpec::Translate { dx: 1.0, dy: 0.0 });
        for y in 0..4 {
            assert_eq!(out.values[y * 4], 0.0);
            for x in 1..4 {
                assert_eq!(out.values[y * 4 + x], img.values[y * 4 + x - 1]);
            }
        }
    }

    #[test]
    fn intensity_clamps_into_the_unit_interval() {
        // Values chosen to be exact in binary so the comparison is literal.
        let img = image(2, 2, vec![0.0, 0.5, 0.625, 1.0]);
        let out = apply_transform(&img, &TransformSpec::Intensity { gain: 2.0, bias: -0.25 });
        assert_eq!(out.values, vec![0.0, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn transforms_stay_within_the_unit_interval() {
        let img = ramp(7, 7);
        let specs = [
            TransformSpec::Rotate { angle_deg: 33.0 },
            TransformSpec::Translate { dx: 1.5, dy: -2.25 },
            TransformSpec::Scale { factor: 1.3 },
            TransformSpec::Scale { factor: 0.7 },
            TransformSpec::Intensity { gain: 1.8, bias: 0.2 },
        ];
        for spec in specs {
            let out = apply_transform(&img, &spec);
            assert!(
                out.values.iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{spec:?} escaped [0, 1]"
            );
        }
    }

    #[test]
    fn resize_to_the_same_shape_is_identity() {
        let img = ramp(5, 3);
        assert_eq!(resize_bilinear(&img, 5, 3), img);
    }

    #[test]
    fn resize_broadcasts_a_single_pixel() {
        let img = image(1, 1, vec![0.37]);
        let out = resize_bilinear(&img, 4, 4);
        assert!(out.values.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn resize_2x2_to_4x4_matches_the_hand_formula() {
        let img = image(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let out = resize_bilinear(&img, 4, 4);
        // Source coordinates per output index: [0, 0.25, 0.75, 1].
        let f = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let expect = (1.0 - f[y]) * f[x] + f[y] * (2.0 + f[x]);
                assert!((out.values[y * 4 + x] - expect).abs() < 1e-12);
            }
        }
    }

    fn tiny_dataset() -> Dataset {
        let items = (0..3)
            .map(|i| LabeledImage {
                image: ImageData::Norm(ramp(4 + i, 4 + i)),
                label: [ClassLabel::Normal, ClassLabel::Benign, ClassLabel::Malignant][i],
                id: format!("img_{i}"),
                ground_truth_mask: None,
            })
            .collect();
        Dataset { items, provenance: Provenance::Loaded, seed: None }
    }

    #[test]
    fn augmentation_multiplies_the_dataset_size() {
        let data = tiny_dataset();
        let policy = AugmentPolicy {
            transforms: vec![
                TransformSpec::FlipH,
                TransformSpec::Rotate { angle_deg: 10.0 },
            ],
            seed: 5,
            jitter: JitterRanges::default(),
        };
        let out = augment_dataset(&data, &policy);
        assert_eq!(out.items.len(), 9);
    }

    #[test]
    fn augmentation_preserves_labels_and_tags_ids() {
        let data = tiny_dataset();
        let policy = AugmentPolicy {
            transforms: vec![TransformSpec::FlipV, TransformSpec::Scale { factor: 1.1 }],
            seed: 5,
            jitter: JitterRanges::default(),
        };
        let out = augment_dataset(&data, &policy);
        for (i, orig) in data.items.iter().enumerate() {
            let block = &out.items[i * 3..(i + 1) * 3];
            assert_eq!(block[0].id, orig.id);
            assert_eq!(block[1].id, format!("{}#aug0", orig.id));
            assert_eq!(block[2].id, format!("{}#aug1", orig.id));
            assert!(block.iter().all(|it| it.label == orig.label));
        }
    }

    #[test]
    fn augmentation_passes_originals_through_unchanged() {
        let data = tiny_dataset();
        let policy = AugmentPolicy {
            transforms: vec![TransformSpec::Rotate { angle_deg: 45.0 }],
            seed: 11,
            jitter: JitterRanges::default(),
        };
        let out = augment_dataset(&data, &policy);
        for (i, orig) in data.items.iter().enumerate() {
            let copy = &out.items[i * 2];
            assert_eq!(copy.id, orig.id);
            match (&copy.image, &orig.image) {
                (ImageData::Norm(a), ImageData::Norm(b)) => assert_eq!(a, b),
                _ => panic!("original changed representation"),
            }
        }
    }

    #[test]
    fn augmentation_is_deterministic() {
        let data = tiny_dataset();
        let policy = AugmentPolicy {
            transforms: vec![
                TransformSpec::Rotate { angle_deg: 10.0 },
                TransformSpec::Translate { dx: 1.0, dy: 1.0 },
                TransformSpec::Intensity { gain: 1.0, bias: 0.0 },
            ],
            seed: 99,
            jitter: JitterRanges::default(),
        };
        let a = augment_dataset(&data, &policy);
        let b = augment_dataset(&data, &policy);
        assert_eq!(a.items.len(), b.items.len());
        for (x, y) in a.items.iter().zip(&b.items) {
            assert_eq!(x.id, y.id);
            match (&x.image, &y.image) {
                (ImageData::Norm(p), ImageData::Norm(q)) => assert_eq!(p, q),
                (ImageData::Raw(p), ImageData::Raw(q)) => assert_eq!(p.pixels, q.pixels),
                _ => panic!("representation mismatch"),
            }
        }
    }

    #[test]
    fn zero_jitter_with_identity_transforms_copies_bit_exactly() {
        let data = tiny_dataset();
        let policy = AugmentPolicy {
            transforms: vec![
                TransformSpec::Rotate { angle_deg: 0.0 },
                TransformSpec::Intensity { gain: 1.0, bias: 0.0 },
            ],
            seed: 1,
            jitter: JitterRanges {
                angle_deg: 0.0,
                translate_px: 0.0,
                scale: 0.0,
                gain: 0.0,
                bias: 0.0,
            },
        };
        let out = augment_dataset(&data, &policy);
        for (i, orig) in data.items.iter().enumerate() {
            let base = match &orig.image {
                ImageData::Norm(n) => n.clone(),
                _ => unreachable!(),
            };
            for j in 1..=2 {
                match &out.items[i * 3 + j].image {
                    ImageData::Norm(n) => assert_eq!(n, &base),
                    _ => panic!("augmented copy must be normalized"),
                }
            }
        }
    }
}
