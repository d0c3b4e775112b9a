//! Threshold-plus-morphology lung segmentation.
//!
//! Pipeline: threshold at -400 HU (below is an air candidate), drop
//! candidate components 4-connected to the border (ambient air), close then
//! open with a 3x3 cross, keep the two largest remaining components, and
//! finally intersect with the threshold again so the mask never claims a
//! pixel above -400 HU.

use super::{HuImage, Mask, NormImage, PreprocessError};

const AIR_THRESHOLD_HU: f64 = -400.0;

pub fn segment_lungs(img: &HuImage) -> Result<Mask, PreprocessError> {
    if img.width < 3 || img.height < 3 {
        return Err(PreprocessError::TooSmall(format!(
            "segmentation needs at least a 3x3 image, got {}x{}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let candidate: Vec<bool> = img.values.iter().map(|&v| v < AIR_THRESHOLD_HU).collect();
    let mut bits = remove_border_components(&candidate, w, h);
    bits = erode(&dilate(&bits, w, h), w, h); // closing
    bits = dilate(&erode(&bits, w, h), w, h); // opening
    bits = keep_largest_components(&bits, w, h, 2);
    for (b, &c) in bits.iter_mut().zip(&candidate) {
        *b = *b && c;
    }
    Ok(Mask { width: w, height: h, bits })
}

/// Zeroes an image outside the mask. Dimensions must match.
pub fn apply_mask(img: &NormImage, mask: &Mask) -> NormImage {
    assert_eq!(
        (img.width, img.height),
        (mask.width, mask.height),
        "mask dimensions must match the image"
    );
    NormImage {
        width: img.width,
        height: img.height,
        values: img
            .values
            .iter()
            .zip(&mask.bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect(),
    }
}

/// Intersection-over-union of two masks; two empty masks count as 1.
pub fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "mask dimensions must match");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 3x3 cross dilation; out-of-bounds neighbors contribute false.
fn dilate(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = bits[i]
                || (x > 0 && bits[i - 1])
                || (x + 1 < w && bits[i + 1])
                || (y > 0 && bits[i - w])
                || (y + 1 < h && bits[i + w]);
        }
    }
    out
}

/// 3x3 cross erosion; out-of-bounds neighbors count as true so border
/// pixels are not eroded merely for touching the edge.
fn erode(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = bits[i]
                && (x == 0 || bits[i - 1])
                && (x + 1 >= w || bits[i + 1])
                && (y == 0 || bits[i - w])
                && (y + 1 >= h || bits[i + w]);
        }
    }
    out
}

/// Removes true-pixels 4-connected to the image border.
fn remove_border_components(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = bits.to_vec();
    let mut stack: Vec<usize> = Vec::new();
    for x in 0..w {
        stack.push(x);
        stack.push((h - 1) * w + x);
    }
    for y in 0..h {
        stack.push(y * w);
        stack.push(y * w + w - 1);
    }
    stack.retain(|&i| out[i]);
    while let Some(i) = stack.pop() {
        if !out[i] {
            continue;
        }
        out[i] = false;
        let (x, y) = (i % w, i / w);
        if x > 0 && out[i - 1] {
            stack.push(i - 1);
        }
        if x + 1 < w && out[i + 1] {
            stack.push(i + 1);
        }
        if y > 0 && out[i - w] {
            stack.push(i - w);
        }
        if y + 1 < h && out[i + w] {
            stack.push(i + w);
        }
    }
    out
}

/// Keeps the `keep` largest 4-connected components; ties break toward the
/// component whose first pixel comes earlier in row-major order.
fn keep_largest_components(bits: &[bool], w: usize, h: usize, keep: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; w * h];
    let mut components: Vec<(usize, usize)> = Vec::new(); // (size, first pixel)
    for start in 0..bits.len() {
        if !bits[start] || label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut size = 0usize;
        let mut stack = vec![start];
        label[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bits[j] && label[j] == usize::MAX {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        components.push((size, start));
    }
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| {
        components[b].0.cmp(&components[a].0).then(components[a].1.cmp(&components[b].1))
    });
    let kept: Vec<usize> = order.into_iter().take(keep).collect();
    label
        .iter()
        .map(|&l| l != usize::MAX && kept.contains(&l))
        .collect()
}
