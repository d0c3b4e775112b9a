//! Denoising filters: separable Gaussian smoothing and patch-based
//! non-local means.

use super::NormImage;

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, symmetric
/// reflection at the borders, and the kernel normalized to sum 1.
/// `sigma <= 0` is the identity.
pub fn gaussian_filter(img: &NormImage, sigma: f64) -> NormImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let (w, h) = (img.width, img.height);
    let mut horizontal = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - radius, w);
                acc += k * img.values[y * w + sx];
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - radius, h);
                acc += k * horizontal[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    NormImage { width: w, height: h, values: out }
}

/// Symmetric reflection (edge pixel duplicated): -1 -> 0, n -> n-1.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Non-local means. Each pixel becomes the weight-normalized average over
/// the search window, with weights `exp(-max(d^2 - 2 sigma_est^2, 0) / h^2)`
/// where `d^2` is the mean squared patch difference and `sigma_est` a
/// per-image MAD noise estimate from the Laplacian response.
pub fn nlm_filter(img: &NormImage, h: f64, patch_radius: usize, search_radius: usize) -> NormImage {
    if h <= 0.0 {
        return img.clone();
    }
    let (w, ht) = (img.width, img.height);
    let sigma = noise_sigma_mad(img);
    let two_sigma_sq = 2.0 * sigma * sigma;
    let pr = patch_radius.max(1) as isize;
    let sr = search_radius.max(1) as isize;
    let patch_len = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, ht as isize - 1) as usize;
        img.values[cy * w + cx]
    };
    let mut out = vec![0.0f64; w * ht];
    for y in 0..ht as isize {
        for x in 0..w as isize {
            let mut num = 0.0;
            let mut den = 0.0;
            for qy in (y - sr).max(0)..=(y + sr).min(ht as isize - 1) {
                for qx in (x - sr).max(0)..=(x + sr).min(w as isize - 1) {
                    let mut d2 = 0.0;
                    for oy in -pr..=pr {
                        for ox in -pr..=pr {
                            let d = at(x + ox, y + oy) - at(qx + ox, qy + oy);
                            d2 += d * d;
                        }
                    }
                    d2 /= patch_len;
                    let weight = (-((d2 - two_sigma_sq).max(0.0)) / (h * h)).exp();
                    num += weight * img.values[qy as usize * w + qx as usize];
                    den += weight;
                }
            }
            out[y as usize * w + x as usize] = num / den;
        }
    }
    NormImage { width: w, height: ht, values: out }
}

/// Robust noise estimate: 1.4826 times the median absolute deviation of the
/// 5-point Laplacian response (replicated borders).
fn noise_sigma_mad(img: &NormImage) -> f64 {
    let (w, h) = (img.width, img.height);
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        img.values[cy * w + cx]
    };
    let mut lap = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            lap.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let med = median(&mut lap.clone());
    let mut dev: Vec<f64> = lap.iter().map(|&v| (v - med).abs()).collect();
    1.4826 * median(&mut dev)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize, values: Vec<f64>) -> NormImage {
        assert_eq!(values.len(), w * h);
        NormImage { width: w, height: h, values }
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = image(6, 5, vec![0.4; 30]);
        for sigma in [0.5, 1.0, 2.5] {
            let out = gaussian_filter(&img, sigma);
            assert!(out.values.iter().all(|&v| (v - 0.4).abs() < 1e-9));
        }
    }

    #[test]
    fn gaussian_sigma_zero_is_identity() {
        let img = image(3, 3, (0..9).map(|i| i as f64 / 10.0).collect());
        assert_eq!(gaussian_filter(&img, 0.0), img);
    }

    #[test]
    fn gaussian_impulse_matches_the_kernel_center() {
        let mut values = vec![0.0; 81];
        values[4 * 9 + 4] = 1.0;
        let img = image(9, 9, values);
        let out = gaussian_filter(&img, 1.0);
        // Independent reconstruction of the normalized center weight.
        let weights: Vec<f64> = (-3..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let center = weights[3] / weights.iter().sum::<f64>();
        assert!((out.values[4 * 9 + 4] - center * center).abs() < 1e-12);
    }

    #[test]
    fn nlm_preserves_constants() {
        let img = image(7, 7, vec![0.25; 49]);
        let out = nlm_filter(&img, 0.2, 1, 3);
        assert!(out.values.iter().all(|&v| (v - 0.25).abs() < 1e-9));
    }

    #[test]
    fn nlm_pulls_an_outlier_toward_its_neighborhood() {
        let mut values = vec![0.5; 81];
        values[4 * 9 + 4] = 0.9;
        let img = image(9, 9, values);
        let out = nlm_filter(&img, 0.3, 1, 3);
        let v = out.values[4 * 9 + 4];
        assert!((v - 0.5).abs() < (0.9_f64 - 0.5).abs(), "outlier not smoothed: {v}");
        // Scalar reference over the same window with the same weight rule.
        let reference = nlm_reference_center(&img, 0.3);
        assert!((v - reference).abs() < 1e-12);
    }

    #[test]
    fn nlm_with_tiny_h_is_the_identity_on_a_ramp() {
        // A linear ramp has zero Laplacian, so sigma_est = 0 and every
        // non-identical patch is suppressed as h -> 0.
        let img = image(8, 8, (0..64).map(|i| i as f64 / 63.0).collect());
        let out = nlm_filter(&img, 1e-6, 1, 3);
        assert_eq!(out, img);
    }

    #[test]
    fn nlm_stays_within_input_range() {
        let img = image(5, 5, (0..25).map(|i| (i as f64 * 0.37).fract()).collect());
        let out = nlm_filter(&img, 0.15, 1, 2);
        let lo = img.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(out.values.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    /// Independent single-pixel NLM evaluation at the center of a 9x9 image.
    fn nlm_reference_center(img: &NormImage, h: f64) -> f64 {
        let sigma = noise_sigma_mad(img);
        let at = |x: isize, y: isize| {
            let cx = x.clamp(0, 8) as usize;
            let cy = y.clamp(0, 8) as usize;
            img.values[cy * 9 + cx]
        };
        let (x, y) = (4isize, 4isize);
        let mut num = 0.0;
        let mut den = 0.0;
        for qy in y - 3..=y + 3 {
            for qx in x - 3..=x + 3 {
                let mut d2 = 0.0;
                for oy in -1isize..=1 {
                    for ox in -1isize..=1 {
                        let d = at(x + ox, y + oy) - at(qx + ox, qy + oy);
                        d2 += d * d;
                    }
                }
                d2 /= 9.0;
                let weight = (-((d2 - 2.0 * sigma * sigma).max(0.0)) / (h * h)).exp();
                num += weight * at(qx, qy);
                den += weight;
            }
        }
        num / den
    }
}
