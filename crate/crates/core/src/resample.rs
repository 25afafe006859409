//! Interpolation and padding kernels shared by preprocessing and
//! augmentation: separable linear resizing, nearest-neighbor slice
//! resampling, centered zero-padding and Gaussian blur.
//!
//! All resampling uses center-aligned coordinates: output index `i` maps
//! to source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the valid
//! range. When the output length equals the input length the data is
//! copied verbatim, so identity resizes are bit-exact.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Source index pair and interpolation weight for one output position.
#[derive(Debug, Clone, Copy)]
struct LinearTap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn linear_taps(in_len: usize, out_len: usize) -> Vec<LinearTap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            LinearTap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Nearest-neighbor source index for each output position, center
/// convention: `floor((i + 0.5) * in / out)` clamped to the input range.
pub fn nearest_index_map(in_len: usize, out_len: usize) -> Vec<usize> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(in_len - 1))
        .collect()
}

/// Separable bilinear resize of a 2D plane (H x W).
pub fn resize_bilinear_2d(img: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (in_h, in_w) = img.dim();
    if in_h == out_h && in_w == out_w {
        return img.clone();
    }
    // Pass 1: resize rows (H axis).
    let mid = if in_h == out_h {
        img.clone()
    } else {
        let taps = linear_taps(in_h, out_h);
        let mut mid = Array2::zeros((out_h, in_w));
        for (oi, t) in taps.iter().enumerate() {
            for w in 0..in_w {
                let a = img[(t.lo, w)];
                let b = img[(t.hi, w)];
                mid[(oi, w)] = a + (b - a) * t.frac;
            }
        }
        mid
    };
    // Pass 2: resize columns (W axis).
    if in_w == out_w {
        return mid;
    }
    let taps = linear_taps(in_w, out_w);
    let mut out = Array2::zeros((out_h, out_w));
    for h in 0..out_h {
        for (oj, t) in taps.iter().enumerate() {
            let a = mid[(h, t.lo)];
            let b = mid[(h, t.hi)];
            out[(h, oj)] = a + (b - a) * t.frac;
        }
    }
    out
}

/// Separable trilinear resize of a volume laid out as (H, W, S).
pub fn resize_trilinear(vol: &Array3<f64>, out_h: usize, out_w: usize, out_s: usize) -> Array3<f64> {
    let (in_h, in_w, in_s) = vol.dim();
    if (in_h, in_w, in_s) == (out_h, out_w, out_s) {
        return vol.clone();
    }
    // H axis.
    let a = if in_h == out_h {
        vol.clone()
    } else {
        let taps = linear_taps(in_h, out_h);
        let mut a = Array3::zeros((out_h, in_w, in_s));
        for (oi, t) in taps.iter().enumerate() {
            for w in 0..in_w {
                for s in 0..in_s {
                    let p = vol[(t.lo, w, s)];
                    let q = vol[(t.hi, w, s)];
                    a[(oi, w, s)] = p + (q - p) * t.frac;
                }
            }
        }
        a
    };
    // W axis.
    let b = if in_w == out_w {
        a
    } else {
        let taps = linear_taps(in_w, out_w);
        let mut b = Array3::zeros((out_h, out_w, in_s));
        for h in 0..out_h {
            for (oj, t) in taps.iter().enumerate() {
                for s in 0..in_s {
                    let p = a[(h, t.lo, s)];
                    let q = a[(h, t.hi, s)];
                    b[(h, oj, s)] = p + (q - p) * t.frac;
                }
            }
        }
        b
    };
    // S axis.
    if in_s == out_s {
        return b;
    }
    let taps = linear_taps(in_s, out_s);
    let mut out = Array3::zeros((out_h, out_w, out_s));
    for h in 0..out_h {
        for w in 0..out_w {
            for (ok, t) in taps.iter().enumerate() {
                let p = b[(h, w, t.lo)];
                let q = b[(h, w, t.hi)];
                out[(h, w, ok)] = p + (q - p) * t.frac;
            }
        }
    }
    out
}

/// Resample the slice axis of an (H, W, S) volume with nearest neighbor.
pub fn resize_slices_nearest(vol: &Array3<f64>, out_s: usize) -> Array3<f64> {
    let (h, w, in_s) = vol.dim();
    if in_s == out_s {
        return vol.clone();
    }
    let map = nearest_index_map(in_s, out_s);
    let mut out = Array3::zeros((h, w, out_s));
    for (os, &is) in map.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                out[(i, j, os)] = vol[(i, j, is)];
            }
        }
    }
    out
}

/// Target (height, width) after resizing the longer axis to `target`,
/// preserving aspect ratio. The shorter axis is rounded and clamped to
/// at least one pixel.
pub fn fit_longer_axis(h: usize, w: usize, target: usize) -> (usize, usize) {
    if h >= w {
        let nw = ((w as f64 * target as f64 / h as f64).round() as usize).max(1);
        (target, nw.min(target))
    } else {
        let nh = ((h as f64 * target as f64 / w as f64).round() as usize).max(1);
        (nh.min(target), target)
    }
}

/// Zero-pad a plane to (out_h, out_w), centering the content.
pub fn pad_center_2d(img: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = img.dim();
    if h > out_h || w > out_w {
        return Err(Error::shape(format!(
            "cannot pad {h}x{w} into {out_h}x{out_w}"
        )));
    }
    let off_h = (out_h - h) / 2;
    let off_w = (out_w - w) / 2;
    let mut out = Array2::zeros((out_h, out_w));
    for i in 0..h {
        for j in 0..w {
            out[(off_h + i, off_w + j)] = img[(i, j)];
        }
    }
    Ok(out)
}

/// Min and max of a value stream; `None` for an empty stream.
pub fn min_max<'a>(values: impl IntoIterator<Item = &'a f64>) -> Option<(f64, f64)> {
    let mut it = values.into_iter();
    let first = *it.next()?;
    let mut lo = first;
    let mut hi = first;
    for &v in it {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    Some((lo, hi))
}

/// Map values affinely onto [0,1] using the observed min/max. A constant
/// input maps to all zeros.
pub fn minmax_normalize_inplace(values: &mut [f64], lo: f64, hi: f64) {
    let span = hi - lo;
    if span <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur over a plane with clamp-to-edge padding.
/// Output values stay in the convex hull of the input values.
pub fn gaussian_blur_2d(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let mut mid = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let src = (i + t as isize - radius).clamp(0, h as isize - 1);
                acc += kv * img[(src as usize, j as usize)];
            }
            mid[(i as usize, j as usize)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let src = (j + t as isize - radius).clamp(0, w as isize - 1);
                acc += kv * mid[(i as usize, src as usize)];
            }
            out[(i as usize, j as usize)] = acc;
        }
    }
    out
}
