//! Per-modality preprocessing onto the shared (3, 256, 256, S) layout.
//!
//! 2D grayscale sources (X-ray, ultrasound, MRI) are resized on the longer
//! axis, min-max normalized, zero-padded and replicated across channels
//! and four slices. Videos sample 16 frames (order preserving, cyclic
//! repetition when short). CT volumes clip HU to [-1000, 1000], map the
//! clip window affinely onto [0,1] and resample the slice axis to 64 with
//! nearest neighbor.

use ndarray::{Array2, Array3, Array4};
use rand_chacha::ChaCha8Rng;

use crate::data::sample::{LabelSet, Modality, Sample4D};
use crate::error::{Error, Result};
use crate::resample::{
    fit_longer_axis, min_max, minmax_normalize_inplace, pad_center_2d, resize_bilinear_2d,
    resize_slices_nearest,
};

pub const TARGET_HW: usize = 256;
pub const CT_SLICES: usize = 64;
pub const VIDEO_FRAMES: usize = 16;
pub const HU_CLIP: (f64, f64) = (-1000.0, 1000.0);

fn bare_sample(data: Array4<f64>, modality: Modality) -> Sample4D {
    Sample4D {
        data,
        modality,
        sample_id: String::new(),
        labels: LabelSet::default(),
    }
}

/// Resize the longer axis to the target, then zero-pad the shorter axis
/// symmetrically. Values are expected to already lie in [0,1].
fn resize_and_pad(plane: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    let (h, w) = plane.dim();
    let (nh, nw) = fit_longer_axis(h, w, target);
    let resized = resize_bilinear_2d(plane, nh, nw);
    pad_center_2d(&resized, target, target)
}

/// Preprocess a 2D grayscale image into a (3, 256, 256, 4) sample.
pub fn preprocess_2d(image: &Array2<f64>, modality: Modality) -> Result<Sample4D> {
    if !modality.is_2d() {
        return Err(Error::invalid(format!(
            "preprocess_2d expects a 2D grayscale modality, got {modality}"
        )));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image".to_string()));
    }
    let (nh, nw) = fit_longer_axis(h, w, TARGET_HW);
    let mut resized = resize_bilinear_2d(image, nh, nw);
    let (lo, hi) = min_max(resized.iter()).expect("nonempty");
    minmax_normalize_inplace(resized.as_slice_mut().expect("contiguous"), lo, hi);
    let padded = pad_center_2d(&resized, TARGET_HW, TARGET_HW)?;

    let s = modality.slice_count();
    let mut data = Array4::zeros((3, TARGET_HW, TARGET_HW, s));
    for c in 0..3 {
        for i in 0..TARGET_HW {
            for j in 0..TARGET_HW {
                let v = padded[(i, j)];
                for k in 0..s {
                    data[(c, i, j, k)] = v;
                }
            }
        }
    }
    Ok(bare_sample(data, modality))
}

/// Indices of the frames retained for a video of length `n`: a sorted
/// uniform sample of 16 without replacement when longer, cyclic
/// repetition when shorter, identity at exactly 16. Only the `n > 16`
/// case consumes randomness.
pub fn select_frame_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n > VIDEO_FRAMES {
        let mut idx = rand::seq::index::sample(rng, n, VIDEO_FRAMES).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..VIDEO_FRAMES).map(|i| i % n).collect()
    }
}

/// Preprocess decoded RGB frames (each H x W x 3) into a
/// (3, 256, 256, 16) sample.
pub fn preprocess_video(frames: &[Array3<f64>], rng: &mut ChaCha8Rng) -> Result<Sample4D> {
    if frames.is_empty() {
        return Err(Error::invalid("video has zero frames".to_string()));
    }
    for (i, f) in frames.iter().enumerate() {
        let (h, w, c) = f.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("frame {i} is empty")));
        }
        if c != 3 {
            return Err(Error::invalid(format!(
                "frame {i} has {c} channels, expected 3"
            )));
        }
    }
    let indices = select_frame_indices(frames.len(), rng);

    // Resize every retained frame, then normalize jointly over the video.
    let mut resized: Vec<Array3<f64>> = Vec::with_capacity(indices.len());
    for &fi in &indices {
        let frame = &frames[fi];
        let (h, w, _) = frame.dim();
        let (nh, nw) = fit_longer_axis(h, w, TARGET_HW);
        let mut out = Array3::zeros((nh, nw, 3));
        for c in 0..3 {
            let plane = Array2::from_shape_fn((h, w), |(i, j)| frame[(i, j, c)]);
            let r = resize_bilinear_2d(&plane, nh, nw);
            for i in 0..nh {
                for j in 0..nw {
                    out[(i, j, c)] = r[(i, j)];
                }
            }
        }
        resized.push(out);
    }
    let (lo, hi) = min_max(resized.iter().flat_map(|f| f.iter())).expect("nonempty");
    for f in &mut resized {
        minmax_normalize_inplace(f.as_slice_mut().expect("contiguous"), lo, hi);
    }

    let mut data = Array4::zeros((3, TARGET_HW, TARGET_HW, VIDEO_FRAMES));
    for (k, frame) in resized.iter().enumerate() {
        let (nh, nw, _) = frame.dim();
        let off_h = (TARGET_HW - nh) / 2;
        let off_w = (TARGET_HW - nw) / 2;
        for c in 0..3 {
            for i in 0..nh {
                for j in 0..nw {
                    data[(c, off_h + i, off_w + j, k)] = frame[(i, j, c)];
                }
            }
        }
    }
    Ok(bare_sample(data, Modality::Endoscopy))
}

/// Preprocess a CT volume of HU values laid out (H, W, S) into a
/// (3, 256, 256, 64) sample. The HU clip window maps onto [0,1]
/// independently of the sample, so the transform is monotone in HU.
pub fn preprocess_ct(volume: &Array3<f64>) -> Result<Sample4D> {
    let (h, w, s) = volume.dim();
    if h == 0 || w == 0 || s == 0 {
        return Err(Error::invalid("empty CT volume".to_string()));
    }
    let (lo, hi) = HU_CLIP;
    let span = hi - lo;
    let normalized = volume.mapv(|v| (v.clamp(lo, hi) - lo) / span);
    let sliced = resize_slices_nearest(&normalized, CT_SLICES);

    let mut data = Array4::zeros((3, TARGET_HW, TARGET_HW, CT_SLICES));
    for k in 0..CT_SLICES {
        let plane = Array2::from_shape_fn((h, w), |(i, j)| sliced[(i, j, k)]);
        let out = resize_and_pad(&plane, TARGET_HW)?;
        for i in 0..TARGET_HW {
            for j in 0..TARGET_HW {
                let v = out[(i, j)];
                for c in 0..3 {
                    data[(c, i, j, k)] = v;
                }
            }
        }
    }
    Ok(bare_sample(data, Modality::Ct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn aspect_ratio_preserved_and_padded() {
        let img = Array2::from_elem((512, 384), 1.0);
        let s = preprocess_2d(&img, Modality::XRay).unwrap();
        assert_eq!(s.shape(), (3, 256, 256, 4));
        // Content is 256x192 centered: columns [32, 224) hold the image,
        // the rest is zero padding. A constant image normalizes to zero,
        // so use the padding structure of a two-valued image instead.
        let img = Array2::from_shape_fn((512, 384), |(i, _)| if i < 256 { 0.0 } else { 2.0 });
        let s = preprocess_2d(&img, Modality::XRay).unwrap();
        for j in 0..32 {
            assert_eq!(s.data[(0, 128, j, 0)], 0.0);
            assert_eq!(s.data[(0, 128, 255 - j, 0)], 0.0);
        }
        assert!(s.data[(0, 200, 128, 0)] > 0.9);
    }

    #[test]
    fn constant_image_replicates_equally() {
        let img = Array2::from_elem((64, 64), 5.0);
        let s = preprocess_2d(&img, Modality::Ultrasound).unwrap();
        let v = s.data[(0, 128, 128, 0)];
        for c in 0..3 {
            for k in 0..4 {
                assert_eq!(s.data[(c, 128, 128, k)], v);
            }
        }
        s.validate().unwrap();
    }

    #[test]
    fn target_size_input_is_replicated_verbatim() {
        let img = Array2::from_shape_fn((256, 256), |(i, j)| {
            ((i * 256 + j) as f64) / (256.0 * 256.0 - 1.0)
        });
        let s = preprocess_2d(&img, Modality::XRay).unwrap();
        for i in (0..256).step_by(17) {
            for j in (0..256).step_by(13) {
                assert_eq!(s.data[(1, i, j, 2)], img[(i, j)]);
            }
        }
    }

    #[test]
    fn empty_image_rejected() {
        let img = Array2::<f64>::zeros((0, 4));
        assert!(matches!(
            preprocess_2d(&img, Modality::XRay),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn mri_goes_through_the_2d_path() {
        let img = Array2::from_elem((32, 32), 0.5);
        let s = preprocess_2d(&img, Modality::Mri).unwrap();
        assert_eq!(s.shape(), (3, 256, 256, 4));
    }

    fn tagged_frames(n: usize) -> Vec<Array3<f64>> {
        // Frame k carries the constant value k / n so retained indices can
        // be recovered from pixel values after joint normalization.
        (0..n)
            .map(|k| Array3::from_elem((16, 16, 3), k as f64 / n as f64))
            .collect()
    }

    #[test]
    fn long_video_keeps_sixteen_increasing_frames() {
        let frames = tagged_frames(40);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = preprocess_video(&frames, &mut rng).unwrap();
        assert_eq!(s.shape(), (3, 256, 256, 16));
        let values: Vec<f64> = (0..16).map(|k| s.data[(0, 128, 128, k)]).collect();
        for pair in values.windows(2) {
            assert!(pair[0] < pair[1], "frame order not preserved: {values:?}");
        }
    }

    #[test]
    fn sixteen_frames_kept_in_order() {
        let frames = tagged_frames(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = preprocess_video(&frames, &mut rng).unwrap();
        let values: Vec<f64> = (0..16).map(|k| s.data[(0, 128, 128, k)]).collect();
        for (k, pair) in values.windows(2).enumerate() {
            assert!(pair[0] < pair[1], "frame {k} out of order");
        }
    }

    #[test]
    fn short_video_repeats_cyclically() {
        assert_eq!(
            select_frame_indices(5, &mut ChaCha8Rng::seed_from_u64(0)),
            vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0]
        );
    }

    #[test]
    fn short_video_is_seed_independent() {
        let frames = tagged_frames(7);
        let a = preprocess_video(&frames, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = preprocess_video(&frames, &mut ChaCha8Rng::seed_from_u64(999)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn long_video_is_seed_deterministic() {
        let frames = tagged_frames(33);
        let a = preprocess_video(&frames, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = preprocess_video(&frames, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn zero_frames_rejected() {
        let frames: Vec<Array3<f64>> = vec![];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            preprocess_video(&frames, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hu_clipping_endpoints() {
        let mut vol = Array3::from_elem((4, 4, 2), 0.0);
        vol[(0, 0, 0)] = 1500.0;
        vol[(1, 0, 0)] = -1000.0;
        vol[(2, 0, 0)] = 0.0;
        let s = preprocess_ct(&vol).unwrap();
        // 4x4 content upscales to 256x256; probe the corners of the
        // content region via exact pixel centers. Easier: a uniform
        // volume per value.
        let probe = |hu: f64| {
            let v = Array3::from_elem((4, 4, 2), hu);
            let s = preprocess_ct(&v).unwrap();
            s.data[(0, 128, 128, 0)]
        };
        assert_eq!(probe(1500.0), 1.0);
        assert_eq!(probe(-1000.0), 0.0);
        assert_eq!(probe(0.0), 0.5);
        s.validate().unwrap();
    }

    #[test]
    fn slice_halving_takes_every_second() {
        // Slice k holds the constant value k; nearest-neighbor halving
        // under the center convention keeps odd source slices.
        let vol = Array3::from_shape_fn((2, 2, 128), |(_, _, k)| k as f64 / 1000.0);
        let s = preprocess_ct(&vol).unwrap();
        for j in 0..64 {
            let expect = (2 * j + 1) as f64 / 1000.0;
            let got = s.data[(0, 128, 128, j)];
            let normalized_expect = (expect.clamp(-1000.0, 1000.0) + 1000.0) / 2000.0;
            assert!((got - normalized_expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_volume_rejected() {
        let vol = Array3::<f64>::zeros((0, 4, 4));
        assert!(matches!(preprocess_ct(&vol), Err(Error::InvalidInput(_))));
    }
}
