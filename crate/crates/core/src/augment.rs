//! Multi-view augmentation for self-distillation: two global views plus a
//! modality-dependent number of local views per sample.
//!
//! Global view 1 runs crop -> resize -> flip -> intensity shift ->
//! Gaussian blur -> clamp; global view 2 swaps the blur for a contrast
//! (gamma) adjustment; local views run crop -> resize -> clamp. Video
//! crops act on the spatial axes only with one window shared across
//! frames; volumetric crops scale all three spatial axes. Single-channel
//! inputs are expanded to three channels after the pipeline.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::VIDEO_FRAMES;
use crate::error::{Error, Result};
use crate::resample::{gaussian_blur_2d, resize_bilinear_2d, resize_trilinear};

/// Crop scale sampled uniformly from [lo, hi]; a degenerate range pins it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScaleRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        ScaleRange { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        ScaleRange { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub s_g: ScaleRange,
    pub s_l: ScaleRange,
    pub n_local: usize,
    /// Output (H, W, S) of global views.
    pub global_out: (usize, usize, usize),
    /// Output (H, W, S) of local views.
    pub local_out: (usize, usize, usize),
    pub flip_prob: f64,
    pub intensity_prob: f64,
    pub intensity_range: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub contrast_prob: f64,
    pub contrast_gamma: (f64, f64),
    pub seed: u64,
}

impl AugmentConfig {
    fn base() -> Self {
        AugmentConfig {
            s_g: ScaleRange::new(0.4, 1.0),
            s_l: ScaleRange::new(0.05, 0.4),
            n_local: 10,
            global_out: (256, 256, 4),
            local_out: (96, 96, 4),
            flip_prob: 0.5,
            intensity_prob: 0.5,
            intensity_range: (-0.1, 0.1),
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            contrast_prob: 0.5,
            contrast_gamma: (0.7, 1.3),
            seed: 0,
        }
    }

    /// 2D grayscale defaults: 10 local views, outputs replicated to four slices.
    pub fn default_2d() -> Self {
        Self::base()
    }

    /// Video defaults: 4 local views, temporal axis preserved.
    pub fn default_video() -> Self {
        AugmentConfig {
            n_local: 4,
            global_out: (256, 256, 16),
            local_out: (96, 96, 16),
            ..Self::base()
        }
    }

    /// Volumetric defaults: 4 local views, crops scale all three axes.
    pub fn default_3d() -> Self {
        AugmentConfig {
            n_local: 4,
            global_out: (256, 256, 64),
            local_out: (96, 96, 32),
            ..Self::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_l.lo > 0.0 && self.s_l.lo <= self.s_l.hi) {
            return Err(Error::config("invalid local scale range".to_string()));
        }
        if !(self.s_g.lo > 0.0 && self.s_g.lo <= self.s_g.hi && self.s_g.hi <= 1.0) {
            return Err(Error::config("invalid global scale range".to_string()));
        }
        if self.s_l.hi > self.s_g.lo {
            return Err(Error::config(
                "local crop scale must stay below the global scale".to_string(),
            ));
        }
        Ok(())
    }
}

/// Exactly two global views plus the configured local views, every view
/// channel-expanded to C = 3.
#[derive(Debug, Clone)]
pub struct AugmentedViews {
    pub globals: [Array4<f64>; 2],
    pub locals: Vec<Array4<f64>>,
}

impl AugmentedViews {
    pub fn total(&self) -> usize {
        2 + self.locals.len()
    }

    /// Views in fixed order: (view, is_global, index within its group).
    pub fn iter(&self) -> impl Iterator<Item = (&Array4<f64>, bool, usize)> {
        self.globals
            .iter()
            .enumerate()
            .map(|(i, v)| (v, true, i))
            .chain(self.locals.iter().enumerate().map(|(i, v)| (v, false, i)))
    }
}

/// Crop extent for a volumetric input: every axis scaled.
pub fn crop_size_3d(scale: f64, shape: (usize, usize, usize)) -> (usize, usize, usize) {
    (
        ((shape.0 as f64 * scale).round() as usize).clamp(1, shape.0),
        ((shape.1 as f64 * scale).round() as usize).clamp(1, shape.1),
        ((shape.2 as f64 * scale).round() as usize).clamp(1, shape.2),
    )
}

/// Spatial crop extent for 2D and video inputs.
pub fn crop_size_2d(scale: f64, shape: (usize, usize)) -> (usize, usize) {
    (
        ((shape.0 as f64 * scale).round() as usize).clamp(1, shape.0),
        ((shape.1 as f64 * scale).round() as usize).clamp(1, shape.1),
    )
}

#[derive(Clone, Copy)]
enum ViewKind {
    Global1,
    Global2,
    Local,
}

/// One view pipeline over a (C, H, W, S) stack. Fixed draw order: crop
/// scale, offsets, flip coin, intensity coin (+offset), blur-or-contrast
/// coin (+magnitude).
fn run_pipeline(
    data: &Array4<f64>,
    kind: ViewKind,
    volumetric: bool,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<f64>> {
    let (c, h, w, s) = data.dim();
    let range = match kind {
        ViewKind::Local => cfg.s_l,
        _ => cfg.s_g,
    };
    let scale = range.sample(rng);
    if scale > 1.0 {
        return Err(Error::shape(format!("crop scale {scale} exceeds the input")));
    }
    let (ch, cw, cs) = if volumetric {
        crop_size_3d(scale, (h, w, s))
    } else {
        let (a, b) = crop_size_2d(scale, (h, w));
        (a, b, s)
    };
    let off_h = if h > ch { rng.random_range(0..=h - ch) } else { 0 };
    let off_w = if w > cw { rng.random_range(0..=w - cw) } else { 0 };
    let off_s = if volumetric && s > cs {
        rng.random_range(0..=s - cs)
    } else {
        0
    };

    let (out_h, out_w, out_s_cfg) = match kind {
        ViewKind::Local => cfg.local_out,
        _ => cfg.global_out,
    };
    // The slice axis is only resampled for volumetric crops; video and 2D
    // stacks keep their temporal extent.
    let out_s = if volumetric { out_s_cfg } else { s };

    let mut view = Array4::zeros((c, out_h, out_w, out_s));
    for cc in 0..c {
        let cropped = Array3::from_shape_fn((ch, cw, cs), |(i, j, k)| {
            data[(cc, off_h + i, off_w + j, off_s + k)]
        });
        let resized = if volumetric {
            resize_trilinear(&cropped, out_h, out_w, out_s)
        } else {
            let mut r = Array3::zeros((out_h, out_w, cs));
            for k in 0..cs {
                let plane = Array2::from_shape_fn((ch, cw), |(i, j)| cropped[(i, j, k)]);
                let rp = resize_bilinear_2d(&plane, out_h, out_w);
                for i in 0..out_h {
                    for j in 0..out_w {
                        r[(i, j, k)] = rp[(i, j)];
                    }
                }
            }
            r
        };
        for i in 0..out_h {
            for j in 0..out_w {
                for k in 0..out_s {
                    view[(cc, i, j, k)] = resized[(i, j, k)];
                }
            }
        }
    }

    if matches!(kind, ViewKind::Global1 | ViewKind::Global2) {
        if cfg.flip_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.flip_prob {
            for cc in 0..c {
                for i in 0..out_h {
                    for k in 0..out_s {
                        for j in 0..out_w / 2 {
                            let a = view[(cc, i, j, k)];
                            view[(cc, i, j, k)] = view[(cc, i, out_w - 1 - j, k)];
                            view[(cc, i, out_w - 1 - j, k)] = a;
                        }
                    }
                }
            }
        }
        if cfg.intensity_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.intensity_prob {
            let delta = rng.random_range(cfg.intensity_range.0..=cfg.intensity_range.1);
            view.mapv_inplace(|v| v + delta);
        }
        match kind {
            ViewKind::Global1 => {
                if cfg.blur_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.blur_prob {
                    let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
                    for cc in 0..c {
                        for k in 0..out_s {
                            let plane =
                                Array2::from_shape_fn((out_h, out_w), |(i, j)| view[(cc, i, j, k)]);
                            let blurred = gaussian_blur_2d(&plane, sigma);
                            for i in 0..out_h {
                                for j in 0..out_w {
                                    view[(cc, i, j, k)] = blurred[(i, j)];
                                }
                            }
                        }
                    }
                }
            }
            ViewKind::Global2 => {
                if cfg.contrast_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.contrast_prob {
                    let gamma = rng.random_range(cfg.contrast_gamma.0..=cfg.contrast_gamma.1);
                    view.mapv_inplace(|v| v.clamp(0.0, 1.0).powf(gamma));
                }
            }
            ViewKind::Local => {}
        }
    }
    // Final clamp restores the [0,1] range invariant.
    view.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(view)
}

/// Replicate a single-channel stack to C = 3 and the slice axis to `target_s`.
fn expand_channels(view: Array4<f64>, target_s: usize) -> Array4<f64> {
    let (c, h, w, s) = view.dim();
    debug_assert_eq!(c, 1);
    Array4::from_shape_fn((3, h, w, target_s), |(_, i, j, k)| view[(0, i, j, k % s)])
}

fn run_views(
    data: &Array4<f64>,
    volumetric: bool,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Array4<f64>, Array4<f64>, Vec<Array4<f64>>)> {
    let g1 = run_pipeline(data, ViewKind::Global1, volumetric, cfg, rng)?;
    let g2 = run_pipeline(data, ViewKind::Global2, volumetric, cfg, rng)?;
    let locals = (0..cfg.n_local)
        .map(|_| run_pipeline(data, ViewKind::Local, volumetric, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((g1, g2, locals))
}

/// Augment a 2D grayscale image. Views come out as (3, H', W', S) stacks
/// with the slice extent taken from the output shape configuration.
pub fn augment_2d(
    image: &Array2<f64>,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedViews> {
    cfg.validate()?;
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image".to_string()));
    }
    let stack = Array4::from_shape_fn((1, h, w, 1), |(_, i, j, _)| image[(i, j)]);
    let (g1, g2, locals) = run_views(&stack, false, cfg, rng)?;
    Ok(AugmentedViews {
        globals: [
            expand_channels(g1, cfg.global_out.2),
            expand_channels(g2, cfg.global_out.2),
        ],
        locals: locals
            .into_iter()
            .map(|l| expand_channels(l, cfg.local_out.2))
            .collect(),
    })
}

/// Augment an RGB frame stack (3, H, W, S). Longer clips first subsample
/// 16 frames (order preserving); crops share one spatial window across
/// frames and the temporal axis is never cropped.
pub fn augment_video(
    video: &Array4<f64>,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedViews> {
    cfg.validate()?;
    let (c, h, w, s) = video.dim();
    if c != 3 {
        return Err(Error::shape(format!("video must have 3 channels, got {c}")));
    }
    if h == 0 || w == 0 || s == 0 {
        return Err(Error::invalid("empty video".to_string()));
    }
    let data = if s > VIDEO_FRAMES {
        let mut idx = rand::seq::index::sample(rng, s, VIDEO_FRAMES).into_vec();
        idx.sort_unstable();
        Array4::from_shape_fn((c, h, w, VIDEO_FRAMES), |(cc, i, j, k)| {
            video[(cc, i, j, idx[k])]
        })
    } else {
        video.clone()
    };
    let (g1, g2, locals) = run_views(&data, false, cfg, rng)?;
    Ok(AugmentedViews {
        globals: [g1, g2],
        locals,
    })
}

/// Augment a single-channel volume (1, H, W, S); crops scale all three
/// spatial axes and the channel is expanded to 3 afterwards.
pub fn augment_3d(
    volume: &Array4<f64>,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedViews> {
    cfg.validate()?;
    let (c, h, w, s) = volume.dim();
    if c != 1 {
        return Err(Error::shape(format!(
            "volumetric augmentation expects a single channel, got {c}"
        )));
    }
    if h == 0 || w == 0 || s == 0 {
        return Err(Error::invalid("empty volume".to_string()));
    }
    let (g1, g2, locals) = run_views(volume, true, cfg, rng)?;
    let gs = cfg.global_out.2;
    let ls = cfg.local_out.2;
    Ok(AugmentedViews {
        globals: [expand_channels(g1, gs), expand_channels(g2, gs)],
        locals: locals.into_iter().map(|l| expand_channels(l, ls)).collect(),
    })
}
