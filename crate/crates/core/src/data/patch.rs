//! Unified 4D patchification: partitions a (C, H, W, S) sample into
//! non-overlapping spatiotemporal blocks flattened into token rows.
//!
//! Token order is row-major over the (n_h, n_w, n_s) patch grid. Within a
//! patch, elements are flattened channel-major, then (h, w, s). Both
//! orders are fixed so `unpatchify(patchify(x))` reproduces `x` bit for
//! bit.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch geometry plus the projection width used by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// Channel extent of a patch; always 3 (the channel axis is never split).
    pub c_p: usize,
    pub h_p: usize,
    pub w_p: usize,
    pub s_p: usize,
    /// Embedding dimension D of the projected tokens.
    pub embed_dim: usize,
}

impl PatchConfig {
    pub fn new(h_p: usize, w_p: usize, s_p: usize, embed_dim: usize) -> Result<Self> {
        if h_p == 0 || w_p == 0 || s_p == 0 || embed_dim == 0 {
            return Err(Error::config("patch dimensions must be positive".to_string()));
        }
        Ok(PatchConfig {
            c_p: 3,
            h_p,
            w_p,
            s_p,
            embed_dim,
        })
    }

    /// Raw token width before projection: c_p * h_p * w_p * s_p.
    pub fn raw_dim(&self) -> usize {
        self.c_p * self.h_p * self.w_p * self.s_p
    }

    /// Patch-grid shape for a (C, H, W, S) sample.
    pub fn grid_for(&self, shape: (usize, usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w, s) = shape;
        if c != self.c_p {
            return Err(Error::shape(format!(
                "expected {} channels, got {c}",
                self.c_p
            )));
        }
        if h % self.h_p != 0 || w % self.w_p != 0 || s % self.s_p != 0 {
            return Err(Error::shape(format!(
                "patch ({}, {}, {}) does not divide sample ({h}, {w}, {s})",
                self.h_p, self.w_p, self.s_p
            )));
        }
        Ok((h / self.h_p, w / self.w_p, s / self.s_p))
    }

    /// Token count for a (C, H, W, S) sample.
    pub fn token_count(&self, shape: (usize, usize, usize, usize)) -> Result<usize> {
        let (nh, nw, ns) = self.grid_for(shape)?;
        Ok(nh * nw * ns)
    }
}

/// The N x D_raw result of patchification, with enough geometry to invert.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub grid: (usize, usize, usize),
    pub source_shape: (usize, usize, usize, usize),
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

pub fn patchify(data: &Array4<f64>, cfg: &PatchConfig) -> Result<TokenSequence> {
    let dim = data.dim();
    let (c, h, w, s) = dim;
    let (n_h, n_w, n_s) = cfg.grid_for(dim)?;
    let n = n_h * n_w * n_s;
    let d_raw = cfg.raw_dim();
    let src = data
        .as_slice()
        .ok_or_else(|| Error::shape("sample array is not contiguous".to_string()))?;
    let mut tokens = Array2::zeros((n, d_raw));
    {
        let out = tokens.as_slice_mut().expect("freshly allocated");
        for gh in 0..n_h {
            for gw in 0..n_w {
                for gs in 0..n_s {
                    let t = (gh * n_w + gw) * n_s + gs;
                    let base_out = t * d_raw;
                    for cc in 0..c {
                        for dh in 0..cfg.h_p {
                            let hh = gh * cfg.h_p + dh;
                            for dw in 0..cfg.w_p {
                                let ww = gw * cfg.w_p + dw;
                                let src_base = ((cc * h + hh) * w + ww) * s + gs * cfg.s_p;
                                let out_base = base_out
                                    + ((cc * cfg.h_p + dh) * cfg.w_p + dw) * cfg.s_p;
                                out[out_base..out_base + cfg.s_p]
                                    .copy_from_slice(&src[src_base..src_base + cfg.s_p]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TokenSequence {
        tokens,
        grid: (n_h, n_w, n_s),
        source_shape: dim,
    })
}

pub fn unpatchify(t: &TokenSequence) -> Result<Array4<f64>> {
    let (c, h, w, s) = t.source_shape;
    let (n_h, n_w, n_s) = t.grid;
    if n_h == 0 || n_w == 0 || n_s == 0 || h % n_h != 0 || w % n_w != 0 || s % n_s != 0 {
        return Err(Error::shape(format!(
            "grid ({n_h}, {n_w}, {n_s}) inconsistent with source ({h}, {w}, {s})"
        )));
    }
    let h_p = h / n_h;
    let w_p = w / n_w;
    let s_p = s / n_s;
    let d_raw = c * h_p * w_p * s_p;
    if t.tokens.nrows() != n_h * n_w * n_s || t.tokens.ncols() != d_raw {
        return Err(Error::shape(format!(
            "token matrix {}x{} inconsistent with grid/patch geometry",
            t.tokens.nrows(),
            t.tokens.ncols()
        )));
    }
    let src = t
        .tokens
        .as_slice()
        .ok_or_else(|| Error::shape("token matrix is not contiguous".to_string()))?;
    let mut data = Array4::zeros((c, h, w, s));
    {
        let out = data.as_slice_mut().expect("freshly allocated");
        for gh in 0..n_h {
            for gw in 0..n_w {
                for gs in 0..n_s {
                    let t_idx = (gh * n_w + gw) * n_s + gs;
                    let base_in = t_idx * d_raw;
                    for cc in 0..c {
                        for dh in 0..h_p {
                            let hh = gh * h_p + dh;
                            for dw in 0..w_p {
                                let ww = gw * w_p + dw;
                                let out_base = ((cc * h + hh) * w + ww) * s + gs * s_p;
                                let in_base = base_in + ((cc * h_p + dh) * w_p + dw) * s_p;
                                out[out_base..out_base + s_p]
                                    .copy_from_slice(&src[in_base..in_base + s_p]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(data)
}
