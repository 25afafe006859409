//! Pre-norm transformer block: layernorm -> multi-head softmax attention
//! -> residual -> layernorm -> GELU MLP -> residual. Shared by the
//! encoder and the reconstruction decoder.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    gelu_forward, gelu_prime, layernorm_backward, layernorm_forward, linear_backward,
    linear_forward, softmax_backward, softmax_rows, trunc_normal, LayerNorm, LnCache,
};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), trunc_normal(rng, INIT_STD, rows * cols))
        .expect("shape matches")
}

impl Block {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp_hidden: usize) -> Self {
        Block {
            ln1: LayerNorm::identity(dim),
            attn: Attention {
                wq: init_matrix(rng, dim, dim),
                bq: Array1::zeros(dim),
                wk: init_matrix(rng, dim, dim),
                bk: Array1::zeros(dim),
                wv: init_matrix(rng, dim, dim),
                bv: Array1::zeros(dim),
                wo: init_matrix(rng, dim, dim),
                bo: Array1::zeros(dim),
                heads,
            },
            ln2: LayerNorm::identity(dim),
            mlp: Mlp {
                w1: init_matrix(rng, dim, mlp_hidden),
                b1: Array1::zeros(mlp_hidden),
                w2: init_matrix(rng, mlp_hidden, dim),
                b2: Array1::zeros(dim),
            },
        }
    }

    /// Zero-valued block with the same shapes, used as a gradient buffer.
    pub fn zeros(dim: usize, heads: usize, mlp_hidden: usize) -> Self {
        Block {
            ln1: LayerNorm::zeros(dim),
            attn: Attention {
                wq: Array2::zeros((dim, dim)),
                bq: Array1::zeros(dim),
                wk: Array2::zeros((dim, dim)),
                bk: Array1::zeros(dim),
                wv: Array2::zeros((dim, dim)),
                bv: Array1::zeros(dim),
                wo: Array2::zeros((dim, dim)),
                bo: Array1::zeros(dim),
                heads,
            },
            ln2: LayerNorm::zeros(dim),
            mlp: Mlp {
                w1: Array2::zeros((dim, mlp_hidden)),
                b1: Array1::zeros(mlp_hidden),
                w2: Array2::zeros((mlp_hidden, dim)),
                b2: Array1::zeros(dim),
            },
        }
    }

    pub fn for_each_param_prefixed(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &[f64]),
    ) {
        let a = &self.attn;
        let m = &self.mlp;
        let items: [(&str, &[usize], &[f64]); 16] = [
            ("ln1.g", &[self.ln1.gamma.len()], self.ln1.gamma.as_slice().unwrap()),
            ("ln1.b", &[self.ln1.beta.len()], self.ln1.beta.as_slice().unwrap()),
            ("attn.wq", &[a.wq.nrows(), a.wq.ncols()], a.wq.as_slice().unwrap()),
            ("attn.bq", &[a.bq.len()], a.bq.as_slice().unwrap()),
            ("attn.wk", &[a.wk.nrows(), a.wk.ncols()], a.wk.as_slice().unwrap()),
            ("attn.bk", &[a.bk.len()], a.bk.as_slice().unwrap()),
            ("attn.wv", &[a.wv.nrows(), a.wv.ncols()], a.wv.as_slice().unwrap()),
            ("attn.bv", &[a.bv.len()], a.bv.as_slice().unwrap()),
            ("attn.wo", &[a.wo.nrows(), a.wo.ncols()], a.wo.as_slice().unwrap()),
            ("attn.bo", &[a.bo.len()], a.bo.as_slice().unwrap()),
            ("ln2.g", &[self.ln2.gamma.len()], self.ln2.gamma.as_slice().unwrap()),
            ("ln2.b", &[self.ln2.beta.len()], self.ln2.beta.as_slice().unwrap()),
            ("mlp.w1", &[m.w1.nrows(), m.w1.ncols()], m.w1.as_slice().unwrap()),
            ("mlp.b1", &[m.b1.len()], m.b1.as_slice().unwrap()),
            ("mlp.w2", &[m.w2.nrows(), m.w2.ncols()], m.w2.as_slice().unwrap()),
            ("mlp.b2", &[m.b2.len()], m.b2.as_slice().unwrap()),
        ];
        for (name, shape, data) in items {
            f(&format!("{prefix}.{name}"), shape, data);
        }
    }

    pub fn for_each_param_prefixed_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
    ) {
        let wq_shape = [self.attn.wq.nrows(), self.attn.wq.ncols()];
        let wk_shape = [self.attn.wk.nrows(), self.attn.wk.ncols()];
        let wv_shape = [self.attn.wv.nrows(), self.attn.wv.ncols()];
        let wo_shape = [self.attn.wo.nrows(), self.attn.wo.ncols()];
        let w1_shape = [self.mlp.w1.nrows(), self.mlp.w1.ncols()];
        let w2_shape = [self.mlp.w2.nrows(), self.mlp.w2.ncols()];
        let a = &mut self.attn;
        let m = &mut self.mlp;
        let items: [(&str, &[usize], &mut [f64]); 16] = [
            ("ln1.g", &[self.ln1.gamma.len()], self.ln1.gamma.as_slice_mut().unwrap()),
            ("ln1.b", &[self.ln1.beta.len()], self.ln1.beta.as_slice_mut().unwrap()),
            ("attn.wq", &wq_shape, a.wq.as_slice_mut().unwrap()),
            ("attn.bq", &[a.bq.len()], a.bq.as_slice_mut().unwrap()),
            ("attn.wk", &wk_shape, a.wk.as_slice_mut().unwrap()),
            ("attn.bk", &[a.bk.len()], a.bk.as_slice_mut().unwrap()),
            ("attn.wv", &wv_shape, a.wv.as_slice_mut().unwrap()),
            ("attn.bv", &[a.bv.len()], a.bv.as_slice_mut().unwrap()),
            ("attn.wo", &wo_shape, a.wo.as_slice_mut().unwrap()),
            ("attn.bo", &[a.bo.len()], a.bo.as_slice_mut().unwrap()),
            ("ln2.g", &[self.ln2.gamma.len()], self.ln2.gamma.as_slice_mut().unwrap()),
            ("ln2.b", &[self.ln2.beta.len()], self.ln2.beta.as_slice_mut().unwrap()),
            ("mlp.w1", &w1_shape, m.w1.as_slice_mut().unwrap()),
            ("mlp.b1", &[m.b1.len()], m.b1.as_slice_mut().unwrap()),
            ("mlp.w2", &w2_shape, m.w2.as_slice_mut().unwrap()),
            ("mlp.b2", &[m.b2.len()], m.b2.as_slice_mut().unwrap()),
        ];
        for (name, shape, data) in items {
            f(&format!("{prefix}.{name}"), shape, data);
        }
    }
}

#[derive(Debug)]
pub struct BlockCache {
    pub x: Array2<f64>,
    pub ln1: LnCache,
    pub y1: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    pub att: Array2<f64>,
    pub x2: Array2<f64>,
    pub ln2: LnCache,
    pub y2: Array2<f64>,
    pub m1: Array2<f64>,
    pub hact: Array2<f64>,
}

pub fn block_forward(block: &Block, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
    let (n, d) = x.dim();
    let heads = block.attn.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (y1, ln1) = layernorm_forward(x.view(), &block.ln1);
    let q = linear_forward(y1.view(), &block.attn.wq, &block.attn.bq);
    let k = linear_forward(y1.view(), &block.attn.wk, &block.attn.bk);
    let v = linear_forward(y1.view(), &block.attn.wv, &block.attn.bv);

    let mut att = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        softmax_rows(&mut scores);
        let oh = scores.dot(&vh);
        att.slice_mut(cols).assign(&oh);
        probs.push(scores);
    }
    let o = linear_forward(att.view(), &block.attn.wo, &block.attn.bo);
    let x2 = &x + &o;

    let (y2, ln2) = layernorm_forward(x2.view(), &block.ln2);
    let m1 = linear_forward(y2.view(), &block.mlp.w1, &block.mlp.b1);
    let hact = gelu_forward(&m1);
    let m2 = linear_forward(hact.view(), &block.mlp.w2, &block.mlp.b2);
    let out = &x2 + &m2;

    (
        out,
        BlockCache {
            x,
            ln1,
            y1,
            q,
            k,
            v,
            probs,
            att,
            x2,
            ln2,
            y2,
            m1,
            hact,
        },
    )
}

/// Backward through one block. Parameter gradients accumulate into
/// `grads`; the gradient with respect to the block input is returned.
pub fn block_backward(
    block: &Block,
    cache: &BlockCache,
    dout: &Array2<f64>,
    grads: &mut Block,
) -> Array2<f64> {
    let (n, d) = dout.dim();
    let heads = block.attn.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch.
    let dhact = linear_backward(
        cache.hact.view(),
        &block.mlp.w2,
        dout.view(),
        &mut grads.mlp.w2,
        &mut grads.mlp.b2,
        true,
    )
    .expect("dx requested");
    let mut dm1 = dhact;
    dm1.zip_mut_with(&cache.m1, |g, &m| *g *= gelu_prime(m));
    let dy2 = linear_backward(
        cache.y2.view(),
        &block.mlp.w1,
        dm1.view(),
        &mut grads.mlp.w1,
        &mut grads.mlp.b1,
        true,
    )
    .expect("dx requested");
    let dx2_ln = layernorm_backward(
        dy2.view(),
        &block.ln2,
        &cache.ln2,
        &mut grads.ln2.gamma,
        &mut grads.ln2.beta,
    );
    let dx2 = dout + &dx2_ln;

    // Attention branch.
    let datt = linear_backward(
        cache.att.view(),
        &block.attn.wo,
        dx2.view(),
        &mut grads.attn.wo,
        &mut grads.attn.bo,
        true,
    )
    .expect("dx requested");
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &cache.probs[h];
        let datt_h = datt.slice(cols);
        let vh = cache.v.slice(cols);
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let dp = datt_h.dot(&vh.t());
        let dvh = p.t().dot(&datt_h);
        let mut dscores = softmax_backward(p, &dp);
        dscores *= scale;
        let dqh = dscores.dot(&kh);
        let dkh = dscores.t().dot(&qh);
        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }
    let mut dy1 = linear_backward(
        cache.y1.view(),
        &block.attn.wq,
        dq.view(),
        &mut grads.attn.wq,
        &mut grads.attn.bq,
        true,
    )
    .expect("dx requested");
    dy1 += &linear_backward(
        cache.y1.view(),
        &block.attn.wk,
        dk.view(),
        &mut grads.attn.wk,
        &mut grads.attn.bk,
        true,
    )
    .expect("dx requested");
    dy1 += &linear_backward(
        cache.y1.view(),
        &block.attn.wv,
        dv.view(),
        &mut grads.attn.wv,
        &mut grads.attn.bv,
        true,
    )
    .expect("dx requested");
    let dx_ln = layernorm_backward(
        dy1.view(),
        &block.ln1,
        &cache.ln1,
        &mut grads.ln1.gamma,
        &mut grads.ln1.beta,
    );
    dx2 + &dx_ln
}
