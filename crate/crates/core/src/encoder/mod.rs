//! Vision transformer over token sequences. One model type serves as the
//! SimDINO student, the EMA teacher and the masked-autoencoder encoder;
//! it differs only in configuration (the MAE variant carries no class
//! token). Positional embeddings are a single learned table indexed by
//! the token's original grid position, so heterogeneous modalities share
//! one encoder without modality-specific branches.

pub mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::block::{block_backward, block_forward, Block, BlockCache};
use crate::nn::ops::{layernorm_backward, layernorm_forward, trunc_normal, LayerNorm, LnCache};
use crate::nn::{Parameterized, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Raw token width before projection (c_p * h_p * w_p * s_p).
    pub input_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_cls_token: bool,
    pub max_tokens: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.heads == 0 || self.max_tokens == 0 {
            return Err(Error::config("encoder dimensions must be positive".to_string()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::config("mlp_ratio must be positive".to_string()));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    fn pos_rows(&self) -> usize {
        self.max_tokens + usize::from(self.use_cls_token)
    }
}

/// Retrieval pooling strategy over encoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolStrategy {
    /// Mean over patch rows, class token excluded.
    Avg,
    /// The class-token row alone.
    Cls,
    /// Class token concatenated with the patch average; dimension 2D.
    Mix,
}

impl std::str::FromStr for PoolStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(PoolStrategy::Avg),
            "cls" => Ok(PoolStrategy::Cls),
            "mix" => Ok(PoolStrategy::Mix),
            other => Err(Error::config(format!("unknown pool strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for PoolStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolStrategy::Avg => "avg",
            PoolStrategy::Cls => "cls",
            PoolStrategy::Mix => "mix",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub pos_table: Array2<f64>,
    pub cls: Option<Array1<f64>>,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

/// Per-token representation rows; row 0 is the class token when present.
#[derive(Debug, Clone)]
pub struct Representation {
    pub rows: Array2<f64>,
    pub has_cls: bool,
}

impl Representation {
    pub fn patch_rows(&self) -> ArrayView2<'_, f64> {
        let skip = usize::from(self.has_cls);
        self.rows.slice(ndarray::s![skip.., ..])
    }
}

#[derive(Debug)]
pub struct EncoderCache {
    pub positions: Vec<usize>,
    pub tokens_shape: (usize, usize),
    pub projected_input: Array2<f64>,
    pub block_caches: Vec<BlockCache>,
    pub pre_norm: Array2<f64>,
    pub final_ln: LnCache,
}

/// Deterministic initialization: truncated normal weights, zero biases,
/// identity layer norms.
pub fn init_model(cfg: &EncoderConfig, seed: u64) -> Result<EncoderModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.embed_dim;
    let proj_w = Array2::from_shape_vec(
        (cfg.input_dim, d),
        trunc_normal(&mut rng, INIT_STD, cfg.input_dim * d),
    )
    .expect("shape matches");
    let pos_table = Array2::from_shape_vec(
        (cfg.pos_rows(), d),
        trunc_normal(&mut rng, INIT_STD, cfg.pos_rows() * d),
    )
    .expect("shape matches");
    let cls = if cfg.use_cls_token {
        Some(Array1::from_vec(trunc_normal(&mut rng, INIT_STD, d)))
    } else {
        None
    };
    let blocks = (0..cfg.depth)
        .map(|_| Block::init(&mut rng, d, cfg.heads, cfg.mlp_hidden()))
        .collect();
    Ok(EncoderModel {
        cfg: *cfg,
        proj_w,
        proj_b: Array1::zeros(d),
        pos_table,
        cls,
        blocks,
        final_norm: LayerNorm::identity(d),
    })
}

impl EncoderModel {
    /// Zero-valued model of identical shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> EncoderModel {
        let cfg = self.cfg;
        EncoderModel {
            cfg,
            proj_w: Array2::zeros((cfg.input_dim, cfg.embed_dim)),
            proj_b: Array1::zeros(cfg.embed_dim),
            pos_table: Array2::zeros((cfg.pos_rows(), cfg.embed_dim)),
            cls: self.cls.as_ref().map(|_| Array1::zeros(cfg.embed_dim)),
            blocks: (0..cfg.depth)
                .map(|_| Block::zeros(cfg.embed_dim, cfg.heads, cfg.mlp_hidden()))
                .collect(),
            final_norm: LayerNorm::zeros(cfg.embed_dim),
        }
    }

    fn check_input(&self, tokens: ArrayView2<'_, f64>, positions: &[usize]) -> Result<()> {
        if tokens.ncols() != self.cfg.input_dim {
            return Err(Error::shape(format!(
                "token width {} does not match encoder input_dim {}",
                tokens.ncols(),
                self.cfg.input_dim
            )));
        }
        if tokens.nrows() != positions.len() {
            return Err(Error::shape(
                "token count does not match position count".to_string(),
            ));
        }
        if tokens.nrows() > self.cfg.max_tokens {
            return Err(Error::shape(format!(
                "token count {} exceeds max_tokens {}",
                tokens.nrows(),
                self.cfg.max_tokens
            )));
        }
        if let Some(&p) = positions.iter().max() {
            if p >= self.cfg.max_tokens {
                return Err(Error::shape(format!(
                    "position {p} exceeds max_tokens {}",
                    self.cfg.max_tokens
                )));
            }
        }
        Ok(())
    }

    /// Project tokens, add positional rows selected by original grid
    /// index, prepend the optional class token, then run the blocks and
    /// the final normalization.
    pub fn forward_cached(
        &self,
        tokens: ArrayView2<'_, f64>,
        positions: &[usize],
    ) -> Result<(Representation, EncoderCache)> {
        self.check_input(tokens, positions)?;
        let n = tokens.nrows();
        let d = self.cfg.embed_dim;
        let cls_offset = usize::from(self.cfg.use_cls_token);
        let rows = n + cls_offset;

        let mut x = Array2::zeros((rows, d));
        {
            let projected = tokens.dot(&self.proj_w);
            for i in 0..n {
                let pos_row = self.pos_table.row(positions[i] + cls_offset);
                for j in 0..d {
                    x[(i + cls_offset, j)] = projected[(i, j)] + self.proj_b[j] + pos_row[j];
                }
            }
        }
        if let Some(cls) = &self.cls {
            let pos_row = self.pos_table.row(0);
            for j in 0..d {
                x[(0, j)] = cls[j] + pos_row[j];
            }
        }
        let projected_input = x.clone();

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block_forward(block, x);
            block_caches.push(cache);
            x = next;
        }
        let pre_norm = x;
        let (out, final_ln) = layernorm_forward(pre_norm.view(), &self.final_norm);
        Ok((
            Representation {
                rows: out,
                has_cls: self.cfg.use_cls_token,
            },
            EncoderCache {
                positions: positions.to_vec(),
                tokens_shape: (n, self.cfg.input_dim),
                projected_input,
                block_caches,
                pre_norm,
                final_ln,
            },
        ))
    }

    pub fn forward(
        &self,
        tokens: ArrayView2<'_, f64>,
        positions: &[usize],
    ) -> Result<Representation> {
        Ok(self.forward_cached(tokens, positions)?.0)
    }

    /// Backward pass: accumulates parameter gradients into `grads` given
    /// the gradient of a scalar loss with respect to the output rows.
    /// `tokens` must be the forward input (needed for the projection
    /// weight gradient).
    pub fn backward(
        &self,
        tokens: ArrayView2<'_, f64>,
        cache: &EncoderCache,
        d_rows: &Array2<f64>,
        grads: &mut EncoderModel,
    ) {
        let cls_offset = usize::from(self.cfg.use_cls_token);
        let n = cache.tokens_shape.0;
        let mut dx = layernorm_backward(
            d_rows.view(),
            &self.final_norm,
            &cache.final_ln,
            &mut grads.final_norm.gamma,
            &mut grads.final_norm.beta,
        );
        for idx in (0..self.blocks.len()).rev() {
            dx = block_backward(
                &self.blocks[idx],
                &cache.block_caches[idx],
                &dx,
                &mut grads.blocks[idx],
            );
        }
        // Projection, positional rows and class token.
        if let Some(_cls) = &self.cls {
            let gcls = grads.cls.as_mut().expect("grads built from same config");
            for j in 0..self.cfg.embed_dim {
                gcls[j] += dx[(0, j)];
                grads.pos_table[(0, j)] += dx[(0, j)];
            }
        }
        let d_patch = dx.slice(ndarray::s![cls_offset.., ..]);
        for i in 0..n {
            let pos = cache.positions[i] + cls_offset;
            for j in 0..self.cfg.embed_dim {
                grads.pos_table[(pos, j)] += d_patch[(i, j)];
                grads.proj_b[j] += d_patch[(i, j)];
            }
        }
        grads.proj_w += &tokens.t().dot(&d_patch);
    }
}

/// Pool encoder outputs into a single retrieval embedding.
pub fn pool(reps: &Representation, strategy: PoolStrategy) -> Result<Array1<f64>> {
    if reps.rows.nrows() == 0 {
        return Err(Error::invalid("empty representation".to_string()));
    }
    let needs_cls = matches!(strategy, PoolStrategy::Cls | PoolStrategy::Mix);
    if needs_cls && !reps.has_cls {
        return Err(Error::config(format!(
            "pool strategy {strategy} requires a class token"
        )));
    }
    let patch = reps.patch_rows();
    match strategy {
        PoolStrategy::Avg => {
            if patch.nrows() == 0 {
                return Err(Error::invalid("no patch rows to average".to_string()));
            }
            Ok(patch.mean_axis(Axis(0)).expect("nonempty"))
        }
        PoolStrategy::Cls => Ok(reps.rows.row(0).to_owned()),
        PoolStrategy::Mix => {
            if patch.nrows() == 0 {
                return Err(Error::invalid("no patch rows to average".to_string()));
            }
            let avg = patch.mean_axis(Axis(0)).expect("nonempty");
            let cls = reps.rows.row(0);
            let mut out = Array1::zeros(cls.len() + avg.len());
            for (j, &v) in cls.iter().enumerate() {
                out[j] = v;
            }
            for (j, &v) in avg.iter().enumerate() {
                out[cls.len() + j] = v;
            }
            Ok(out)
        }
    }
}

/// Gradient of `pool` with respect to the representation rows.
pub fn pool_backward(
    reps: &Representation,
    strategy: PoolStrategy,
    d_embedding: &Array1<f64>,
) -> Result<Array2<f64>> {
    let rows = reps.rows.nrows();
    let d = reps.rows.ncols();
    let cls_offset = usize::from(reps.has_cls);
    let n_patch = rows - cls_offset;
    let mut out = Array2::zeros((rows, d));
    match strategy {
        PoolStrategy::Avg => {
            for i in 0..n_patch {
                for j in 0..d {
                    out[(cls_offset + i, j)] = d_embedding[j] / n_patch as f64;
                }
            }
        }
        PoolStrategy::Cls => {
            for j in 0..d {
                out[(0, j)] = d_embedding[j];
            }
        }
        PoolStrategy::Mix => {
            if d_embedding.len() != 2 * d {
                return Err(Error::shape(
                    "mix pooling gradient must have dimension 2D".to_string(),
                ));
            }
            for j in 0..d {
                out[(0, j)] = d_embedding[j];
            }
            for i in 0..n_patch {
                for j in 0..d {
                    out[(cls_offset + i, j)] = d_embedding[d + j] / n_patch as f64;
                }
            }
        }
    }
    Ok(out)
}

impl Parameterized for EncoderModel {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            "proj.w",
            &[self.proj_w.nrows(), self.proj_w.ncols()],
            self.proj_w.as_slice().unwrap(),
        );
        f("proj.b", &[self.proj_b.len()], self.proj_b.as_slice().unwrap());
        f(
            "pos",
            &[self.pos_table.nrows(), self.pos_table.ncols()],
            self.pos_table.as_slice().unwrap(),
        );
        if let Some(cls) = &self.cls {
            f("cls", &[cls.len()], cls.as_slice().unwrap());
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.for_each_param_prefixed(&format!("block{i}"), f);
        }
        f(
            "norm.g",
            &[self.final_norm.gamma.len()],
            self.final_norm.gamma.as_slice().unwrap(),
        );
        f(
            "norm.b",
            &[self.final_norm.beta.len()],
            self.final_norm.beta.as_slice().unwrap(),
        );
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let proj_w_shape = [self.proj_w.nrows(), self.proj_w.ncols()];
        f("proj.w", &proj_w_shape, self.proj_w.as_slice_mut().unwrap());
        f(
            "proj.b",
            &[self.proj_b.len()],
            self.proj_b.as_slice_mut().unwrap(),
        );
        let pos_shape = [self.pos_table.nrows(), self.pos_table.ncols()];
        f("pos", &pos_shape, self.pos_table.as_slice_mut().unwrap());
        if let Some(cls) = &mut self.cls {
            f("cls", &[cls.len()], cls.as_slice_mut().unwrap());
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.for_each_param_prefixed_mut(&format!("block{i}"), f);
        }
        f(
            "norm.g",
            &[self.final_norm.gamma.len()],
            self.final_norm.gamma.as_slice_mut().unwrap(),
        );
        f(
            "norm.b",
            &[self.final_norm.beta.len()],
            self.final_norm.beta.as_slice_mut().unwrap(),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::layernorm_forward;
    use crate::nn::param_vec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            input_dim: 10,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2.0,
            use_cls_token: true,
            max_tokens: 16,
        }
    }

    fn random_tokens(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_model(&tiny_cfg(), 5).unwrap();
        let b = init_model(&tiny_cfg(), 5).unwrap();
        assert_eq!(param_vec(&a), param_vec(&b));
        let c = init_model(&tiny_cfg(), 6).unwrap();
        assert_ne!(param_vec(&a), param_vec(&c));
    }

    #[test]
    fn heads_must_divide_embed_dim() {
        let cfg = EncoderConfig {
            embed_dim: 16,
            heads: 3,
            ..tiny_cfg()
        };
        assert!(matches!(
            init_model(&cfg, 0),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn vit_tiny_dimensions_accepted() {
        let cfg = EncoderConfig {
            input_dim: 3072,
            embed_dim: 192,
            depth: 12,
            heads: 3,
            mlp_ratio: 4.0,
            use_cls_token: true,
            max_tokens: 512,
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.mlp_hidden(), 768);
    }

    #[test]
    fn zero_depth_reduces_to_normalized_projection() {
        let cfg = EncoderConfig {
            depth: 0,
            use_cls_token: false,
            ..tiny_cfg()
        };
        let model = init_model(&cfg, 9).unwrap();
        let tokens = random_tokens(4, cfg.input_dim, 1);
        let positions: Vec<usize> = (0..4).collect();
        let reps = model.forward(tokens.view(), &positions).unwrap();

        let mut expected = tokens.dot(&model.proj_w);
        for i in 0..4 {
            for j in 0..cfg.embed_dim {
                expected[(i, j)] += model.proj_b[j] + model.pos_table[(i, j)];
            }
        }
        let (expected, _) = layernorm_forward(expected.view(), &model.final_norm);
        for (a, b) in reps.rows.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn permutation_equivariant_with_positions_zeroed() {
        let cfg = EncoderConfig {
            use_cls_token: false,
            ..tiny_cfg()
        };
        let mut model = init_model(&cfg, 3).unwrap();
        model.pos_table.fill(0.0);
        let tokens = random_tokens(5, cfg.input_dim, 2);
        let positions: Vec<usize> = (0..5).collect();
        let base = model.forward(tokens.view(), &positions).unwrap();

        let perm = [3usize, 0, 4, 2, 1];
        let mut permuted = Array2::zeros((5, cfg.input_dim));
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).assign(&tokens.row(src));
        }
        let out = model.forward(permuted.view(), &positions).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..cfg.embed_dim {
                assert_abs_diff_eq!(
                    out.rows[(dst, j)],
                    base.rows[(src, j)],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn cls_token_adds_one_output_row() {
        let cfg = EncoderConfig {
            max_tokens: 256,
            ..tiny_cfg()
        };
        let model = init_model(&cfg, 0).unwrap();
        let tokens = random_tokens(256, cfg.input_dim, 3);
        let positions: Vec<usize> = (0..256).collect();
        let reps = model.forward(tokens.view(), &positions).unwrap();
        assert_eq!(reps.rows.dim(), (257, cfg.embed_dim));
        assert!(reps.has_cls);
    }

    #[test]
    fn token_overflow_is_shape_error() {
        let model = init_model(&tiny_cfg(), 0).unwrap();
        let tokens = random_tokens(17, 10, 4);
        let positions: Vec<usize> = (0..17).collect();
        assert!(matches!(
            model.forward(tokens.view(), &positions),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn pool_examples() {
        let reps = Representation {
            rows: array![[1.0, 3.0], [3.0, 5.0]],
            has_cls: false,
        };
        assert_eq!(pool(&reps, PoolStrategy::Avg).unwrap(), array![2.0, 4.0]);
        assert!(pool(&reps, PoolStrategy::Cls).is_err());
        assert!(pool(&reps, PoolStrategy::Mix).is_err());

        let single = Representation {
            rows: array![[0.5, -1.5]],
            has_cls: false,
        };
        assert_eq!(pool(&single, PoolStrategy::Avg).unwrap(), array![0.5, -1.5]);

        let with_cls = Representation {
            rows: array![[9.0, 8.0], [1.0, 3.0], [3.0, 5.0]],
            has_cls: true,
        };
        assert_eq!(pool(&with_cls, PoolStrategy::Avg).unwrap(), array![2.0, 4.0]);
        assert_eq!(pool(&with_cls, PoolStrategy::Cls).unwrap(), array![9.0, 8.0]);
        assert_eq!(
            pool(&with_cls, PoolStrategy::Mix).unwrap(),
            array![9.0, 8.0, 2.0, 4.0]
        );
    }

    #[test]
    fn mix_dimension_doubles() {
        let cfg = tiny_cfg();
        let model = init_model(&cfg, 2).unwrap();
        let tokens = random_tokens(6, cfg.input_dim, 8);
        let positions: Vec<usize> = (0..6).collect();
        let reps = model.forward(tokens.view(), &positions).unwrap();
        assert_eq!(pool(&reps, PoolStrategy::Mix).unwrap().len(), 16);
    }

    #[test]
    fn avg_pool_is_permutation_invariant_and_cls_reads_row_zero() {
        let rows = random_tokens(5, 4, 11);
        let reps = Representation {
            rows: rows.clone(),
            has_cls: true,
        };
        let avg = pool(&reps, PoolStrategy::Avg).unwrap();
        // Permute patch rows (rows 1..5).
        let perm = [0usize, 4, 2, 3, 1];
        let mut permuted = Array2::zeros((5, 4));
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).assign(&rows.row(src));
        }
        let reps_p = Representation {
            rows: permuted,
            has_cls: true,
        };
        let avg_p = pool(&reps_p, PoolStrategy::Avg).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(avg[j], avg_p[j], epsilon = 1e-12);
        }
        assert_eq!(
            pool(&reps, PoolStrategy::Cls).unwrap(),
            pool(&reps_p, PoolStrategy::Cls).unwrap()
        );
    }

    #[test]
    fn every_parameter_block_receives_gradient() {
        let cfg = tiny_cfg();
        let model = init_model(&cfg, 21).unwrap();
        let tokens = random_tokens(6, cfg.input_dim, 5);
        let positions: Vec<usize> = (0..6).collect();
        let (reps, cache) = model.forward_cached(tokens.view(), &positions).unwrap();
        // Scalar loss: sum of squares of the output rows.
        let d_rows = reps.rows.mapv(|v| 2.0 * v);
        let mut grads = model.zeros_like();
        model.backward(tokens.view(), &cache, &d_rows, &mut grads);
        grads.for_each_param(&mut |name, _, data| {
            assert!(
                data.iter().any(|&g| g != 0.0),
                "parameter block {name} received no gradient"
            );
        });
    }

    #[test]
    fn backward_matches_finite_differences_on_tiny_config() {
        let cfg = EncoderConfig {
            input_dim: 6,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 1.5,
            use_cls_token: true,
            max_tokens: 8,
        };
        let model = init_model(&cfg, 33).unwrap();
        let tokens = random_tokens(4, cfg.input_dim, 7);
        let positions: Vec<usize> = (0..4).collect();
        let (reps, cache) = model.forward_cached(tokens.view(), &positions).unwrap();
        let d_rows = reps.rows.mapv(|v| 2.0 * v);
        let mut grads = model.zeros_like();
        model.backward(tokens.view(), &cache, &d_rows, &mut grads);

        let params = param_vec(&model);
        let analytic = param_vec(&grads);
        let template = model.clone();
        let f = move |w: &[f64]| {
            let mut m = template.clone();
            crate::nn::load_param_vec(&mut m, w)?;
            let reps = m.forward(tokens.view(), &positions)?;
            Ok(reps.rows.iter().map(|v| v * v).sum())
        };
        let err = crate::numerics::grad_check(f, &params, &analytic, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }
}
