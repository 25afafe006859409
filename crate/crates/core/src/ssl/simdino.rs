//! Self-distillation objective: the student encodes every augmented view,
//! the EMA teacher encodes the two global views only, and the loss pairs
//! an alignment term over class-token embeddings with a coding-rate
//! regularizer that rewards diverse batch statistics in place of
//! centering and sharpening machinery.

use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_2d, augment_3d, augment_video, AugmentConfig};
use crate::data::sample::{Modality, Sample4D};
use crate::data::{patchify, PatchConfig, TokenSequence};
use crate::encoder::{pool, pool_backward, EncoderModel, PoolStrategy, Representation};
use crate::error::{Error, Result};
use crate::nn::ops::{gelu, gelu_prime, trunc_normal};
use crate::nn::{ema_blend, load_param_vec, param_vec, Parameterized, INIT_STD};
use crate::numerics::{cholesky_inverse, covariance, shifted_cholesky};
use crate::ssl::optim::AdamW;
use crate::util::mix_seed;

/// Which student embeddings feed the batch covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    GlobalsOnly,
    AllViews,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimdinoConfig {
    pub epsilon: f64,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub projection_head: bool,
    /// L2-normalize embeddings before the loss (off by default; the loss
    /// operates on raw embeddings).
    pub normalize_embeddings: bool,
    pub gamma_source: GammaSource,
}

impl Default for SimdinoConfig {
    fn default() -> Self {
        SimdinoConfig {
            epsilon: 0.5,
            momentum_start: 0.996,
            momentum_end: 1.0,
            projection_head: true,
            normalize_embeddings: false,
            gamma_source: GammaSource::GlobalsOnly,
        }
    }
}

impl SimdinoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive".to_string()));
        }
        if !(0.0 < self.momentum_start
            && self.momentum_start <= self.momentum_end
            && self.momentum_end <= 1.0)
        {
            return Err(Error::config(format!(
                "momentum range [{}, {}] invalid",
                self.momentum_start, self.momentum_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewOrigin {
    Global,
    Local,
}

/// One embedded view with enough identity to pair student and teacher.
#[derive(Debug, Clone)]
pub struct ViewEmbedding {
    pub z: Array1<f64>,
    pub origin: ViewOrigin,
    pub view_index: usize,
    pub sample_index: usize,
}

/// Two-layer GELU projection head with output dimension equal to its input.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct HeadCache {
    input: Array1<f64>,
    m1: Array1<f64>,
    h: Array1<f64>,
}

impl ProjectionHead {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionHead {
            w1: Array2::from_shape_vec((dim, dim), trunc_normal(&mut rng, INIT_STD, dim * dim))
                .expect("shape matches"),
            b1: Array1::zeros(dim),
            w2: Array2::from_shape_vec((dim, dim), trunc_normal(&mut rng, INIT_STD, dim * dim))
                .expect("shape matches"),
            b2: Array1::zeros(dim),
        }
    }

    pub fn zeros_like(&self) -> ProjectionHead {
        let dim = self.b1.len();
        ProjectionHead {
            w1: Array2::zeros((dim, dim)),
            b1: Array1::zeros(dim),
            w2: Array2::zeros((dim, dim)),
            b2: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, z: &Array1<f64>) -> (Array1<f64>, HeadCache) {
        let dim = self.b1.len();
        let mut m1 = Array1::zeros(dim);
        for j in 0..dim {
            let mut acc = self.b1[j];
            for i in 0..z.len() {
                acc += z[i] * self.w1[(i, j)];
            }
            m1[j] = acc;
        }
        let h = m1.mapv(gelu);
        let mut out = Array1::zeros(dim);
        for j in 0..dim {
            let mut acc = self.b2[j];
            for i in 0..dim {
                acc += h[i] * self.w2[(i, j)];
            }
            out[j] = acc;
        }
        (
            out,
            HeadCache {
                input: z.clone(),
                m1,
                h,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &HeadCache,
        dout: &Array1<f64>,
        grads: &mut ProjectionHead,
    ) -> Array1<f64> {
        let dim = self.b1.len();
        let mut dh = Array1::<f64>::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                grads.w2[(i, j)] += cache.h[i] * dout[j];
                dh[i] += self.w2[(i, j)] * dout[j];
            }
        }
        grads.b2 += dout;
        let mut dm1 = Array1::zeros(dim);
        for i in 0..dim {
            dm1[i] = dh[i] * gelu_prime(cache.m1[i]);
        }
        let d_in = cache.input.len();
        let mut dz = Array1::zeros(d_in);
        for i in 0..d_in {
            for j in 0..dim {
                grads.w1[(i, j)] += cache.input[i] * dm1[j];
                dz[i] += self.w1[(i, j)] * dm1[j];
            }
        }
        grads.b1 += &dm1;
        dz
    }
}

impl Parameterized for ProjectionHead {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("w1", &[self.w1.nrows(), self.w1.ncols()], self.w1.as_slice().unwrap());
        f("b1", &[self.b1.len()], self.b1.as_slice().unwrap());
        f("w2", &[self.w2.nrows(), self.w2.ncols()], self.w2.as_slice().unwrap());
        f("b2", &[self.b2.len()], self.b2.as_slice().unwrap());
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let s1 = [self.w1.nrows(), self.w1.ncols()];
        f("w1", &s1, self.w1.as_slice_mut().unwrap());
        f("b1", &[self.b1.len()], self.b1.as_slice_mut().unwrap());
        let s2 = [self.w2.nrows(), self.w2.ncols()];
        f("w2", &s2, self.w2.as_slice_mut().unwrap());
        f("b2", &[self.b2.len()], self.b2.as_slice_mut().unwrap());
    }
}

/// Encoder plus optional projection head; used for both the student and
/// the teacher.
#[derive(Debug, Clone)]
pub struct SimdinoModel {
    pub encoder: EncoderModel,
    pub head: Option<ProjectionHead>,
}

impl SimdinoModel {
    pub fn new(encoder: EncoderModel, with_head: bool, seed: u64) -> Self {
        let dim = encoder.cfg.embed_dim;
        SimdinoModel {
            encoder,
            head: if with_head {
                Some(ProjectionHead::init(dim, seed))
            } else {
                None
            },
        }
    }

    pub fn zeros_like(&self) -> SimdinoModel {
        SimdinoModel {
            encoder: self.encoder.zeros_like(),
            head: self.head.as_ref().map(|h| h.zeros_like()),
        }
    }
}

impl Parameterized for SimdinoModel {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let mut wrap = |name: &str, shape: &[usize], data: &[f64]| {
            f(&format!("enc.{name}"), shape, data)
        };
        self.encoder.for_each_param(&mut wrap);
        if let Some(head) = &self.head {
            let mut wrap = |name: &str, shape: &[usize], data: &[f64]| {
                f(&format!("head.{name}"), shape, data)
            };
            head.for_each_param(&mut wrap);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let mut wrap = |name: &str, shape: &[usize], data: &mut [f64]| {
            f(&format!("enc.{name}"), shape, data)
        };
        self.encoder.for_each_param_mut(&mut wrap);
        if let Some(head) = &mut self.head {
            let mut wrap = |name: &str, shape: &[usize], data: &mut [f64]| {
                f(&format!("head.{name}"), shape, data)
            };
            head.for_each_param_mut(&mut wrap);
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimdinoLoss {
    pub total: f64,
    pub alignment: f64,
    pub coding_rate: f64,
    /// d total / d student_views[i].z, aligned with the input order.
    pub grads: Vec<Array1<f64>>,
}

/// Alignment over (student view, teacher global) pairs of the same
/// sample, excluding identical-crop global pairs, plus the coding-rate
/// term over the batch covariance of student embeddings.
pub fn simdino_loss_with_grads(
    student_views: &[ViewEmbedding],
    teacher_globals: &[ViewEmbedding],
    epsilon: f64,
    gamma_source: GammaSource,
) -> Result<SimdinoLoss> {
    if student_views.is_empty() {
        return Err(Error::invalid("no student views".to_string()));
    }
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be positive".to_string()));
    }
    let d = student_views[0].z.len();
    for v in student_views.iter().chain(teacher_globals) {
        if v.z.len() != d {
            return Err(Error::shape(format!(
                "embedding dimension {} differs from {d}",
                v.z.len()
            )));
        }
    }
    for t in teacher_globals {
        if t.origin != ViewOrigin::Global {
            return Err(Error::invalid("teacher received a local view".to_string()));
        }
    }

    let mut grads: Vec<Array1<f64>> = student_views.iter().map(|v| Array1::zeros(v.z.len())).collect();

    // Alignment: mean of 0.5 ||z_c - z_g||^2 over valid pairs.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (si, sv) in student_views.iter().enumerate() {
        for (ti, tg) in teacher_globals.iter().enumerate() {
            if tg.sample_index != sv.sample_index {
                continue;
            }
            if sv.origin == ViewOrigin::Global && sv.view_index == tg.view_index {
                continue; // identical crop
            }
            pairs.push((si, ti));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(
            "no student/teacher pairs; teacher globals missing".to_string(),
        ));
    }
    let p = pairs.len() as f64;
    let mut alignment = 0.0;
    for &(si, ti) in &pairs {
        let diff = &student_views[si].z - &teacher_globals[ti].z;
        alignment += 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
        grads[si].scaled_add(1.0 / p, &diff);
    }
    alignment /= p;

    // Coding rate over the selected student embeddings.
    let selected: Vec<usize> = student_views
        .iter()
        .enumerate()
        .filter(|(_, v)| match gamma_source {
            GammaSource::GlobalsOnly => v.origin == ViewOrigin::Global,
            GammaSource::AllViews => true,
        })
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(
            "no student embeddings selected for the covariance".to_string(),
        ));
    }
    let b = selected.len();
    let mut z_mat = Array2::zeros((b, d));
    for (r, &i) in selected.iter().enumerate() {
        z_mat.row_mut(r).assign(&student_views[i].z);
    }
    let gamma = covariance(z_mat.view())?;
    let scale = d as f64 / (epsilon * epsilon);
    let l = shifted_cholesky(&gamma, scale)?;
    let logdet = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
    let coding_rate = -0.5 * logdet;

    // d(-0.5 logdet(I + s*Gamma))/dz_r = -(s/B) * inv(I + s*Gamma) (z_r - mean)
    let inv = cholesky_inverse(&l);
    let mean = {
        let mut m = Array1::<f64>::zeros(d);
        for r in 0..b {
            m += &z_mat.row(r);
        }
        m / b as f64
    };
    for (r, &i) in selected.iter().enumerate() {
        let centered = &z_mat.row(r) - &mean;
        let pull = inv.dot(&centered);
        grads[i].scaled_add(-scale / b as f64, &pull);
    }

    Ok(SimdinoLoss {
        total: alignment + coding_rate,
        alignment,
        coding_rate,
        grads,
    })
}

/// Loss value only, with the default covariance source (global views).
pub fn simdino_loss(
    student_views: &[ViewEmbedding],
    teacher_globals: &[ViewEmbedding],
    epsilon: f64,
) -> Result<f64> {
    Ok(
        simdino_loss_with_grads(student_views, teacher_globals, epsilon, GammaSource::GlobalsOnly)?
            .total,
    )
}

/// Teacher momentum: 0.996 rising to 1.0 on a cosine, monotone
/// non-decreasing with exact endpoints.
pub fn momentum_schedule(step: usize, total: usize) -> Result<f64> {
    momentum_schedule_between(step, total, 0.996, 1.0)
}

pub fn momentum_schedule_between(
    step: usize,
    total: usize,
    m_start: f64,
    m_end: f64,
) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("momentum schedule needs total > 0".to_string()));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond schedule end {total}")));
    }
    let t = step as f64 / total as f64;
    Ok(m_end - (m_end - m_start) * ((std::f64::consts::PI * t).cos() + 1.0) / 2.0)
}

/// teacher <- m * teacher + (1 - m) * student. No gradients ever flow
/// into the teacher; this is its only update path.
pub fn ema_update(teacher: &mut SimdinoModel, student: &SimdinoModel, m: f64) -> Result<()> {
    ema_blend(teacher, student, m)
}

struct ViewForward {
    tokens: TokenSequence,
    cache: crate::encoder::EncoderCache,
    reps: Representation,
    head_cache: Option<HeadCache>,
    raw_norm: Option<(Array1<f64>, f64)>,
}

fn student_embed(
    model: &SimdinoModel,
    tokens: TokenSequence,
    origin: ViewOrigin,
    view_index: usize,
    sample_index: usize,
    normalize: bool,
) -> Result<(ViewEmbedding, ViewForward)> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let (reps, cache) = model.encoder.forward_cached(tokens.tokens.view(), &positions)?;
    let cls = reps.rows.row(0).to_owned();
    let (z_raw, head_cache) = match &model.head {
        Some(head) => {
            let (out, hc) = head.forward(&cls);
            (out, Some(hc))
        }
        None => (cls, None),
    };
    let (z, raw_norm) = if normalize {
        let r = z_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::numerical("zero embedding norm".to_string()));
        }
        (z_raw.mapv(|v| v / r), Some((z_raw, r)))
    } else {
        (z_raw, None)
    };
    Ok((
        ViewEmbedding {
            z,
            origin,
            view_index,
            sample_index,
        },
        ViewForward {
            tokens,
            cache,
            reps,
            head_cache,
            raw_norm,
        },
    ))
}

fn teacher_embed(
    model: &SimdinoModel,
    tokens: &TokenSequence,
    view_index: usize,
    sample_index: usize,
    normalize: bool,
) -> Result<ViewEmbedding> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let reps = model.encoder.forward(tokens.tokens.view(), &positions)?;
    let cls = reps.rows.row(0).to_owned();
    let z_raw = match &model.head {
        Some(head) => head.forward(&cls).0,
        None => cls,
    };
    let z = if normalize {
        let r = z_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::numerical("zero embedding norm".to_string()));
        }
        z_raw.mapv(|v| v / r)
    } else {
        z_raw
    };
    Ok(ViewEmbedding {
        z,
        origin: ViewOrigin::Global,
        view_index,
        sample_index,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SimdinoStepStats {
    pub loss: f64,
    pub alignment: f64,
    pub coding_rate: f64,
    pub momentum: f64,
    /// Trace of the student-embedding covariance in this batch.
    pub gamma_trace: f64,
}

/// Augment the batch, forward student and teacher, apply one gradient
/// step to the student and an EMA update to the teacher.
#[allow(clippy::too_many_arguments)]
pub fn simdino_train_step(
    student: &mut SimdinoModel,
    teacher: &mut SimdinoModel,
    batch: &[Sample4D],
    aug_cfg: &AugmentConfig,
    sd_cfg: &SimdinoConfig,
    patch: &PatchConfig,
    opt: &mut AdamW,
    lr: f64,
    step: usize,
    total_steps: usize,
) -> Result<SimdinoStepStats> {
    sd_cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let modality = batch[0].modality;
    if batch.iter().any(|s| s.modality != modality) {
        return Err(Error::invalid(
            "a training step must hold a single modality".to_string(),
        ));
    }
    if !modality.trainable() {
        return Err(Error::invalid(format!(
            "modality {modality} is never sampled during pretraining"
        )));
    }

    let mut student_views: Vec<ViewEmbedding> = Vec::new();
    let mut forwards: Vec<ViewForward> = Vec::new();
    let mut teacher_globals: Vec<ViewEmbedding> = Vec::new();
    for (i, sample) in batch.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[aug_cfg.seed, step as u64, i as u64]));
        let views = match modality {
            Modality::XRay | Modality::Ultrasound | Modality::Mri => {
                let (_, h, w, _) = sample.shape();
                let plane =
                    ndarray::Array2::from_shape_fn((h, w), |(r, c)| sample.data[(0, r, c, 0)]);
                augment_2d(&plane, aug_cfg, &mut rng)?
            }
            Modality::Endoscopy => augment_video(&sample.data, aug_cfg, &mut rng)?,
            Modality::Ct => {
                let (_, h, w, s) = sample.shape();
                let vol = Array4::from_shape_fn((1, h, w, s), |(_, r, c, k)| {
                    sample.data[(0, r, c, k)]
                });
                augment_3d(&vol, aug_cfg, &mut rng)?
            }
        };
        for (view, is_global, view_index) in views.iter() {
            let tokens = patchify(view, patch)?;
            let origin = if is_global {
                ViewOrigin::Global
            } else {
                ViewOrigin::Local
            };
            let (emb, fwd) = student_embed(
                student,
                tokens,
                origin,
                view_index,
                i,
                sd_cfg.normalize_embeddings,
            )?;
            student_views.push(emb);
            forwards.push(fwd);
            if is_global {
                let t_tokens = patchify(view, patch)?;
                teacher_globals.push(teacher_embed(
                    teacher,
                    &t_tokens,
                    view_index,
                    i,
                    sd_cfg.normalize_embeddings,
                )?);
            }
        }
    }

    let loss = simdino_loss_with_grads(
        &student_views,
        &teacher_globals,
        sd_cfg.epsilon,
        sd_cfg.gamma_source,
    )?;
    if !loss.total.is_finite() {
        return Err(Error::numerical(format!("non-finite loss at step {step}")));
    }
    let gamma_trace = {
        let globals: Vec<&ViewEmbedding> = student_views
            .iter()
            .filter(|v| v.origin == ViewOrigin::Global)
            .collect();
        let d = globals[0].z.len();
        let mut m = Array2::zeros((globals.len(), d));
        for (r, v) in globals.iter().enumerate() {
            m.row_mut(r).assign(&v.z);
        }
        covariance(m.view())?.gamma.diag().sum()
    };

    // Backward through every student view.
    let mut grads = student.zeros_like();
    for (fwd, dz) in forwards.iter().zip(&loss.grads) {
        let mut dz = dz.clone();
        if let Some((z_raw, r)) = &fwd.raw_norm {
            // z_n = z / r; dz = (dz_n - z_n (z_n . dz_n)) / r
            let zn = z_raw.mapv(|v| v / *r);
            let dot = zn.iter().zip(dz.iter()).map(|(a, b)| a * b).sum::<f64>();
            dz = (0..zn.len())
                .map(|j| (dz[j] - zn[j] * dot) / *r)
                .collect::<Array1<f64>>();
        }
        let d_cls = match (&student.head, &fwd.head_cache) {
            (Some(head), Some(hc)) => {
                head.backward(hc, &dz, grads.head.as_mut().expect("student has head"))
            }
            _ => dz,
        };
        let d_rows = pool_backward(&fwd.reps, PoolStrategy::Cls, &d_cls)?;
        student.encoder.backward(
            fwd.tokens.tokens.view(),
            &fwd.cache,
            &d_rows,
            &mut grads.encoder,
        );
    }

    let mut flat = param_vec(student);
    let gflat = param_vec(&grads);
    opt.step(&mut flat, &gflat, lr)?;
    load_param_vec(student, &flat)?;

    let momentum = momentum_schedule_between(
        step,
        total_steps,
        sd_cfg.momentum_start,
        sd_cfg.momentum_end,
    )?;
    ema_update(teacher, student, momentum)?;

    Ok(SimdinoStepStats {
        loss: loss.total,
        alignment: loss.alignment,
        coding_rate: loss.coding_rate,
        momentum,
        gamma_trace,
    })
}

/// Training objective selector shared by the pipeline and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mae,
    Simdino,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Objective::Mae),
            "simdino" => Ok(Objective::Simdino),
            other => Err(Error::config(format!("unknown objective `{other}`"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Mae => "mae",
            Objective::Simdino => "simdino",
        })
    }
}

impl Objective {
    /// Pooling used for retrieval: patch average for the masked
    /// autoencoder, class token concatenated with the patch average for
    /// self-distillation.
    pub fn default_strategy(&self) -> PoolStrategy {
        match self {
            Objective::Mae => PoolStrategy::Avg,
            Objective::Simdino => PoolStrategy::Mix,
        }
    }
}

/// Embed an unaugmented sample with an explicit pooling strategy.
pub fn embed_with_strategy(
    enc: &EncoderModel,
    x: &Sample4D,
    patch: &PatchConfig,
    strategy: PoolStrategy,
) -> Result<Array1<f64>> {
    let tokens = patchify(&x.data, patch)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let reps = enc.forward(tokens.tokens.view(), &positions)?;
    pool(&reps, strategy)
}

/// Deterministic retrieval embedding of the original (non-augmented)
/// sample under the objective's default strategy.
pub fn retrieval_embedding(
    enc: &EncoderModel,
    x: &Sample4D,
    patch: &PatchConfig,
    objective: Objective,
) -> Result<Array1<f64>> {
    embed_with_strategy(enc, x, patch, objective.default_strategy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, EncoderConfig};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn view(z: Vec<f64>, origin: ViewOrigin, view_index: usize, sample: usize) -> ViewEmbedding {
        ViewEmbedding {
            z: Array1::from_vec(z),
            origin,
            view_index,
            sample_index: sample,
        }
    }

    #[test]
    fn aligned_constant_batch_has_zero_loss() {
        let z = vec![0.3, -0.2, 0.5, 0.1];
        let mut students = Vec::new();
        let mut teachers = Vec::new();
        for sample in 0..3 {
            for vi in 0..2 {
                students.push(view(z.clone(), ViewOrigin::Global, vi, sample));
                teachers.push(view(z.clone(), ViewOrigin::Global, vi, sample));
            }
            students.push(view(z.clone(), ViewOrigin::Local, 0, sample));
        }
        let total = simdino_loss(&students, &teachers, 0.5).unwrap();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_covariance_closed_form() {
        // Student globals +-e_k over four samples: population covariance
        // 0.25 I_4 with zero mean. Teachers swap the two crops so every
        // remaining pair aligns perfectly.
        let mut students = Vec::new();
        let mut teachers = Vec::new();
        for k in 0..4 {
            let mut plus = vec![0.0; 4];
            plus[k] = 1.0;
            let mut minus = vec![0.0; 4];
            minus[k] = -1.0;
            students.push(view(plus.clone(), ViewOrigin::Global, 0, k));
            students.push(view(minus.clone(), ViewOrigin::Global, 1, k));
            teachers.push(view(minus, ViewOrigin::Global, 0, k));
            teachers.push(view(plus, ViewOrigin::Global, 1, k));
        }
        let loss =
            simdino_loss_with_grads(&students, &teachers, 0.5, GammaSource::GlobalsOnly).unwrap();
        assert_abs_diff_eq!(loss.alignment, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loss.coding_rate, -2.0 * 5.0_f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(loss.total, -2.0 * 5.0_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn loss_matches_naive_pair_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 5;
        let samples = 3;
        let mut students = Vec::new();
        let mut teachers = Vec::new();
        for sample in 0..samples {
            for vi in 0..2 {
                students.push(view(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ViewOrigin::Global,
                    vi,
                    sample,
                ));
                teachers.push(view(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ViewOrigin::Global,
                    vi,
                    sample,
                ));
            }
            for vi in 0..3 {
                students.push(view(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ViewOrigin::Local,
                    vi,
                    sample,
                ));
            }
        }
        let got =
            simdino_loss_with_grads(&students, &teachers, 0.5, GammaSource::GlobalsOnly).unwrap();

        // Naive alignment loop.
        let mut align = 0.0;
        let mut pairs = 0usize;
        for sv in &students {
            for tg in &teachers {
                if tg.sample_index != sv.sample_index {
                    continue;
                }
                if sv.origin == ViewOrigin::Global && sv.view_index == tg.view_index {
                    continue;
                }
                let diff = &sv.z - &tg.z;
                align += 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
                pairs += 1;
            }
        }
        align /= pairs as f64;
        assert_abs_diff_eq!(got.alignment, align, epsilon = 1e-10);

        // Eigenvalue-sum oracle for the coding-rate term.
        let globals: Vec<&ViewEmbedding> = students
            .iter()
            .filter(|v| v.origin == ViewOrigin::Global)
            .collect();
        let mut zm = Array2::zeros((globals.len(), d));
        for (r, v) in globals.iter().enumerate() {
            zm.row_mut(r).assign(&v.z);
        }
        let gamma = covariance(zm.view()).unwrap();
        let scale = d as f64 / 0.25;
        let na = nalgebra::DMatrix::from_fn(d, d, |i, j| gamma.gamma[(i, j)]);
        let oracle: f64 = na
            .symmetric_eigenvalues()
            .iter()
            .map(|&l| (1.0 + scale * l.max(0.0)).ln())
            .sum();
        assert_abs_diff_eq!(got.coding_rate, -0.5 * oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(got.total, align - 0.5 * oracle, epsilon = 1e-10);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 4;
        let mut students = Vec::new();
        let mut teachers = Vec::new();
        for sample in 0..2 {
            for vi in 0..2 {
                students.push(view(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ViewOrigin::Global,
                    vi,
                    sample,
                ));
                teachers.push(view(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    ViewOrigin::Global,
                    vi,
                    sample,
                ));
            }
            students.push(view(
                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                ViewOrigin::Local,
                0,
                sample,
            ));
        }
        let loss =
            simdino_loss_with_grads(&students, &teachers, 0.5, GammaSource::GlobalsOnly).unwrap();
        // Flatten student embeddings into one parameter vector.
        let flat: Vec<f64> = students.iter().flat_map(|v| v.z.iter().copied()).collect();
        let analytic: Vec<f64> = loss.grads.iter().flat_map(|g| g.iter().copied()).collect();
        let template = students.clone();
        let teachers2 = teachers.clone();
        let f = move |w: &[f64]| {
            let mut views = template.clone();
            for (i, v) in views.iter_mut().enumerate() {
                for j in 0..d {
                    v.z[j] = w[i * d + j];
                }
            }
            simdino_loss(&views, &teachers2, 0.5)
        };
        let err = crate::numerics::grad_check(f, &flat, &analytic, 1e-6).unwrap();
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn momentum_schedule_endpoints() {
        assert_eq!(momentum_schedule(0, 100).unwrap(), 0.996);
        assert_eq!(momentum_schedule(100, 100).unwrap(), 1.0);
        assert_abs_diff_eq!(momentum_schedule(50, 100).unwrap(), 0.998, epsilon = 1e-12);
        assert!(momentum_schedule(0, 0).is_err());
    }

    #[test]
    fn momentum_schedule_is_monotone() {
        let mut prev = 0.0;
        for step in 0..=1000 {
            let m = momentum_schedule(step, 1000).unwrap();
            assert!(m + 1e-15 >= prev);
            assert!((0.996..=1.0).contains(&m));
            prev = m;
        }
    }

    fn tiny_model(seed: u64, with_head: bool) -> SimdinoModel {
        let cfg = EncoderConfig {
            input_dim: 96,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            use_cls_token: true,
            max_tokens: 64,
        };
        SimdinoModel::new(init_model(&cfg, seed).unwrap(), with_head, seed + 7)
    }

    #[test]
    fn ema_blend_arithmetic() {
        let student = tiny_model(1, true);
        let mut teacher = tiny_model(2, true);
        let t0 = param_vec(&teacher);
        let s = param_vec(&student);
        ema_update(&mut teacher, &student, 1.0).unwrap();
        assert_eq!(param_vec(&teacher), t0);
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(param_vec(&teacher), s);

        let mut teacher = tiny_model(2, true);
        ema_update(&mut teacher, &student, 0.5).unwrap();
        let blended = param_vec(&teacher);
        for ((b, t), s) in blended.iter().zip(&t0).zip(&s) {
            assert_abs_diff_eq!(*b, 0.5 * t + 0.5 * s, epsilon = 1e-15);
        }
        // Convexity: blended values stay within [min, max] of the inputs.
        for ((b, t), s) in blended.iter().zip(&t0).zip(&s) {
            assert!(*b >= t.min(*s) - 1e-15 && *b <= t.max(*s) + 1e-15);
        }
    }

    #[test]
    fn ema_architecture_mismatch_rejected() {
        let student = tiny_model(1, true);
        let mut teacher = tiny_model(2, false);
        assert!(ema_update(&mut teacher, &student, 0.5).is_err());
    }
}
