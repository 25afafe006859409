//! Self-supervised objectives and their training steps.

pub mod mae;
pub mod optim;
pub mod simdino;

pub use mae::{
    init_decoder, lr_schedule, mae_forward, mae_forward_backward, mae_loss, mae_train_step,
    masked_count, sample_mask, MaeDecoder, MaeDecoderConfig, MaeStepStats, MaskConfig, MaskIndices,
};
pub use optim::AdamW;
pub use simdino::{
    ema_update, embed_with_strategy, momentum_schedule, momentum_schedule_between,
    retrieval_embedding, simdino_loss, simdino_loss_with_grads, simdino_train_step, GammaSource,
    Objective, ProjectionHead, SimdinoConfig, SimdinoLoss, SimdinoModel, SimdinoStepStats,
    ViewEmbedding, ViewOrigin,
};
