//! Sequence-level temporal stage: self-attention over per-frame latents,
//! per-frame pose / motion / confidence heads, a learnable-query decoder for
//! the single global shape vector, and the monocular parameter head that
//! reads each pre-temporal latent on its own (intermediate supervision).
//!
//! The confidence output is an unbounded logit: the fusion weighting already
//! exponentiates, so no activation is applied here.

use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::handmodel::{POSE_DIM, SHAPE_DIM};
use crate::nn::{Decoder, Encoder, LinearLayer, Mlp2, ParamId, ParamStore, Session, TemporalEmbedding};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Sequence-level outputs. `T` is the sequence length.
pub struct TemporalOutput {
    /// temporally enriched latents, `[T x D]`.
    pub enriched: Tensor,
    /// per-frame pose estimates, `[T x 48]`.
    pub pose: Tensor,
    /// forward motion deltas, `[T x 48]`.
    pub motion_fw: Tensor,
    /// backward motion deltas, `[T x 48]`.
    pub motion_bw: Tensor,
    /// per-frame confidence logits, `[T]`.
    pub confidence: Tensor,
    /// global shape estimate shared by all frames, `[10]`.
    pub shape_global: Tensor,
    /// single-frame pose estimates from the pre-temporal latents, `[T x 48]`.
    pub monocular_pose: Tensor,
    /// single-frame shape estimates, `[T x 10]`.
    pub monocular_shape: Tensor,
}

pub struct TemporalNet {
    pub dim: usize,
    temporal_embed: Option<TemporalEmbedding>,
    encoder: Encoder,
    pose_head: Mlp2,
    motion_head: Mlp2,
    confidence_head: Mlp2,
    shape_query: ParamId,
    shape_decoder: Decoder,
    shape_head: LinearLayer,
    monocular_head: Mlp2,
}

impl TemporalNet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let dim = cfg.model_dim;
        let temporal_embed = cfg
            .temporal_embed
            .then(|| TemporalEmbedding::new(store, rng, "temporal", cfg.t_len.max(1), dim));
        let encoder = Encoder::new(
            store,
            rng,
            "temporal.encoder",
            cfg.enc_layers,
            dim,
            cfg.heads,
            cfg.ffn_dim,
        );
        let pose_head = Mlp2::new(store, rng, "temporal.pose_head", dim, dim, POSE_DIM);
        let motion_head = Mlp2::new(store, rng, "temporal.motion_head", dim, dim, 2 * POSE_DIM);
        let confidence_head = Mlp2::new(store, rng, "temporal.confidence_head", dim, dim, 1);
        let shape_query = store.add(
            "temporal.shape_query",
            crate::nn::uniform_init(rng, &[1, dim], dim),
        );
        let shape_decoder = Decoder::new(
            store,
            rng,
            "temporal.shape_decoder",
            cfg.dec_layers,
            dim,
            cfg.heads,
            cfg.ffn_dim,
        );
        let shape_head = LinearLayer::new(store, rng, "temporal.shape_head", dim, SHAPE_DIM);
        let monocular_head = Mlp2::new(
            store,
            rng,
            "temporal.monocular_head",
            dim,
            dim,
            POSE_DIM + SHAPE_DIM,
        );
        Self {
            dim,
            temporal_embed,
            encoder,
            pose_head,
            motion_head,
            confidence_head,
            shape_query,
            shape_decoder,
            shape_head,
            monocular_head,
        }
    }

    /// `latents [T x D]` are the per-frame spatial latents in time order.
    pub fn forward(&self, s: &Session, latents: &Tensor) -> Result<TemporalOutput> {
        if latents.shape().len() != 2 || latents.shape()[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "temporal_forward",
                lhs: latents.shape().to_vec(),
                rhs: vec![0, self.dim],
            });
        }
        let t_len = latents.shape()[0];
        let mut tokens = latents.clone();
        if let Some(embed) = &self.temporal_embed {
            tokens = tokens.add(&embed.forward(s, t_len)?)?;
        }
        let enriched = self.encoder.forward(s, &tokens)?;

        let pose = self.pose_head.forward(s, &enriched)?;
        let motion = self.motion_head.forward(s, &enriched)?;
        let motion_fw = motion.narrow(1, 0, POSE_DIM)?;
        let motion_bw = motion.narrow(1, POSE_DIM, POSE_DIM)?;
        let confidence = self
            .confidence_head
            .forward(s, &enriched)?
            .reshape(&[t_len])?;

        let shape_latent = self
            .shape_decoder
            .forward(s, &s.param(self.shape_query)?, &enriched)?;
        let shape_global = self
            .shape_head
            .forward(s, &shape_latent)?
            .reshape(&[SHAPE_DIM])?;

        let monocular = self.monocular_head.forward(s, latents)?;
        let monocular_pose = monocular.narrow(1, 0, POSE_DIM)?;
        let monocular_shape = monocular.narrow(1, POSE_DIM, SHAPE_DIM)?;

        Ok(TemporalOutput {
            enriched,
            pose,
            motion_fw,
            motion_bw,
            confidence,
            shape_global,
            monocular_pose,
            monocular_shape,
        })
    }
}
