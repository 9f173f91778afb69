//! Per-frame spatial stage: feature-grid embedding, transformer encoder
//! with 2D positional embeddings, joint-heatmap intermediate head with
//! soft-argmax 2D joints, a heatmap concatenation skip, and a
//! learnable-query decoder producing one compact latent per frame.
//!
//! The real-image backbone is replaced by a single linear patch embedding:
//! the stage consumes an `[H x W x C]` feature grid directly. Pixel
//! coordinates coincide with grid coordinates (cell (r, c) is centered at
//! (c + 0.5, r + 0.5)).

use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::handmodel::JOINT_COUNT;
use crate::nn::{
    Decoder, Encoder, LinearLayer, ParamId, ParamStore, PosEmbedKind, PositionalEmbedding2D,
    Session,
};
use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

/// Per-frame outputs of the spatial stage.
pub struct SpatialOutput {
    /// encoder tokens, `[HW x D]`.
    pub encoded: Tensor,
    /// normalized per-joint heatmaps, `[Nj x H x W]`.
    pub heatmaps: Tensor,
    /// soft-argmax joint positions, pixels, `[Nj x 2]`.
    pub joints2d: Tensor,
    /// compact frame latent, `[1 x D]`.
    pub latent: Tensor,
}

pub struct SpatialNet {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub dim: usize,
    embed: LinearLayer,
    pos: PositionalEmbedding2D,
    encoder: Encoder,
    heatmap_logits: LinearLayer,
    skip_proj: LinearLayer,
    query: ParamId,
    decoder: Decoder,
    cell_centers: Array,
}

impl SpatialNet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let (h, w, c, dim) = (cfg.grid_h, cfg.grid_w, cfg.grid_c, cfg.model_dim);
        let embed = LinearLayer::new(store, rng, "spatial.embed", c, dim);
        let pos = PositionalEmbedding2D::new(store, rng, "spatial", cfg.pos_embed, h, w, dim);
        let encoder = Encoder::new(
            store,
            rng,
            "spatial.encoder",
            cfg.enc_layers,
            dim,
            cfg.heads,
            cfg.ffn_dim,
        );
        let heatmap_logits = LinearLayer::new(store, rng, "spatial.heatmap", dim, JOINT_COUNT);
        let skip_proj =
            LinearLayer::new(store, rng, "spatial.skip_proj", dim + JOINT_COUNT, dim);
        let query = store.add(
            "spatial.query",
            crate::nn::uniform_init(rng, &[1, dim], dim),
        );
        let decoder = Decoder::new(
            store,
            rng,
            "spatial.decoder",
            cfg.dec_layers,
            dim,
            cfg.heads,
            cfg.ffn_dim,
        );
        let mut centers = vec![0.0; h * w * 2];
        for r in 0..h {
            for col in 0..w {
                centers[(r * w + col) * 2] = col as f64 + 0.5;
                centers[(r * w + col) * 2 + 1] = r as f64 + 0.5;
            }
        }
        Self {
            h,
            w,
            c,
            dim,
            embed,
            pos,
            encoder,
            heatmap_logits,
            skip_proj,
            query,
            decoder,
            cell_centers: Array::new(vec![h * w, 2], centers).expect("sized"),
        }
    }

    pub fn pos_embed_kind(&self) -> PosEmbedKind {
        self.pos.kind()
    }

    /// Flattens the grid to `HW` tokens, projects each cell `C -> D`, and
    /// adds the 2D positional embedding.
    pub fn embed_grid(&self, s: &Session, grid: &Tensor) -> Result<Tensor> {
        if grid.len() != self.h * self.w * self.c {
            return Err(Error::ShapeMismatch {
                op: "embed_grid",
                lhs: grid.shape().to_vec(),
                rhs: vec![self.h, self.w, self.c],
            });
        }
        let tokens = grid.reshape(&[self.h * self.w, self.c])?;
        let mut projected = self.embed.forward(s, &tokens)?;
        if let Some(pos) = self.pos.forward(s)? {
            projected = projected.add(&pos)?;
        }
        Ok(projected)
    }

    /// Per-joint spatial softmax over logits `[HW x Nj]` and the soft-argmax
    /// expectation of cell centers under each normalized heatmap.
    pub fn heatmap_from_logits(&self, logits: &Tensor) -> Result<(Tensor, Tensor)> {
        let heat_flat = logits.transpose()?.softmax(1)?; // [Nj x HW]
        let centers = Tensor::from_array(self.cell_centers.clone());
        let joints2d = heat_flat.matmul(&centers)?; // [Nj x 2]
        let heatmaps = heat_flat.reshape(&[JOINT_COUNT, self.h, self.w])?;
        Ok((heatmaps, joints2d))
    }

    /// Heatmap head over encoded tokens `[HW x D]`.
    pub fn heatmap_head(&self, s: &Session, encoded: &Tensor) -> Result<(Tensor, Tensor)> {
        let logits = self.heatmap_logits.forward(s, encoded)?;
        self.heatmap_from_logits(&logits)
    }

    /// Full per-frame pass: encode, regress heatmaps, concatenate them back
    /// into the memory, and collapse the memory with the learnable query.
    pub fn forward(&self, s: &Session, grid: &Tensor) -> Result<SpatialOutput> {
        let tokens = self.embed_grid(s, grid)?;
        let encoded = self.encoder.forward(s, &tokens)?;
        let logits = self.heatmap_logits.forward(s, &encoded)?;
        let (heatmaps, joints2d) = self.heatmap_from_logits(&logits)?;
        // heatmap skip: per-cell joint probabilities rejoin the tokens
        let per_cell = heatmaps.reshape(&[JOINT_COUNT, self.h * self.w])?.transpose()?;
        let memory = self
            .skip_proj
            .forward(s, &Tensor::concat(&[&encoded, &per_cell], 1)?)?;
        let latent = self.decoder.forward(s, &s.param(self.query)?, &memory)?;
        Ok(SpatialOutput {
            encoded,
            heatmaps,
            joints2d,
            latent,
        })
    }
}
