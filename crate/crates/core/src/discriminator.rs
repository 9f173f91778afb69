//! Motion discriminator: scores whether a pose sequence looks like a real
//! hand motion. Linear embedding, two bidirectional GRU layers, single-query
//! attention pooling over timesteps, and a sigmoid head, so the score is
//! strictly inside (0, 1).
//!
//! The discriminator sees raw pose parameter sequences only; shape
//! coefficients are not fed to it.

use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::handmodel::POSE_DIM;
use crate::losses::discriminator_loss;
use crate::nn::{BiGru, LinearLayer, ParamId, ParamStore, Session};
use crate::tensor::{Array, Tensor};
use crate::training::Adam;
use crate::{Error, Result};

/// Which pose sequence the discriminator judges during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscInput {
    /// The fused output sequence (default: the artifact's final product).
    Fused,
    /// The per-frame pre-fusion pose estimates.
    PreFusion,
}

pub struct MotionDiscriminator {
    embed: LinearLayer,
    gru1: BiGru,
    gru2: BiGru,
    /// scoring vector for attention pooling, `[2H x 1]`.
    attn: ParamId,
    head: LinearLayer,
    pub hidden: usize,
}

impl MotionDiscriminator {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let hidden = cfg.disc_hidden;
        Self {
            embed: LinearLayer::new(store, rng, "disc.embed", POSE_DIM, hidden),
            gru1: BiGru::new(store, rng, "disc.gru1", hidden, hidden),
            gru2: BiGru::new(store, rng, "disc.gru2", 2 * hidden, hidden),
            attn: store.add(
                "disc.attn",
                crate::nn::uniform_init(rng, &[2 * hidden, 1], 2 * hidden),
            ),
            head: LinearLayer::new(store, rng, "disc.head", 2 * hidden, 1),
            hidden,
        }
    }

    /// Softmax pooling weights over timestep features `[T x 2H]`; `[1 x T]`,
    /// summing to 1.
    pub fn pooling_weights(&self, s: &Session, features: &Tensor) -> Result<Tensor> {
        let t_len = features.shape()[0];
        features
            .matmul(&s.param(self.attn)?)?
            .reshape(&[1, t_len])?
            .softmax(1)
    }

    /// Realism score for a pose sequence `[T x 48]`, in (0, 1).
    pub fn score(&self, s: &Session, pose_sequence: &Tensor) -> Result<Tensor> {
        if pose_sequence.shape().len() != 2 || pose_sequence.shape()[1] != POSE_DIM {
            return Err(Error::ShapeMismatch {
                op: "discriminator_score",
                lhs: pose_sequence.shape().to_vec(),
                rhs: vec![0, POSE_DIM],
            });
        }
        let embedded = self.embed.forward(s, pose_sequence)?;
        let h1 = self.gru1.forward(s, &embedded)?;
        let h2 = self.gru2.forward(s, &h1)?;
        let weights = self.pooling_weights(s, &h2)?;
        let pooled = weights.matmul(&h2)?; // [1 x 2H]
        self.head.forward(s, &pooled)?.sigmoid()?.reshape(&[1])
    }
}

/// One optimization step on the discriminator: scores detached generated
/// sequences against freshly sampled real ones, minimizes the least-squares
/// objective, and leaves the generator untouched. Returns the loss value.
pub fn discriminator_step(
    disc: &MotionDiscriminator,
    store: &mut ParamStore,
    optimizer: &mut Adam,
    lr: f64,
    clip_norm: f64,
    real_batch: &[Array],
    generated_batch: &[Array],
) -> Result<f64> {
    if real_batch.is_empty() || generated_batch.is_empty() {
        return Err(Error::Domain {
            op: "discriminator_step",
            detail: "real and generated batches must be non-empty".into(),
        });
    }
    let session = Session::train(store);
    let score_all = |batch: &[Array]| -> Result<Tensor> {
        let scores: Vec<Tensor> = batch
            .iter()
            .map(|seq| disc.score(&session, &Tensor::from_array(seq.clone())))
            .collect::<Result<_>>()?;
        Tensor::concat(&scores.iter().collect::<Vec<_>>(), 0)
    };
    let gen_scores = score_all(generated_batch)?;
    let real_scores = score_all(real_batch)?;
    let loss = discriminator_loss(&gen_scores, &real_scores)?;
    let value = loss.item()?;
    let grads = session.backward(&loss)?;
    optimizer.apply(store, &grads, lr, clip_norm)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use rand::Rng;

    fn build(seed: u64) -> (ParamStore, MotionDiscriminator) {
        let mut cfg = Config::desk();
        cfg.disc_hidden = 8;
        let mut store = ParamStore::new();
        let mut rng = derive_rng(seed, &[0]);
        let disc = MotionDiscriminator::new(&mut store, &mut rng, &cfg);
        (store, disc)
    }

    fn rand_seq(t: usize, rng: &mut rand_chacha::ChaCha8Rng, scale: f64) -> Array {
        Array::new(
            vec![t, POSE_DIM],
            (0..t * POSE_DIM)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn scores_stay_strictly_inside_the_unit_interval() {
        let (store, disc) = build(1);
        let s = Session::eval(&store);
        let mut rng = derive_rng(1, &[1]);
        for _ in 0..1000 {
            let t = rng.gen_range(1..=7);
            let seq = Tensor::from_array(rand_seq(t, &mut rng, 2.0));
            let score = disc.score(&s, &seq).unwrap().item().unwrap();
            assert!(score > 0.0 && score < 1.0);
        }
    }

    #[test]
    fn single_frame_sequences_are_deterministic_functions_of_the_frame() {
        let (store, disc) = build(2);
        let s = Session::eval(&store);
        let mut rng = derive_rng(2, &[2]);
        let seq = rand_seq(1, &mut rng, 1.0);
        let a = disc
            .score(&s, &Tensor::from_array(seq.clone()))
            .unwrap()
            .item()
            .unwrap();
        let b = disc
            .score(&s, &Tensor::from_array(seq))
            .unwrap()
            .item()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooling_weights_sum_to_one() {
        let (store, disc) = build(3);
        let s = Session::eval(&store);
        let mut rng = derive_rng(3, &[3]);
        let features = Tensor::from_vec(
            &[5, 16],
            (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let w = disc.pooling_weights(&s, &features).unwrap();
        let sum: f64 = w.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn score_gradient_check() {
        let (store, disc) = build(4);
        let mut rng = derive_rng(4, &[4]);
        let seq = rand_seq(4, &mut rng, 0.8);
        let err = crate::tensor::finite_diff_check(
            |x| {
                let s = Session::eval(&store);
                disc.score(&s, x)
            },
            &seq,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn step_learns_to_separate_smooth_from_noise() {
        let (mut store, disc) = build(5);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        let mut rng = derive_rng(5, &[5]);
        // real: slow smooth trajectories; fake: white noise
        let real: Vec<Array> = (0..8)
            .map(|i| {
                let (theta, _) = crate::synthdata::sample_trajectory(100 + i, 5, 10);
                theta
            })
            .collect();
        let fake: Vec<Array> = (0..8).map(|_| rand_seq(5, &mut rng, 1.5)).collect();
        for step in 0..60 {
            let r = &real[(step * 2) % 8..(step * 2) % 8 + 2];
            let f = &fake[(step * 2) % 8..(step * 2) % 8 + 2];
            discriminator_step(&disc, &mut store, &mut opt, 5e-3, 0.0, r, f).unwrap();
        }
        let s = Session::eval(&store);
        let mean = |batch: &[Array]| -> f64 {
            batch
                .iter()
                .map(|x| {
                    disc.score(&s, &Tensor::from_array(x.clone()))
                        .unwrap()
                        .item()
                        .unwrap()
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let (real_mean, fake_mean) = (mean(&real), mean(&fake));
        assert!(
            real_mean > fake_mean,
            "real {real_mean} should out-score fake {fake_mean}"
        );
    }

    #[test]
    fn step_requires_non_empty_batches() {
        let (mut store, disc) = build(6);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        let mut rng = derive_rng(6, &[6]);
        let batch = vec![rand_seq(3, &mut rng, 1.0)];
        assert!(
            discriminator_step(&disc, &mut store, &mut opt, 1e-3, 0.0, &[], &batch).is_err()
        );
    }
}
