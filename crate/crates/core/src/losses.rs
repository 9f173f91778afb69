//! Loss suite: error-weighted point-set loss (maxMSE), mesh loss,
//! least-squares adversarial losses, 2D joint loss, monocular parameter
//! supervision, motion consistency, and pose smoothness.
//!
//! maxMSE for point sets P, P' is `sum_i ||e_i||^4 / sum_i ||e_i||^2` with
//! `e_i = P_i - P'_i`, i.e. an MSE whose per-point weights
//! `w_i = ||e_i||^2 / sum_j ||e_j||^2` grow with the point's own error. At a
//! perfect prediction the expression is 0/0; the limit along any direction
//! is 0, so the loss is defined as 0 whenever the denominator falls below
//! 1e-12. Each loss also has a plain-MSE variant used by the ablation grid.

use crate::handmodel::{hand_forward, HandMesh, KinematicTemplate};
use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

/// Denominator threshold for the zero-error convention.
const ZERO_ERROR_EPS: f64 = 1e-12;

/// Which point/vector discrepancy both the mesh and auxiliary losses use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    MaxMse,
    Mse,
}

/// maxMSE over two `[N x 3]` point sets.
pub fn max_mse(p: &Tensor, p_ref: &Tensor) -> Result<Tensor> {
    point_set_loss(LossKind::MaxMse, p, p_ref)
}

/// Point-set loss: maxMSE as above, or plain MSE (mean over points of the
/// squared Euclidean error).
pub fn point_set_loss(kind: LossKind, p: &Tensor, p_ref: &Tensor) -> Result<Tensor> {
    if p.shape() != p_ref.shape() || p.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "point_set_loss",
            lhs: p.shape().to_vec(),
            rhs: p_ref.shape().to_vec(),
        });
    }
    let sq_norms = p.sub(p_ref)?.powf(2.0)?.sum_axis(1)?;
    ratio_loss(kind, &sq_norms)
}

/// Per-component variant for parameter vectors: each scalar component is
/// treated as one point.
pub fn vec_loss(kind: LossKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "vec_loss",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let sq = a.sub(b)?.powf(2.0)?.reshape(&[a.len()])?;
    ratio_loss(kind, &sq)
}

/// maxMSE over per-component squared errors.
pub fn maxmse_vec(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    vec_loss(LossKind::MaxMse, a, b)
}

fn ratio_loss(kind: LossKind, sq_errors: &Tensor) -> Result<Tensor> {
    match kind {
        LossKind::Mse => sq_errors.mean(),
        LossKind::MaxMse => {
            let denom = sq_errors.sum()?;
            if denom.item()? < ZERO_ERROR_EPS {
                return Ok(Tensor::scalar(0.0));
            }
            sq_errors.powf(2.0)?.sum()?.div(&denom)
        }
    }
}

/// Mesh loss: per-frame point-set losses over vertices and joints, summed
/// over the sequence.
pub fn mesh_loss(kind: LossKind, pred: &[HandMesh], gt: &[HandMesh]) -> Result<Tensor> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "mesh_loss",
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    let mut total = Tensor::scalar(0.0);
    for (p, g) in pred.iter().zip(gt) {
        total = total
            .add(&point_set_loss(kind, &p.vertices, &g.vertices)?)?
            .add(&point_set_loss(kind, &p.joints, &g.joints)?)?;
    }
    Ok(total)
}

fn check_scores(op: &'static str, scores: &Tensor) -> Result<()> {
    if scores.data().iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::Domain {
            op,
            detail: "scores must lie in [0, 1]".into(),
        });
    }
    Ok(())
}

/// Generator side of the least-squares adversarial objective:
/// `mean((score - 1)^2)`. Bounded in [0, 1] for scores in [0, 1].
pub fn adv_generator_loss(scores_on_generated: &Tensor) -> Result<Tensor> {
    check_scores("adv_generator_loss", scores_on_generated)?;
    scores_on_generated.add_scalar(-1.0)?.powf(2.0)?.mean()
}

/// Discriminator objective: `mean(score_gen^2) + mean((score_real - 1)^2)`.
/// Bounded in [0, 2] for scores in [0, 1].
pub fn discriminator_loss(scores_gen: &Tensor, scores_real: &Tensor) -> Result<Tensor> {
    check_scores("discriminator_loss", scores_gen)?;
    check_scores("discriminator_loss", scores_real)?;
    let gen = scores_gen.powf(2.0)?.mean()?;
    let real = scores_real.add_scalar(-1.0)?.powf(2.0)?.mean()?;
    gen.add(&real)
}

/// Sum of squared pixel distances between predicted and re-projected
/// ground-truth 2D joints, `[N x 2]` each.
pub fn l2d(pred2d: &Tensor, gt2d: &Tensor) -> Result<Tensor> {
    if pred2d.shape() != gt2d.shape() {
        return Err(Error::ShapeMismatch {
            op: "l2d",
            lhs: pred2d.shape().to_vec(),
            rhs: gt2d.shape().to_vec(),
        });
    }
    pred2d.sub(gt2d)?.powf(2.0)?.sum()
}

/// Monocular supervision: the per-frame single-image parameter estimates
/// are pushed toward the ground truth both through the posed mesh and
/// directly in parameter space.
pub fn monocular_loss(
    kind: LossKind,
    mono_pose: &Tensor,
    mono_shape: &Tensor,
    gt_theta: &Array,
    gt_beta: &Array,
    gt_meshes: &[HandMesh],
    template: &KinematicTemplate,
) -> Result<Tensor> {
    let t_len = mono_pose.shape()[0];
    if mono_shape.shape()[0] != t_len || gt_meshes.len() != t_len || gt_theta.shape()[0] != t_len {
        return Err(Error::ShapeMismatch {
            op: "monocular_loss",
            lhs: vec![t_len],
            rhs: vec![gt_meshes.len()],
        });
    }
    let gt_beta_t = Tensor::from_array(gt_beta.clone());
    let mut total = Tensor::scalar(0.0);
    for t in 0..t_len {
        let pose_t = mono_pose.row(t)?;
        let shape_t = mono_shape.row(t)?;
        let mesh = hand_forward(&pose_t, &shape_t, template)?;
        let gt_pose_t = Tensor::from_vec(
            &[1, gt_theta.shape()[1]],
            gt_theta.data()[t * gt_theta.shape()[1]..(t + 1) * gt_theta.shape()[1]].to_vec(),
        )?;
        total = total
            .add(&point_set_loss(kind, &mesh.vertices, &gt_meshes[t].vertices)?)?
            .add(&point_set_loss(kind, &mesh.joints, &gt_meshes[t].joints)?)?
            .add(&vec_loss(kind, &pose_t, &gt_pose_t)?)?
            .add(&vec_loss(kind, &shape_t.reshape(&[gt_beta.len()])?, &gt_beta_t)?)?;
    }
    Ok(total)
}

/// What the deformed poses in the motion loss are compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionTarget {
    /// Ground-truth neighboring poses (default; well-posed target).
    GroundTruth,
    /// The model's own neighboring predictions.
    Prediction,
}

/// Motion consistency: the pose deformed one step forward (backward) must
/// match the next (previous) frame. Boundary directions are masked;
/// sequences shorter than two frames contribute nothing.
pub fn motion_loss(
    kind: LossKind,
    pred_poses: &Tensor,
    motion_fw: &Tensor,
    motion_bw: &Tensor,
    gt_poses: &Array,
    target: MotionTarget,
) -> Result<Tensor> {
    let t_len = pred_poses.shape()[0];
    let dim = pred_poses.shape()[1];
    if t_len < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    let gt_row = |t: usize| -> Result<Tensor> {
        Tensor::from_vec(&[1, dim], gt_poses.data()[t * dim..(t + 1) * dim].to_vec())
    };
    let mut total = Tensor::scalar(0.0);
    for t in 0..t_len {
        if t + 1 < t_len {
            let deformed = pred_poses.row(t)?.add(&motion_fw.row(t)?)?;
            let reference = match target {
                MotionTarget::GroundTruth => gt_row(t + 1)?,
                MotionTarget::Prediction => pred_poses.row(t + 1)?,
            };
            total = total.add(&vec_loss(kind, &deformed, &reference)?)?;
        }
        if t > 0 {
            let deformed = pred_poses.row(t)?.add(&motion_bw.row(t)?)?;
            let reference = match target {
                MotionTarget::GroundTruth => gt_row(t - 1)?,
                MotionTarget::Prediction => pred_poses.row(t - 1)?,
            };
            total = total.add(&vec_loss(kind, &deformed, &reference)?)?;
        }
    }
    Ok(total)
}

/// Smoothness: mean squared norm of the first and second temporal
/// differences of the fused pose sequence, weighted separately. Terms
/// vanish when the sequence is too short to form them.
pub fn smooth_loss(fused_poses: &Tensor, w_first: f64, w_second: f64) -> Result<Tensor> {
    let t_len = fused_poses.shape()[0];
    let mut total = Tensor::scalar(0.0);
    if t_len >= 2 && w_first != 0.0 {
        let d1 = fused_poses
            .narrow(0, 1, t_len - 1)?
            .sub(&fused_poses.narrow(0, 0, t_len - 1)?)?;
        let term = d1.powf(2.0)?.sum_axis(1)?.mean()?;
        total = total.add(&term.mul_scalar(w_first)?)?;
    }
    if t_len >= 3 && w_second != 0.0 {
        let d2 = fused_poses
            .narrow(0, 2, t_len - 2)?
            .sub(&fused_poses.narrow(0, 1, t_len - 2)?.mul_scalar(2.0)?)?
            .add(&fused_poses.narrow(0, 0, t_len - 2)?)?;
        let term = d2.powf(2.0)?.sum_axis(1)?.mean()?;
        total = total.add(&term.mul_scalar(w_second)?)?;
    }
    Ok(total)
}

/// Per-term combination weights; all default to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mesh: f64,
    pub adv: f64,
    pub l2d: f64,
    pub monocular: f64,
    pub motion: f64,
    pub smooth_first: f64,
    pub smooth_second: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mesh: 1.0,
            adv: 1.0,
            l2d: 1.0,
            monocular: 1.0,
            motion: 1.0,
            smooth_first: 1.0,
            smooth_second: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mesh,
            self.adv,
            self.l2d,
            self.monocular,
            self.motion,
            self.smooth_first,
            self.smooth_second,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted term tensors entering the total. `adv` is `None` when the
/// discriminator is disabled; `smooth` carries its sub-weights already.
pub struct LossTerms {
    pub mesh: Tensor,
    pub adv: Option<Tensor>,
    pub l2d: Tensor,
    pub monocular: Tensor,
    pub motion: Tensor,
    pub smooth: Tensor,
}

/// Itemized per-step record; `total` is the weighted combination actually
/// optimized and `disc` is filled in by the discriminator update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub mesh: f64,
    pub adv: f64,
    pub l2d: f64,
    pub monocular: f64,
    pub motion: f64,
    pub smooth: f64,
    pub total: f64,
    pub disc: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,mesh,adv,l2d,monocular,motion,smooth,total,disc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.step,
            self.mesh,
            self.adv,
            self.l2d,
            self.monocular,
            self.motion,
            self.smooth,
            self.total,
            self.disc
        )
    }
}

/// Weighted combination of all terms. Returns the scalar tensor to
/// backpropagate and the itemized report.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<(Tensor, LossReport)> {
    weights.validate()?;
    let adv_value = match &terms.adv {
        Some(t) => t.item()?,
        None => 0.0,
    };
    let mut total = terms.mesh.mul_scalar(weights.mesh)?;
    if let Some(adv) = &terms.adv {
        total = total.add(&adv.mul_scalar(weights.adv)?)?;
    }
    total = total
        .add(&terms.l2d.mul_scalar(weights.l2d)?)?
        .add(&terms.monocular.mul_scalar(weights.monocular)?)?
        .add(&terms.motion.mul_scalar(weights.motion)?)?
        .add(&terms.smooth)?;
    let report = LossReport {
        step: 0,
        mesh: terms.mesh.item()?,
        adv: adv_value,
        l2d: terms.l2d.item()?,
        monocular: terms.monocular.item()?,
        motion: terms.motion.item()?,
        smooth: terms.smooth.item()?,
        total: total.item()?,
        disc: 0.0,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use crate::tensor::finite_diff_check_multi;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_points(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array {
        Array::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
        )
        .unwrap()
    }

    /// Independent scalar evaluation of the weighted-error ratio.
    fn brute_force_max_mse(p: &[f64], q: &[f64], n: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let sq: f64 = (0..3)
                .map(|c| (p[i * 3 + c] - q[i * 3 + c]).powi(2))
                .sum();
            num += sq * sq;
            den += sq;
        }
        if den < 1e-12 {
            0.0
        } else {
            num / den
        }
    }

    #[test]
    fn identical_point_sets_give_zero() {
        let p = Tensor::from_vec(&[3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(max_mse(&p, &p).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn two_point_example_from_direct_evaluation() {
        // squared errors {2, 0}: maxMSE = (4 + 0)/(2 + 0) = 2 while MSE = 1
        let p = Tensor::from_vec(&[2, 3], vec![1., 1., 0., 0., 0., 0.]).unwrap();
        let q = Tensor::zeros(&[2, 3]);
        assert!((max_mse(&p, &q).unwrap().item().unwrap() - 2.0).abs() < 1e-12);
        let mse = point_set_loss(LossKind::Mse, &p, &q).unwrap().item().unwrap();
        assert!((mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_per_point_errors_collapse_to_mse() {
        // all squared errors d: maxMSE = d = MSE
        let d = 2.89f64;
        let offset = (d / 3.0).sqrt();
        let p = Tensor::zeros(&[4, 3]);
        let q = Tensor::filled(&[4, 3], offset);
        let a = max_mse(&p, &q).unwrap().item().unwrap();
        let b = point_set_loss(LossKind::Mse, &p, &q).unwrap().item().unwrap();
        assert!((a - d).abs() < 1e-12);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_and_dominates_mse() {
        let mut rng = derive_rng(51, &[1]);
        for _ in 0..200 {
            let n = rng.gen_range(2..50);
            let p = rand_points(n, &mut rng);
            let q = rand_points(n, &mut rng);
            let got = max_mse(&Tensor::from_array(p.clone()), &Tensor::from_array(q.clone()))
                .unwrap()
                .item()
                .unwrap();
            let expect = brute_force_max_mse(p.data(), q.data(), n);
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            let mse = point_set_loss(
                LossKind::Mse,
                &Tensor::from_array(p),
                &Tensor::from_array(q),
            )
            .unwrap()
            .item()
            .unwrap();
            assert!(got >= mse * (1.0 - 1e-12));
        }
    }

    proptest! {
        #[test]
        fn maxmse_dominates_mse_and_weights_are_normalized(
            values in proptest::collection::vec(-100.0f64..100.0, 6..60)
        ) {
            let n = values.len() / 6;
            let p: Vec<f64> = values[..n * 3].to_vec();
            let q: Vec<f64> = values[n * 3..n * 6].to_vec();
            let pt = Tensor::from_vec(&[n, 3], p.clone()).unwrap();
            let qt = Tensor::from_vec(&[n, 3], q.clone()).unwrap();
            let maxmse = max_mse(&pt, &qt).unwrap().item().unwrap();
            let mse = point_set_loss(LossKind::Mse, &pt, &qt).unwrap().item().unwrap();
            prop_assert!(maxmse >= mse * (1.0 - 1e-12));
            // implicit weights w_i = sq_i / sum sq_j sum to 1 when not
            // in the zero-error branch
            let sq: Vec<f64> = (0..n)
                .map(|i| (0..3).map(|c| (p[i*3+c]-q[i*3+c]).powi(2)).sum())
                .collect();
            let den: f64 = sq.iter().sum();
            if den > 1e-12 {
                let wsum: f64 = sq.iter().map(|s| s / den).sum();
                prop_assert!((wsum - 1.0).abs() < 1e-12);
                // and the weighted form reproduces the ratio form
                let weighted: f64 = sq.iter().map(|s| (s / den) * s).sum();
                prop_assert!((weighted - maxmse).abs() <= 1e-9 * maxmse.abs().max(1.0));
            }
        }
    }

    #[test]
    fn maxmse_is_permutation_invariant() {
        let mut rng = derive_rng(52, &[2]);
        let p = rand_points(6, &mut rng);
        let q = rand_points(6, &mut rng);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permute = |a: &Array| {
            let mut out = vec![0.0; 18];
            for (dst, &src) in perm.iter().enumerate() {
                out[dst * 3..dst * 3 + 3].copy_from_slice(&a.data()[src * 3..src * 3 + 3]);
            }
            Tensor::from_vec(&[6, 3], out).unwrap()
        };
        let a = max_mse(&Tensor::from_array(p.clone()), &Tensor::from_array(q.clone()))
            .unwrap()
            .item()
            .unwrap();
        let b = max_mse(&permute(&p), &permute(&q)).unwrap().item().unwrap();
        // summation order differs under permutation; equal up to rounding
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn maxmse_vec_of_unit_error_vector_is_one() {
        let a = Tensor::filled(&[48], 1.0);
        let b = Tensor::zeros(&[48]);
        assert!((maxmse_vec(&a, &b).unwrap().item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_losses_match_direct_evaluation() {
        // generator: scores 1 -> 0, scores 0 -> 1, score 0.5 -> 0.25
        let ones = Tensor::filled(&[3], 1.0);
        assert_eq!(adv_generator_loss(&ones).unwrap().item().unwrap(), 0.0);
        let zeros = Tensor::zeros(&[3]);
        assert_eq!(adv_generator_loss(&zeros).unwrap().item().unwrap(), 1.0);
        let half = Tensor::scalar(0.5);
        assert_eq!(adv_generator_loss(&half).unwrap().item().unwrap(), 0.25);
        // discriminator: perfect -> 0, fully fooled -> 2, 0.5/0.5 -> 0.5
        assert_eq!(
            discriminator_loss(&zeros, &ones).unwrap().item().unwrap(),
            0.0
        );
        assert_eq!(
            discriminator_loss(&ones, &zeros).unwrap().item().unwrap(),
            2.0
        );
        assert_eq!(
            discriminator_loss(&half, &half).unwrap().item().unwrap(),
            0.5
        );
    }

    #[test]
    fn adversarial_losses_respect_bounds() {
        let mut rng = derive_rng(53, &[3]);
        for _ in 0..200 {
            let g = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
            let r = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
            let adv = adv_generator_loss(&g).unwrap().item().unwrap();
            let disc = discriminator_loss(&g, &r).unwrap().item().unwrap();
            assert!((0.0..=1.0).contains(&adv));
            assert!((0.0..=2.0).contains(&disc));
        }
        assert!(adv_generator_loss(&Tensor::scalar(1.5)).is_err());
    }

    #[test]
    fn l2d_matches_pixel_arithmetic() {
        let gt = Tensor::zeros(&[21, 2]);
        let mut pred = vec![0.0; 42];
        pred[10] = 3.0; // joint 5 offset by (3, 4)
        pred[11] = 4.0;
        let pred = Tensor::from_vec(&[21, 2], pred).unwrap();
        assert_eq!(l2d(&pred, &gt).unwrap().item().unwrap(), 25.0);
        assert_eq!(l2d(&gt, &gt).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn l2d_is_invariant_to_joint_reordering() {
        let mut rng = derive_rng(54, &[4]);
        let a: Vec<f64> = (0..42).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..42).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let base = l2d(
            &Tensor::from_vec(&[21, 2], a.clone()).unwrap(),
            &Tensor::from_vec(&[21, 2], b.clone()).unwrap(),
        )
        .unwrap()
        .item()
        .unwrap();
        // reverse both
        let rev = |v: &[f64]| -> Vec<f64> {
            (0..21)
                .rev()
                .flat_map(|j| v[j * 2..j * 2 + 2].to_vec())
                .collect()
        };
        let swapped = l2d(
            &Tensor::from_vec(&[21, 2], rev(&a)).unwrap(),
            &Tensor::from_vec(&[21, 2], rev(&b)).unwrap(),
        )
        .unwrap()
        .item()
        .unwrap();
        assert!((base - swapped).abs() < 1e-12);
    }

    #[test]
    fn smooth_loss_closed_forms() {
        // constant sequence -> 0
        let x = Tensor::filled(&[5, 48], 0.7);
        assert_eq!(smooth_loss(&x, 1.0, 1.0).unwrap().item().unwrap(), 0.0);
        // linear sequence: second order vanishes, first order = ||v||^2
        let mut rng = derive_rng(55, &[5]);
        let v: Vec<f64> = (0..48).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let data: Vec<f64> = (0..5)
            .flat_map(|t| v.iter().map(move |c| t as f64 * c))
            .collect();
        let x = Tensor::from_vec(&[5, 48], data).unwrap();
        let norm2: f64 = v.iter().map(|c| c * c).sum();
        let first_only = smooth_loss(&x, 1.0, 0.0).unwrap().item().unwrap();
        let both = smooth_loss(&x, 1.0, 1.0).unwrap().item().unwrap();
        assert!((first_only - norm2).abs() < 1e-12);
        assert!((both - norm2).abs() < 1e-12);
    }

    #[test]
    fn smooth_loss_matches_direct_differencing() {
        let mut rng = derive_rng(56, &[6]);
        let data: Vec<f64> = (0..4 * 48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[4, 48], data.clone()).unwrap();
        let (w1, w2) = (0.4, 1.7);
        let got = smooth_loss(&x, w1, w2).unwrap().item().unwrap();
        let mut first = 0.0;
        for t in 0..3 {
            for c in 0..48 {
                first += (data[(t + 1) * 48 + c] - data[t * 48 + c]).powi(2);
            }
        }
        first /= 3.0;
        let mut second = 0.0;
        for t in 1..3 {
            for c in 0..48 {
                second += (data[(t + 1) * 48 + c] - 2.0 * data[t * 48 + c]
                    + data[(t - 1) * 48 + c])
                    .powi(2);
            }
        }
        second /= 2.0;
        assert!((got - (w1 * first + w2 * second)).abs() < 1e-10);
    }

    #[test]
    fn smooth_loss_degenerate_lengths() {
        let x = Tensor::filled(&[1, 48], 0.3);
        assert_eq!(smooth_loss(&x, 1.0, 1.0).unwrap().item().unwrap(), 0.0);
        let x = Tensor::from_vec(&[2, 2], vec![0., 0., 1., 1.]).unwrap();
        // only the first-order term exists at T=2
        assert_eq!(smooth_loss(&x, 1.0, 1.0).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn motion_loss_zero_with_ground_truth_motions() {
        let mut rng = derive_rng(57, &[7]);
        let gt = Array::new(
            vec![4, 48],
            (0..4 * 48).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let (fw, bw) = crate::fusion::motion_targets(&gt).unwrap();
        let loss = motion_loss(
            LossKind::MaxMse,
            &Tensor::from_array(gt.clone()),
            &Tensor::from_array(fw),
            &Tensor::from_array(bw),
            &gt,
            MotionTarget::GroundTruth,
        )
        .unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn motion_loss_single_direction_error() {
        // T=2, forward error vector e at the first frame only
        let gt = Array::zeros(&[2, 48]);
        let poses = Tensor::zeros(&[2, 48]);
        let mut fw = vec![0.0; 2 * 48];
        let e = 0.3;
        fw[5] = e; // only component 5 of frame 0
        let fw = Tensor::from_vec(&[2, 48], fw).unwrap();
        // backward motion compensates exactly (gt constant): bw = 0
        let bw = Tensor::zeros(&[2, 48]);
        let loss = motion_loss(
            LossKind::MaxMse,
            &poses,
            &fw,
            &bw,
            &gt,
            MotionTarget::GroundTruth,
        )
        .unwrap()
        .item()
        .unwrap();
        // maxmse_vec of a vector with one nonzero component e: e^4/e^2 = e^2
        assert!((loss - e * e).abs() < 1e-12);
    }

    #[test]
    fn motion_loss_short_sequences_are_zero() {
        let gt = Array::zeros(&[1, 48]);
        let loss = motion_loss(
            LossKind::MaxMse,
            &Tensor::zeros(&[1, 48]),
            &Tensor::zeros(&[1, 48]),
            &Tensor::zeros(&[1, 48]),
            &gt,
            MotionTarget::GroundTruth,
        )
        .unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn total_loss_is_the_weighted_sum() {
        let terms = LossTerms {
            mesh: Tensor::scalar(1.0),
            adv: Some(Tensor::scalar(2.0)),
            l2d: Tensor::scalar(3.0),
            monocular: Tensor::scalar(4.0),
            motion: Tensor::scalar(5.0),
            smooth: Tensor::scalar(6.0),
        };
        let (total, report) = total_loss(&terms, &LossWeights::default()).unwrap();
        assert_eq!(total.item().unwrap(), 21.0);
        assert_eq!(report.total, 21.0);
        // doubling one weight adds that term's value again
        let weights = LossWeights {
            mesh: 2.0,
            ..LossWeights::default()
        };
        let (total2, _) = total_loss(&terms, &weights).unwrap();
        assert_eq!(total2.item().unwrap(), 22.0);
        // disabled adversarial term contributes nothing
        let no_adv = LossTerms {
            adv: None,
            ..LossTerms {
                mesh: Tensor::scalar(1.0),
                adv: None,
                l2d: Tensor::scalar(3.0),
                monocular: Tensor::scalar(4.0),
                motion: Tensor::scalar(5.0),
                smooth: Tensor::scalar(6.0),
            }
        };
        let (total3, report3) = total_loss(&no_adv, &LossWeights::default()).unwrap();
        assert_eq!(total3.item().unwrap(), 19.0);
        assert_eq!(report3.adv, 0.0);
        // negative weights are rejected
        let bad = LossWeights {
            mesh: -1.0,
            ..LossWeights::default()
        };
        assert!(total_loss(&terms, &bad).is_err());
    }

    #[test]
    fn report_total_is_consistent_within_1e12() {
        let mut rng = derive_rng(58, &[8]);
        for _ in 0..20 {
            let terms = LossTerms {
                mesh: Tensor::scalar(rng.gen_range(0.0..10.0)),
                adv: Some(Tensor::scalar(rng.gen_range(0.0..1.0))),
                l2d: Tensor::scalar(rng.gen_range(0.0..10.0)),
                monocular: Tensor::scalar(rng.gen_range(0.0..10.0)),
                motion: Tensor::scalar(rng.gen_range(0.0..10.0)),
                smooth: Tensor::scalar(rng.gen_range(0.0..10.0)),
            };
            let weights = LossWeights {
                mesh: rng.gen_range(0.0..2.0),
                adv: rng.gen_range(0.0..2.0),
                l2d: rng.gen_range(0.0..2.0),
                monocular: rng.gen_range(0.0..2.0),
                motion: rng.gen_range(0.0..2.0),
                smooth_first: 1.0,
                smooth_second: 1.0,
            };
            let (_, r) = total_loss(&terms, &weights).unwrap();
            let manual = weights.mesh * r.mesh
                + weights.adv * r.adv
                + weights.l2d * r.l2d
                + weights.monocular * r.monocular
                + weights.motion * r.motion
                + r.smooth;
            assert!((r.total - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradients_pass_finite_difference_checks() {
        let mut rng = derive_rng(59, &[9]);
        let p = rand_points(5, &mut rng);
        let q = rand_points(5, &mut rng);
        // maxMSE away from the zero-error branch
        let qt = Tensor::from_array(q);
        let err = crate::tensor::finite_diff_check(
            |x| max_mse(x, &qt),
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max_mse rel err {err}");
        // smooth loss
        let seq = Array::new(
            vec![4, 6],
            (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let err = crate::tensor::finite_diff_check(
            |x| smooth_loss(x, 0.7, 1.3),
            &seq,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "smooth rel err {err}");
        // adversarial generator loss through a sigmoid (keeps scores in range)
        let logits = Array::new(vec![3], vec![0.3, -0.2, 0.8]).unwrap();
        let err = finite_diff_check_multi(
            |xs| adv_generator_loss(&xs[0].sigmoid()?),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "adv rel err {err}");
    }
}
