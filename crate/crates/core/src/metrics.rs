//! Evaluation battery: Procrustes-aligned MPJPE, root-aligned MPJPE, PCK
//! AUC, mesh F-scores, acceleration error, and occlusion-stratified
//! reporting.
//!
//! Conventions: Procrustes alignment is the full similarity fit (rotation,
//! translation, uniform scale; reflections excluded). AUC integrates the
//! fraction of joints within threshold over 0..50 mm in 100 uniform steps
//! (trapezoidal, normalized by 50 mm). F-scores use index correspondence:
//! predicted vertex i pairs with ground-truth vertex i, so precision equals
//! recall and F is the fraction of vertices within the distance threshold.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::config::Config;
use crate::fusion::AggregationMode;
use crate::handmodel::JOINT_COUNT;
use crate::nn::Session;
use crate::synthdata::{occlusion_bucket, SequenceSample};
use crate::tensor::Array;
use crate::training::{prepare, run_generator, Models};
use crate::{Error, Result};

/// AUC threshold sweep: 0..=50 mm in 100 uniform steps.
const AUC_MAX_MM: f64 = 50.0;
const AUC_STEPS: usize = 100;

fn check_points(op: &'static str, a: &Array, b: &Array) -> Result<usize> {
    if a.shape() != b.shape() || a.shape().len() != 2 || a.shape()[1] != 3 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(a.shape()[0])
}

/// Least-squares similarity alignment of `pred` onto `gt` (Kabsch-Umeyama,
/// determinant forced positive). Returns the aligned prediction.
pub fn procrustes_align(pred: &Array, gt: &Array) -> Result<Array> {
    let n = check_points("procrustes_align", pred, gt)?;
    if n < 3 {
        return Err(Error::Degenerate(
            "procrustes alignment needs at least 3 points".into(),
        ));
    }
    let nf = n as f64;
    let centroid = |a: &Array| -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in a.data().chunks(3) {
            c += Vector3::new(p[0], p[1], p[2]);
        }
        c / nf
    };
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);

    // cross-covariance (gt x pred) and source variance
    let mut sigma = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.data().chunks(3).zip(gt.data().chunks(3)) {
        let dp = Vector3::new(p[0], p[1], p[2]) - mu_p;
        let dg = Vector3::new(g[0], g[1], g[2]) - mu_g;
        sigma += dg * dp.transpose() / nf;
        var_p += dp.norm_squared() / nf;
    }
    if var_p < 1e-12 {
        return Err(Error::Degenerate(
            "prediction collapses to a single point".into(),
        ));
    }
    let svd = sigma.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let singular = svd.singular_values;
    if singular[1] < 1e-12 * singular[0].max(1e-12) {
        return Err(Error::Degenerate(
            "point sets are collinear; rotation is not unique".into(),
        ));
    }
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = (singular[0] * s[(0, 0)] + singular[1] * s[(1, 1)] + singular[2] * s[(2, 2)])
        / var_p;
    let translation = mu_g - rotation * mu_p * scale;

    let mut out = vec![0.0; n * 3];
    for (i, p) in pred.data().chunks(3).enumerate() {
        let v = rotation * Vector3::new(p[0], p[1], p[2]) * scale + translation;
        out[i * 3] = v[0];
        out[i * 3 + 1] = v[1];
        out[i * 3 + 2] = v[2];
    }
    Array::new(vec![n, 3], out)
}

/// Mean Euclidean distance between corresponding points, mm.
pub fn mpjpe(pred: &Array, gt: &Array) -> Result<f64> {
    let n = check_points("mpjpe", pred, gt)?;
    let sum: f64 = pred
        .data()
        .chunks(3)
        .zip(gt.data().chunks(3))
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / n as f64)
}

/// Per-point Euclidean distances, mm.
pub fn joint_errors(pred: &Array, gt: &Array) -> Result<Vec<f64>> {
    check_points("joint_errors", pred, gt)?;
    Ok(pred
        .data()
        .chunks(3)
        .zip(gt.data().chunks(3))
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .collect())
}

/// MPJPE after translating the prediction so the root joints coincide.
pub fn root_aligned_mpjpe(pred: &Array, gt: &Array, root_index: usize) -> Result<f64> {
    let n = check_points("root_aligned_mpjpe", pred, gt)?;
    if root_index >= n {
        return Err(Error::InvalidAxis {
            axis: root_index,
            rank: n,
        });
    }
    let shifted = root_aligned(pred, gt, root_index)?;
    mpjpe(&shifted, gt)
}

/// Prediction translated so its root coincides with the ground-truth root.
pub fn root_aligned(pred: &Array, gt: &Array, root_index: usize) -> Result<Array> {
    let n = check_points("root_aligned", pred, gt)?;
    let offset: Vec<f64> = (0..3)
        .map(|c| gt.data()[root_index * 3 + c] - pred.data()[root_index * 3 + c])
        .collect();
    let mut out = pred.data().to_vec();
    for i in 0..n {
        for c in 0..3 {
            out[i * 3 + c] += offset[c];
        }
    }
    Array::new(vec![n, 3], out)
}

/// Area under the fraction-correct vs threshold curve, thresholds 0..=50 mm
/// in 100 uniform steps, trapezoidal, normalized to [0, 1].
pub fn pck_auc(errors_mm: &[f64]) -> Result<f64> {
    if errors_mm.is_empty() {
        return Err(Error::Domain {
            op: "pck_auc",
            detail: "no errors to integrate".into(),
        });
    }
    if errors_mm.iter().any(|e| *e < 0.0 || !e.is_finite()) {
        return Err(Error::Domain {
            op: "pck_auc",
            detail: "errors must be non-negative and finite".into(),
        });
    }
    let n = errors_mm.len() as f64;
    let pck = |threshold: f64| -> f64 {
        errors_mm.iter().filter(|e| **e <= threshold).count() as f64 / n
    };
    let dt = AUC_MAX_MM / AUC_STEPS as f64;
    let mut area = 0.0;
    for i in 0..AUC_STEPS {
        let a = pck(i as f64 * dt);
        let b = pck((i + 1) as f64 * dt);
        area += 0.5 * (a + b) * dt;
    }
    Ok(area / AUC_MAX_MM)
}

/// Index-matched F-score at a distance threshold: the fraction of vertex
/// pairs within `threshold_mm` (precision = recall under index
/// correspondence, so the harmonic mean collapses to the fraction itself).
pub fn f_score(pred_verts: &Array, gt_verts: &Array, threshold_mm: f64) -> Result<f64> {
    let n = check_points("f_score", pred_verts, gt_verts)?;
    let within = pred_verts
        .data()
        .chunks(3)
        .zip(gt_verts.data().chunks(3))
        .filter(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
                <= threshold_mm
        })
        .count();
    Ok(within as f64 / n as f64)
}

/// Mean norm of the difference between predicted and ground-truth second
/// central differences (acceleration), mm/s^2. Sequences are `[T x N x 3]`
/// passed as per-frame `[N x 3]` arrays.
pub fn accel_error(pred_seq: &[Array], gt_seq: &[Array], dt_seconds: f64) -> Result<f64> {
    if pred_seq.len() != gt_seq.len() {
        return Err(Error::ShapeMismatch {
            op: "accel_error",
            lhs: vec![pred_seq.len()],
            rhs: vec![gt_seq.len()],
        });
    }
    if pred_seq.len() < 3 {
        return Err(Error::Domain {
            op: "accel_error",
            detail: "needs at least 3 frames".into(),
        });
    }
    if dt_seconds <= 0.0 {
        return Err(Error::Domain {
            op: "accel_error",
            detail: "frame spacing must be positive".into(),
        });
    }
    let n = check_points("accel_error", &pred_seq[0], &gt_seq[0])?;
    let dt2 = dt_seconds * dt_seconds;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..pred_seq.len() - 1 {
        for j in 0..n {
            let mut diff_sq = 0.0;
            for c in 0..3 {
                let idx = j * 3 + c;
                let ap = (pred_seq[t + 1].data()[idx] - 2.0 * pred_seq[t].data()[idx]
                    + pred_seq[t - 1].data()[idx])
                    / dt2;
                let ag = (gt_seq[t + 1].data()[idx] - 2.0 * gt_seq[t].data()[idx]
                    + gt_seq[t - 1].data()[idx])
                    / dt2;
                diff_sq += (ap - ag) * (ap - ag);
            }
            total += diff_sq.sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

/// Metrics for one occlusion bucket (or the whole set).
#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricBlock {
    pub frames: usize,
    pub mpjpe_mm: f64,
    pub root_aligned_mpjpe_mm: f64,
    pub auc: f64,
    pub f_at_5: f64,
    pub f_at_15: f64,
    /// absent when the bucket holds no interior frames.
    pub accel_error_mm_s2: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub mode: String,
    pub sequences: usize,
    pub frames: usize,
    pub mpjpe_mm: f64,
    pub root_aligned_mpjpe_mm: f64,
    pub auc: f64,
    pub f_at_5: f64,
    pub f_at_15: f64,
    pub accel_error_mm_s2: f64,
    /// occlusion buckets [0,25) [25,50) [50,75) [75,100] %; `None` where a
    /// bucket received no frames.
    pub buckets: Vec<Option<MetricBlock>>,
    /// mean Procrustes-aligned error per joint, mm.
    pub per_joint_mpjpe: Vec<f64>,
    /// per-joint standard deviation of the error across frames, mm.
    pub per_joint_std: Vec<f64>,
    /// standard deviation of `per_joint_mpjpe` across the 21 joints — the
    /// error-balance figure the weighted loss is meant to shrink.
    pub joint_balance_std: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mode,sequences,frames,mpjpe_mm,root_aligned_mpjpe_mm,auc,f_at_5,f_at_15,accel_error_mm_s2,joint_balance_std";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.mode,
            self.sequences,
            self.frames,
            self.mpjpe_mm,
            self.root_aligned_mpjpe_mm,
            self.auc,
            self.f_at_5,
            self.f_at_15,
            self.accel_error_mm_s2,
            self.joint_balance_std
        )
    }

    /// One row per joint: index, mean error, std.
    pub fn per_joint_csv(&self) -> String {
        let mut out = String::from("joint,mpjpe_mm,std_mm\n");
        for (j, (m, s)) in self
            .per_joint_mpjpe
            .iter()
            .zip(&self.per_joint_std)
            .enumerate()
        {
            out.push_str(&format!("{j},{m:.6},{s:.6}\n"));
        }
        out
    }
}

struct FrameStats {
    occlusion: f64,
    joint_errors: Vec<f64>,
    root_aligned_mpjpe: f64,
    f5: f64,
    f15: f64,
}

/// Runs inference over the test set under one aggregation mode and computes
/// the full metric battery with occlusion stratification.
pub fn evaluate(
    models: &Models,
    samples: &[SequenceSample],
    mode: AggregationMode,
) -> Result<EvalReport> {
    evaluate_with_config(models, samples, mode, &models.config)
}

fn evaluate_with_config(
    models: &Models,
    samples: &[SequenceSample],
    mode: AggregationMode,
    config: &Config,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Domain {
            op: "evaluate",
            detail: "empty evaluation set".into(),
        });
    }
    let prepared = prepare(samples, &models.template)?;
    let dt = config.frame_dt();

    let mut frames: Vec<FrameStats> = Vec::new();
    let mut accel_all: Vec<f64> = Vec::new();
    // per-bucket acceleration: second difference at frame t belongs to the
    // bucket of frame t's occlusion
    let mut accel_by_bucket: [Vec<f64>; 4] = Default::default();

    for prep in &prepared {
        let session = Session::eval(&models.gen_store);
        let fwd = run_generator(models, &session, prep, mode)?;
        let t_len = prep.sample.grids.len();
        let mut pred_joints: Vec<Array> = Vec::with_capacity(t_len);
        let gt_joints: Vec<Array> = prep.gt_meshes.iter().map(|m| m.joints.to_array()).collect();
        for t in 0..t_len {
            let pj = fwd.meshes[t].joints.to_array();
            let gj = &gt_joints[t];
            let aligned = procrustes_align(&pj, gj)?;
            let errors = joint_errors(&aligned, gj)?;
            let pv = fwd.meshes[t].vertices.to_array();
            let gv = prep.gt_meshes[t].vertices.to_array();
            let av = procrustes_align(&pv, &gv)?;
            frames.push(FrameStats {
                occlusion: prep.sample.occlusion[t],
                root_aligned_mpjpe: root_aligned_mpjpe(&pj, gj, 0)?,
                f5: f_score(&av, &gv, 5.0)?,
                f15: f_score(&av, &gv, 15.0)?,
                joint_errors: errors,
            });
            pred_joints.push(pj);
        }
        if t_len >= 3 {
            // per-frame acceleration diffs for stratification
            for t in 1..t_len - 1 {
                let window_pred = &pred_joints[t - 1..=t + 1];
                let window_gt = &gt_joints[t - 1..=t + 1];
                let a = accel_error(window_pred, window_gt, dt)?;
                accel_all.push(a);
                accel_by_bucket[occlusion_bucket(prep.sample.occlusion[t])].push(a);
            }
        }
    }

    let block = |subset: &[&FrameStats], accel: Option<&[f64]>| -> Result<MetricBlock> {
        let n = subset.len();
        let all_errors: Vec<f64> = subset
            .iter()
            .flat_map(|f| f.joint_errors.iter().copied())
            .collect();
        Ok(MetricBlock {
            frames: n,
            mpjpe_mm: all_errors.iter().sum::<f64>() / all_errors.len() as f64,
            root_aligned_mpjpe_mm: subset.iter().map(|f| f.root_aligned_mpjpe).sum::<f64>()
                / n as f64,
            auc: pck_auc(&all_errors)?,
            f_at_5: subset.iter().map(|f| f.f5).sum::<f64>() / n as f64,
            f_at_15: subset.iter().map(|f| f.f15).sum::<f64>() / n as f64,
            accel_error_mm_s2: accel
                .filter(|a| !a.is_empty())
                .map(|a| a.iter().sum::<f64>() / a.len() as f64),
        })
    };

    let all_refs: Vec<&FrameStats> = frames.iter().collect();
    let overall = block(&all_refs, Some(&accel_all))?;

    let mut buckets = Vec::with_capacity(4);
    for b in 0..4 {
        let subset: Vec<&FrameStats> = frames
            .iter()
            .filter(|f| occlusion_bucket(f.occlusion) == b)
            .collect();
        if subset.is_empty() {
            buckets.push(None);
        } else {
            buckets.push(Some(block(&subset, Some(&accel_by_bucket[b]))?));
        }
    }

    // per-joint statistics over Procrustes-aligned errors
    let mut per_joint_mpjpe = vec![0.0; JOINT_COUNT];
    let mut per_joint_std = vec![0.0; JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let vals: Vec<f64> = frames.iter().map(|f| f.joint_errors[j]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        per_joint_mpjpe[j] = mean;
        per_joint_std[j] = var.sqrt();
    }
    let balance_mean = per_joint_mpjpe.iter().sum::<f64>() / JOINT_COUNT as f64;
    let joint_balance_std = (per_joint_mpjpe
        .iter()
        .map(|m| (m - balance_mean).powi(2))
        .sum::<f64>()
        / JOINT_COUNT as f64)
        .sqrt();

    Ok(EvalReport {
        mode: mode.name().to_string(),
        sequences: samples.len(),
        frames: frames.len(),
        mpjpe_mm: overall.mpjpe_mm,
        root_aligned_mpjpe_mm: overall.root_aligned_mpjpe_mm,
        auc: overall.auc,
        f_at_5: overall.f_at_5,
        f_at_15: overall.f_at_15,
        accel_error_mm_s2: overall.accel_error_mm_s2.unwrap_or(0.0),
        buckets,
        per_joint_mpjpe,
        per_joint_std,
        joint_balance_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use rand::Rng;

    fn rand_points(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array {
        Array::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.gen_range(-80.0..80.0)).collect(),
        )
        .unwrap()
    }

    fn apply_similarity(
        points: &Array,
        angle: f64,
        axis: [f64; 3],
        scale: f64,
        shift: [f64; 3],
    ) -> Array {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let k = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
        let (c, s) = (angle.cos(), angle.sin());
        let rot = |p: &[f64]| -> [f64; 3] {
            // Rodrigues rotation of a point
            let dot = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
            let cross = [
                k[1] * p[2] - k[2] * p[1],
                k[2] * p[0] - k[0] * p[2],
                k[0] * p[1] - k[1] * p[0],
            ];
            [
                p[0] * c + cross[0] * s + k[0] * dot * (1.0 - c),
                p[1] * c + cross[1] * s + k[1] * dot * (1.0 - c),
                p[2] * c + cross[2] * s + k[2] * dot * (1.0 - c),
            ]
        };
        let out: Vec<f64> = points
            .data()
            .chunks(3)
            .flat_map(|p| {
                let r = rot(p);
                [
                    scale * r[0] + shift[0],
                    scale * r[1] + shift[1],
                    scale * r[2] + shift[2],
                ]
            })
            .collect();
        Array::new(points.shape().to_vec(), out).unwrap()
    }

    #[test]
    fn procrustes_recovers_a_known_similarity_exactly() {
        let mut rng = derive_rng(61, &[1]);
        let gt = rand_points(21, &mut rng);
        // pred = known transform of gt; alignment must remove it completely
        let pred = apply_similarity(
            &gt,
            37f64.to_radians(),
            [0.2, -0.9, 0.4],
            1.3,
            [55.0, -20.0, 140.0],
        );
        let aligned = procrustes_align(&pred, &gt).unwrap();
        assert!(mpjpe(&aligned, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn procrustes_is_idempotent() {
        let mut rng = derive_rng(62, &[2]);
        let gt = rand_points(21, &mut rng);
        let pred = rand_points(21, &mut rng);
        let once = procrustes_align(&pred, &gt).unwrap();
        let twice = procrustes_align(&once, &gt).unwrap();
        let a = mpjpe(&once, &gt).unwrap();
        let b = mpjpe(&twice, &gt).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn procrustes_rejects_degenerate_inputs() {
        let gt = Array::new(vec![2, 3], vec![0.; 6]).unwrap();
        let pred = Array::new(vec![2, 3], vec![0.; 6]).unwrap();
        assert!(procrustes_align(&pred, &gt).is_err());
        // collinear ground truth
        let line: Vec<f64> = (0..5).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
        let gt = Array::new(vec![5, 3], line.clone()).unwrap();
        let pred = Array::new(vec![5, 3], line).unwrap();
        assert!(procrustes_align(&pred, &gt).is_err());
    }

    #[test]
    fn alignment_hierarchy_is_monotone() {
        // Procrustes optimizes summed squared error over a transform class
        // containing both the identity and the root-pinning translation, so
        // its squared residual never exceeds either. (Root pinning itself is
        // a convention, not an optimization; it only dominates the raw error
        // when the roots coincide, which is the case for all wrist-rooted
        // outputs of this pipeline.)
        let sum_sq = |a: &Array, b: &Array| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        let mut rng = derive_rng(63, &[3]);
        for trial in 0..100 {
            let gt = rand_points(21, &mut rng);
            let pred = Array::new(
                vec![21, 3],
                gt.data()
                    .iter()
                    .map(|v| v + rng.gen_range(-20.0..20.0))
                    .collect(),
            )
            .unwrap();
            let aligned = procrustes_align(&pred, &gt).unwrap();
            let rooted = root_aligned(&pred, &gt, 0).unwrap();
            let pa = sum_sq(&aligned, &gt);
            assert!(pa <= sum_sq(&rooted, &gt) + 1e-9, "trial {trial}");
            assert!(pa <= sum_sq(&pred, &gt) + 1e-9, "trial {trial}");
        }
        // wrist-rooted instances (both roots at the origin): root alignment
        // is the identity, so the full MPJPE chain holds
        for trial in 0..100 {
            let mut gt = rand_points(21, &mut rng);
            let mut pred = rand_points(21, &mut rng);
            gt.data_mut()[..3].fill(0.0);
            pred.data_mut()[..3].fill(0.0);
            let raw = mpjpe(&pred, &gt).unwrap();
            let root = root_aligned_mpjpe(&pred, &gt, 0).unwrap();
            assert!((root - raw).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn mpjpe_closed_forms() {
        let gt = Array::zeros(&[4, 3]);
        let pred = Array::new(vec![4, 3], [3.0, 0.0, 4.0].repeat(4)).unwrap();
        assert!((mpjpe(&pred, &gt).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn root_alignment_removes_translation_only() {
        let mut rng = derive_rng(64, &[4]);
        let gt = rand_points(21, &mut rng);
        let shifted = Array::new(
            vec![21, 3],
            gt.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + [7.0, -3.0, 11.0][i % 3])
                .collect(),
        )
        .unwrap();
        assert!(root_aligned_mpjpe(&shifted, &gt, 0).unwrap() < 1e-12);
        // rotation is not removed
        let rotated = apply_similarity(&gt, 0.5, [0.0, 0.0, 1.0], 1.0, [0.0; 3]);
        assert!(root_aligned_mpjpe(&rotated, &gt, 0).unwrap() > 1.0);
    }

    #[test]
    fn auc_limits_and_midpoint() {
        assert!((pck_auc(&[0.0; 10]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pck_auc(&[60.0, 200.0]).unwrap(), 0.0);
        // single error at 25 mm: the step function integrates to one half,
        // up to one trapezoid of width 0.5 mm
        let auc = pck_auc(&[25.0]).unwrap();
        assert!((auc - 0.5).abs() <= 0.5 / 50.0 + 1e-12, "auc {auc}");
        assert!(pck_auc(&[]).is_err());
        assert!(pck_auc(&[-1.0]).is_err());
    }

    #[test]
    fn auc_is_monotone_in_each_error() {
        let mut rng = derive_rng(65, &[5]);
        for _ in 0..50 {
            let mut errors: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..60.0)).collect();
            let base = pck_auc(&errors).unwrap();
            let idx = rng.gen_range(0..errors.len());
            errors[idx] += rng.gen_range(0.0..30.0);
            let bumped = pck_auc(&errors).unwrap();
            assert!(bumped <= base + 1e-12);
        }
    }

    #[test]
    fn f_score_thresholds_straddle() {
        let gt = Array::zeros(&[10, 3]);
        assert_eq!(f_score(&gt, &gt, 5.0).unwrap(), 1.0);
        let off = Array::new(vec![10, 3], [10.0, 0.0, 0.0].repeat(10)).unwrap();
        assert_eq!(f_score(&off, &gt, 5.0).unwrap(), 0.0);
        assert_eq!(f_score(&off, &gt, 15.0).unwrap(), 1.0);
    }

    #[test]
    fn f_score_matches_brute_force_counting() {
        let mut rng = derive_rng(66, &[6]);
        for _ in 0..100 {
            let gt = rand_points(50, &mut rng);
            let pred = Array::new(
                vec![50, 3],
                gt.data()
                    .iter()
                    .map(|v| v + rng.gen_range(-10.0..10.0))
                    .collect(),
            )
            .unwrap();
            let threshold = rng.gen_range(1.0..20.0);
            let got = f_score(&pred, &gt, threshold).unwrap();
            let mut count = 0;
            for i in 0..50 {
                let d: f64 = (0..3)
                    .map(|c| (pred.data()[i * 3 + c] - gt.data()[i * 3 + c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= threshold {
                    count += 1;
                }
            }
            assert!((got - count as f64 / 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn accel_error_closed_forms() {
        let mut rng = derive_rng(67, &[7]);
        let gt: Vec<Array> = (0..5).map(|_| rand_points(21, &mut rng)).collect();
        // identical -> 0
        assert_eq!(accel_error(&gt, &gt, 1.0 / 3.0).unwrap(), 0.0);
        // constant offset cancels in second differences
        let shifted: Vec<Array> = gt
            .iter()
            .map(|a| {
                Array::new(vec![21, 3], a.data().iter().map(|v| v + 13.0).collect()).unwrap()
            })
            .collect();
        assert!(accel_error(&shifted, &gt, 1.0 / 3.0).unwrap() < 1e-12);
        // pred = gt + t^2 * (1, 0, 0) with dt = 1: error exactly 2 mm/s^2
        let quad: Vec<Array> = gt
            .iter()
            .enumerate()
            .map(|(t, a)| {
                let mut d = a.data().to_vec();
                for j in 0..21 {
                    d[j * 3] += (t * t) as f64;
                }
                Array::new(vec![21, 3], d).unwrap()
            })
            .collect();
        assert!((accel_error(&quad, &gt, 1.0).unwrap() - 2.0).abs() < 1e-9);
        // affine-in-t additions to both sides vanish
        let affine = |seq: &[Array]| -> Vec<Array> {
            seq.iter()
                .enumerate()
                .map(|(t, a)| {
                    let mut d = a.data().to_vec();
                    for v in d.iter_mut() {
                        *v += 3.0 + 2.0 * t as f64;
                    }
                    Array::new(vec![21, 3], d).unwrap()
                })
                .collect()
        };
        let base = accel_error(&quad, &gt, 1.0).unwrap();
        let both = accel_error(&affine(&quad), &affine(&gt), 1.0).unwrap();
        assert!((base - both).abs() < 1e-9);
        // too-short sequences are rejected
        assert!(accel_error(&gt[..2], &gt[..2], 1.0).is_err());
    }

    #[test]
    fn default_frame_spacing_is_a_third_of_a_second() {
        let config = Config::desk();
        assert!((config.frame_dt() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_scores_oracle_predictions_as_perfect() {
        // inject ground truth as the prediction by fusing ground-truth
        // poses: evaluate a model whose outputs we overwrite is equivalent
        // to checking the metric plumbing end to end, so instead compute
        // the report for gt meshes directly through the metric battery
        let mut config = Config::desk();
        config.train_sequences = 1;
        config.test_sequences = 2;
        config.grid_h = 8;
        config.grid_w = 8;
        config.grid_c = 4;
        config.model_dim = 8;
        config.heads = 2;
        config.ffn_dim = 16;
        config.t_len = 4;
        let (_, test) = crate::synthdata::generate_splits(&config).unwrap();
        let models = Models::new(&config).unwrap();
        let prepared = prepare(&test, &models.template).unwrap();
        // oracle: per-frame gt joints vs themselves
        for prep in &prepared {
            for mesh in &prep.gt_meshes {
                let j = mesh.joints.to_array();
                let aligned = procrustes_align(&j, &j).unwrap();
                assert!(mpjpe(&aligned, &j).unwrap() < 1e-9);
                assert_eq!(f_score(&j, &j, 5.0).unwrap(), 1.0);
            }
        }
        // and the full evaluate pipeline runs with an untrained model
        let report = evaluate(&models, &test, AggregationMode::Dynamic).unwrap();
        assert_eq!(report.frames, 2 * config.t_len);
        assert_eq!(
            report
                .buckets
                .iter()
                .flatten()
                .map(|b| b.frames)
                .sum::<usize>(),
            report.frames
        );
        assert_eq!(report.per_joint_mpjpe.len(), JOINT_COUNT);
        // deterministic across repeated runs
        let again = evaluate(&models, &test, AggregationMode::Dynamic).unwrap();
        assert_eq!(report.mpjpe_mm, again.mpjpe_mm);
        assert_eq!(report.auc, again.auc);
    }
}
