//! Cross-frame pose fusion.
//!
//! Per-frame predictions carry a pose, forward/backward motion deltas, and a
//! confidence logit. Motions deform any frame's pose onto any other
//! timestamp by summing the per-step deltas along the way; the fused pose at
//! a timestamp is a weighted sum of all frames' deformed candidates.
//!
//! Deformation is componentwise addition in axis-angle parameter space. The
//! synthetic trajectories keep per-step deltas small, which is the regime
//! where that additive composition is valid.
//!
//! Index convention for the backward direction: stepping from frame `k` to
//! `k-1` applies the backward delta *of frame k* (`bw_k = theta_{k-1} -
//! theta_k`), so the deformation from `i` down to `j` sums `bw` over
//! `k = j+1 ..= i`. With ground-truth motions the sums telescope exactly to
//! the target frame's pose in both directions.

use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

/// How per-frame candidates are combined into the final pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationMode {
    /// No fusion: the frame's own prediction.
    Center,
    /// Uniform average of deformed candidates.
    Average,
    /// Externally supplied non-negative weights (e.g. visibility).
    WeightedExternal,
    /// Softmax over learned confidence logits.
    Dynamic,
}

impl AggregationMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "center" => Ok(Self::Center),
            "average" => Ok(Self::Average),
            "weighted-occlusion" => Ok(Self::WeightedExternal),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(Error::Config(format!(
                "unknown aggregation mode '{other}' (expected center|average|weighted-occlusion|dynamic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Center => "center",
            Self::Average => "average",
            Self::WeightedExternal => "weighted-occlusion",
            Self::Dynamic => "dynamic",
        }
    }

    pub const ALL: [AggregationMode; 4] = [
        Self::Center,
        Self::Average,
        Self::WeightedExternal,
        Self::Dynamic,
    ];
}

/// Ground-truth motion targets from a pose sequence `[T x D]`:
/// `fw_t = theta_{t+1} - theta_t`, `bw_t = theta_{t-1} - theta_t`, boundary
/// entries zero (and masked out of the motion loss).
pub fn motion_targets(gt_poses: &Array) -> Result<(Array, Array)> {
    let shape = gt_poses.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "motion_targets",
            lhs: shape.to_vec(),
            rhs: vec![0, 0],
        });
    }
    let (t_len, dim) = (shape[0], shape[1]);
    let x = gt_poses.data();
    let mut fw = vec![0.0; t_len * dim];
    let mut bw = vec![0.0; t_len * dim];
    for t in 0..t_len {
        for d in 0..dim {
            if t + 1 < t_len {
                fw[t * dim + d] = x[(t + 1) * dim + d] - x[t * dim + d];
            }
            if t > 0 {
                bw[t * dim + d] = x[(t - 1) * dim + d] - x[t * dim + d];
            }
        }
    }
    Ok((
        Array::new(shape.to_vec(), fw)?,
        Array::new(shape.to_vec(), bw)?,
    ))
}

fn check_frame(op: &'static str, t_len: usize, idx: usize) -> Result<()> {
    if idx >= t_len {
        Err(Error::Domain {
            op,
            detail: format!("frame {idx} out of range for sequence length {t_len}"),
        })
    } else {
        Ok(())
    }
}

/// Deform frame `source`'s pose onto timestamp `target` by accumulating
/// motion deltas; returns `[1 x D]`.
pub fn deform(
    poses: &Tensor,
    motion_fw: &Tensor,
    motion_bw: &Tensor,
    source: usize,
    target: usize,
) -> Result<Tensor> {
    let t_len = poses.shape()[0];
    check_frame("deform", t_len, source)?;
    check_frame("deform", t_len, target)?;
    let mut pose = poses.row(source)?;
    use std::cmp::Ordering;
    match target.cmp(&source) {
        Ordering::Equal => {}
        Ordering::Greater => {
            for k in source..target {
                pose = pose.add(&motion_fw.row(k)?)?;
            }
        }
        Ordering::Less => {
            for k in (target + 1)..=source {
                pose = pose.add(&motion_bw.row(k)?)?;
            }
        }
    }
    Ok(pose)
}

/// Normalized fusion weights for a mode, shared across all target
/// timestamps; `[1 x T]`.
fn fusion_weights(
    confidence: &Tensor,
    t_len: usize,
    mode: AggregationMode,
    external: Option<&[f64]>,
) -> Result<Tensor> {
    match mode {
        AggregationMode::Center => unreachable!("center mode bypasses weighting"),
        AggregationMode::Dynamic => confidence.reshape(&[1, t_len])?.softmax(1),
        AggregationMode::Average => Ok(Tensor::filled(&[1, t_len], 1.0 / t_len as f64)),
        AggregationMode::WeightedExternal => {
            let w = external.ok_or_else(|| Error::Domain {
                op: "fuse",
                detail: "weighted-occlusion mode requires external weights".into(),
            })?;
            if w.len() != t_len {
                return Err(Error::ShapeMismatch {
                    op: "fuse",
                    lhs: vec![w.len()],
                    rhs: vec![t_len],
                });
            }
            if w.iter().any(|&v| v < 0.0) {
                return Err(Error::Domain {
                    op: "fuse",
                    detail: "external weights must be non-negative".into(),
                });
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::Domain {
                    op: "fuse",
                    detail: "external weights are all zero".into(),
                });
            }
            // The 1e-8 floor guards near-zero sums (fully occluded
            // sequences); healthy weight sums normalize exactly so fusing
            // ground truth stays exact.
            let denom: f64 = w.iter().sum::<f64>().max(1e-8);
            Tensor::from_vec(&[1, t_len], w.iter().map(|v| v / denom).collect())
        }
    }
}

/// Fused pose for one target timestamp; `[1 x D]`.
pub fn fuse(
    poses: &Tensor,
    motion_fw: &Tensor,
    motion_bw: &Tensor,
    confidence: &Tensor,
    target: usize,
    mode: AggregationMode,
    external: Option<&[f64]>,
) -> Result<Tensor> {
    let t_len = poses.shape()[0];
    check_frame("fuse", t_len, target)?;
    if mode == AggregationMode::Center {
        return poses.row(target);
    }
    let weights = fusion_weights(confidence, t_len, mode, external)?;
    let candidates: Vec<Tensor> = (0..t_len)
        .map(|source| deform(poses, motion_fw, motion_bw, source, target))
        .collect::<Result<_>>()?;
    let stacked = Tensor::concat(&candidates.iter().collect::<Vec<_>>(), 0)?;
    weights.matmul(&stacked)
}

/// Applies [`fuse`] at every timestamp; `[T x D]`.
pub fn fuse_sequence(
    poses: &Tensor,
    motion_fw: &Tensor,
    motion_bw: &Tensor,
    confidence: &Tensor,
    mode: AggregationMode,
    external: Option<&[f64]>,
) -> Result<Tensor> {
    let t_len = poses.shape()[0];
    let rows: Vec<Tensor> = (0..t_len)
        .map(|t| fuse(poses, motion_fw, motion_bw, confidence, t, mode, external))
        .collect::<Result<_>>()?;
    Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)
}
