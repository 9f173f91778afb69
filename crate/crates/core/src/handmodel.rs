//! Differentiable parametric hand layer.
//!
//! Maps 48 pose parameters (16 joints x 3 axis-angle components, radians;
//! components 0..3 are the global root rotation) and 10 shape parameters to
//! 21 joint positions and 778 vertex positions in millimeters. The kinematic
//! template is a seeded synthetic stand-in with the same interface as a
//! learned hand model: a 16-joint tree rooted at the wrist, a bone-length
//! shape basis, 778 skinned surface points, and a joint regressor that reads
//! the 21 output joints (16 articulated joints plus 5 fingertip endpoints)
//! off the posed skeleton and surface.
//!
//! All outputs are rooted at the wrist; absolute translation is carried by
//! the camera extrinsics, not by the pose vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{derive_rng, stream};
use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

pub const POSE_DIM: usize = 48;
pub const SHAPE_DIM: usize = 10;
pub const ARTICULATED_JOINTS: usize = 16;
pub const JOINT_COUNT: usize = 21;
pub const VERTEX_COUNT: usize = 778;
pub const FINGERS: usize = 5;

/// Below this squared angle Rodrigues' coefficients switch to their
/// second-order Taylor expansions to keep gradients finite at zero rotation.
const RODRIGUES_TAYLOR_THRESHOLD: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

/// Pinhole camera: intrinsics in pixels, extrinsic rigid transform in mm
/// (`x_cam = R x + t`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// 3x3 rotation, row-major.
    pub rot: Vec<f64>,
    /// translation, mm.
    pub trans: Vec<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Domain {
                op: "camera",
                detail: "focal lengths must be positive".into(),
            });
        }
        if self.rot.len() != 9 || self.trans.len() != 3 {
            return Err(Error::Domain {
                op: "camera",
                detail: "rotation must be 3x3 and translation length 3".into(),
            });
        }
        Ok(())
    }

    /// Camera on the +z axis at `distance` mm looking back at the origin
    /// with small yaw/pitch offsets (radians).
    pub fn looking_at_origin(
        distance: f64,
        yaw: f64,
        pitch: f64,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Self {
        let (cy_, sy) = (yaw.cos(), yaw.sin());
        let (cp, sp) = (pitch.cos(), pitch.sin());
        // R = Rx(pitch) * Ry(yaw)
        let rot = vec![
            cy_,
            0.0,
            sy,
            sy * sp,
            cp,
            -cy_ * sp,
            -sy * cp,
            sp,
            cy_ * cp,
        ];
        Camera {
            fx,
            fy,
            cx,
            cy,
            rot,
            trans: vec![0.0, 0.0, distance],
        }
    }
}

/// Projects `[N x 3]` world points (mm) through the camera; output is
/// `[N x 2]` pixels. Every point must land in front of the camera.
pub fn project_2d(points: &Tensor, camera: &Camera) -> Result<Tensor> {
    camera.validate()?;
    let n = points.shape()[0];
    if points.shape().len() != 2 || points.shape()[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "project_2d",
            lhs: points.shape().to_vec(),
            rhs: vec![n, 3],
        });
    }
    let rot_t = Tensor::from_vec(
        &[3, 3],
        vec![
            camera.rot[0],
            camera.rot[3],
            camera.rot[6],
            camera.rot[1],
            camera.rot[4],
            camera.rot[7],
            camera.rot[2],
            camera.rot[5],
            camera.rot[8],
        ],
    )?;
    let t = Tensor::from_vec(&[3], camera.trans.clone())?;
    let cam = points.matmul(&rot_t)?.add(&t)?;
    let z = cam.narrow(1, 2, 1)?;
    if z.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain {
            op: "project_2d",
            detail: "point behind the camera (nonpositive depth)".into(),
        });
    }
    let x = cam.narrow(1, 0, 1)?;
    let y = cam.narrow(1, 1, 1)?;
    let u = x.div(&z)?.mul_scalar(camera.fx)?.add_scalar(camera.cx)?;
    let v = y.div(&z)?.mul_scalar(camera.fy)?.add_scalar(camera.cy)?;
    Tensor::concat(&[&u, &v], 1)
}

// ---------------------------------------------------------------------------
// Template
// ---------------------------------------------------------------------------

/// Serialized template document; field names are part of the exchange
/// format and must not change.
#[derive(Serialize, Deserialize)]
struct TemplateDoc {
    parents: Vec<i32>,
    offsets_mm: Vec<[f64; 3]>,
    shape_basis: Vec<Vec<f64>>,
    points_mm: Vec<[f64; 3]>,
    skin_bones: Vec<[usize; 2]>,
    skin_weights: Vec<[f64; 2]>,
    joint_regressor: Vec<Vec<f64>>,
}

/// Kinematic template driving [`hand_forward`].
pub struct KinematicTemplate {
    pub parents: Vec<i32>,
    /// rest offset from parent, mm, `[16 x 3]`.
    pub offsets_mm: Array,
    /// bone-length sensitivity, mm per unit shape coefficient, `[16 x 10]`.
    pub shape_basis: Array,
    /// rest surface points, mm, `[778 x 3]`.
    pub points_mm: Array,
    pub skin_bones: Vec<[usize; 2]>,
    pub skin_weights: Vec<[f64; 2]>,
    /// `[21 x (16 + 778)]` selection over posed joints and vertices.
    pub joint_regressor: Array,

    // Derived caches (not serialized).
    rest_joints: Array,     // [16 x 3] at beta = 0
    rest_lengths: Vec<f64>, // offset norms, mm
    bone_masks: Vec<Array>, // 16 x [778 x 1] skinning weight per joint
}

impl KinematicTemplate {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        parents: Vec<i32>,
        offsets_mm: Array,
        shape_basis: Array,
        points_mm: Array,
        skin_bones: Vec<[usize; 2]>,
        skin_weights: Vec<[f64; 2]>,
        joint_regressor: Array,
    ) -> Result<Self> {
        let nj = ARTICULATED_JOINTS;
        if parents.len() != nj
            || offsets_mm.shape() != [nj, 3]
            || shape_basis.shape() != [nj, SHAPE_DIM]
            || points_mm.shape() != [VERTEX_COUNT, 3]
            || skin_bones.len() != VERTEX_COUNT
            || skin_weights.len() != VERTEX_COUNT
            || joint_regressor.shape() != [JOINT_COUNT, nj + VERTEX_COUNT]
        {
            return Err(Error::Incompatible("template dimensions".into()));
        }
        // one root, parents precede children (guarantees an acyclic tree)
        if parents[0] != -1 {
            return Err(Error::Incompatible("joint 0 must be the root".into()));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::Incompatible(format!(
                    "parent of joint {j} must precede it"
                )));
            }
        }
        for (i, (b, w)) in skin_bones.iter().zip(&skin_weights).enumerate() {
            if b[0] >= nj || b[1] >= nj {
                return Err(Error::Incompatible(format!("point {i} bone out of range")));
            }
            if w[0] < 0.0 || w[1] < 0.0 || (w[0] + w[1] - 1.0).abs() > 1e-12 {
                return Err(Error::Incompatible(format!(
                    "point {i} weights must be convex"
                )));
            }
        }

        let mut rest = vec![0.0; nj * 3];
        for j in 1..nj {
            let p = parents[j] as usize;
            for c in 0..3 {
                rest[j * 3 + c] = rest[p * 3 + c] + offsets_mm.data()[j * 3 + c];
            }
        }
        let rest_lengths: Vec<f64> = (0..nj)
            .map(|j| {
                let o = &offsets_mm.data()[j * 3..j * 3 + 3];
                (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt().max(1e-9)
            })
            .collect();
        let mut bone_masks = vec![vec![0.0; VERTEX_COUNT]; nj];
        for (i, (b, w)) in skin_bones.iter().zip(&skin_weights).enumerate() {
            bone_masks[b[0]][i] += w[0];
            bone_masks[b[1]][i] += w[1];
        }
        Ok(Self {
            parents,
            offsets_mm,
            shape_basis,
            points_mm,
            skin_bones,
            skin_weights,
            joint_regressor,
            rest_joints: Array::new(vec![nj, 3], rest)?,
            rest_lengths,
            bone_masks: bone_masks
                .into_iter()
                .map(|m| Array::new(vec![VERTEX_COUNT, 1], m))
                .collect::<Result<_>>()?,
        })
    }

    /// Rest-pose positions of the 16 articulated joints at beta = 0.
    pub fn rest_joints(&self) -> &Array {
        &self.rest_joints
    }

    pub fn to_json(&self) -> String {
        let doc = TemplateDoc {
            parents: self.parents.clone(),
            offsets_mm: rows3(&self.offsets_mm),
            shape_basis: self
                .shape_basis
                .data()
                .chunks(SHAPE_DIM)
                .map(|r| r.to_vec())
                .collect(),
            points_mm: rows3(&self.points_mm),
            skin_bones: self.skin_bones.clone(),
            skin_weights: self.skin_weights.clone(),
            joint_regressor: self
                .joint_regressor
                .data()
                .chunks(ARTICULATED_JOINTS + VERTEX_COUNT)
                .map(|r| r.to_vec())
                .collect(),
        };
        serde_json::to_string(&doc).expect("template serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TemplateDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let flat3 = |rows: &[[f64; 3]]| -> Vec<f64> { rows.iter().flatten().copied().collect() };
        Self::from_parts(
            doc.parents,
            Array::new(vec![doc.offsets_mm.len(), 3], flat3(&doc.offsets_mm))?,
            Array::new(
                vec![doc.shape_basis.len(), SHAPE_DIM],
                doc.shape_basis.into_iter().flatten().collect(),
            )?,
            Array::new(vec![doc.points_mm.len(), 3], flat3(&doc.points_mm))?,
            doc.skin_bones,
            doc.skin_weights,
            Array::new(
                vec![JOINT_COUNT, ARTICULATED_JOINTS + VERTEX_COUNT],
                doc.joint_regressor.into_iter().flatten().collect(),
            )?,
        )
    }
}

fn rows3(a: &Array) -> Vec<[f64; 3]> {
    a.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Deterministic anatomically-plausible template: wrist plus five
/// three-joint finger chains, bone lengths in 20-80 mm, 778 points sampled
/// along bone capsules (the last five are the fingertip endpoints).
pub fn template_from_seed(seed: u64) -> KinematicTemplate {
    let mut rng = derive_rng(seed, &[stream::TEMPLATE]);
    let nj = ARTICULATED_JOINTS;

    let mut parents = vec![-1i32; nj];
    let mut offsets = vec![0.0; nj * 3];
    // finger f occupies joints 1+3f (knuckle), 2+3f, 3+3f
    for f in 0..FINGERS {
        let base = 1 + 3 * f;
        parents[base] = 0;
        parents[base + 1] = base as i32;
        parents[base + 2] = (base + 1) as i32;

        let azimuth: f64 = -0.7 + 0.35 * f as f64 + rng.gen_range(-0.08..0.08);
        let elevation: f64 = rng.gen_range(-0.12..0.12);
        let dir = [
            azimuth.sin() * elevation.cos(),
            azimuth.cos() * elevation.cos(),
            elevation.sin(),
        ];
        let lengths = [
            rng.gen_range(55.0..78.0),
            rng.gen_range(30.0..48.0),
            rng.gen_range(20.0..32.0),
        ];
        for (seg, &len) in lengths.iter().enumerate() {
            // small per-segment curl keeps the chain from being collinear
            let curl: f64 = rng.gen_range(-0.15..0.15);
            let bent = [
                dir[0],
                dir[1] * curl.cos() - dir[2] * curl.sin(),
                dir[1] * curl.sin() + dir[2] * curl.cos(),
            ];
            let norm = (bent[0] * bent[0] + bent[1] * bent[1] + bent[2] * bent[2]).sqrt();
            let j = base + seg;
            for c in 0..3 {
                offsets[j * 3 + c] = bent[c] / norm * len;
            }
        }
    }

    // wrist row stays zero: the root carries no bone
    let mut basis = vec![0.0; nj * SHAPE_DIM];
    for v in basis.iter_mut().skip(SHAPE_DIM) {
        *v = rng.gen_range(-1.0..1.0);
    }

    // rest joint positions, needed to sample capsule points
    let mut rest = vec![0.0; nj * 3];
    for j in 1..nj {
        let p = parents[j] as usize;
        for c in 0..3 {
            rest[j * 3 + c] = rest[p * 3 + c] + offsets[j * 3 + c];
        }
    }

    let softmax_tau = 10.0; // mm
    let mut points = vec![0.0; VERTEX_COUNT * 3];
    let mut skin_bones = vec![[0usize; 2]; VERTEX_COUNT];
    let mut skin_weights = vec![[0.0f64; 2]; VERTEX_COUNT];
    for i in 0..VERTEX_COUNT - FINGERS {
        let bone = 1 + (i % (nj - 1)); // cycle over the 15 non-root joints
        let parent = parents[bone] as usize;
        let t = rng.gen_range(0.1..0.9);
        let radius = rng.gen_range(2.0..8.0);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        // radial offset in a plane roughly perpendicular to the bone
        let axis = [
            rest[bone * 3] - rest[parent * 3],
            rest[bone * 3 + 1] - rest[parent * 3 + 1],
            rest[bone * 3 + 2] - rest[parent * 3 + 2],
        ];
        let (u, v) = perpendicular_frame(axis);
        for c in 0..3 {
            points[i * 3 + c] = rest[parent * 3 + c]
                + t * axis[c]
                + radius * (phi.cos() * u[c] + phi.sin() * v[c]);
        }
        // two nearest joints of the carrying bone, distance-softmax weights
        let p = &points[i * 3..i * 3 + 3];
        let d_parent = dist(p, &rest[parent * 3..parent * 3 + 3]);
        let d_child = dist(p, &rest[bone * 3..bone * 3 + 3]);
        let (wp, wc) = {
            let ep = (-d_parent / softmax_tau).exp();
            let ec = (-d_child / softmax_tau).exp();
            (ep / (ep + ec), ec / (ep + ec))
        };
        skin_bones[i] = [parent, bone];
        skin_weights[i] = [wp, wc];
    }
    // fingertip endpoints: extend each distal bone past its last joint
    for f in 0..FINGERS {
        let distal = 3 + 3 * f;
        let parent = parents[distal] as usize;
        let i = VERTEX_COUNT - FINGERS + f;
        let tip_len = rng.gen_range(15.0..25.0);
        let mut axis = [
            rest[distal * 3] - rest[parent * 3],
            rest[distal * 3 + 1] - rest[parent * 3 + 1],
            rest[distal * 3 + 2] - rest[parent * 3 + 2],
        ];
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        axis.iter_mut().for_each(|c| *c /= norm);
        for c in 0..3 {
            points[i * 3 + c] = rest[distal * 3 + c] + tip_len * axis[c];
        }
        skin_bones[i] = [distal, parent];
        skin_weights[i] = [1.0, 0.0];
    }

    // regressor rows: the 16 articulated joints, then the 5 tip vertices
    let cols = nj + VERTEX_COUNT;
    let mut regressor = vec![0.0; JOINT_COUNT * cols];
    for j in 0..nj {
        regressor[j * cols + j] = 1.0;
    }
    for f in 0..FINGERS {
        let row = nj + f;
        let col = nj + (VERTEX_COUNT - FINGERS + f);
        regressor[row * cols + col] = 1.0;
    }

    KinematicTemplate::from_parts(
        parents,
        Array::new(vec![nj, 3], offsets).expect("sized"),
        Array::new(vec![nj, SHAPE_DIM], basis).expect("sized"),
        Array::new(vec![VERTEX_COUNT, 3], points).expect("sized"),
        skin_bones,
        skin_weights,
        Array::new(vec![JOINT_COUNT, cols], regressor).expect("sized"),
    )
    .expect("generated template is valid")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn perpendicular_frame(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let a = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
    let ref_axis = if a[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut u = [
        a[1] * ref_axis[2] - a[2] * ref_axis[1],
        a[2] * ref_axis[0] - a[0] * ref_axis[2],
        a[0] * ref_axis[1] - a[1] * ref_axis[0],
    ];
    let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u.iter_mut().for_each(|c| *c /= un);
    let v = [
        a[1] * u[2] - a[2] * u[1],
        a[2] * u[0] - a[0] * u[2],
        a[0] * u[1] - a[1] * u[0],
    ];
    (u, v)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Joints and vertices produced by [`hand_forward`], in millimeters.
pub struct HandMesh {
    /// `[21 x 3]`
    pub joints: Tensor,
    /// `[778 x 3]`
    pub vertices: Tensor,
}

/// Rotation matrix `[3 x 3]` from an axis-angle row `[1 x 3]` via
/// Rodrigues' formula, `R = I + A K + B K^2` with `A = sin(t)/t`,
/// `B = (1 - cos(t))/t^2`; both coefficients switch to Taylor expansions in
/// the squared angle near zero.
fn rodrigues(axis_angle: &Tensor) -> Result<Tensor> {
    let t2 = axis_angle.powf(2.0)?.sum()?;
    let (coeff_a, coeff_b) = if t2.item()? < RODRIGUES_TAYLOR_THRESHOLD {
        (
            t2.mul_scalar(-1.0 / 6.0)?.add_scalar(1.0)?,
            t2.mul_scalar(-1.0 / 24.0)?.add_scalar(0.5)?,
        )
    } else {
        let theta = t2.sqrt()?;
        (
            theta.sin()?.div(&theta)?,
            theta.cos()?.neg()?.add_scalar(1.0)?.div(&t2)?,
        )
    };
    let ax = axis_angle.narrow(1, 0, 1)?.reshape(&[1])?;
    let ay = axis_angle.narrow(1, 1, 1)?.reshape(&[1])?;
    let az = axis_angle.narrow(1, 2, 1)?.reshape(&[1])?;
    let zero = Tensor::zeros(&[1]);
    let row0 = Tensor::concat(&[&zero, &az.neg()?, &ay], 0)?.reshape(&[1, 3])?;
    let row1 = Tensor::concat(&[&az, &zero, &ax.neg()?], 0)?.reshape(&[1, 3])?;
    let row2 = Tensor::concat(&[&ay.neg()?, &ax, &zero], 0)?.reshape(&[1, 3])?;
    let k = Tensor::concat(&[&row0, &row1, &row2], 0)?;
    let k2 = k.matmul(&k)?;
    let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])?;
    eye.add(&k.mul(&coeff_a)?)?.add(&k2.mul(&coeff_b)?)
}

/// Poses the template: bone offsets scaled by the shape basis, axis-angle
/// rotations composed down the tree, vertices skinned as convex
/// combinations of their two bone transforms. Differentiable with respect
/// to both parameter vectors.
pub fn hand_forward(
    theta: &Tensor,
    beta: &Tensor,
    template: &KinematicTemplate,
) -> Result<HandMesh> {
    if theta.len() != POSE_DIM {
        return Err(Error::ShapeMismatch {
            op: "hand_forward",
            lhs: theta.shape().to_vec(),
            rhs: vec![POSE_DIM],
        });
    }
    if beta.len() != SHAPE_DIM {
        return Err(Error::ShapeMismatch {
            op: "hand_forward",
            lhs: beta.shape().to_vec(),
            rhs: vec![SHAPE_DIM],
        });
    }
    let nj = ARTICULATED_JOINTS;
    let theta = theta.reshape(&[nj, 3])?;
    let beta_col = beta.reshape(&[SHAPE_DIM, 1])?;

    // per-bone length deltas in mm -> multiplicative offset scales
    let basis = Tensor::from_array(template.shape_basis.clone());
    let deltas = basis.matmul(&beta_col)?; // [16 x 1] mm

    let mut world_rot: Vec<Tensor> = Vec::with_capacity(nj);
    let mut world_pos: Vec<Tensor> = Vec::with_capacity(nj);
    for j in 0..nj {
        let local = rodrigues(&theta.row(j)?)?;
        let offset_row = Tensor::from_vec(
            &[1, 3],
            template.offsets_mm.data()[j * 3..j * 3 + 3].to_vec(),
        )?;
        match template.parents[j] {
            -1 => {
                world_rot.push(local);
                world_pos.push(offset_row);
            }
            p => {
                let p = p as usize;
                // scale = 1 + delta/rest_length, affine in beta
                let scale = deltas
                    .narrow(0, j, 1)?
                    .mul_scalar(1.0 / template.rest_lengths[j])?
                    .add_scalar(1.0)?;
                let offset = offset_row.mul(&scale)?;
                let pos = offset
                    .matmul(&world_rot[p].transpose()?)?
                    .add(&world_pos[p])?;
                world_pos.push(pos);
                world_rot.push(world_rot[p].matmul(&local)?);
            }
        }
    }

    let joints16 = Tensor::concat(&world_pos.iter().collect::<Vec<_>>(), 0)?;

    // skinning: S_j(x) = Rw_j (x - rest_j) + pos_j, blended by the
    // per-joint weight masks (convex by template construction)
    let points = Tensor::from_array(template.points_mm.clone());
    let mut vertices = Tensor::zeros(&[VERTEX_COUNT, 3]);
    for j in 0..nj {
        let rest_j = Tensor::from_vec(
            &[1, 3],
            template.rest_joints.data()[j * 3..j * 3 + 3].to_vec(),
        )?;
        let moved = points
            .sub(&rest_j)?
            .matmul(&world_rot[j].transpose()?)?
            .add(&world_pos[j])?;
        let mask = Tensor::from_array(template.bone_masks[j].clone());
        vertices = vertices.add(&moved.mul(&mask)?)?;
    }

    let stacked = Tensor::concat(&[&joints16, &vertices], 0)?;
    let regressor = Tensor::from_array(template.joint_regressor.clone());
    let joints = regressor.matmul(&stacked)?;
    Ok(HandMesh { joints, vertices })
}
