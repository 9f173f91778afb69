//! Deterministic synthetic sequence benchmark.
//!
//! Each sequence is a smooth random hand trajectory rendered into per-frame
//! feature grids: Gaussian blobs at the projected ground-truth joint
//! positions plus low-amplitude uniform noise, then corrupted by zeroing a
//! rectangle that covers a scheduled fraction of the joints (occlusion) and
//! optionally box-blurred. The measured occlusion of a frame is, by
//! definition, the fraction of projected ground-truth joints inside the
//! zeroed rectangle.
//!
//! Everything is a pure function of the config and master seed; regenerating
//! a dataset produces byte-identical files.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::handmodel::{
    hand_forward, project_2d, template_from_seed, Camera, KinematicTemplate, POSE_DIM, SHAPE_DIM,
};
use crate::seeding::{derive_rng, derive_seed, stream};
use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

/// Gaussian blob width in cells.
const BLOB_SIGMA: f64 = 1.2;
/// Uniform noise amplitude added to every cell.
const NOISE_AMPLITUDE: f64 = 0.05;
/// Margin (cells) required between projected joints and the grid border.
const CAMERA_MARGIN: f64 = 1.0;
/// Occlusion targets at or above this are treated as full-grid masks.
const FULL_MASK_TARGET: f64 = 0.999;
/// Probability that a corrupted frame is also blurred.
const BLUR_PROBABILITY: f64 = 0.3;

/// One training/evaluation sequence.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub seed: u64,
    /// `[T x 48]`
    pub gt_theta: Array,
    /// `[10]`
    pub gt_beta: Array,
    pub camera: Camera,
    /// measured per-frame occlusion in [0, 1].
    pub occlusion: Vec<f64>,
    pub blur: Vec<bool>,
    /// per-frame feature grids, `[H x W x C]` each.
    pub grids: Vec<Array>,
}

/// Occlusion histogram bucket edges: [0,25), [25,50), [50,75), [75,100] %.
pub fn occlusion_bucket(fraction: f64) -> usize {
    if fraction < 0.25 {
        0
    } else if fraction < 0.5 {
        1
    } else if fraction < 0.75 {
        2
    } else {
        3
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub t: usize,
    pub stride: usize,
    pub seed: u64,
    /// hex hash of the dataset-determining config keys.
    pub config_hash: String,
    pub total_frames: usize,
    pub occlusion_histogram: [usize; 4],
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Smooth random pose trajectory: K=3 keyframe poses joined by a smoothstep
/// easing curve, with keyframe deltas sized so that no component moves more
/// than 0.15 rad between consecutive sampled frames. The shape vector is a
/// standard normal truncated to [-3, 3]. Deterministic in `seed`; `stride`
/// is carried by the dataset metadata (it sets the frame spacing in seconds,
/// not the trajectory arithmetic).
pub fn sample_trajectory(seed: u64, t_len: usize, _stride: usize) -> (Array, Array) {
    let mut rng = derive_rng(seed, &[stream::TRAJECTORY]);
    let truncated_normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        loop {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
            if z.abs() <= 3.0 {
                return z;
            }
        }
    };
    let beta: Vec<f64> = (0..SHAPE_DIM).map(|_| truncated_normal(&mut rng)).collect();

    let key_count = 3.min(t_len.max(1));
    let mut key_pos = vec![0usize; key_count];
    for (k, pos) in key_pos.iter_mut().enumerate() {
        *pos = if key_count == 1 {
            0
        } else {
            (k * (t_len - 1)) / (key_count - 1)
        };
    }
    let mut keys = vec![vec![0.0; POSE_DIM]; key_count];
    for c in 0..POSE_DIM {
        keys[0][c] = rng.gen_range(-0.8..0.8);
    }
    for k in 1..key_count {
        let seg_frames = (key_pos[k] - key_pos[k - 1]).max(1) as f64;
        // smoothstep's max slope is 1.5x the average, so this bound keeps
        // per-frame deltas under 0.15 rad per component
        let delta_cap = (0.095 * seg_frames).min(0.28);
        for c in 0..POSE_DIM {
            keys[k][c] = keys[k - 1][c] + rng.gen_range(-delta_cap..delta_cap);
        }
    }

    let mut theta = vec![0.0; t_len * POSE_DIM];
    for t in 0..t_len {
        // locate the segment containing frame t
        let k = (0..key_count - 1)
            .rev()
            .find(|&k| key_pos[k] <= t)
            .unwrap_or(0);
        let (a, b) = (key_pos[k], key_pos[(k + 1).min(key_count - 1)]);
        let u = if b > a {
            ((t - a) as f64 / (b - a) as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let s = u * u * (3.0 - 2.0 * u);
        for c in 0..POSE_DIM {
            let lo = keys[k][c];
            let hi = keys[(k + 1).min(key_count - 1)][c];
            theta[t * POSE_DIM + c] = lo + s * (hi - lo);
        }
    }
    (
        Array::new(vec![t_len, POSE_DIM], theta).expect("sized"),
        Array::new(vec![SHAPE_DIM], beta).expect("sized"),
    )
}

// ---------------------------------------------------------------------------
// Rendering and corruption
// ---------------------------------------------------------------------------

/// Projected ground-truth joints for one frame, grid-pixel units.
fn project_joints(
    theta: &[f64],
    beta: &Array,
    camera: &Camera,
    template: &KinematicTemplate,
) -> Result<Vec<[f64; 2]>> {
    let mesh = hand_forward(
        &Tensor::from_vec(&[POSE_DIM], theta.to_vec())?,
        &Tensor::from_array(beta.clone()),
        template,
    )?;
    let uv = project_2d(&mesh.joints, camera)?;
    Ok(uv
        .data()
        .chunks(2)
        .map(|c| [c[0], c[1]])
        .collect())
}

/// Renders a feature grid from projected joints: joint `j` paints a
/// Gaussian blob into channel `j mod C`, plus uniform noise, clamped to
/// [0, 1]. Errors if any joint lies outside the grid.
pub fn render_grid(
    joints2d: &[[f64; 2]],
    h: usize,
    w: usize,
    c: usize,
    noise_seed: u64,
) -> Result<Array> {
    for (j, p) in joints2d.iter().enumerate() {
        if p[0] < 0.0 || p[0] >= w as f64 || p[1] < 0.0 || p[1] >= h as f64 {
            return Err(Error::Domain {
                op: "render_grid",
                detail: format!("joint {j} projects outside the grid"),
            });
        }
    }
    let mut grid = vec![0.0; h * w * c];
    for (j, p) in joints2d.iter().enumerate() {
        let channel = j % c;
        for r in 0..h {
            for col in 0..w {
                let dx = col as f64 + 0.5 - p[0];
                let dy = r as f64 + 0.5 - p[1];
                let v = (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
                grid[(r * w + col) * c + channel] += v;
            }
        }
    }
    let mut rng = derive_rng(noise_seed, &[stream::GRID_NOISE]);
    for v in grid.iter_mut() {
        *v = (*v + rng.gen_range(0.0..NOISE_AMPLITUDE)).clamp(0.0, 1.0);
    }
    Array::new(vec![h, w, c], grid)
}

/// Cell-index rectangle, inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CellRect {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

impl CellRect {
    fn contains_point(&self, p: &[f64; 2]) -> bool {
        let (x, y) = (p[0], p[1]);
        x >= self.c0 as f64 && x < (self.c1 + 1) as f64 && y >= self.r0 as f64
            && y < (self.r1 + 1) as f64
    }
}

/// Zeroes a rectangle covering approximately `occlusion_target` of the
/// joints, then optionally applies a 3x3 box blur to the whole grid.
/// Returns the corrupted grid and the measured occlusion: the exact
/// fraction of joints inside the zeroed rectangle.
pub fn corrupt(
    grid: &Array,
    joints2d: &[[f64; 2]],
    occlusion_target: f64,
    blur: bool,
    seed: u64,
) -> Result<(Array, f64)> {
    if !(0.0..=1.0).contains(&occlusion_target) {
        return Err(Error::Domain {
            op: "corrupt",
            detail: "occlusion target must lie in [0, 1]".into(),
        });
    }
    let shape = grid.shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut data = grid.data().to_vec();
    let mut measured = 0.0;

    if occlusion_target > 0.0 {
        let rect = if occlusion_target >= FULL_MASK_TARGET {
            CellRect {
                r0: 0,
                r1: h - 1,
                c0: 0,
                c1: w - 1,
            }
        } else {
            choose_rect(joints2d, occlusion_target, h, w, seed)
        };
        let inside = joints2d.iter().filter(|p| rect.contains_point(p)).count();
        measured = inside as f64 / joints2d.len() as f64;
        for r in rect.r0..=rect.r1 {
            for col in rect.c0..=rect.c1 {
                for ch in 0..c {
                    data[(r * w + col) * c + ch] = 0.0;
                }
            }
        }
    }

    if blur {
        data = box_blur(&data, h, w, c);
    }
    Ok((Array::new(shape, data)?, measured))
}

/// Picks a rectangle whose joint coverage is closest to the target
/// fraction. Candidates are bounding boxes of the k nearest joints around
/// every anchor joint, plus edge-shrunk variants; ties within one joint of
/// coverage are broken by the seeded rng so different frames mask different
/// regions.
fn choose_rect(joints2d: &[[f64; 2]], target: f64, h: usize, w: usize, seed: u64) -> CellRect {
    let n = joints2d.len();
    let clamp_cell = |v: f64, max: usize| -> usize { (v.floor().max(0.0) as usize).min(max - 1) };
    let coverage = |rect: &CellRect| -> f64 {
        joints2d.iter().filter(|p| rect.contains_point(p)).count() as f64 / n as f64
    };

    let mut candidates: Vec<(f64, CellRect)> = Vec::new();
    let mut consider = |rect: CellRect| {
        candidates.push(((coverage(&rect) - target).abs(), rect));
    };
    for anchor in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        let dist = |i: usize| -> f64 {
            let (dx, dy) = (
                joints2d[i][0] - joints2d[anchor][0],
                joints2d[i][1] - joints2d[anchor][1],
            );
            dx * dx + dy * dy
        };
        order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).expect("finite distances"));
        for take in 1..=n {
            let subset = &order[..take];
            let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in subset {
                min_x = min_x.min(joints2d[i][0]);
                max_x = max_x.max(joints2d[i][0]);
                min_y = min_y.min(joints2d[i][1]);
                max_y = max_y.max(joints2d[i][1]);
            }
            let rect = CellRect {
                r0: clamp_cell(min_y, h),
                r1: clamp_cell(max_y, h),
                c0: clamp_cell(min_x, w),
                c1: clamp_cell(max_x, w),
            };
            consider(rect);
            // edge-shrunk variants drop boundary joints one side at a time
            if rect.r1 > rect.r0 {
                consider(CellRect { r0: rect.r0 + 1, ..rect });
                consider(CellRect { r1: rect.r1 - 1, ..rect });
            }
            if rect.c1 > rect.c0 {
                consider(CellRect { c0: rect.c0 + 1, ..rect });
                consider(CellRect { c1: rect.c1 - 1, ..rect });
            }
        }
    }
    let best = candidates
        .iter()
        .map(|(s, _)| *s)
        .fold(f64::INFINITY, f64::min);
    let tie_slack = 1.0 / n as f64;
    let near: Vec<&(f64, CellRect)> = candidates
        .iter()
        .filter(|(s, _)| *s <= best + tie_slack * 0.5)
        .collect();
    let mut rng = derive_rng(seed, &[stream::CORRUPT]);
    near[rng.gen_range(0..near.len())].1
}

/// 3x3 box filter with clamped edges, applied per channel.
fn box_blur(data: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut sum = 0.0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                        let cc = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                        sum += data[(rr * w + cc) * c + ch];
                    }
                }
                out[(r * w + col) * c + ch] = sum / 9.0;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sequence and dataset generation
// ---------------------------------------------------------------------------

/// Per-frame occlusion schedule: at least one heavily corrupted frame and at
/// least two clean frames per sequence (sequences shorter than three frames
/// stay clean).
fn occlusion_schedule(seq_seed: u64, t_len: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = derive_rng(seq_seed, &[stream::SCHEDULE]);
    let mut targets = vec![0.0; t_len];
    let mut blur = vec![false; t_len];
    if t_len < 3 {
        return (targets, blur);
    }
    let max_corrupted = t_len - 2;
    let n_heavy = if max_corrupted >= 2 && rng.gen_range(0.0..1.0) < 0.5 {
        2
    } else {
        1
    };
    let n_medium = if max_corrupted > n_heavy {
        rng.gen_range(0..=(max_corrupted - n_heavy).min(2))
    } else {
        0
    };
    let mut frames: Vec<usize> = (0..t_len).collect();
    for i in (1..frames.len()).rev() {
        let j = rng.gen_range(0..=i);
        frames.swap(i, j);
    }
    for (slot, &frame) in frames.iter().take(n_heavy + n_medium).enumerate() {
        targets[frame] = if slot < n_heavy {
            rng.gen_range(0.75..1.0)
        } else {
            rng.gen_range(0.25..0.75)
        };
        blur[frame] = rng.gen_range(0.0..1.0) < BLUR_PROBABILITY;
    }
    (targets, blur)
}

fn sample_camera(
    rng: &mut rand_chacha::ChaCha8Rng,
    grid_h: usize,
    grid_w: usize,
) -> Camera {
    let distance = rng.gen_range(450.0..650.0);
    let yaw = rng.gen_range(-0.25..0.25);
    let pitch = rng.gen_range(-0.25..0.25);
    // focal length sized so the hand (roughly +-170 mm around the wrist)
    // spans most of the grid
    let f = grid_w as f64 / 2.0 * distance / 220.0;
    Camera::looking_at_origin(
        distance,
        yaw,
        pitch,
        f,
        f,
        grid_w as f64 / 2.0 + rng.gen_range(-0.5..0.5),
        grid_h as f64 / 2.0 + rng.gen_range(-0.5..0.5),
    )
}

/// Generates one sequence. `split_tag` keeps train/test streams disjoint.
pub fn generate_sequence(
    config: &Config,
    template: &KinematicTemplate,
    split_tag: u64,
    index: usize,
) -> Result<SequenceSample> {
    let seq_seed = derive_seed(config.seed, &[split_tag, index as u64]);
    let (gt_theta, gt_beta) = sample_trajectory(seq_seed, config.t_len, config.stride);

    // retry cameras until all frames project inside the grid with margin
    let mut camera = None;
    let mut all_joints2d: Vec<Vec<[f64; 2]>> = Vec::new();
    'attempts: for attempt in 0..256u64 {
        let mut rng = derive_rng(seq_seed, &[stream::CAMERA, attempt]);
        let candidate = sample_camera(&mut rng, config.grid_h, config.grid_w);
        let mut frames = Vec::with_capacity(config.t_len);
        for t in 0..config.t_len {
            let theta_t = &gt_theta.data()[t * POSE_DIM..(t + 1) * POSE_DIM];
            let Ok(joints) = project_joints(theta_t, &gt_beta, &candidate, template) else {
                continue 'attempts;
            };
            let ok = joints.iter().all(|p| {
                p[0] >= CAMERA_MARGIN
                    && p[0] < config.grid_w as f64 - CAMERA_MARGIN
                    && p[1] >= CAMERA_MARGIN
                    && p[1] < config.grid_h as f64 - CAMERA_MARGIN
            });
            if !ok {
                continue 'attempts;
            }
            frames.push(joints);
        }
        camera = Some(candidate);
        all_joints2d = frames;
        break;
    }
    let camera = camera.ok_or_else(|| Error::Degenerate(format!(
        "no camera keeps sequence {index} inside the grid"
    )))?;

    let (targets, blur) = occlusion_schedule(seq_seed, config.t_len);
    let mut grids = Vec::with_capacity(config.t_len);
    let mut occlusion = Vec::with_capacity(config.t_len);
    for t in 0..config.t_len {
        let clean = render_grid(
            &all_joints2d[t],
            config.grid_h,
            config.grid_w,
            config.grid_c,
            derive_seed(seq_seed, &[stream::GRID_NOISE, t as u64]),
        )?;
        let (grid, measured) = corrupt(
            &clean,
            &all_joints2d[t],
            targets[t],
            blur[t],
            derive_seed(seq_seed, &[stream::CORRUPT, t as u64]),
        )?;
        grids.push(grid);
        occlusion.push(measured);
    }
    Ok(SequenceSample {
        seed: seq_seed,
        gt_theta,
        gt_beta,
        camera,
        occlusion,
        blur,
        grids,
    })
}

/// Generates both splits in memory.
pub fn generate_splits(config: &Config) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    let template = template_from_seed(config.template_seed);
    let train = (0..config.train_sequences)
        .map(|i| generate_sequence(config, &template, stream::SPLIT_TRAIN, i))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..config.test_sequences)
        .map(|i| generate_sequence(config, &template, stream::SPLIT_TEST, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// Generates the dataset and writes `train.jsonl`, `test.jsonl`, and
/// `manifest.json` under `out_dir`.
pub fn generate_dataset(config: &Config, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let template = template_from_seed(config.template_seed);

    let mut histogram = [0usize; 4];
    let mut write_split = |name: &str, split_tag: u64, count: usize| -> Result<()> {
        let file = std::fs::File::create(out_dir.join(name))?;
        let mut writer = std::io::BufWriter::new(file);
        for i in 0..count {
            let sample = generate_sequence(config, &template, split_tag, i)?;
            for &occ in &sample.occlusion {
                histogram[occlusion_bucket(occ)] += 1;
            }
            writer.write_all(record_to_json(&sample).as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    };
    write_split("train.jsonl", stream::SPLIT_TRAIN, config.train_sequences)?;
    write_split("test.jsonl", stream::SPLIT_TEST, config.test_sequences)?;

    let manifest = DatasetManifest {
        train_sequences: config.train_sequences,
        test_sequences: config.test_sequences,
        t: config.t_len,
        stride: config.stride,
        seed: config.seed,
        config_hash: format!("{:016x}", config.data_hash()),
        total_frames: (config.train_sequences + config.test_sequences) * config.t_len,
        occlusion_histogram: histogram,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest.json: {e}")))
}

/// Reads one split (`train` or `test`) back from disk.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<SequenceSample>> {
    let file = std::fs::File::open(dir.join(format!("{split}.jsonl")))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            record_from_json(&line)
                .map_err(|e| Error::Parse(format!("{split}.jsonl line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Record serialization: decimal with 17 significant digits, so floats
// round-trip bit-faithfully and regeneration is byte-identical.
// ---------------------------------------------------------------------------

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_slice(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
    format!("[{}]", parts.join(","))
}

fn record_to_json(sample: &SequenceSample) -> String {
    let t_len = sample.grids.len();
    let theta_rows: Vec<String> = (0..t_len)
        .map(|t| fmt_slice(&sample.gt_theta.data()[t * POSE_DIM..(t + 1) * POSE_DIM]))
        .collect();
    let grids_flat: Vec<f64> = sample
        .grids
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect();
    let blur: Vec<&str> = sample
        .blur
        .iter()
        .map(|b| if *b { "true" } else { "false" })
        .collect();
    format!(
        "{{\"seed\":{},\"gt_theta\":[{}],\"gt_beta\":{},\"camera\":{{\"fx\":{},\"fy\":{},\"cx\":{},\"cy\":{},\"rot\":{},\"trans\":{}}},\"occlusion\":{},\"blur\":[{}],\"grids\":{}}}",
        sample.seed,
        theta_rows.join(","),
        fmt_slice(sample.gt_beta.data()),
        fmt_f64(sample.camera.fx),
        fmt_f64(sample.camera.fy),
        fmt_f64(sample.camera.cx),
        fmt_f64(sample.camera.cy),
        fmt_slice(&sample.camera.rot),
        fmt_slice(&sample.camera.trans),
        fmt_slice(&sample.occlusion),
        blur.join(","),
        fmt_slice(&grids_flat),
    )
}

#[derive(Deserialize)]
struct RecordDoc {
    seed: u64,
    gt_theta: Vec<Vec<f64>>,
    gt_beta: Vec<f64>,
    camera: Camera,
    occlusion: Vec<f64>,
    blur: Vec<bool>,
    grids: Vec<f64>,
}

fn record_from_json(line: &str) -> Result<SequenceSample> {
    let doc: RecordDoc = serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
    let t_len = doc.gt_theta.len();
    if t_len == 0 || doc.occlusion.len() != t_len || doc.blur.len() != t_len {
        return Err(Error::Parse("inconsistent sequence length".into()));
    }
    let frame_len = doc.grids.len() / t_len;
    if frame_len * t_len != doc.grids.len() {
        return Err(Error::Parse("grid payload not divisible by T".into()));
    }
    // grid dims are recovered from the per-frame payload length by the
    // caller's config; store as flat [len] until then
    let grids: Vec<Array> = doc
        .grids
        .chunks(frame_len)
        .map(|chunk| Array::new(vec![frame_len], chunk.to_vec()))
        .collect::<Result<_>>()?;
    Ok(SequenceSample {
        seed: doc.seed,
        gt_theta: Array::new(
            vec![t_len, POSE_DIM],
            doc.gt_theta.into_iter().flatten().collect(),
        )?,
        gt_beta: Array::new(vec![SHAPE_DIM], doc.gt_beta)?,
        camera: doc.camera,
        occlusion: doc.occlusion,
        blur: doc.blur,
        grids,
    })
}

impl SequenceSample {
    /// Reshape flat grids loaded from disk to `[H x W x C]`.
    pub fn with_grid_shape(mut self, h: usize, w: usize, c: usize) -> Result<Self> {
        for g in self.grids.iter_mut() {
            if g.len() != h * w * c {
                return Err(Error::Incompatible(format!(
                    "grid payload {} does not match {h}x{w}x{c}",
                    g.len()
                )));
            }
            *g = Array::new(vec![h, w, c], g.data().to_vec())?;
        }
        Ok(self)
    }
}
