//! End-to-end optimization: Adam with bias correction, the alternating
//! generator/discriminator update, the stepped learning-rate schedule,
//! binary checkpoints, and deterministic seeding throughout.
//!
//! One training step runs the generator over a batch of whole sequences
//! (spatial stage per frame, temporal stage, fusion, hand layer, loss
//! suite), applies one Adam update to the generator, then updates the
//! discriminator on the detached generated sequences against freshly
//! sampled real trajectories. Per-sequence gradients are accumulated in
//! sequence-index order, so runs are bit-reproducible.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::Config;
use crate::discriminator::{discriminator_step, MotionDiscriminator};
use crate::fusion::{fuse_sequence, AggregationMode};
use crate::handmodel::{hand_forward, template_from_seed, HandMesh, KinematicTemplate, POSE_DIM};
use crate::losses::{
    adv_generator_loss, l2d, mesh_loss, monocular_loss, motion_loss, smooth_loss, total_loss,
    LossKind, LossReport, LossTerms,
};
use crate::nn::{GradBundle, ParamStore, Session};
use crate::seeding::{derive_rng, derive_seed, stream};
use crate::spatial::SpatialNet;
use crate::synthdata::{sample_trajectory, SequenceSample};
use crate::temporal::{TemporalNet, TemporalOutput};
use crate::tensor::{Array, Tensor};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"DFRM";
const CHECKPOINT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam state: first/second moment accumulators per parameter plus the
/// shared step counter. The learning rate is supplied per call so the
/// schedule stays outside the optimizer.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Array>>,
    v: Vec<Option<Array>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Standard defaults (0.9 / 0.999 / 1e-8).
    pub fn standard() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `clip_norm > 0` rescales the whole gradient bundle when
    /// its global norm exceeds the limit. Parameters without gradients are
    /// untouched.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &GradBundle,
        lr: f64,
        clip_norm: f64,
    ) -> Result<()> {
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        for (i, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain {
                        op: "adam",
                        detail: format!(
                            "non-finite gradient for parameter '{}'",
                            store.name(crate::nn::param_id(i))
                        ),
                    });
                }
            }
        }
        let mut scale = 1.0;
        if clip_norm > 0.0 {
            let norm_sq: f64 = grads
                .iter()
                .flatten()
                .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            let norm = norm_sq.sqrt();
            if norm > clip_norm {
                scale = clip_norm / norm;
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let id = crate::nn::param_id(i);
            let m = self.m[i].get_or_insert_with(|| Array::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Array::zeros(g.shape()));
            let param = store.value_mut(id);
            for ((p, (mi, vi)), gi) in param
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                .zip(g.data())
            {
                let g = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if param.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain {
                    op: "adam",
                    detail: format!(
                        "parameter '{}' became non-finite",
                        store.name(crate::nn::param_id(i))
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Stepped decay: `base * factor^(epoch / every)`.
pub fn lr_at_epoch(base_lr: f64, epoch: usize, factor: f64, every: usize) -> f64 {
    base_lr * factor.powi((epoch / every) as i32)
}

// ---------------------------------------------------------------------------
// Model bundle and generator forward pass
// ---------------------------------------------------------------------------

/// All networks plus the hand template, with separate generator and
/// discriminator parameter stores (gradient isolation holds by
/// construction: each side's loss can only reach its own store's leaves).
pub struct Models {
    pub config: Config,
    pub template: KinematicTemplate,
    pub gen_store: ParamStore,
    pub disc_store: ParamStore,
    pub spatial: SpatialNet,
    pub temporal: TemporalNet,
    pub discriminator: MotionDiscriminator,
}

impl Models {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let template = template_from_seed(config.template_seed);
        let mut gen_store = ParamStore::new();
        let mut gen_rng = derive_rng(config.seed, &[stream::PARAMS_GEN]);
        let spatial = SpatialNet::new(&mut gen_store, &mut gen_rng, config);
        let temporal = TemporalNet::new(&mut gen_store, &mut gen_rng, config);
        let mut disc_store = ParamStore::new();
        let mut disc_rng = derive_rng(config.seed, &[stream::PARAMS_DISC]);
        let discriminator = MotionDiscriminator::new(&mut disc_store, &mut disc_rng, config);
        Ok(Self {
            config: config.clone(),
            template,
            gen_store,
            disc_store,
            spatial,
            temporal,
            discriminator,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.config.use_max_mse {
            LossKind::MaxMse
        } else {
            LossKind::Mse
        }
    }
}

/// A sample with its ground truth posed once: meshes, projected 2D joints,
/// and the visibility weights used by occlusion-weighted fusion.
pub struct Prepared {
    pub sample: SequenceSample,
    pub gt_meshes: Vec<HandMesh>,
    pub gt_joints2d: Vec<Tensor>,
    pub visibility: Vec<f64>,
}

pub fn prepare(samples: &[SequenceSample], template: &KinematicTemplate) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|sample| {
            let t_len = sample.grids.len();
            let beta = Tensor::from_array(sample.gt_beta.clone());
            let mut gt_meshes = Vec::with_capacity(t_len);
            let mut gt_joints2d = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let theta = Tensor::from_vec(
                    &[POSE_DIM],
                    sample.gt_theta.data()[t * POSE_DIM..(t + 1) * POSE_DIM].to_vec(),
                )?;
                let mesh = hand_forward(&theta, &beta, template)?;
                gt_joints2d.push(crate::handmodel::project_2d(&mesh.joints, &sample.camera)?);
                gt_meshes.push(mesh);
            }
            Ok(Prepared {
                visibility: sample.occlusion.iter().map(|o| 1.0 - o).collect(),
                sample: sample.clone(),
                gt_meshes,
                gt_joints2d,
            })
        })
        .collect()
}

/// Everything the losses and the evaluator need from one generator pass.
pub struct SequenceForward {
    /// per-frame spatial latents, `[T x D]`.
    pub latents: Tensor,
    /// per-frame soft-argmax joints, `[21 x 2]` each.
    pub joints2d: Vec<Tensor>,
    pub temporal: TemporalOutput,
    /// fused pose sequence, `[T x 48]`.
    pub fused: Tensor,
    /// meshes posed from the fused poses and the global shape.
    pub meshes: Vec<HandMesh>,
}

/// Full generator pass over one sequence under the given fusion mode.
pub fn run_generator(
    models: &Models,
    session: &Session,
    prep: &Prepared,
    mode: AggregationMode,
) -> Result<SequenceForward> {
    let grids: Vec<Tensor> = prep
        .sample
        .grids
        .iter()
        .map(|g| Tensor::from_array(g.clone()))
        .collect();
    run_generator_on(models, session, &grids, &prep.visibility, mode)
}

/// Generator pass over explicit grid tensors (which may live on a tape, so
/// gradients can flow back into the inputs themselves).
pub fn run_generator_on(
    models: &Models,
    session: &Session,
    grids: &[Tensor],
    visibility: &[f64],
    mode: AggregationMode,
) -> Result<SequenceForward> {
    let t_len = grids.len();
    let mut latent_rows = Vec::with_capacity(t_len);
    let mut joints2d = Vec::with_capacity(t_len);
    for grid in grids {
        let out = models.spatial.forward(session, grid)?;
        latent_rows.push(out.latent);
        joints2d.push(out.joints2d);
    }
    let latents = Tensor::concat(&latent_rows.iter().collect::<Vec<_>>(), 0)?;
    let temporal = models.temporal.forward(session, &latents)?;
    let external = (mode == AggregationMode::WeightedExternal).then_some(visibility);
    let fused = fuse_sequence(
        &temporal.pose,
        &temporal.motion_fw,
        &temporal.motion_bw,
        &temporal.confidence,
        mode,
        external,
    )?;
    let mut meshes = Vec::with_capacity(t_len);
    for t in 0..t_len {
        meshes.push(hand_forward(
            &fused.row(t)?,
            &temporal.shape_global,
            &models.template,
        )?);
    }
    Ok(SequenceForward {
        latents,
        joints2d,
        temporal,
        fused,
        meshes,
    })
}

/// Assembles the full loss for one sequence.
pub fn generator_losses(
    models: &Models,
    prep: &Prepared,
    fwd: &SequenceForward,
) -> Result<(Tensor, LossReport)> {
    let config = &models.config;
    let kind = models.loss_kind();

    let mesh = mesh_loss(kind, &fwd.meshes, &prep.gt_meshes)?;
    let adv = if config.use_discriminator {
        // discriminator parameters mount as constants: the adversarial
        // gradient reaches only the generator
        let disc_session = Session::eval(&models.disc_store);
        let judged = match config.disc_input {
            crate::discriminator::DiscInput::Fused => &fwd.fused,
            crate::discriminator::DiscInput::PreFusion => &fwd.temporal.pose,
        };
        let score = models.discriminator.score(&disc_session, judged)?;
        Some(adv_generator_loss(&score)?)
    } else {
        None
    };
    let mut l2d_total = Tensor::scalar(0.0);
    for (pred, gt) in fwd.joints2d.iter().zip(&prep.gt_joints2d) {
        l2d_total = l2d_total.add(&l2d(pred, gt)?)?;
    }
    let monocular = monocular_loss(
        kind,
        &fwd.temporal.monocular_pose,
        &fwd.temporal.monocular_shape,
        &prep.sample.gt_theta,
        &prep.sample.gt_beta,
        &prep.gt_meshes,
        &models.template,
    )?;
    let motion = motion_loss(
        kind,
        &fwd.temporal.pose,
        &fwd.temporal.motion_fw,
        &fwd.temporal.motion_bw,
        &prep.sample.gt_theta,
        config.motion_target,
    )?;
    let smooth = smooth_loss(
        &fwd.fused,
        config.loss_weights.smooth_first,
        config.loss_weights.smooth_second,
    )?;
    total_loss(
        &LossTerms {
            mesh,
            adv,
            l2d: l2d_total,
            monocular,
            motion,
            smooth,
        },
        &config.loss_weights,
    )
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One alternating update: generator first, then the discriminator on the
/// detached generated poses plus freshly sampled real trajectories.
pub fn train_step(
    models: &mut Models,
    gen_opt: &mut Adam,
    disc_opt: &mut Adam,
    batch: &[&Prepared],
    lr_gen: f64,
    lr_disc: f64,
    global_step: u64,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Domain {
            op: "train_step",
            detail: "batch must be non-empty".into(),
        });
    }
    let config = models.config.clone();
    let mut accum: GradBundle = Vec::new();
    accum.resize_with(models.gen_store.len(), || None);
    let mut report_sum = LossReport::default();
    let mut generated: Vec<Array> = Vec::with_capacity(batch.len());

    for prep in batch {
        let session = Session::train(&models.gen_store);
        let fwd = run_generator(models, &session, prep, config.fusion_mode)?;
        let (total, report) = generator_losses(models, prep, &fwd)?;
        let grads = session.backward(&total)?;
        for (slot, grad) in accum.iter_mut().zip(grads) {
            if let Some(g) = grad {
                match slot {
                    Some(existing) => {
                        for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        generated.push(match config.disc_input {
            crate::discriminator::DiscInput::Fused => fwd.fused.to_array(),
            crate::discriminator::DiscInput::PreFusion => fwd.temporal.pose.to_array(),
        });
        report_sum.mesh += report.mesh;
        report_sum.adv += report.adv;
        report_sum.l2d += report.l2d;
        report_sum.monocular += report.monocular;
        report_sum.motion += report.motion;
        report_sum.smooth += report.smooth;
        report_sum.total += report.total;
    }

    let n = batch.len() as f64;
    for slot in accum.iter_mut().flatten() {
        slot.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    gen_opt.apply(&mut models.gen_store, &accum, lr_gen, config.clip_norm)?;

    let mut report = LossReport {
        step: global_step,
        mesh: report_sum.mesh / n,
        adv: report_sum.adv / n,
        l2d: report_sum.l2d / n,
        monocular: report_sum.monocular / n,
        motion: report_sum.motion / n,
        smooth: report_sum.smooth / n,
        total: report_sum.total / n,
        disc: 0.0,
    };

    if config.use_discriminator {
        let real: Vec<Array> = (0..batch.len())
            .map(|k| {
                let seed = derive_seed(
                    config.seed,
                    &[stream::DISC_REAL, global_step, k as u64],
                );
                sample_trajectory(seed, config.t_len, config.stride).0
            })
            .collect();
        report.disc = discriminator_step(
            &models.discriminator,
            &mut models.disc_store,
            disc_opt,
            lr_disc,
            config.clip_norm,
            &real,
            &generated,
        )?;
    }
    Ok(report)
}

/// Full training state; checkpoints serialize exactly this.
pub struct TrainState {
    pub models: Models,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub history: Vec<LossReport>,
}

impl TrainState {
    pub fn fresh(config: &Config) -> Result<Self> {
        Ok(Self {
            models: Models::new(config)?,
            gen_opt: Adam::standard(),
            disc_opt: Adam::standard(),
            epoch: 0,
            global_step: 0,
            history: Vec::new(),
        })
    }
}

/// Runs (or continues) training over whole epochs. Shuffling, real-sample
/// draws, and initialization all derive from the config seed, so the loss
/// history is a pure function of (config, dataset).
pub fn train(
    config: &Config,
    train_set: &[SequenceSample],
    out_dir: Option<&Path>,
    resume: Option<TrainState>,
) -> Result<TrainState> {
    if train_set.is_empty() {
        return Err(Error::Domain {
            op: "train",
            detail: "training set is empty".into(),
        });
    }
    let mut state = match resume {
        Some(s) => {
            if s.models.config != *config {
                return Err(Error::Incompatible(
                    "resume checkpoint config differs from requested config".into(),
                ));
            }
            s
        }
        None => TrainState::fresh(config)?,
    };
    let prepared = prepare(train_set, &state.models.template)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in state.epoch..config.epochs {
        let lr_gen = lr_at_epoch(
            config.lr_generator,
            epoch,
            config.lr_decay_factor,
            config.lr_decay_every,
        );
        let lr_disc = lr_at_epoch(
            config.lr_discriminator,
            epoch,
            config.lr_decay_factor,
            config.lr_decay_every,
        );
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = derive_rng(config.seed, &[stream::SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let report = train_step(
                &mut state.models,
                &mut state.gen_opt,
                &mut state.disc_opt,
                &batch,
                lr_gen,
                lr_disc,
                state.global_step,
            )?;
            state.global_step += 1;
            state.history.push(report);
        }
        state.epoch = epoch + 1;
        if let Some(dir) = out_dir {
            save_checkpoint(&state, &dir.join(format!("epoch_{:04}.ckpt", state.epoch)))?;
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_blob(buf: &mut Vec<u8>, name: &str, array: &Array) {
    write_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    write_u32(buf, array.shape().len() as u32);
    for &d in array.shape() {
        write_u64(buf, d as u64);
    }
    for &v in array.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn optimizer_blobs(buf: &mut Vec<u8>, prefix: &str, store: &ParamStore, opt: &Adam) -> u32 {
    let mut count = 0;
    for (id, name, _) in store.iter() {
        for (tag, bank) in [("m", &opt.m), ("v", &opt.v)] {
            if let Some(Some(arr)) = bank.get(id.index()) {
                write_blob(buf, &format!("{prefix}.{tag}.{name}"), arr);
                count += 1;
            }
        }
    }
    count
}

/// Serializes the full training state: header with magic/version/config,
/// then named parameter, optimizer-moment, and history blobs.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let config_text = state.models.config.canonical_string();
    let mut body: Vec<u8> = Vec::new();
    let mut blob_count: u32 = 0;
    for (_, name, arr) in state.models.gen_store.iter() {
        write_blob(&mut body, &format!("gen.{name}"), arr);
        blob_count += 1;
    }
    for (_, name, arr) in state.models.disc_store.iter() {
        write_blob(&mut body, &format!("disc.{name}"), arr);
        blob_count += 1;
    }
    blob_count += optimizer_blobs(&mut body, "adam_gen", &state.models.gen_store, &state.gen_opt);
    blob_count += optimizer_blobs(
        &mut body,
        "adam_disc",
        &state.models.disc_store,
        &state.disc_opt,
    );
    let history: Vec<f64> = state
        .history
        .iter()
        .flat_map(|r| {
            [
                r.step as f64,
                r.mesh,
                r.adv,
                r.l2d,
                r.monocular,
                r.motion,
                r.smooth,
                r.total,
                r.disc,
            ]
        })
        .collect();
    if !history.is_empty() {
        write_blob(
            &mut body,
            "history",
            &Array::new(vec![state.history.len(), 9], history)?,
        );
        blob_count += 1;
    }

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    write_u32(&mut out, CHECKPOINT_VERSION);
    write_u64(&mut out, state.models.config.config_hash());
    write_u32(&mut out, config_text.len() as u32);
    out.extend_from_slice(config_text.as_bytes());
    write_u64(&mut out, state.epoch as u64);
    write_u64(&mut out, state.global_step);
    write_u64(&mut out, state.gen_opt.step);
    write_u64(&mut out, state.disc_opt.step);
    write_u32(&mut out, blob_count);
    out.extend_from_slice(&body);

    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        data: &bytes,
        pos: 0,
    };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    if cur.u32()? != CHECKPOINT_VERSION {
        return Err(Error::Incompatible("unsupported checkpoint version".into()));
    }
    let stored_hash = cur.u64()?;
    let config_len = cur.u32()? as usize;
    let config_text = std::str::from_utf8(cur.take(config_len)?)
        .map_err(|_| Error::Parse("config block is not utf-8".into()))?
        .to_string();
    let config = Config::parse(&config_text)?;
    if config.config_hash() != stored_hash {
        return Err(Error::Incompatible(
            "checkpoint config hash mismatch".into(),
        ));
    }
    let epoch = cur.u64()? as usize;
    let global_step = cur.u64()?;
    let gen_opt_step = cur.u64()?;
    let disc_opt_step = cur.u64()?;
    let blob_count = cur.u32()?;

    let mut models = Models::new(&config)?;
    let mut gen_opt = Adam::standard();
    let mut disc_opt = Adam::standard();
    gen_opt.step = gen_opt_step;
    disc_opt.step = disc_opt_step;
    gen_opt.m.resize_with(models.gen_store.len(), || None);
    gen_opt.v.resize_with(models.gen_store.len(), || None);
    disc_opt.m.resize_with(models.disc_store.len(), || None);
    disc_opt.v.resize_with(models.disc_store.len(), || None);
    let mut history = Vec::new();

    for _ in 0..blob_count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Parse("blob name is not utf-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let array = Array::new(shape, data)?;

        if name == "history" {
            history = array
                .data()
                .chunks_exact(9)
                .map(|r| LossReport {
                    step: r[0] as u64,
                    mesh: r[1],
                    adv: r[2],
                    l2d: r[3],
                    monocular: r[4],
                    motion: r[5],
                    smooth: r[6],
                    total: r[7],
                    disc: r[8],
                })
                .collect();
            continue;
        }
        let assign = |store: &mut ParamStore, pname: &str, array: Array| -> Result<()> {
            let id = store.find(pname).ok_or_else(|| {
                Error::Incompatible(format!("checkpoint names unknown parameter '{pname}'"))
            })?;
            if store.value(id).shape() != array.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter '{pname}' shape mismatch"
                )));
            }
            *store.value_mut(id) = array;
            Ok(())
        };
        let assign_moment =
            |store: &ParamStore, bank: &mut Vec<Option<Array>>, pname: &str, array: Array| -> Result<()> {
                let id = store.find(pname).ok_or_else(|| {
                    Error::Incompatible(format!("checkpoint names unknown parameter '{pname}'"))
                })?;
                bank[id.index()] = Some(array);
                Ok(())
            };
        if let Some(rest) = name.strip_prefix("gen.") {
            assign(&mut models.gen_store, rest, array)?;
        } else if let Some(rest) = name.strip_prefix("disc.") {
            assign(&mut models.disc_store, rest, array)?;
        } else if let Some(rest) = name.strip_prefix("adam_gen.m.") {
            assign_moment(&models.gen_store, &mut gen_opt.m, rest, array)?;
        } else if let Some(rest) = name.strip_prefix("adam_gen.v.") {
            assign_moment(&models.gen_store, &mut gen_opt.v, rest, array)?;
        } else if let Some(rest) = name.strip_prefix("adam_disc.m.") {
            assign_moment(&models.disc_store, &mut disc_opt.m, rest, array)?;
        } else if let Some(rest) = name.strip_prefix("adam_disc.v.") {
            assign_moment(&models.disc_store, &mut disc_opt.v, rest, array)?;
        } else {
            return Err(Error::Parse(format!("unknown blob '{name}'")));
        }
    }

    Ok(TrainState {
        models,
        gen_opt,
        disc_opt,
        epoch,
        global_step,
        history,
    })
}
