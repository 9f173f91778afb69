//! Run configuration: a flat `key = value` document with dotted section
//! keys, two presets, and stable content hashes for dataset/checkpoint
//! compatibility checks.
//!
//! Unknown keys are errors (fail-closed). The `desk` preset is sized to run
//! on one CPU core; the `paper` preset mirrors the published training
//! hyperparameters (32x32x256 features, 3+3 attention layers, 8 heads,
//! feed-forward width 256, query width 256, T=7 with stride 10, learning
//! rates 1e-5/1e-3 decayed by 0.7 every 10 epochs, 60 epochs).

use sha2::{Digest, Sha256};

use crate::discriminator::DiscInput;
use crate::fusion::AggregationMode;
use crate::losses::{LossWeights, MotionTarget};
use crate::nn::PosEmbedKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk|paper)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub preset: Preset,

    // data
    pub seed: u64,
    pub template_seed: u64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub t_len: usize,
    pub stride: usize,
    pub fps: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub grid_c: usize,

    // model
    pub model_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub pos_embed: PosEmbedKind,
    pub temporal_embed: bool,
    pub disc_hidden: usize,

    // training
    pub epochs: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    /// global gradient-norm clip; 0 disables.
    pub clip_norm: f64,

    // losses
    pub loss_weights: LossWeights,
    pub use_max_mse: bool,
    pub use_discriminator: bool,
    pub motion_target: MotionTarget,
    pub disc_input: DiscInput,

    // fusion
    pub fusion_mode: AggregationMode,
}

impl Config {
    pub fn desk() -> Self {
        Config {
            preset: Preset::Desk,
            seed: 42,
            template_seed: 7,
            train_sequences: 400,
            test_sequences: 100,
            t_len: 7,
            stride: 10,
            fps: 30.0,
            grid_h: 16,
            grid_w: 16,
            grid_c: 32,
            model_dim: 64,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            ffn_dim: 128,
            pos_embed: PosEmbedKind::Learned,
            temporal_embed: true,
            disc_hidden: 64,
            epochs: 15,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            lr_decay_factor: 0.7,
            lr_decay_every: 10,
            batch_size: 4,
            clip_norm: 10.0,
            loss_weights: LossWeights::default(),
            use_max_mse: true,
            use_discriminator: true,
            motion_target: MotionTarget::GroundTruth,
            disc_input: DiscInput::Fused,
            fusion_mode: AggregationMode::Dynamic,
        }
    }

    pub fn paper() -> Self {
        Config {
            preset: Preset::Paper,
            grid_h: 32,
            grid_w: 32,
            grid_c: 256,
            model_dim: 256,
            enc_layers: 3,
            dec_layers: 3,
            heads: 8,
            ffn_dim: 256,
            epochs: 60,
            lr_generator: 1e-5,
            lr_discriminator: 1e-3,
            lr_decay_factor: 0.7,
            lr_decay_every: 10,
            clip_norm: 0.0,
            ..Config::desk()
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Config::desk(),
            Preset::Paper => Config::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data.train_sequences", self.train_sequences),
            ("data.test_sequences", self.test_sequences),
            ("data.t", self.t_len),
            ("data.stride", self.stride),
            ("data.grid_h", self.grid_h),
            ("data.grid_w", self.grid_w),
            ("data.grid_c", self.grid_c),
            ("model.dim", self.model_dim),
            ("model.heads", self.heads),
            ("model.ffn_dim", self.ffn_dim),
            ("model.disc_hidden", self.disc_hidden),
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(
                "model.dim must be divisible by model.heads".into(),
            ));
        }
        if self.lr_generator <= 0.0 || self.lr_discriminator <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0 < self.lr_decay_factor && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(
                "train.lr_decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("train.lr_decay_every must be positive".into()));
        }
        if self.fps <= 0.0 {
            return Err(Error::Config("data.fps must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be non-negative".into()));
        }
        self.loss_weights.validate()?;
        Ok(())
    }

    /// Seconds between sampled frames (`stride / fps`).
    pub fn frame_dt(&self) -> f64 {
        self.stride as f64 / self.fps
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value '{value}' for {what}"));
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|_| bad(key))?
            };
        }
        let parse_bool = || -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad(key)),
            }
        };
        match key {
            "preset" => self.preset = Preset::parse(value)?,
            "data.seed" => self.seed = num!(u64),
            "data.template_seed" => self.template_seed = num!(u64),
            "data.train_sequences" => self.train_sequences = num!(usize),
            "data.test_sequences" => self.test_sequences = num!(usize),
            "data.t" => self.t_len = num!(usize),
            "data.stride" => self.stride = num!(usize),
            "data.fps" => self.fps = num!(f64),
            "data.grid_h" => self.grid_h = num!(usize),
            "data.grid_w" => self.grid_w = num!(usize),
            "data.grid_c" => self.grid_c = num!(usize),
            "model.dim" => self.model_dim = num!(usize),
            "model.enc_layers" => self.enc_layers = num!(usize),
            "model.dec_layers" => self.dec_layers = num!(usize),
            "model.heads" => self.heads = num!(usize),
            "model.ffn_dim" => self.ffn_dim = num!(usize),
            "model.pos_embed" => {
                self.pos_embed = match value {
                    "learned" => PosEmbedKind::Learned,
                    "sinusoidal" => PosEmbedKind::Sinusoidal,
                    "off" => PosEmbedKind::Off,
                    _ => return Err(bad(key)),
                }
            }
            "model.temporal_embed" => self.temporal_embed = parse_bool()?,
            "model.disc_hidden" => self.disc_hidden = num!(usize),
            "train.epochs" => self.epochs = num!(usize),
            "train.lr_generator" => self.lr_generator = num!(f64),
            "train.lr_discriminator" => self.lr_discriminator = num!(f64),
            "train.lr_decay_factor" => self.lr_decay_factor = num!(f64),
            "train.lr_decay_every" => self.lr_decay_every = num!(usize),
            "train.batch_size" => self.batch_size = num!(usize),
            "train.clip_norm" => self.clip_norm = num!(f64),
            "loss.mesh" => self.loss_weights.mesh = num!(f64),
            "loss.adv" => self.loss_weights.adv = num!(f64),
            "loss.l2d" => self.loss_weights.l2d = num!(f64),
            "loss.monocular" => self.loss_weights.monocular = num!(f64),
            "loss.motion" => self.loss_weights.motion = num!(f64),
            "loss.smooth_first" => self.loss_weights.smooth_first = num!(f64),
            "loss.smooth_second" => self.loss_weights.smooth_second = num!(f64),
            "loss.use_max_mse" => self.use_max_mse = parse_bool()?,
            "loss.use_discriminator" => self.use_discriminator = parse_bool()?,
            "loss.motion_target" => {
                self.motion_target = match value {
                    "ground-truth" => MotionTarget::GroundTruth,
                    "prediction" => MotionTarget::Prediction,
                    _ => return Err(bad(key)),
                }
            }
            "loss.disc_input" => {
                self.disc_input = match value {
                    "fused" => DiscInput::Fused,
                    "pre-fusion" => DiscInput::PreFusion,
                    _ => return Err(bad(key)),
                }
            }
            "fusion.mode" => self.fusion_mode = AggregationMode::parse(value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a `key = value` document. The `preset` key, if present, must
    /// come first; remaining keys override preset defaults in order.
    pub fn parse(text: &str) -> Result<Config> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            pairs.push((
                lineno + 1,
                key.trim().to_string(),
                value.trim().to_string(),
            ));
        }
        let mut config = match pairs.iter().position(|(_, k, _)| k == "preset") {
            Some(idx) => {
                if idx != 0 {
                    return Err(Error::Config(format!(
                        "line {}: 'preset' must be the first key",
                        pairs[idx].0
                    )));
                }
                Config::from_preset(Preset::parse(&pairs[idx].2)?)
            }
            None => Config::desk(),
        };
        for (lineno, key, value) in pairs.iter().skip_while(|(_, k, _)| k == "preset") {
            if key == "preset" {
                return Err(Error::Config(format!("line {lineno}: duplicate 'preset'")));
            }
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Canonical document: every key, fixed order. Parsing it reproduces the
    /// config exactly.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("preset = {}\n", self.preset.name()));
        out.push_str(&self.data_section());
        out.push_str(&format!(
            "model.dim = {}\nmodel.enc_layers = {}\nmodel.dec_layers = {}\nmodel.heads = {}\nmodel.ffn_dim = {}\nmodel.pos_embed = {}\nmodel.temporal_embed = {}\nmodel.disc_hidden = {}\n",
            self.model_dim,
            self.enc_layers,
            self.dec_layers,
            self.heads,
            self.ffn_dim,
            match self.pos_embed {
                PosEmbedKind::Learned => "learned",
                PosEmbedKind::Sinusoidal => "sinusoidal",
                PosEmbedKind::Off => "off",
            },
            self.temporal_embed,
            self.disc_hidden,
        ));
        out.push_str(&format!(
            "train.epochs = {}\ntrain.lr_generator = {:e}\ntrain.lr_discriminator = {:e}\ntrain.lr_decay_factor = {:e}\ntrain.lr_decay_every = {}\ntrain.batch_size = {}\ntrain.clip_norm = {:e}\n",
            self.epochs,
            self.lr_generator,
            self.lr_discriminator,
            self.lr_decay_factor,
            self.lr_decay_every,
            self.batch_size,
            self.clip_norm,
        ));
        let w = &self.loss_weights;
        out.push_str(&format!(
            "loss.mesh = {:e}\nloss.adv = {:e}\nloss.l2d = {:e}\nloss.monocular = {:e}\nloss.motion = {:e}\nloss.smooth_first = {:e}\nloss.smooth_second = {:e}\nloss.use_max_mse = {}\nloss.use_discriminator = {}\nloss.motion_target = {}\nloss.disc_input = {}\n",
            w.mesh,
            w.adv,
            w.l2d,
            w.monocular,
            w.motion,
            w.smooth_first,
            w.smooth_second,
            self.use_max_mse,
            self.use_discriminator,
            match self.motion_target {
                MotionTarget::GroundTruth => "ground-truth",
                MotionTarget::Prediction => "prediction",
            },
            match self.disc_input {
                DiscInput::Fused => "fused",
                DiscInput::PreFusion => "pre-fusion",
            },
        ));
        out.push_str(&format!("fusion.mode = {}\n", self.fusion_mode.name()));
        out
    }

    fn data_section(&self) -> String {
        format!(
            "data.seed = {}\ndata.template_seed = {}\ndata.train_sequences = {}\ndata.test_sequences = {}\ndata.t = {}\ndata.stride = {}\ndata.fps = {:e}\ndata.grid_h = {}\ndata.grid_w = {}\ndata.grid_c = {}\n",
            self.seed,
            self.template_seed,
            self.train_sequences,
            self.test_sequences,
            self.t_len,
            self.stride,
            self.fps,
            self.grid_h,
            self.grid_w,
            self.grid_c,
        )
    }

    /// Hash of the full canonical document.
    pub fn config_hash(&self) -> u64 {
        hash64(&self.canonical_string())
    }

    /// Hash of the dataset-determining keys only; datasets generated with
    /// matching data sections are interchangeable.
    pub fn data_hash(&self) -> u64 {
        hash64(&self.data_section())
    }
}

fn hash64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}
