//! TOML run configuration.
//!
//! Every key is optional; missing keys take the library defaults. The file
//! mirrors [`RunConfig`] with one table per concern:
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! num_identities = 10
//! cameras_per_identity = 9
//! train_cameras = 2
//! query_cameras = 5
//! frames_min = 16
//! frames_max = 64
//! input_dim = 32
//! # ... remaining generator scales
//!
//! [encoder]
//! hidden_dims = [64, 64]
//! output_dim = 32
//! nonlocal_blocks = 2
//! nonlocal_after = 1
//! # spatial_grid = [2, 2]
//!
//! [loss]
//! set = "full"
//! margin = 0.3
//! bp_to_video = false
//!
//! [train]
//! p = 4
//! # ...
//! teacher_mode = "simultaneous"
//!
//! [eval]
//! clip_len = 32
//! k_max = 20
//! ```
//!
//! `data.seed` defaults to the top-level `seed`. The classifier size always
//! follows `data.num_identities`, and the encoder's channels per position
//! follow `data.input_dim` divided by the spatial grid size.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tkp_core::data::SyntheticConfig;
use tkp_core::encoders::{EncoderConfig, TrunkConfig};
use tkp_core::losses::{LossConfig, LossSet, LossTerm};
use tkp_core::train::{RunConfig, TeacherMode};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub num_identities: usize,
    pub cameras_per_identity: usize,
    pub train_cameras: usize,
    pub query_cameras: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub input_dim: usize,
    pub identity_rank: usize,
    pub nuisance_rank: usize,
    pub prototype_scale: f64,
    pub camera_offset_scale: f64,
    pub drift_scale: f64,
    pub drift_period: f64,
    pub frame_noise_scale: f64,
    pub occlusion_prob: f64,
    pub occlusion_mask_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub nonlocal_blocks: usize,
    pub nonlocal_after: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_grid: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// A preset name or `+`-joined term names, see [`parse_loss_set`].
    pub set: String,
    pub margin: f64,
    pub bp_to_video: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub p: usize,
    pub k: usize,
    pub t: usize,
    pub stride: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub teacher_mode: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub clip_len: usize,
    pub k_max: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile::from_run(&RunConfig::default())
    }
}

macro_rules! section_default {
    ($($ty:ident => $field:ident),*) => {$(
        impl Default for $ty {
            fn default() -> Self {
                ConfigFile::default().$field
            }
        }
    )*};
}

section_default!(
    DataSection => data,
    EncoderSection => encoder,
    LossSection => loss,
    TrainSection => train,
    EvalSection => eval
);

const PRESETS: [(&str, LossSet); 4] = [
    ("full", LossSet::FULL),
    ("baseline", LossSet::BASELINE),
    ("integrated", LossSet::INTEGRATED_TRIPLET),
    ("i2v-only", LossSet::I2V_TRIPLET),
];

/// Parses `full`, `baseline` (alias `integrated+ce`), `integrated`,
/// `i2v-only`, or `+`-joined term names such as `cls+i2v+tkp_f`.
pub fn parse_loss_set(s: &str) -> Result<LossSet, CliError> {
    let s = s.trim();
    if s == "integrated+ce" {
        return Ok(LossSet::BASELINE);
    }
    if let Some((_, set)) = PRESETS.iter().find(|(n, _)| *n == s) {
        return Ok(*set);
    }
    let mut set = LossSet::NONE;
    for part in s.split('+') {
        let term = LossTerm::from_name(part.trim()).ok_or_else(|| {
            let names: Vec<&str> = LossTerm::ALL.iter().map(|t| t.name()).collect();
            CliError::Invalid(format!(
                "unknown loss set or term {part:?}; presets: full, baseline, integrated, \
                 i2v-only; terms: {}",
                names.join(", ")
            ))
        })?;
        set.set(term, true);
    }
    Ok(set)
}

pub fn loss_set_name(set: &LossSet) -> String {
    if let Some((n, _)) = PRESETS.iter().find(|(_, p)| p == set) {
        return n.to_string();
    }
    let names: Vec<&str> = set.terms().map(|t| t.name()).collect();
    names.join("+")
}

pub fn parse_teacher_mode(s: &str) -> Result<TeacherMode, CliError> {
    match s {
        "simultaneous" => Ok(TeacherMode::Simultaneous),
        "pretrained" => Ok(TeacherMode::Pretrained),
        _ => Err(CliError::Invalid(format!(
            "unknown teacher mode {s:?} (simultaneous, pretrained)"
        ))),
    }
}

impl ConfigFile {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let d = &cfg.data;
        let e = &cfg.encoder;
        ConfigFile {
            seed: cfg.seed,
            data: DataSection {
                seed: (d.seed != cfg.seed).then_some(d.seed),
                num_identities: d.num_identities,
                cameras_per_identity: d.cameras_per_identity,
                train_cameras: d.train_cameras,
                query_cameras: d.query_cameras,
                frames_min: d.frames_min,
                frames_max: d.frames_max,
                input_dim: d.input_dim,
                identity_rank: d.identity_rank,
                nuisance_rank: d.nuisance_rank,
                prototype_scale: d.prototype_scale,
                camera_offset_scale: d.camera_offset_scale,
                drift_scale: d.drift_scale,
                drift_period: d.drift_period,
                frame_noise_scale: d.frame_noise_scale,
                occlusion_prob: d.occlusion_prob,
                occlusion_mask_fraction: d.occlusion_mask_fraction,
            },
            encoder: EncoderSection {
                hidden_dims: e.trunk.hidden_dims.clone(),
                output_dim: e.trunk.output_dim,
                nonlocal_blocks: e.nonlocal_blocks,
                nonlocal_after: e.nonlocal_after,
                spatial_grid: e.trunk.spatial_grid.map(|(h, w)| [h, w]),
            },
            loss: LossSection {
                set: loss_set_name(&cfg.loss.enabled),
                margin: cfg.loss.margin,
                bp_to_video: cfg.loss.bp_to_video,
            },
            train: TrainSection {
                p: cfg.p,
                k: cfg.k,
                t: cfg.t,
                stride: cfg.stride,
                epochs: cfg.epochs,
                batches_per_epoch: cfg.batches_per_epoch,
                learning_rate: cfg.learning_rate,
                lr_decay_every: cfg.lr_decay_every,
                lr_decay_factor: cfg.lr_decay_factor,
                weight_decay: cfg.weight_decay,
                teacher_mode: cfg.teacher_mode.name().to_string(),
            },
            eval: EvalSection {
                clip_len: cfg.eval_clip_len,
                k_max: cfg.k_max,
            },
        }
    }

    /// Builds and validates the run configuration.
    pub fn to_run(&self) -> Result<RunConfig, CliError> {
        let d = &self.data;
        let e = &self.encoder;
        let grid = e.spatial_grid.map(|[h, w]| (h, w));
        let positions = grid.map_or(1, |(h, w)| h * w);
        if positions == 0 || !d.input_dim.is_multiple_of(positions) {
            return Err(CliError::Invalid(format!(
                "data.input_dim {} is not divisible by the {positions} grid positions",
                d.input_dim
            )));
        }
        let cfg = RunConfig {
            data: SyntheticConfig {
                num_identities: d.num_identities,
                cameras_per_identity: d.cameras_per_identity,
                train_cameras: d.train_cameras,
                query_cameras: d.query_cameras,
                frames_min: d.frames_min,
                frames_max: d.frames_max,
                input_dim: d.input_dim,
                identity_rank: d.identity_rank,
                nuisance_rank: d.nuisance_rank,
                prototype_scale: d.prototype_scale,
                camera_offset_scale: d.camera_offset_scale,
                drift_scale: d.drift_scale,
                drift_period: d.drift_period,
                frame_noise_scale: d.frame_noise_scale,
                occlusion_prob: d.occlusion_prob,
                occlusion_mask_fraction: d.occlusion_mask_fraction,
                seed: d.seed.unwrap_or(self.seed),
            },
            encoder: EncoderConfig {
                trunk: TrunkConfig {
                    input_dim: d.input_dim / positions,
                    hidden_dims: e.hidden_dims.clone(),
                    output_dim: e.output_dim,
                    spatial_grid: grid,
                },
                nonlocal_blocks: e.nonlocal_blocks,
                nonlocal_after: e.nonlocal_after,
            },
            loss: LossConfig {
                margin: self.loss.margin,
                enabled: parse_loss_set(&self.loss.set)?,
                bp_to_video: self.loss.bp_to_video,
                num_identities: d.num_identities,
            },
            p: self.train.p,
            k: self.train.k,
            t: self.train.t,
            stride: self.train.stride,
            epochs: self.train.epochs,
            batches_per_epoch: self.train.batches_per_epoch,
            learning_rate: self.train.learning_rate,
            lr_decay_every: self.train.lr_decay_every,
            lr_decay_factor: self.train.lr_decay_factor,
            weight_decay: self.train.weight_decay,
            teacher_mode: parse_teacher_mode(&self.train.teacher_mode)?,
            seed: self.seed,
            eval_clip_len: self.eval.clip_len,
            k_max: self.eval.k_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }
}

/// Canonical TOML of a run configuration; the digest is taken over these bytes.
pub fn canonical_toml(cfg: &RunConfig) -> String {
    ConfigFile::from_run(cfg).to_toml()
}

/// Hex SHA-256 of [`canonical_toml`].
pub fn config_digest(cfg: &RunConfig) -> String {
    let hash = Sha256::digest(canonical_toml(cfg).as_bytes());
    let mut s = String::with_capacity(64);
    for b in hash {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let text = ConfigFile::default().to_toml();
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back.to_run().unwrap(), RunConfig::default());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ConfigFile::parse("").unwrap(), ConfigFile::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = ConfigFile::parse("seed = 7\n[train]\nt = 8\n").unwrap();
        let run = c.to_run().unwrap();
        assert_eq!((run.seed, run.data.seed, run.t), (7, 7, 8));
        assert_eq!(run.p, RunConfig::default().p);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn loss_sets_parse_and_name() {
        for (name, set) in PRESETS {
            assert_eq!(parse_loss_set(name).unwrap(), set);
            assert_eq!(loss_set_name(&set), name);
        }
        assert_eq!(parse_loss_set("integrated+ce").unwrap(), LossSet::BASELINE);
        let s = parse_loss_set("cls+tkp_d").unwrap();
        assert!(s.classification && s.tkp_distance && !s.i2v);
        assert_eq!(loss_set_name(&s), "cls+tkp_d");
        assert!(parse_loss_set("cls+bogus").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.learning_rate *= 2.0;
        assert_eq!(config_digest(&a), config_digest(&a.clone()));
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn grid_must_divide_input() {
        let mut c = ConfigFile::default();
        c.encoder.spatial_grid = Some([3, 3]);
        assert!(c.to_run().is_err());
        c.encoder.spatial_grid = Some([2, 2]);
        let run = c.to_run().unwrap();
        assert_eq!(run.encoder.trunk.input_dim, 8);
    }
}
