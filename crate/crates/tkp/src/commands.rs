//! The operations behind each subcommand, usable without the argument parser.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use tkp_core::checks::{run_suite, Scope};
use tkp_core::data::{generate_dataset, Dataset};
use tkp_core::eval::{self, MetricsReport, Protocol};
use tkp_core::gradcheck::GradCheckOptions;
use tkp_core::tape::{Fault, OpKind};
use tkp_core::train::{self, Model, RunConfig, TrainRecord};

use crate::checkpoint::Checkpoint;
use crate::config::{config_digest, parse_loss_set, parse_teacher_mode, ConfigFile};
use crate::dataset::read_dataset;
use crate::error::CliError;
use crate::report::{
    write_features, EvalReport, GradCheckSummary, SweepCell, SweepReport, SweepRow, SWEEP_TAG,
};

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::parse(&read_file(p)?),
        None => Ok(ConfigFile::default()),
    }
}

/// Reads `path` if given, otherwise generates the configured dataset.
pub fn load_dataset(cfg: &RunConfig, path: Option<&Path>) -> Result<Dataset, CliError> {
    let Some(path) = path else {
        return Ok(generate_dataset(&cfg.data)?);
    };
    let ds = read_dataset(&read_file(path)?)?;
    if ds.input_dim != cfg.data.input_dim || ds.num_identities != cfg.data.num_identities {
        return Err(CliError::Invalid(format!(
            "{}: dataset has input_dim {} and {} identities, configuration expects {} and {}",
            path.display(),
            ds.input_dim,
            ds.num_identities,
            cfg.data.input_dim,
            cfg.data.num_identities
        )));
    }
    Ok(ds)
}

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainRecord>,
}

pub fn train_run(cfg: &RunConfig, ds: &Dataset) -> Result<TrainArtifacts, CliError> {
    let out = train::train(cfg, ds)?;
    Ok(TrainArtifacts {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            model: out.model,
        },
        log: out.log,
    })
}

pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    cfg: &RunConfig,
    protocols: &[Protocol],
) -> Result<Vec<MetricsReport>, CliError> {
    protocols
        .iter()
        .map(|&p| Ok(train::evaluate(model, ds, cfg, p)?))
        .collect()
}

pub fn evaluate_report(ck: &Checkpoint, ds: &Dataset, protocols: &[Protocol]) -> Result<EvalReport, CliError> {
    let reports = evaluate(&ck.model, ds, &ck.config, protocols)?;
    Ok(EvalReport::new(ck.digest(), &reports))
}

/// Fails unless `cfg` is the configuration the checkpoint was trained with.
pub fn check_digest(ck: &Checkpoint, cfg: &RunConfig) -> Result<(), CliError> {
    let (have, want) = (ck.digest(), config_digest(cfg));
    if have != want {
        return Err(CliError::Invalid(format!(
            "config digest mismatch: checkpoint {have}, config {want}"
        )));
    }
    Ok(())
}

/// `op` or `op:factor`; a bare op name plants a sign error.
pub fn parse_fault(s: &str) -> Result<Fault, CliError> {
    let (name, factor) = match s.split_once(':') {
        Some((n, f)) => (
            n,
            f.parse()
                .map_err(|_| CliError::Invalid(format!("bad fault factor {f:?}")))?,
        ),
        None => (s, -1.0),
    };
    let op = OpKind::from_name(name)
        .ok_or_else(|| CliError::Invalid(format!("unknown primitive {name:?}")))?;
    Ok(Fault { op, factor })
}

pub fn gradcheck(
    scope: Scope,
    seeds: &[u64],
    tol: f64,
    fault: Option<Fault>,
) -> Result<GradCheckSummary, CliError> {
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::with_tol(tol)
    };
    let outcomes = run_suite(scope, seeds, &opts)?;
    Ok(GradCheckSummary::new(scope.name(), tol, seeds, &outcomes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    T,
    NonlocalBlocks,
    BpToVideo,
    LossSet,
    TeacherMode,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::T => "T",
            SweepAxis::NonlocalBlocks => "nonlocal_blocks",
            SweepAxis::BpToVideo => "bp_to_video",
            SweepAxis::LossSet => "loss_set",
            SweepAxis::TeacherMode => "teacher_mode",
        }
    }

    pub fn apply(self, file: &mut ConfigFile, value: &str) -> Result<(), CliError> {
        let bad = || CliError::Invalid(format!("bad value {value:?} for axis {}", self.name()));
        match self {
            SweepAxis::T => file.train.t = value.parse().map_err(|_| bad())?,
            SweepAxis::NonlocalBlocks => {
                file.encoder.nonlocal_blocks = value.parse().map_err(|_| bad())?
            }
            SweepAxis::BpToVideo => {
                file.loss.bp_to_video = match value {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return Err(bad()),
                }
            }
            SweepAxis::LossSet => {
                parse_loss_set(value)?;
                file.loss.set = value.to_string();
            }
            SweepAxis::TeacherMode => {
                parse_teacher_mode(value)?;
                file.train.teacher_mode = value.to_string();
            }
        }
        Ok(())
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [
            SweepAxis::T,
            SweepAxis::NonlocalBlocks,
            SweepAxis::BpToVideo,
            SweepAxis::LossSet,
            SweepAxis::TeacherMode,
        ]
        .into_iter()
        .find(|a| a.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| {
            CliError::Invalid(format!(
                "unknown sweep axis {s:?} (T, nonlocal_blocks, bp_to_video, loss_set, teacher_mode)"
            ))
        })
    }
}

/// Trains and evaluates one configuration per seed and returns the reports
/// for every protocol, seed-major.
pub fn run_seeds(base: &ConfigFile, seeds: &[u64]) -> Result<Vec<Vec<MetricsReport>>, CliError> {
    seeds
        .iter()
        .map(|&seed| {
            let mut file = base.clone();
            file.seed = seed;
            file.data.seed = None;
            let cfg = file.to_run()?;
            let ds = generate_dataset(&cfg.data)?;
            let out = train_run(&cfg, &ds)?;
            evaluate(&out.checkpoint.model, &ds, &cfg, &Protocol::ALL)
        })
        .collect()
}

pub fn sweep(
    base: &ConfigFile,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<SweepReport, CliError> {
    if seeds.is_empty() || values.is_empty() {
        return Err(CliError::Invalid("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::new();
    for value in values {
        let mut file = base.clone();
        axis.apply(&mut file, value)?;
        let runs = run_seeds(&file, seeds)?;
        let n = seeds.len() as f64;
        let scores = Protocol::ALL
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let per: Vec<f64> = runs.iter().map(|r| r[i].top(1)).collect();
                SweepCell {
                    protocol: p.name().to_string(),
                    top1: per.iter().sum::<f64>() / n,
                    map: runs.iter().map(|r| r[i].map).sum::<f64>() / n,
                    top1_per_seed: per,
                }
            })
            .collect();
        rows.push(SweepRow {
            value: value.clone(),
            scores,
        });
    }
    Ok(SweepReport {
        format: SWEEP_TAG.to_string(),
        axis: axis.name().to_string(),
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Image and video features of every query and gallery video.
pub fn export_features(model: &Model, ds: &Dataset, clip_len: usize) -> Result<String, CliError> {
    let p = &model.encoders;
    let qi = eval::first_frame_features(&ds.query, p)?;
    let qv = eval::extract_gallery_features(&ds.query, p, clip_len)?;
    let gi = eval::first_frame_features(&ds.gallery, p)?;
    let gv = eval::extract_gallery_features(&ds.gallery, p, clip_len)?;
    Ok(write_features(
        p.config.trunk.output_dim,
        &[
            ("query", "image", &qi),
            ("query", "video", &qv),
            ("gallery", "image", &gi),
            ("gallery", "video", &gv),
        ],
    ))
}
