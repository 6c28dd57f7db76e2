use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tkp_core::checks::{Scope, DEFAULT_SEEDS};
use tkp_core::eval::Protocol;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::commands::{self, read_file, write_file, SweepAxis};
use crate::config::{parse_loss_set, parse_teacher_mode, ConfigFile};
use crate::dataset::write_dataset;
use crate::error::CliError;
use crate::report::{epoch_summary, write_log};

#[derive(Debug, Parser)]
#[command(name = "tkp", version, about = "Train and evaluate image-to-video retrieval with temporal knowledge propagation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in the tkp-dataset text format
    Synth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both networks; writes checkpoint.txt, train_log.jsonl and config.toml
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset file; generated from the configuration when absent
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also evaluate all protocols into report.json
        #[arg(long)]
        eval: bool,
    },
    /// Evaluate a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Must match the configuration stored in the checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// I2V, I2I, V2V; all three by default
        #[arg(long, value_delimiter = ',')]
        protocol: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference checks of primitives, losses and the non-local block
    Gradcheck {
        /// all, primitives, losses or nonlocal
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Scale one primitive's backward rule, `op` or `op:factor` (sign flip by default)
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate once per axis value and seed
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// T, nonlocal_blocks, bp_to_video, loss_set or teacher_mode
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write image and video features of every query and gallery video
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration
    Config {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// A configuration file plus per-field overrides.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_identities: Option<usize>,
    #[arg(long)]
    pub frame_noise_scale: Option<f64>,
    #[arg(long)]
    pub occlusion_prob: Option<f64>,
    #[arg(long)]
    pub nonlocal_blocks: Option<usize>,
    /// Preset (full, baseline, integrated, i2v-only) or terms joined by `+`
    #[arg(long)]
    pub loss_set: Option<String>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub bp_to_video: Option<bool>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// simultaneous or pretrained
    #[arg(long)]
    pub teacher_mode: Option<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<ConfigFile, CliError> {
        let mut f = commands::load_config(self.config.as_deref())?;
        macro_rules! set {
            ($($arg:ident => $($path:ident).+),* $(,)?) => {$(
                if let Some(v) = &self.$arg {
                    f.$($path).+ = v.clone();
                }
            )*};
        }
        set!(
            seed => seed,
            num_identities => data.num_identities,
            frame_noise_scale => data.frame_noise_scale,
            occlusion_prob => data.occlusion_prob,
            nonlocal_blocks => encoder.nonlocal_blocks,
            margin => loss.margin,
            bp_to_video => loss.bp_to_video,
            p => train.p,
            k => train.k,
            t => train.t,
            stride => train.stride,
            epochs => train.epochs,
            batches_per_epoch => train.batches_per_epoch,
            learning_rate => train.learning_rate,
            lr_decay_every => train.lr_decay_every,
            lr_decay_factor => train.lr_decay_factor,
            weight_decay => train.weight_decay,
        );
        if let Some(s) = &self.loss_set {
            parse_loss_set(s)?;
            f.loss.set = s.clone();
        }
        if let Some(m) = &self.teacher_mode {
            parse_teacher_mode(m)?;
            f.train.teacher_mode = m.clone();
        }
        Ok(f)
    }
}

fn parse_protocols(names: &[String]) -> Result<Vec<Protocol>, CliError> {
    if names.is_empty() {
        return Ok(Protocol::ALL.to_vec());
    }
    names.iter().map(|n| Ok(n.parse::<Protocol>()?)).collect()
}

fn write_optional(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, contents),
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { run, out } => {
            let cfg = run.resolve()?.to_run()?;
            let ds = commands::load_dataset(&cfg, None)?;
            write_file(&out, &write_dataset(&ds))?;
            println!(
                "wrote {} training, {} query and {} gallery videos to {}",
                ds.train.len(),
                ds.query.len(),
                ds.gallery.len(),
                out.display()
            );
        }
        Command::Train {
            run,
            dataset,
            out_dir,
            eval,
        } => {
            let cfg = run.resolve()?.to_run()?;
            if !cfg.batch_shape().mining_precondition_holds() {
                let which = if cfg.t == 1 { "I2I and V2V" } else { "V2V" };
                eprintln!("warning: K = 1 leaves {which} anchors without positives");
            }
            let ds = commands::load_dataset(&cfg, dataset.as_deref())?;
            let out = commands::train_run(&cfg, &ds)?;
            let digest = out.checkpoint.digest();
            write_file(&out_dir.join("checkpoint.txt"), &write_checkpoint(&out.checkpoint))?;
            write_file(&out_dir.join("train_log.jsonl"), &write_log(&digest, &out.log))?;
            write_file(&out_dir.join("config.toml"), &ConfigFile::from_run(&cfg).to_toml())?;
            print!("{}", epoch_summary(&out.log));
            if eval {
                let report = commands::evaluate_report(&out.checkpoint, &ds, &Protocol::ALL)?;
                write_file(&out_dir.join("report.json"), &report.to_json())?;
                print!("{}", report.table());
            }
        }
        Command::Eval {
            checkpoint,
            config,
            dataset,
            protocol,
            report,
        } => {
            let ck = read_checkpoint(&read_file(&checkpoint)?)?;
            if let Some(path) = config {
                let cfg = ConfigFile::parse(&read_file(&path)?)?.to_run()?;
                commands::check_digest(&ck, &cfg)?;
            }
            let ds = commands::load_dataset(&ck.config, dataset.as_deref())?;
            let r = commands::evaluate_report(&ck, &ds, &parse_protocols(&protocol)?)?;
            write_optional(report.as_deref(), &r.to_json())?;
            print!("{}", r.table());
        }
        Command::Gradcheck {
            scope,
            seeds,
            tol,
            inject_fault,
            report,
        } => {
            let scope: Scope = scope.parse()?;
            let fault = inject_fault.as_deref().map(commands::parse_fault).transpose()?;
            let summary = commands::gradcheck(scope, &seeds, tol, fault)?;
            print!("{}", summary.table());
            write_optional(report.as_deref(), &summary.to_json())?;
            let failed = summary.failures();
            if !failed.is_empty() {
                return Err(CliError::Numerical(format!(
                    "gradient check above {tol:e} for: {}",
                    failed.join(", ")
                )));
            }
        }
        Command::Sweep {
            run,
            axis,
            values,
            seeds,
            report,
        } => {
            let base = run.resolve()?;
            base.to_run()?;
            let axis: SweepAxis = axis.parse()?;
            let r = commands::sweep(&base, axis, &values, &seeds)?;
            write_optional(report.as_deref(), &r.to_json())?;
            print!("{}", r.table());
        }
        Command::ExportFeatures {
            checkpoint,
            dataset,
            out,
        } => {
            let ck = read_checkpoint(&read_file(&checkpoint)?)?;
            let ds = commands::load_dataset(&ck.config, dataset.as_deref())?;
            let text = commands::export_features(&ck.model, &ds, ck.config.eval_clip_len)?;
            write_file(&out, &text)?;
        }
        Command::Config { run } => {
            let f = run.resolve()?;
            let cfg = f.to_run()?;
            print!("{}", ConfigFile::from_run(&cfg).to_toml());
        }
    }
    Ok(())
}
