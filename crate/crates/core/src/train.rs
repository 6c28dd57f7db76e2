//! Joint training of the image and video networks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{BatchShape, ClipBatch, Dataset, PkSampler, SyntheticConfig};
use crate::encoders::{encode_image, encode_video, Branch, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, Protocol, DEFAULT_K_MAX, GALLERY_CLIP_LEN};
use crate::losses::{
    batch_hard_triplet, total_loss, BatchFeatures, ClassifierParams, LossConfig, LossTerm,
};
use crate::optim::{step_lr, AdamConfig, AdamState};
use crate::rng::{stream, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherMode {
    /// Both networks learn together from the start.
    Simultaneous,
    /// The video network is trained alone first, then frozen while the image
    /// network learns from it.
    Pretrained,
}

impl TeacherMode {
    pub fn name(self) -> &'static str {
        match self {
            TeacherMode::Simultaneous => "simultaneous",
            TeacherMode::Pretrained => "pretrained",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
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
    pub teacher_mode: TeacherMode,
    /// Seeds weight initialization and batch sampling.
    pub seed: u64,
    pub eval_clip_len: usize,
    pub k_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = SyntheticConfig::default();
        let mut encoder = EncoderConfig::default();
        encoder.trunk.input_dim = data.input_dim;
        RunConfig {
            loss: LossConfig::new(data.num_identities),
            data,
            encoder,
            p: 4,
            k: 4,
            t: 4,
            stride: 8,
            epochs: 30,
            batches_per_epoch: 50,
            learning_rate: 0.001,
            lr_decay_every: 12,
            lr_decay_factor: 0.1,
            weight_decay: 0.0005,
            teacher_mode: TeacherMode::Simultaneous,
            seed: 0,
            eval_clip_len: GALLERY_CLIP_LEN,
            k_max: DEFAULT_K_MAX,
        }
    }
}

impl RunConfig {
    pub fn batch_shape(&self) -> BatchShape {
        BatchShape {
            p: self.p,
            k: self.k,
            t: self.t,
            stride: self.stride,
        }
    }

    /// Sets both the data seed and the run seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        if self.encoder.trunk.frame_len() != self.data.input_dim {
            return Err(Error::invalid(format!(
                "encoder expects frames of length {}, data produces {}",
                self.encoder.trunk.frame_len(),
                self.data.input_dim
            )));
        }
        if self.loss.num_identities != self.data.num_identities {
            return Err(Error::invalid(
                "classifier size must equal the number of training identities",
            ));
        }
        if self.p < 2 || self.k == 0 || self.t == 0 || self.stride == 0 {
            return Err(Error::invalid("need P >= 2 and K, T, stride >= 1"));
        }
        if self.p > self.data.num_identities {
            return Err(Error::invalid("P exceeds the number of training identities"));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::invalid("epochs and batches_per_epoch must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::invalid("learning rate, decay factor and weight decay out of range"));
        }
        if self.eval_clip_len == 0 || self.k_max == 0 {
            return Err(Error::invalid("eval_clip_len and k_max must be positive"));
        }
        Ok(())
    }
}

/// Both networks and the shared classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoders: EncoderParams,
    pub classifier: ClassifierParams,
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let mut rng = Rng::seeded(cfg.seed, stream::WEIGHTS);
        let encoders = EncoderParams::init(&cfg.encoder, &mut rng)?;
        let classifier = ClassifierParams::init(
            cfg.encoder.trunk.output_dim,
            cfg.loss.num_identities,
            &mut rng,
        );
        Ok(Model {
            encoders,
            classifier,
        })
    }

    /// `(name, tensor)` for every parameter in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .encoders
            .named()
            .into_iter()
            .map(|(n, _, t)| (n, t))
            .collect();
        out.push((String::from("classifier.weight"), &self.classifier.weight));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoders.tensors_mut();
        out.push(&mut self.classifier.weight);
        out
    }
}

/// Which parameter groups receive updates in a phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Joint,
    /// Video network and classifier only, with video-side identity losses.
    Teacher,
    /// Image network and classifier only; video network frozen.
    Student,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Joint => "joint",
            Phase::Teacher => "teacher",
            Phase::Student => "student",
        }
    }

    fn trains(self, b: Branch) -> bool {
        match self {
            Phase::Joint => true,
            Phase::Teacher => b == Branch::Video,
            Phase::Student => b == Branch::Image,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub losses: Vec<(LossTerm, f64)>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<TrainRecord>,
}

struct StepResult {
    losses: Vec<(LossTerm, f64)>,
    total: f64,
}

fn provenance(batch: &ClipBatch) -> String {
    let mut s = String::new();
    for p in &batch.provenance {
        s.push_str(&format!(
            "[video {} id {} cam {} start {}]",
            p.video, p.identity, p.camera, p.start
        ));
    }
    s
}

/// Video-side objective of the teacher phase: video cross-entropy plus V2V.
fn teacher_loss(
    tape: &mut Tape,
    video_feats: Var,
    classifier: Var,
    labels: &[usize],
    margin: f64,
) -> Result<Vec<(LossTerm, Var)>> {
    let classes = tape.shape(classifier)[1];
    let logits = tape.matmul(video_feats, classifier)?;
    let logp = tape.log_softmax_rows(logits)?;
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| r * classes + l)
        .collect();
    let picked = tape.gather(logp, &idx)?;
    let m = tape.mean(picked);
    let ce = tape.scale(m, -1.0);
    let v2v = batch_hard_triplet(tape, video_feats, video_feats, labels, labels, margin, true)?;
    Ok(alloc::vec![(LossTerm::Classification, ce), (LossTerm::V2V, v2v)])
}

fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &ClipBatch,
    cfg: &RunConfig,
    phase: Phase,
    lr: f64,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let enc = model.encoders.bind(&mut tape, |b| phase.trains(b));
    let cls = tape.param(model.classifier.weight.clone());
    let frames = tape.constant(batch.frames.clone());
    let video = encode_video(&mut tape, &enc, frames, batch.clip_len)?;
    let terms = if phase == Phase::Teacher {
        teacher_loss(&mut tape, video.video_feats, cls, &batch.labels, cfg.loss.margin)?
    } else {
        let image_feats = encode_image(&mut tape, &enc, frames)?;
        let bf = BatchFeatures {
            image_feats,
            frame_feats: video.frame_feats,
            video_feats: video.video_feats,
            labels: batch.labels.clone(),
        };
        total_loss(&mut tape, &bf, cls, &cfg.loss)?.terms
    };
    let mut total = terms[0].1;
    for &(_, v) in &terms[1..] {
        total = tape.add(total, v)?;
    }
    let total_value = tape.value(total).item();
    if !total_value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("training loss for batch {}", provenance(batch)),
        });
    }
    tape.backward(total)?;
    let mut grads: Vec<Option<Tensor>> = enc.all.iter().map(|&v| tape.grad(v).cloned()).collect();
    grads.push(tape.grad(cls).cloned());
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradients for batch {}", provenance(batch)),
        });
    }
    adam.step(&mut model.tensors_mut(), &grads, lr)?;
    Ok(StepResult {
        losses: terms.iter().map(|&(t, v)| (t, tape.value(v).item())).collect(),
        total: total_value,
    })
}

fn run_phase(
    model: &mut Model,
    cfg: &RunConfig,
    phase: Phase,
    sampler: &mut PkSampler<'_>,
    log: &mut Vec<TrainRecord>,
) -> Result<()> {
    let adam_cfg = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = {
        let named = model.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(adam_cfg, &refs)
    };
    for epoch in 0..cfg.epochs {
        let lr = step_lr(cfg.learning_rate, epoch, cfg.lr_decay_every, cfg.lr_decay_factor);
        for b in 0..cfg.batches_per_epoch {
            let batch = sampler.next_batch()?;
            let step = train_step(model, &mut adam, &batch, cfg, phase, lr)?;
            log.push(TrainRecord {
                phase,
                epoch,
                batch: b,
                lr,
                losses: step.losses,
                total: step.total,
            });
        }
    }
    Ok(())
}

/// Trains a freshly initialized model on `dataset`.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let model = Model::init(cfg)?;
    train_from(cfg, dataset, model)
}

/// Trains starting from `model`.
pub fn train_from(cfg: &RunConfig, dataset: &Dataset, mut model: Model) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut sampler = PkSampler::new(
        dataset,
        cfg.batch_shape(),
        Rng::seeded(cfg.seed, stream::BATCHES),
    )?;
    let mut log = Vec::new();
    let phases: &[Phase] = match cfg.teacher_mode {
        TeacherMode::Simultaneous => &[Phase::Joint],
        TeacherMode::Pretrained => &[Phase::Teacher, Phase::Student],
    };
    for &phase in phases {
        run_phase(&mut model, cfg, phase, &mut sampler, &mut log)?;
    }
    Ok(TrainOutcome { model, log })
}

/// Runs one retrieval protocol with the configured test-time settings.
pub fn evaluate(model: &Model, dataset: &Dataset, cfg: &RunConfig, protocol: Protocol) -> Result<MetricsReport> {
    eval::run_protocol(protocol, dataset, &model.encoders, cfg.eval_clip_len, cfg.k_max)
}
