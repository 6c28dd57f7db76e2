//! The finite-difference suite: every tape primitive, every loss and the
//! attention block, each checked on small random instances over several seeds.
//!
//! Loss checks run with gradients flowing into the video features; a
//! stop-gradient is deliberately not the derivative, so checking through one
//! would only measure the detach.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoders::{
    encode_image, encode_video, nonlocal_forward, EncoderConfig, EncoderParams, EncoderVars,
    NonLocalParams, NonLocalVars, TrunkConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_many, GradCheckOptions, GradCheckReport};
use crate::losses::{
    batch_hard_triplet, classification_loss, integrated_triplet_loss, tkp_distance_loss,
    tkp_feature_loss, total_loss, BatchFeatures, LossConfig, LossSet,
};
use crate::rng::Rng;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Primitives,
    Losses,
    NonLocal,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Primitives => "primitives",
            Scope::Losses => "losses",
            Scope::NonLocal => "nonlocal",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Scope::All, Scope::Primitives, Scope::Losses, Scope::NonLocal]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown gradcheck scope {s:?}")))
    }
}

/// Worst result of one named check over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub report: GradCheckReport,
}

// micro-batch: P = K = T = 2, D = 6, 3 classes
const P: usize = 2;
const K: usize = 2;
const T: usize = 2;
const N: usize = P * K;
const D: usize = 6;
const CLASSES: usize = 3;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("positive extents")
}

fn labels() -> Vec<usize> {
    (0..N).map(|n| n / K).collect()
}

fn contract(tape: &mut Tape, y: Var, rng_seed: u64) -> Result<Var> {
    let w = random(&mut Rng::seeded(rng_seed, 1), tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn bf(v: &[Var]) -> BatchFeatures {
    BatchFeatures {
        image_feats: v[0],
        frame_feats: v[1],
        video_feats: v[2],
        labels: labels(),
    }
}

fn features(rng: &mut Rng) -> Vec<Tensor> {
    vec![
        random(rng, &[N * T, D]),
        random(rng, &[N * T, D]),
        random(rng, &[N, D]),
    ]
}

fn micro_encoder() -> EncoderConfig {
    EncoderConfig {
        trunk: TrunkConfig {
            input_dim: 5,
            hidden_dims: vec![8, 8],
            output_dim: D,
            spatial_grid: None,
        },
        nonlocal_blocks: 1,
        nonlocal_after: 1,
    }
}

/// Encoder parameters moved off the initial fixed point so every term is live.
fn active_encoder(rng: &mut Rng) -> Result<EncoderParams> {
    let mut p = EncoderParams::init(&micro_encoder(), rng)?;
    for t in p.video.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]) {
        for x in t.data_mut() {
            *x += 0.2 * rng.normal();
        }
    }
    for b in &mut p.nonlocal {
        b.z = random(rng, b.z.shape());
    }
    Ok(p)
}

type CheckFn = fn(u64, &GradCheckOptions) -> Result<GradCheckReport>;

fn unary(seed: u64, opts: &GradCheckOptions, shape: &[usize], op: fn(&mut Tape, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut rng = Rng::seeded(seed, 0);
    let x = random(&mut rng, shape);
    grad_check_many(
        |t, v| {
            let y = op(t, v[0])?;
            contract(t, y, seed)
        },
        &[x],
        opts,
    )
}

fn binary(
    seed: u64,
    opts: &GradCheckOptions,
    shapes: [&[usize]; 2],
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = Rng::seeded(seed, 0);
    let xs = [random(&mut rng, shapes[0]), random(&mut rng, shapes[1])];
    grad_check_many(
        |t, v| {
            let y = op(t, v[0], v[1])?;
            contract(t, y, seed)
        },
        &xs,
        opts,
    )
}

fn primitive_checks() -> Vec<(OpKind, CheckFn)> {
    vec![
        (OpKind::MatMul, |s, o| binary(s, o, [&[3, 4], &[4, 2]], |t, a, b| t.matmul(a, b))),
        (OpKind::Transpose, |s, o| unary(s, o, &[3, 4], |t, a| t.transpose(a))),
        (OpKind::Add, |s, o| binary(s, o, [&[3, 4], &[3, 4]], |t, a, b| t.add(a, b))),
        (OpKind::Sub, |s, o| binary(s, o, [&[3, 4], &[3, 4]], |t, a, b| t.sub(a, b))),
        (OpKind::Mul, |s, o| binary(s, o, [&[3, 4], &[3, 4]], |t, a, b| t.mul(a, b))),
        (OpKind::AddRow, |s, o| binary(s, o, [&[3, 4], &[4]], |t, a, b| t.add_row(a, b))),
        (OpKind::Scale, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.scale(a, -1.5)))),
        (OpKind::AddScalar, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.add_scalar(a, 0.5)))),
        (OpKind::Relu, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.relu(a)))),
        (OpKind::Square, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.square(a)))),
        (OpKind::Sum, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.sum(a)))),
        (OpKind::Mean, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.mean(a)))),
        (OpKind::FrobeniusSq, |s, o| unary(s, o, &[3, 4], |t, a| Ok(t.frobenius_sq(a)))),
        (OpKind::SoftmaxRows, |s, o| unary(s, o, &[4, 5], |t, a| t.softmax_rows(a))),
        (OpKind::LogSoftmaxRows, |s, o| unary(s, o, &[4, 5], |t, a| t.log_softmax_rows(a))),
        (OpKind::PairwiseEuclidean, |s, o| {
            binary(s, o, [&[4, 3], &[5, 3]], |t, a, b| t.pairwise_euclidean(a, b))
        }),
        (OpKind::SliceRows, |s, o| unary(s, o, &[5, 3], |t, a| t.slice_rows(a, 1, 3))),
        (OpKind::ConcatRows, |s, o| {
            unary(s, o, &[3, 3], |t, a| {
                let head = t.slice_rows(a, 0, 1)?;
                t.concat_rows(&[a, head])
            })
        }),
        (OpKind::MeanRowGroups, |s, o| unary(s, o, &[6, 2], |t, a| t.mean_row_groups(a, 3))),
        (OpKind::Gather, |s, o| unary(s, o, &[3, 3], |t, a| t.gather(a, &[0, 4, 4, 8]))),
        (OpKind::Reshape, |s, o| unary(s, o, &[3, 4], |t, a| t.reshape(a, &[2, 6]))),
    ]
}

fn loss_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("tkp_feature", |seed, opts| {
            let xs = features(&mut Rng::seeded(seed, 0));
            grad_check_many(|t, v| tkp_feature_loss(t, &bf(v), true), &xs, opts)
        }),
        ("tkp_distance", |seed, opts| {
            let xs = features(&mut Rng::seeded(seed, 0));
            grad_check_many(|t, v| tkp_distance_loss(t, &bf(v), true), &xs, opts)
        }),
        ("batch_hard_triplet", |seed, opts| {
            let xs = features(&mut Rng::seeded(seed, 0));
            grad_check_many(
                |t, v| {
                    let b = bf(v);
                    let li = b.image_labels(t);
                    batch_hard_triplet(t, v[0], v[2], &li, &b.labels, 0.3, false)
                },
                &xs,
                opts,
            )
        }),
        ("integrated_triplet", |seed, opts| {
            let xs = features(&mut Rng::seeded(seed, 0));
            let mut cfg = LossConfig::new(CLASSES);
            cfg.enabled = LossSet::INTEGRATED_TRIPLET;
            grad_check_many(
                |t, v| {
                    integrated_triplet_loss(t, &bf(v), &cfg)?
                        .ok_or_else(|| Error::invalid("no triplet term enabled"))
                },
                &xs,
                opts,
            )
        }),
        ("classification", |seed, opts| {
            let mut rng = Rng::seeded(seed, 0);
            let mut xs = features(&mut rng);
            xs.push(random(&mut rng, &[D, CLASSES]));
            grad_check_many(|t, v| classification_loss(t, &bf(v), v[3]), &xs, opts)
        }),
        ("total", |seed, opts| {
            let mut rng = Rng::seeded(seed, 0);
            let enc = active_encoder(&mut rng)?;
            let frames = random(&mut rng, &[N * T, enc.config.trunk.frame_len()]);
            let mut xs: Vec<Tensor> = enc.named().into_iter().map(|(_, _, t)| t.clone()).collect();
            xs.push(random(&mut rng, &[D, CLASSES]));
            let mut cfg = LossConfig::new(CLASSES);
            cfg.bp_to_video = true;
            let config = enc.config.clone();
            grad_check_many(
                |t, v| {
                    let (params, cls) = v.split_at(v.len() - 1);
                    let ev = EncoderVars::from_flat(&config, params);
                    let x = t.constant(frames.clone());
                    let image_feats = encode_image(t, &ev, x)?;
                    let out = encode_video(t, &ev, x, T)?;
                    let b = BatchFeatures {
                        image_feats,
                        frame_feats: out.frame_feats,
                        video_feats: out.video_feats,
                        labels: labels(),
                    };
                    Ok(total_loss(t, &b, cls[0], &cfg)?.total)
                },
                &xs,
                opts,
            )
        }),
    ]
}

fn nonlocal_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = Rng::seeded(seed, 0);
    let mut block = NonLocalParams::init(8, &mut rng);
    block.z = random(&mut rng, block.z.shape());
    let x = random(&mut rng, &[T * 2, 8]);
    let xs = [x, block.theta, block.phi, block.g, block.z];
    grad_check_many(
        |t, v| {
            let b = NonLocalVars {
                theta: v[1],
                phi: v[2],
                g: v[3],
                z: v[4],
            };
            let y = nonlocal_forward(t, &b, v[0])?;
            contract(t, y, seed)
        },
        &xs,
        opts,
    )
}

fn worst(name: String, f: CheckFn, seeds: &[u64], opts: &GradCheckOptions) -> Result<CheckOutcome> {
    let mut agg: Option<GradCheckReport> = None;
    for &s in seeds {
        let r = f(s, opts)?;
        agg = Some(match agg {
            None => r,
            Some(mut a) => {
                a.coordinates += r.coordinates;
                a.passed &= r.passed;
                if r.max_rel_err > a.max_rel_err {
                    a.max_rel_err = r.max_rel_err;
                    a.worst = r.worst;
                }
                a
            }
        });
    }
    let report = agg.ok_or_else(|| Error::invalid("gradcheck needs at least one seed"))?;
    Ok(CheckOutcome { name, report })
}

/// Runs every check in `scope` over `seeds`, in a fixed order.
pub fn run_suite(scope: Scope, seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::All | Scope::Primitives) {
        for (op, f) in primitive_checks() {
            out.push(worst(op.name().to_string(), f, seeds, opts)?);
        }
    }
    if matches!(scope, Scope::All | Scope::Losses) {
        for (name, f) in loss_checks() {
            out.push(worst(name.to_string(), f, seeds, opts)?);
        }
    }
    if matches!(scope, Scope::All | Scope::NonLocal) {
        out.push(worst("nonlocal_block".to_string(), nonlocal_check, seeds, opts)?);
    }
    Ok(out)
}
