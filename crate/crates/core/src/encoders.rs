//! Image and video representation networks.
//!
//! Both networks share one trunk design: a stack of affine layers with ReLU
//! between them, applied independently at every position (frame, or grid cell
//! of a frame when a spatial grid is configured). The video network is the
//! same trunk with non-local attention blocks inserted after a configurable
//! layer; these mix information across every position of one clip. Spatial
//! positions are averaged per frame, then frames are averaged per clip.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrunkConfig {
    /// Channels per position of the input.
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Feature size `D`, shared by both networks.
    pub output_dim: usize,
    /// `(H, W)` positions per frame; `None` treats each frame as one position.
    pub spatial_grid: Option<(usize, usize)>,
}

impl TrunkConfig {
    pub fn positions_per_frame(&self) -> usize {
        self.spatial_grid.map_or(1, |(h, w)| h * w)
    }

    /// Length of one flattened input frame.
    pub fn frame_len(&self) -> usize {
        self.positions_per_frame() * self.input_dim
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(core::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("trunk dimensions must be positive"));
        }
        if let Some((h, w)) = self.spatial_grid {
            if h == 0 || w == 0 {
                return Err(Error::invalid("spatial grid extents must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub trunk: TrunkConfig,
    /// Number of non-local blocks in the video network (0..=4).
    pub nonlocal_blocks: usize,
    /// Blocks are inserted after this many trunk layers.
    pub nonlocal_after: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        if self.nonlocal_blocks > 4 {
            return Err(Error::invalid("at most 4 non-local blocks are supported"));
        }
        if self.nonlocal_blocks > 0 {
            if self.nonlocal_after == 0 || self.nonlocal_after > self.trunk.num_layers() {
                return Err(Error::invalid(format!(
                    "non-local insertion point {} outside 1..={}",
                    self.nonlocal_after,
                    self.trunk.num_layers()
                )));
            }
            if self.nonlocal_channels() < 2 {
                return Err(Error::invalid("non-local blocks need at least 2 channels"));
            }
        }
        Ok(())
    }

    /// Channel count `C` at the insertion point.
    pub fn nonlocal_channels(&self) -> usize {
        self.trunk.layer_dims()[self.nonlocal_after.max(1) - 1].1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub layers: Vec<Linear>,
}

/// Embedded-Gaussian attention block with a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct NonLocalParams {
    /// `C × C/2`
    pub theta: Tensor,
    pub phi: Tensor,
    pub g: Tensor,
    /// `C/2 × C`, zero at initialization so the block starts as identity.
    pub z: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Image,
    Video,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub image: Trunk,
    pub video: Trunk,
    pub nonlocal: Vec<NonLocalParams>,
}

fn gaussian(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape, data).expect("positive extents")
}

impl Trunk {
    /// He-normal weights, zero biases.
    pub fn init(cfg: &TrunkConfig, rng: &mut Rng) -> Self {
        let layers = cfg
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear {
                weight: gaussian(rng, &[i, o], libm::sqrt(2.0 / i as f64)),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Trunk { layers }
    }
}

impl NonLocalParams {
    pub fn init(channels: usize, rng: &mut Rng) -> Self {
        let inner = channels / 2;
        let std = libm::sqrt(1.0 / channels as f64);
        NonLocalParams {
            theta: gaussian(rng, &[channels, inner], std),
            phi: gaussian(rng, &[channels, inner], std),
            g: gaussian(rng, &[channels, inner], std),
            z: Tensor::zeros(&[inner, channels]),
        }
    }
}

impl EncoderParams {
    /// Draws one trunk and copies it into both networks, then draws the
    /// non-local blocks.
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let image = Trunk::init(&config.trunk, rng);
        let video = image.clone();
        let c = config.nonlocal_channels();
        let nonlocal = (0..config.nonlocal_blocks)
            .map(|_| NonLocalParams::init(c, rng))
            .collect();
        Ok(EncoderParams {
            config: config.clone(),
            image,
            video,
            nonlocal,
        })
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, Branch, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, branch, trunk) in [
            ("image", Branch::Image, &self.image),
            ("video", Branch::Video, &self.video),
        ] {
            for (i, l) in trunk.layers.iter().enumerate() {
                out.push((format!("{prefix}.layer{i}.weight"), branch, &l.weight));
                out.push((format!("{prefix}.layer{i}.bias"), branch, &l.bias));
            }
        }
        for (i, b) in self.nonlocal.iter().enumerate() {
            for (name, t) in [("theta", &b.theta), ("phi", &b.phi), ("g", &b.g), ("z", &b.z)] {
                out.push((format!("nonlocal{i}.{name}"), Branch::Video, t));
            }
        }
        out
    }

    /// Mutable counterpart of [`EncoderParams::named`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for trunk in [&mut self.image, &mut self.video] {
            for l in trunk.layers.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        for b in self.nonlocal.iter_mut() {
            out.push(&mut b.theta);
            out.push(&mut b.phi);
            out.push(&mut b.g);
            out.push(&mut b.z);
        }
        out
    }

    /// Records all parameters on `tape`. Parameters of a branch for which
    /// `trainable` returns false are recorded as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(Branch) -> bool) -> EncoderVars {
        let vars: Vec<Var> = self
            .named()
            .into_iter()
            .map(|(_, b, t)| tape.leaf(t.clone(), trainable(b)))
            .collect();
        EncoderVars::from_flat(&self.config, &vars)
    }
}

#[derive(Clone, Debug)]
pub struct TrunkVars {
    pub layers: Vec<(Var, Var)>,
}

#[derive(Clone, Copy, Debug)]
pub struct NonLocalVars {
    pub theta: Var,
    pub phi: Var,
    pub g: Var,
    pub z: Var,
}

/// Tape handles of an [`EncoderParams`], in [`EncoderParams::named`] order.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub config: EncoderConfig,
    pub image: TrunkVars,
    pub video: TrunkVars,
    pub nonlocal: Vec<NonLocalVars>,
    pub all: Vec<Var>,
}

impl EncoderVars {
    pub fn from_flat(config: &EncoderConfig, vars: &[Var]) -> Self {
        let n = config.trunk.num_layers();
        let trunk = |off: usize| TrunkVars {
            layers: (0..n).map(|i| (vars[off + 2 * i], vars[off + 2 * i + 1])).collect(),
        };
        let nonlocal = (0..config.nonlocal_blocks)
            .map(|i| {
                let o = 4 * n + 4 * i;
                NonLocalVars {
                    theta: vars[o],
                    phi: vars[o + 1],
                    g: vars[o + 2],
                    z: vars[o + 3],
                }
            })
            .collect();
        EncoderVars {
            config: config.clone(),
            image: trunk(0),
            video: trunk(2 * n),
            nonlocal,
            all: vars.to_vec(),
        }
    }
}

fn check_frames(tape: &Tape, cfg: &TrunkConfig, frames: Var) -> Result<()> {
    let s = tape.shape(frames);
    if s.len() != 2 || s[1] != cfg.frame_len() {
        return Err(Error::shape("encode", s, &[0, cfg.frame_len()]));
    }
    Ok(())
}

fn affine(tape: &mut Tape, x: Var, layer: (Var, Var)) -> Result<Var> {
    let y = tape.matmul(x, layer.0)?;
    tape.add_row(y, layer.1)
}

/// Applies trunk layers `range` to position rows `x`.
fn trunk_layers(
    tape: &mut Tape,
    trunk: &TrunkVars,
    x: Var,
    range: core::ops::Range<usize>,
) -> Result<Var> {
    let last = trunk.layers.len() - 1;
    let mut h = x;
    for i in range {
        h = affine(tape, h, trunk.layers[i])?;
        if i != last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Encodes every row of `frames` (`[rows × frame_len]`) independently with
/// the image network, giving `[rows × D]`.
pub fn encode_image(tape: &mut Tape, vars: &EncoderVars, frames: Var) -> Result<Var> {
    let cfg = &vars.config.trunk;
    check_frames(tape, cfg, frames)?;
    let hw = cfg.positions_per_frame();
    let rows = tape.shape(frames)[0];
    let x = tape.reshape(frames, &[rows * hw, cfg.input_dim])?;
    let h = trunk_layers(tape, &vars.image, x, 0..cfg.num_layers())?;
    if hw > 1 {
        tape.mean_row_groups(h, hw)
    } else {
        Ok(h)
    }
}

/// Row-normalized attention `softmax((x W_theta)(x W_phi)^T)` over the
/// positions (rows) of `x`.
pub fn nonlocal_attention(tape: &mut Tape, block: &NonLocalVars, x: Var) -> Result<Var> {
    check_channels(tape, block, x)?;
    let th = tape.matmul(x, block.theta)?;
    let ph = tape.matmul(x, block.phi)?;
    let pht = tape.transpose(ph)?;
    let scores = tape.matmul(th, pht)?;
    tape.softmax_rows(scores)
}

fn check_channels(tape: &Tape, block: &NonLocalVars, x: Var) -> Result<()> {
    let (sx, st) = (tape.shape(x), tape.shape(block.theta));
    if sx.len() != 2 || sx[1] != st[0] {
        return Err(Error::shape("nonlocal", sx, st));
    }
    Ok(())
}

/// `softmax((x W_theta)(x W_phi)^T) (x W_g) W_z + x` over all rows of `x`.
pub fn nonlocal_forward(tape: &mut Tape, block: &NonLocalVars, x: Var) -> Result<Var> {
    let rows = tape.shape(x).first().copied().unwrap_or(0);
    nonlocal_grouped(tape, block, x, rows)
}

/// Applies the block independently to consecutive groups of `group` rows;
/// each group is one clip.
pub fn nonlocal_grouped(
    tape: &mut Tape,
    block: &NonLocalVars,
    x: Var,
    group: usize,
) -> Result<Var> {
    check_channels(tape, block, x)?;
    let rows = tape.shape(x)[0];
    if group == 0 || !rows.is_multiple_of(group) {
        return Err(Error::invalid(format!(
            "nonlocal: {rows} positions not divisible into groups of {group}"
        )));
    }
    let th = tape.matmul(x, block.theta)?;
    let ph = tape.matmul(x, block.phi)?;
    let gv = tape.matmul(x, block.g)?;
    let mut mixed = Vec::with_capacity(rows / group);
    for start in (0..rows).step_by(group) {
        let t = tape.slice_rows(th, start, group)?;
        let p = tape.slice_rows(ph, start, group)?;
        let v = tape.slice_rows(gv, start, group)?;
        let pt = tape.transpose(p)?;
        let scores = tape.matmul(t, pt)?;
        let attn = tape.softmax_rows(scores)?;
        mixed.push(tape.matmul(attn, v)?);
    }
    let y = if mixed.len() == 1 {
        mixed[0]
    } else {
        tape.concat_rows(&mixed)?
    };
    let wz = tape.matmul(y, block.z)?;
    tape.add(wz, x)
}

/// Output of the video network for a batch of clips.
#[derive(Clone, Copy, Debug)]
pub struct VideoOutput {
    /// `[N·T × D]` per-frame features after temporal mixing.
    pub frame_feats: Var,
    /// `[N × D]` temporal averages of `frame_feats`.
    pub video_feats: Var,
}

/// Encodes `frames` (`[N·T × frame_len]`, clip-major) as `N` clips of
/// `clip_len` frames.
pub fn encode_video(
    tape: &mut Tape,
    vars: &EncoderVars,
    frames: Var,
    clip_len: usize,
) -> Result<VideoOutput> {
    let cfg = &vars.config.trunk;
    check_frames(tape, cfg, frames)?;
    let rows = tape.shape(frames)[0];
    if clip_len == 0 || !rows.is_multiple_of(clip_len) {
        return Err(Error::invalid(format!(
            "encode_video: {rows} frames do not form clips of length {clip_len}"
        )));
    }
    let hw = cfg.positions_per_frame();
    let layers = cfg.num_layers();
    let mut h = tape.reshape(frames, &[rows * hw, cfg.input_dim])?;
    let split = if vars.nonlocal.is_empty() {
        layers
    } else {
        vars.config.nonlocal_after
    };
    h = trunk_layers(tape, &vars.video, h, 0..split)?;
    for block in &vars.nonlocal {
        h = nonlocal_grouped(tape, block, h, clip_len * hw)?;
    }
    h = trunk_layers(tape, &vars.video, h, split..layers)?;
    let frame_feats = if hw > 1 {
        tape.mean_row_groups(h, hw)?
    } else {
        h
    };
    let video_feats = tape.mean_row_groups(frame_feats, clip_len)?;
    Ok(VideoOutput {
        frame_feats,
        video_feats,
    })
}

/// Stacks frame vectors into a `[rows × len]` tensor.
pub fn stack_frames<'a>(frames: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut len = None;
    for f in frames {
        match len {
            None => len = Some(f.len()),
            Some(l) if l != f.len() => return Err(Error::shape("stack_frames", &[l], &[f.len()])),
            _ => {}
        }
        data.extend_from_slice(f);
        rows += 1;
    }
    match len {
        Some(l) if rows > 0 => Tensor::new(&[rows, l], data),
        _ => Err(Error::invalid("empty clip")),
    }
}

/// Inference helper: image features of `frames` with no gradient tracking.
pub fn infer_image(params: &EncoderParams, frames: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, |_| false);
    let x = tape.constant(frames.clone());
    let y = encode_image(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}

/// Inference helper: `(frame_feats, video_feat)` of one clip.
pub fn infer_video(params: &EncoderParams, clip: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, |_| false);
    let x = tape.constant(clip.clone());
    let out = encode_video(&mut tape, &vars, x, clip.rows())?;
    Ok((
        tape.value(out.frame_feats).clone(),
        tape.value(out.video_feats).clone(),
    ))
}

/// Default per-run block count.
pub const DEFAULT_NONLOCAL_BLOCKS: usize = 2;

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            trunk: TrunkConfig {
                input_dim: 32,
                hidden_dims: vec![64, 64],
                output_dim: 32,
                spatial_grid: None,
            },
            nonlocal_blocks: DEFAULT_NONLOCAL_BLOCKS,
            nonlocal_after: 1,
        }
    }
}
