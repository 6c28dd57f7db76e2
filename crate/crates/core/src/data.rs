//! Synthetic identity sequences, clip sampling and `P×K×T` batches.
//!
//! A frame of identity `i` seen by camera `c` at time `t` is
//!
//! ```text
//! x = A z_i + o_{i,c} + s_v sin(2π t / period + φ_v) u_v + ε_t
//! ```
//!
//! where `A z_i` is the identity prototype (`z_i` a latent of `identity_rank`
//! coordinates seen through a mixing matrix `A` shared by all identities, or a
//! plain isotropic draw when the rank is 0), `o_{i,c}` a per-video camera
//! offset, `u_v` a per-video drift direction and `ε_t` per-frame noise. With
//! probability `occlusion_prob` a frame then has a contiguous run of
//! `round(occlusion_mask_fraction · dim)` coordinates zeroed.
//!
//! Every identity is recorded once by each of `cameras_per_identity`
//! cameras, each recording with its own offset. Cameras `0..train_cameras`
//! form the training set, the next `query_cameras` the query set and the rest
//! the gallery, so evaluation matches fresh recordings of known identities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub cameras_per_identity: usize,
    pub train_cameras: usize,
    pub query_cameras: usize,
    /// Video lengths are drawn uniformly from `frames_min..=frames_max`.
    pub frames_min: usize,
    pub frames_max: usize,
    /// Length of one frame vector.
    pub input_dim: usize,
    /// Latent size of identity prototypes; 0 draws them isotropically.
    pub identity_rank: usize,
    /// Rank of the shared subspace holding camera offsets and drift
    /// directions; 0 draws them isotropically.
    pub nuisance_rank: usize,
    pub prototype_scale: f64,
    pub camera_offset_scale: f64,
    pub drift_scale: f64,
    pub drift_period: f64,
    pub frame_noise_scale: f64,
    pub occlusion_prob: f64,
    pub occlusion_mask_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_identities: 10,
            cameras_per_identity: 9,
            train_cameras: 2,
            query_cameras: 5,
            frames_min: 16,
            frames_max: 64,
            input_dim: 32,
            identity_rank: 8,
            nuisance_rank: 4,
            prototype_scale: 1.0,
            camera_offset_scale: 1.0,
            drift_scale: 0.2,
            drift_period: 40.0,
            frame_noise_scale: 0.5,
            occlusion_prob: 0.2,
            occlusion_mask_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::invalid("need at least 2 training identities"));
        }
        if self.train_cameras == 0 || self.query_cameras == 0 {
            return Err(Error::invalid("need at least 1 training and 1 query camera"));
        }
        if self.cameras_per_identity <= self.train_cameras + self.query_cameras {
            return Err(Error::invalid(
                "cameras_per_identity must leave at least 1 gallery camera",
            ));
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return Err(Error::invalid("frame counts must satisfy 1 <= min <= max"));
        }
        if self.input_dim == 0
            || self.identity_rank > self.input_dim
            || self.nuisance_rank > self.input_dim
        {
            return Err(Error::invalid(
                "input_dim must be positive and at least identity_rank and nuisance_rank",
            ));
        }
        let scales = [
            self.prototype_scale,
            self.camera_offset_scale,
            self.drift_scale,
            self.frame_noise_scale,
        ];
        if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("scales must be finite and non-negative"));
        }
        if !(self.drift_period > 0.0) {
            return Err(Error::invalid("drift_period must be positive"));
        }
        for p in [self.occlusion_prob, self.occlusion_mask_fraction] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("occlusion parameters must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub identity: usize,
    pub camera: usize,
    pub frames: Vec<Vec<f64>>,
}

impl VideoRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub num_identities: usize,
    pub train: Vec<VideoRecord>,
    pub query: Vec<VideoRecord>,
    pub gallery: Vec<VideoRecord>,
}

impl Dataset {
    /// Training videos grouped by identity label.
    pub fn train_by_identity(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_identities];
        for (i, v) in self.train.iter().enumerate() {
            if v.identity < self.num_identities {
                groups[v.identity].push(i);
            }
        }
        groups
    }
}

fn gaussian_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: Rng,
    mixing: Vec<Vec<f64>>,
    nuisance: Vec<Vec<f64>>,
}

impl Generator<'_> {
    fn prototype(&mut self) -> Vec<f64> {
        let (dim, rank, scale) = (
            self.cfg.input_dim,
            self.cfg.identity_rank,
            self.cfg.prototype_scale,
        );
        if rank == 0 {
            return gaussian_vec(&mut self.rng, dim, scale);
        }
        let z = gaussian_vec(&mut self.rng, rank, scale);
        (0..dim)
            .map(|d| self.mixing[d].iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Isotropic draw, or a draw inside the nuisance subspace.
    fn nuisance_vec(&mut self, scale: f64) -> Vec<f64> {
        let (dim, rank) = (self.cfg.input_dim, self.cfg.nuisance_rank);
        if rank == 0 {
            return gaussian_vec(&mut self.rng, dim, scale);
        }
        let w = gaussian_vec(&mut self.rng, rank, scale);
        (0..dim)
            .map(|d| self.nuisance[d].iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn video(&mut self, identity: usize, camera: usize, prototype: &[f64]) -> VideoRecord {
        let cfg = self.cfg;
        let dim = cfg.input_dim;
        let span = cfg.frames_max - cfg.frames_min + 1;
        let len = cfg.frames_min + self.rng.below(span);
        let offset = self.nuisance_vec(cfg.camera_offset_scale);
        let drift_dir = self.nuisance_vec(1.0);
        let phase = 2.0 * core::f64::consts::PI * self.rng.uniform();
        let mask_len = libm::round(cfg.occlusion_mask_fraction * dim as f64) as usize;
        let frames = (0..len)
            .map(|t| {
                let w = cfg.drift_scale
                    * libm::sin(2.0 * core::f64::consts::PI * t as f64 / cfg.drift_period + phase);
                let mut f: Vec<f64> = (0..dim)
                    .map(|d| {
                        prototype[d]
                            + offset[d]
                            + w * drift_dir[d]
                            + cfg.frame_noise_scale * self.rng.normal()
                    })
                    .collect();
                if self.rng.uniform() < cfg.occlusion_prob && mask_len > 0 {
                    let start = self.rng.below(dim - mask_len + 1);
                    f[start..start + mask_len].iter_mut().for_each(|x| *x = 0.0);
                }
                f
            })
            .collect();
        VideoRecord {
            identity,
            camera,
            frames,
        }
    }
}

/// Builds the training, query and gallery sets from `cfg.seed`.
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::seeded(cfg.seed, stream::DATASET);
    let basis = |rng: &mut Rng, rank: usize| -> Vec<Vec<f64>> {
        // unit per-coordinate variance for unit latents
        let std = 1.0 / libm::sqrt(rank.max(1) as f64);
        (0..cfg.input_dim)
            .map(|_| gaussian_vec(rng, rank, std))
            .collect()
    };
    let mixing = basis(&mut rng, cfg.identity_rank);
    let nuisance = basis(&mut rng, cfg.nuisance_rank);
    let mut gen = Generator {
        cfg,
        rng,
        mixing,
        nuisance,
    };
    let mut ds = Dataset {
        input_dim: cfg.input_dim,
        num_identities: cfg.num_identities,
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    for id in 0..cfg.num_identities {
        let proto = gen.prototype();
        for cam in 0..cfg.cameras_per_identity {
            let v = gen.video(id, cam, &proto);
            if cam < cfg.train_cameras {
                ds.train.push(v);
            } else if cam < cfg.train_cameras + cfg.query_cameras {
                ds.query.push(v);
            } else {
                ds.gallery.push(v);
            }
        }
    }
    Ok(ds)
}

/// Frame indices of one clip of `clip_len` frames at `stride`.
///
/// Videos shorter than the span `(clip_len - 1) · stride + 1` are treated as
/// repeated cyclically until they cover it.
pub fn sample_clip_indices(
    video_len: usize,
    clip_len: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if video_len == 0 {
        return Err(Error::invalid("cannot sample a clip from an empty video"));
    }
    if clip_len == 0 || stride == 0 {
        return Err(Error::invalid("clip length and stride must be at least 1"));
    }
    let span = (clip_len - 1) * stride + 1;
    let extended = video_len * span.div_ceil(video_len);
    let start = rng.below(extended - span + 1);
    Ok((0..clip_len)
        .map(|k| (start + k * stride) % video_len)
        .collect())
}

pub fn sample_clip<'a>(
    video: &'a VideoRecord,
    clip_len: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<Vec<&'a [f64]>> {
    Ok(sample_clip_indices(video.len(), clip_len, stride, rng)?
        .into_iter()
        .map(|i| video.frames[i].as_slice())
        .collect())
}

/// Where a clip of a batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipProvenance {
    pub video: usize,
    pub identity: usize,
    pub camera: usize,
    pub start: usize,
}

/// `N = P·K` clips of `T` frames; `frames` is `[N·T × frame_len]`, clip-major,
/// and doubles as the image batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatch {
    pub frames: Tensor,
    pub clip_len: usize,
    pub labels: Vec<usize>,
    pub provenance: Vec<ClipProvenance>,
}

impl ClipBatch {
    pub fn num_clips(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchShape {
    pub p: usize,
    pub k: usize,
    pub t: usize,
    pub stride: usize,
}

impl BatchShape {
    /// Whether every anchor of all four triplet terms has a positive and a
    /// negative in each batch.
    pub fn mining_precondition_holds(&self) -> bool {
        self.p >= 2 && self.k >= 2
    }
}

/// Draws `P` distinct identities per batch, then `K` videos of each (with
/// replacement only when the identity has fewer than `K`), then one clip per
/// video.
pub struct PkSampler<'a> {
    dataset: &'a Dataset,
    groups: Vec<Vec<usize>>,
    shape: BatchShape,
    rng: Rng,
}

impl<'a> PkSampler<'a> {
    pub fn new(dataset: &'a Dataset, shape: BatchShape, rng: Rng) -> Result<Self> {
        if shape.p == 0 || shape.k == 0 || shape.t == 0 || shape.stride == 0 {
            return Err(Error::invalid("P, K, T and stride must all be at least 1"));
        }
        let groups: Vec<Vec<usize>> = dataset.train_by_identity();
        let usable = groups.iter().filter(|g| !g.is_empty()).count();
        if usable < shape.p {
            return Err(Error::invalid(format!(
                "dataset has {usable} training identities, batch needs P = {}",
                shape.p
            )));
        }
        Ok(PkSampler {
            dataset,
            groups,
            shape,
            rng,
        })
    }

    pub fn shape(&self) -> BatchShape {
        self.shape
    }

    pub fn next_batch(&mut self) -> Result<ClipBatch> {
        let BatchShape { p, k, t, stride } = self.shape;
        let mut ids: Vec<usize> = (0..self.groups.len())
            .filter(|&i| !self.groups[i].is_empty())
            .collect();
        self.rng.shuffle(&mut ids);
        ids.truncate(p);
        let mut data = Vec::with_capacity(p * k * t * self.dataset.input_dim);
        let mut labels = Vec::with_capacity(p * k);
        let mut provenance = Vec::with_capacity(p * k);
        for &id in &ids {
            let mut videos = self.groups[id].clone();
            let picks: Vec<usize> = if videos.len() >= k {
                self.rng.shuffle(&mut videos);
                videos.truncate(k);
                videos
            } else {
                (0..k).map(|_| videos[self.rng.below(videos.len())]).collect()
            };
            for v in picks {
                let rec = &self.dataset.train[v];
                let idx = sample_clip_indices(rec.len(), t, stride, &mut self.rng)?;
                for &i in &idx {
                    data.extend_from_slice(&rec.frames[i]);
                }
                labels.push(id);
                provenance.push(ClipProvenance {
                    video: v,
                    identity: rec.identity,
                    camera: rec.camera,
                    start: idx[0],
                });
            }
        }
        Ok(ClipBatch {
            frames: Tensor::new(&[p * k * t, self.dataset.input_dim], data)?,
            clip_len: t,
            labels,
            provenance,
        })
    }
}

/// Splits a video into consecutive `clip_len`-frame clips; a short final clip
/// is filled by repeating its own frames cyclically. Yields `ceil(L / clip_len)`
/// index lists.
pub fn split_into_clips(video_len: usize, clip_len: usize) -> Result<Vec<Vec<usize>>> {
    if video_len == 0 {
        return Err(Error::invalid("cannot split an empty video"));
    }
    if clip_len == 0 {
        return Err(Error::invalid("clip length must be at least 1"));
    }
    Ok((0..video_len)
        .step_by(clip_len)
        .map(|start| {
            let have = clip_len.min(video_len - start);
            (0..clip_len).map(|k| start + k % have).collect()
        })
        .collect())
}
