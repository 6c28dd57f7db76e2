//! Retrieval evaluation: gallery feature extraction, ranking, CMC and mAP
//! for the image-to-video, image-to-image and video-to-video protocols.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{split_into_clips, Dataset, VideoRecord};
use crate::encoders::{encode_image, encode_video, stack_frames, EncoderParams};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Gallery clip length used at test time.
pub const GALLERY_CLIP_LEN: usize = 32;
/// Deepest CMC rank reported by default.
pub const DEFAULT_K_MAX: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    I2V,
    I2I,
    V2V,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::I2V, Protocol::I2I, Protocol::V2V];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::I2V => "I2V",
            Protocol::I2I => "I2I",
            Protocol::V2V => "V2V",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown protocol {s:?}")))
    }
}

/// Pooled features of a set of videos (or images) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    /// `[items × D]`
    pub features: Tensor,
    pub identities: Vec<usize>,
    pub cameras: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    /// `cmc[k-1]` is the top-k accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries: usize,
}

impl MetricsReport {
    pub fn top(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }
}

/// Video-network feature of a whole video: the mean of the pooled features of
/// its consecutive `clip_len`-frame clips.
pub fn video_feature(params: &EncoderParams, video: &VideoRecord, clip_len: usize) -> Result<Vec<f64>> {
    let clips = split_into_clips(video.len(), clip_len)?;
    let frames = stack_frames(
        clips
            .iter()
            .flat_map(|c| c.iter().map(|&i| video.frames[i].as_slice())),
    )?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, |_| false);
    let x = tape.constant(frames);
    let out = encode_video(&mut tape, &vars, x, clip_len)?;
    let per_clip = tape.mean_row_groups(out.video_feats, clips.len())?;
    Ok(tape.value(per_clip).data().to_vec())
}

pub fn extract_gallery_features(
    videos: &[VideoRecord],
    params: &EncoderParams,
    clip_len: usize,
) -> Result<GalleryIndex> {
    let mut data = Vec::new();
    for v in videos {
        data.extend(video_feature(params, v, clip_len)?);
    }
    index_from(videos, data)
}

/// Image-network features of the first frame of every video.
pub fn first_frame_features(videos: &[VideoRecord], params: &EncoderParams) -> Result<GalleryIndex> {
    let frames = stack_frames(videos.iter().map(|v| {
        v.frames.first().map_or(&[][..], |f| f.as_slice())
    }))?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, |_| false);
    let x = tape.constant(frames);
    let y = encode_image(&mut tape, &vars, x)?;
    index_from(videos, tape.value(y).data().to_vec())
}

fn index_from(videos: &[VideoRecord], data: Vec<f64>) -> Result<GalleryIndex> {
    if videos.is_empty() {
        return Err(Error::invalid("no videos to index"));
    }
    let d = data.len() / videos.len();
    let features = Tensor::new(&[videos.len(), d], data)?;
    if !features.is_finite() {
        return Err(Error::NonFinite {
            context: "gallery features".into(),
        });
    }
    Ok(GalleryIndex {
        features,
        identities: videos.iter().map(|v| v.identity).collect(),
        cameras: videos.iter().map(|v| v.camera).collect(),
    })
}

/// Euclidean distance computed from coordinate differences.
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Gallery indices sorted by ascending distance for each query row; equal
/// distances keep gallery order.
pub fn rank_queries(queries: &Tensor, gallery: &Tensor) -> Result<Vec<Vec<usize>>> {
    if queries.cols() != gallery.cols() {
        return Err(Error::shape("rank_queries", queries.shape(), gallery.shape()));
    }
    Ok((0..queries.rows())
        .map(|q| {
            let dist: Vec<f64> = (0..gallery.rows())
                .map(|g| euclidean(queries.row(q), gallery.row(g)))
                .collect();
            let mut order: Vec<usize> = (0..gallery.rows()).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            order
        })
        .collect())
}

/// 0-based rank of every relevant gallery item in each query's ranking.
fn hit_ranks(
    rankings: &[Vec<usize>],
    query_ids: &[usize],
    gallery_ids: &[usize],
) -> Result<Vec<Vec<usize>>> {
    if rankings.len() != query_ids.len() {
        return Err(Error::shape("metrics", &[rankings.len()], &[query_ids.len()]));
    }
    rankings
        .iter()
        .zip(query_ids)
        .enumerate()
        .map(|(q, (ranking, &id))| {
            let hits: Vec<usize> = ranking
                .iter()
                .enumerate()
                .filter(|(_, &g)| gallery_ids[g] == id)
                .map(|(r, _)| r)
                .collect();
            if hits.is_empty() {
                Err(Error::NoRelevant { query: q, identity: id })
            } else {
                Ok(hits)
            }
        })
        .collect()
}

/// Top-k accuracy for `k = 1..=k_max`.
pub fn cmc(
    rankings: &[Vec<usize>],
    query_ids: &[usize],
    gallery_ids: &[usize],
    k_max: usize,
) -> Result<Vec<f64>> {
    let hits = hit_ranks(rankings, query_ids, gallery_ids)?;
    let mut counts = alloc::vec![0usize; k_max];
    for h in &hits {
        for c in counts.iter_mut().skip(h[0]) {
            *c += 1;
        }
    }
    let n = hits.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Mean over queries of the average of precision@rank at each relevant item.
pub fn mean_average_precision(
    rankings: &[Vec<usize>],
    query_ids: &[usize],
    gallery_ids: &[usize],
) -> Result<f64> {
    let hits = hit_ranks(rankings, query_ids, gallery_ids)?;
    let total: f64 = hits
        .iter()
        .map(|h| {
            h.iter()
                .enumerate()
                .map(|(found, &r)| (found + 1) as f64 / (r + 1) as f64)
                .sum::<f64>()
                / h.len() as f64
        })
        .sum();
    Ok(total / hits.len().max(1) as f64)
}

/// Scores already-extracted query and gallery features.
pub fn score(
    protocol: Protocol,
    queries: &GalleryIndex,
    gallery: &GalleryIndex,
    k_max: usize,
) -> Result<MetricsReport> {
    let rankings = rank_queries(&queries.features, &gallery.features)?;
    Ok(MetricsReport {
        protocol,
        cmc: cmc(&rankings, &queries.identities, &gallery.identities, k_max)?,
        map: mean_average_precision(&rankings, &queries.identities, &gallery.identities)?,
        num_queries: rankings.len(),
    })
}

/// Query and gallery features of `dataset` under `protocol`.
pub fn protocol_features(
    protocol: Protocol,
    dataset: &Dataset,
    params: &EncoderParams,
    clip_len: usize,
) -> Result<(GalleryIndex, GalleryIndex)> {
    Ok(match protocol {
        Protocol::I2V => (
            first_frame_features(&dataset.query, params)?,
            extract_gallery_features(&dataset.gallery, params, clip_len)?,
        ),
        Protocol::I2I => (
            first_frame_features(&dataset.query, params)?,
            first_frame_features(&dataset.gallery, params)?,
        ),
        Protocol::V2V => (
            extract_gallery_features(&dataset.query, params, clip_len)?,
            extract_gallery_features(&dataset.gallery, params, clip_len)?,
        ),
    })
}

pub fn run_protocol(
    protocol: Protocol,
    dataset: &Dataset,
    params: &EncoderParams,
    clip_len: usize,
    k_max: usize,
) -> Result<MetricsReport> {
    let (q, g) = protocol_features(protocol, dataset, params, clip_len)?;
    score(protocol, &q, &g, k_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cmc_single_query_rank_two() {
        let r = vec![vec![0, 1, 2]];
        let c = cmc(&r, &[7], &[3, 7, 4], 3).unwrap();
        assert_eq!(c, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn ap_ranks_one_and_three() {
        let r = vec![vec![0, 1, 2, 3, 4]];
        let m = mean_average_precision(&r, &[1], &[1, 0, 1, 0, 0]).unwrap();
        assert!((m - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn missing_relevant_is_error() {
        let r = vec![vec![0, 1]];
        let err = cmc(&r, &[9], &[1, 2], 2).unwrap_err();
        assert_eq!(err, Error::NoRelevant { query: 0, identity: 9 });
    }

    #[test]
    fn ranking_orders_by_distance_and_is_stable() {
        let q = Tensor::from_rows(&[&[0.0]]).unwrap();
        let g = Tensor::from_rows(&[&[2.0], &[1.0], &[-1.0]]).unwrap();
        assert_eq!(rank_queries(&q, &g).unwrap(), vec![vec![1, 2, 0]]);
        let bad = Tensor::from_rows(&[&[0.0, 1.0]]).unwrap();
        assert!(rank_queries(&bad, &g).is_err());
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("i2v".parse::<Protocol>().unwrap(), Protocol::I2V);
        assert!("x2y".parse::<Protocol>().is_err());
    }
}
