//! Training objective: identity classification, the integrated batch-hard
//! triplet loss, and the two knowledge-propagation losses that pull image
//! features toward the (stop-gradient) video frame features.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The seven individually switchable loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossTerm {
    Classification,
    I2V,
    V2I,
    I2I,
    V2V,
    TkpFeature,
    TkpDistance,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::Classification,
        LossTerm::I2V,
        LossTerm::V2I,
        LossTerm::I2I,
        LossTerm::V2V,
        LossTerm::TkpFeature,
        LossTerm::TkpDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Classification => "cls",
            LossTerm::I2V => "i2v",
            LossTerm::V2I => "v2i",
            LossTerm::I2I => "i2i",
            LossTerm::V2V => "v2v",
            LossTerm::TkpFeature => "tkp_f",
            LossTerm::TkpDistance => "tkp_d",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Enable flags, one per [`LossTerm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSet {
    pub classification: bool,
    pub i2v: bool,
    pub v2i: bool,
    pub i2i: bool,
    pub v2v: bool,
    pub tkp_feature: bool,
    pub tkp_distance: bool,
}

impl LossSet {
    /// Every term enabled.
    pub const FULL: LossSet = LossSet {
        classification: true,
        i2v: true,
        v2i: true,
        i2i: true,
        v2v: true,
        tkp_feature: true,
        tkp_distance: true,
    };

    pub const NONE: LossSet = LossSet {
        classification: false,
        i2v: false,
        v2i: false,
        i2i: false,
        v2v: false,
        tkp_feature: false,
        tkp_distance: false,
    };

    /// Classification plus integrated triplet, no propagation.
    pub const BASELINE: LossSet = LossSet {
        tkp_feature: false,
        tkp_distance: false,
        ..LossSet::FULL
    };

    pub const INTEGRATED_TRIPLET: LossSet = LossSet {
        classification: false,
        ..LossSet::BASELINE
    };

    pub const I2V_TRIPLET: LossSet = LossSet {
        i2v: true,
        ..LossSet::NONE
    };

    pub fn enabled(&self, term: LossTerm) -> bool {
        match term {
            LossTerm::Classification => self.classification,
            LossTerm::I2V => self.i2v,
            LossTerm::V2I => self.v2i,
            LossTerm::I2I => self.i2i,
            LossTerm::V2V => self.v2v,
            LossTerm::TkpFeature => self.tkp_feature,
            LossTerm::TkpDistance => self.tkp_distance,
        }
    }

    pub fn set(&mut self, term: LossTerm, on: bool) {
        let slot = match term {
            LossTerm::Classification => &mut self.classification,
            LossTerm::I2V => &mut self.i2v,
            LossTerm::V2I => &mut self.v2i,
            LossTerm::I2I => &mut self.i2i,
            LossTerm::V2V => &mut self.v2v,
            LossTerm::TkpFeature => &mut self.tkp_feature,
            LossTerm::TkpDistance => &mut self.tkp_distance,
        };
        *slot = on;
    }

    pub fn terms(&self) -> impl Iterator<Item = LossTerm> + '_ {
        LossTerm::ALL.into_iter().filter(|t| self.enabled(*t))
    }

    pub fn any(&self) -> bool {
        self.terms().next().is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub enabled: LossSet,
    /// Let the propagation losses update the video network.
    pub bp_to_video: bool,
    pub num_identities: usize,
}

impl LossConfig {
    pub fn new(num_identities: usize) -> Self {
        LossConfig {
            margin: 0.3,
            enabled: LossSet::FULL,
            bp_to_video: false,
            num_identities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid("margin must be a non-negative real"));
        }
        if !self.enabled.any() {
            return Err(Error::invalid("at least one loss must be enabled"));
        }
        if self.num_identities == 0 {
            return Err(Error::invalid("num_identities must be positive"));
        }
        Ok(())
    }
}

/// Features of one `P×K×T` batch recorded on a tape.
#[derive(Clone, Debug)]
pub struct BatchFeatures {
    /// `[N·T × D]` image-network features, clip-major.
    pub image_feats: Var,
    /// `[N·T × D]` video-network frame features, same row order.
    pub frame_feats: Var,
    /// `[N × D]`
    pub video_feats: Var,
    /// Identity per clip, length `N`.
    pub labels: Vec<usize>,
}

impl BatchFeatures {
    pub fn clip_len(&self, tape: &Tape) -> usize {
        tape.shape(self.image_feats)[0] / self.labels.len().max(1)
    }

    /// Identity per image row (each clip label repeated `T` times).
    pub fn image_labels(&self, tape: &Tape) -> Vec<usize> {
        let t = self.clip_len(tape);
        self.labels
            .iter()
            .flat_map(|&l| core::iter::repeat_n(l, t))
            .collect()
    }
}

/// Single linear classifier applied to both image and video features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `D × num_identities`
    pub weight: Tensor,
}

impl ClassifierParams {
    pub fn init(dim: usize, num_identities: usize, rng: &mut Rng) -> Self {
        let std = libm::sqrt(1.0 / dim as f64);
        let data = (0..dim * num_identities)
            .map(|_| std * rng.normal())
            .collect();
        ClassifierParams {
            weight: Tensor::new(&[dim, num_identities], data).expect("positive extents"),
        }
    }
}

fn teacher(tape: &mut Tape, frame_feats: Var, bp_to_video: bool) -> Var {
    if bp_to_video {
        frame_feats
    } else {
        tape.detach(frame_feats)
    }
}

/// `(1/(N·T)) Σ ||i_nt - f_nt||²`.
pub fn tkp_feature_loss(tape: &mut Tape, bf: &BatchFeatures, bp_to_video: bool) -> Result<Var> {
    let f = teacher(tape, bf.frame_feats, bp_to_video);
    let diff = tape.sub(bf.image_feats, f)?;
    let rows = tape.shape(bf.image_feats)[0];
    let sq = tape.frobenius_sq(diff);
    Ok(tape.scale(sq, 1.0 / rows as f64))
}

/// `(1/(N·T)) ||D_img - D_vid||_F²` over the full `NT × NT` distance matrices.
pub fn tkp_distance_loss(tape: &mut Tape, bf: &BatchFeatures, bp_to_video: bool) -> Result<Var> {
    let rows = tape.shape(bf.image_feats)[0];
    if rows < 2 {
        return Err(Error::invalid(
            "tkp_distance_loss: needs at least two frames in the batch",
        ));
    }
    let f = teacher(tape, bf.frame_feats, bp_to_video);
    let d_img = tape.pairwise_euclidean(bf.image_feats, bf.image_feats)?;
    let d_vid = tape.pairwise_euclidean(f, f)?;
    let diff = tape.sub(d_img, d_vid)?;
    let sq = tape.frobenius_sq(diff);
    Ok(tape.scale(sq, 1.0 / rows as f64))
}

/// For each anchor row of `dist`, the column of its farthest positive and of
/// its nearest negative. Ties go to the lowest column index. With
/// `exclude_self`, column `a` is never a candidate for anchor `a`.
pub fn mine_hardest(
    dist: &Tensor,
    labels_a: &[usize],
    labels_b: &[usize],
    exclude_self: bool,
) -> Result<Vec<(usize, usize)>> {
    if dist.rows() != labels_a.len() || dist.cols() != labels_b.len() {
        return Err(Error::shape(
            "mine_hardest",
            dist.shape(),
            &[labels_a.len(), labels_b.len()],
        ));
    }
    let mut out = Vec::with_capacity(labels_a.len());
    for (a, &la) in labels_a.iter().enumerate() {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for (b, &lb) in labels_b.iter().enumerate() {
            if exclude_self && a == b {
                continue;
            }
            let d = dist.at(a, b);
            if la == lb {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((b, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((b, d));
            }
        }
        let missing = |kind| Error::MissingCandidate {
            anchor: a,
            identity: la,
            kind,
        };
        let p = pos.ok_or_else(|| missing("positive"))?.0;
        let n = neg.ok_or_else(|| missing("negative"))?.0;
        out.push((p, n));
    }
    Ok(out)
}

/// Mean over anchors of `[m + max_pos d(a,p) - min_neg d(a,n)]_+`.
pub fn batch_hard_triplet(
    tape: &mut Tape,
    anchors: Var,
    candidates: Var,
    labels_a: &[usize],
    labels_b: &[usize],
    margin: f64,
    exclude_self: bool,
) -> Result<Var> {
    let dist = tape.pairwise_euclidean(anchors, candidates)?;
    let cols = labels_b.len();
    let picks = mine_hardest(tape.value(dist), labels_a, labels_b, exclude_self)?;
    let pos_idx: Vec<usize> = picks.iter().enumerate().map(|(a, p)| a * cols + p.0).collect();
    let neg_idx: Vec<usize> = picks.iter().enumerate().map(|(a, p)| a * cols + p.1).collect();
    let dp = tape.gather(dist, &pos_idx)?;
    let dn = tape.gather(dist, &neg_idx)?;
    let gap = tape.sub(dp, dn)?;
    let shifted = tape.add_scalar(gap, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// Value of one of the four triplet terms.
pub fn triplet_term(tape: &mut Tape, bf: &BatchFeatures, term: LossTerm, margin: f64) -> Result<Var> {
    let img_labels = bf.image_labels(tape);
    let vid_labels = &bf.labels;
    let (a, b, la, lb, own) = match term {
        LossTerm::I2V => (bf.image_feats, bf.video_feats, &img_labels, vid_labels, false),
        LossTerm::V2I => (bf.video_feats, bf.image_feats, vid_labels, &img_labels, false),
        LossTerm::I2I => (bf.image_feats, bf.image_feats, &img_labels, &img_labels, true),
        LossTerm::V2V => (bf.video_feats, bf.video_feats, vid_labels, vid_labels, true),
        other => {
            return Err(Error::invalid(format!(
                "{} is not a triplet term",
                other.name()
            )))
        }
    };
    batch_hard_triplet(tape, a, b, la, lb, margin, own)
}

/// `L_I2V + L_V2I + L_I2I + L_V2V`, skipping disabled terms. Returns `None`
/// when all four are disabled.
pub fn integrated_triplet_loss(
    tape: &mut Tape,
    bf: &BatchFeatures,
    cfg: &LossConfig,
) -> Result<Option<Var>> {
    let mut total = None;
    for term in [LossTerm::I2V, LossTerm::V2I, LossTerm::I2I, LossTerm::V2V] {
        if cfg.enabled.enabled(term) {
            let v = triplet_term(tape, bf, term, cfg.margin)?;
            total = Some(match total {
                None => v,
                Some(acc) => tape.add(acc, v)?,
            });
        }
    }
    Ok(total)
}

fn cross_entropy(tape: &mut Tape, feats: Var, weight: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.shape(weight)[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} identities"
        )));
    }
    let logits = tape.matmul(feats, weight)?;
    let logp = tape.log_softmax_rows(logits)?;
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| r * classes + l)
        .collect();
    let picked = tape.gather(logp, &idx)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Mean cross-entropy over image rows plus mean cross-entropy over videos,
/// both scored by the same classifier `weight`.
pub fn classification_loss(tape: &mut Tape, bf: &BatchFeatures, weight: Var) -> Result<Var> {
    let img_labels = bf.image_labels(tape);
    let li = cross_entropy(tape, bf.image_feats, weight, &img_labels)?;
    let lv = cross_entropy(tape, bf.video_feats, weight, &bf.labels)?;
    tape.add(li, lv)
}

/// Evaluated objective with every enabled term kept for logging.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub terms: Vec<(LossTerm, Var)>,
}

impl LossBreakdown {
    pub fn values(&self, tape: &Tape) -> Vec<(LossTerm, f64)> {
        self.terms
            .iter()
            .map(|&(t, v)| (t, tape.value(v).item()))
            .collect()
    }
}

/// Unit-weight sum `L_C + L_T + L_TKP^F + L_TKP^D` of the enabled terms.
pub fn total_loss(
    tape: &mut Tape,
    bf: &BatchFeatures,
    classifier: Var,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let mut terms = Vec::new();
    for term in cfg.enabled.terms() {
        let v = match term {
            LossTerm::Classification => classification_loss(tape, bf, classifier)?,
            LossTerm::TkpFeature => tkp_feature_loss(tape, bf, cfg.bp_to_video)?,
            LossTerm::TkpDistance => tkp_distance_loss(tape, bf, cfg.bp_to_video)?,
            t => triplet_term(tape, bf, t, cfg.margin)?,
        };
        terms.push((term, v));
    }
    let mut total = terms[0].1;
    for &(_, v) in &terms[1..] {
        total = tape.add(total, v)?;
    }
    Ok(LossBreakdown { total, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feats(tape: &mut Tape, rows: &[&[f64]]) -> Var {
        tape.param(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn tkp_feature_single_pair() {
        let mut t = Tape::new();
        let i = feats(&mut t, &[&[1.0, 0.0]]);
        let f = feats(&mut t, &[&[0.0, 0.0]]);
        let bf = BatchFeatures {
            image_feats: i,
            frame_feats: f,
            video_feats: f,
            labels: vec![0],
        };
        let l = tkp_feature_loss(&mut t, &bf, false).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        assert!(tkp_distance_loss(&mut t, &bf, false).is_err());
    }

    #[test]
    fn tkp_distance_two_frames() {
        let mut t = Tape::new();
        let i = feats(&mut t, &[&[0.0, 0.0], &[2.0, 0.0]]);
        let f = feats(&mut t, &[&[0.0, 0.0], &[0.0, 1.0]]);
        let v = feats(&mut t, &[&[0.0, 0.5]]);
        let bf = BatchFeatures {
            image_feats: i,
            frame_feats: f,
            video_feats: v,
            labels: vec![0],
        };
        let l = tkp_distance_loss(&mut t, &bf, false).unwrap();
        assert!((t.value(l).item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hinge_cases() {
        // anchor at origin, positive at 0.2, negative at 1.0
        for (dp, dn, expect) in [(0.2, 1.0, 0.0), (0.8, 0.9, 0.2)] {
            let mut t = Tape::new();
            let a = feats(&mut t, &[&[0.0]]);
            let b = feats(&mut t, &[&[dp], &[dn]]);
            let l = batch_hard_triplet(&mut t, a, b, &[0], &[0, 1], 0.3, false).unwrap();
            assert!((t.value(l).item() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_candidates_name_identity() {
        let dist = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let err = mine_hardest(&dist, &[3, 4], &[3, 4], true).unwrap_err();
        assert_eq!(
            err,
            Error::MissingCandidate {
                anchor: 0,
                identity: 3,
                kind: "positive"
            }
        );
        let err = mine_hardest(&dist, &[3, 3], &[3, 3], false).unwrap_err();
        assert!(matches!(err, Error::MissingCandidate { kind: "negative", .. }));
    }

    #[test]
    fn classification_label_out_of_range() {
        let mut t = Tape::new();
        let i = feats(&mut t, &[&[1.0, 0.0]]);
        let w = feats(&mut t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let bf = BatchFeatures {
            image_feats: i,
            frame_feats: i,
            video_feats: i,
            labels: vec![2],
        };
        assert!(classification_loss(&mut t, &bf, w).is_err());
    }

    #[test]
    fn config_requires_some_loss() {
        let mut cfg = LossConfig::new(4);
        assert!(cfg.validate().is_ok());
        assert!(!cfg.bp_to_video);
        cfg.enabled = LossSet::NONE;
        assert!(cfg.validate().is_err());
    }
}
