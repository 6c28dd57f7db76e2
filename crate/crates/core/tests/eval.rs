use proptest::prelude::*;
use tkp_core::data::{split_into_clips, Dataset, VideoRecord};
use tkp_core::encoders::{infer_video, EncoderConfig, EncoderParams, TrunkConfig};
use tkp_core::eval::{
    cmc, extract_gallery_features, mean_average_precision, rank_queries, run_protocol, score,
    video_feature, GalleryIndex, Protocol,
};
use tkp_core::rng::Rng;
use tkp_core::Tensor;

fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// AP straight from the definition: precision at each relevant position.
fn ap_oracle(relevant_at: &[bool]) -> f64 {
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in relevant_at.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / hits as f64
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut p in permutations(rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

#[test]
fn ap_matches_enumeration_of_all_orderings() {
    let gallery_ids = [1, 0, 1, 0, 0, 0];
    let perms = permutations((0..6).collect());
    assert_eq!(perms.len(), 720);
    for perm in perms {
        let relevant: Vec<bool> = perm.iter().map(|&g| gallery_ids[g] == 1).collect();
        let got = mean_average_precision(std::slice::from_ref(&perm), &[1], &gallery_ids).unwrap();
        assert_eq!(got, ap_oracle(&relevant), "{perm:?}");
    }
}

#[test]
fn cmc_matches_first_hit_oracle() {
    let mut rng = Rng::seeded(1, 0);
    for _ in 0..100 {
        let queries = 1 + rng.below(10);
        let gallery = 2 + rng.below(15);
        let ids = 1 + rng.below(4);
        let mut gallery_ids: Vec<usize> = (0..gallery).map(|_| rng.below(ids)).collect();
        // every identity present at least once
        for (i, g) in gallery_ids.iter_mut().take(ids).enumerate() {
            *g = i;
        }
        let query_ids: Vec<usize> = (0..queries).map(|_| rng.below(ids.min(gallery))).collect();
        let rankings: Vec<Vec<usize>> = (0..queries)
            .map(|_| {
                let mut r: Vec<usize> = (0..gallery).collect();
                rng.shuffle(&mut r);
                r
            })
            .collect();
        let k_max = 1 + rng.below(gallery);
        let got = cmc(&rankings, &query_ids, &gallery_ids, k_max).unwrap();
        let first: Vec<usize> = rankings
            .iter()
            .zip(&query_ids)
            .map(|(r, &q)| r.iter().position(|&g| gallery_ids[g] == q).unwrap())
            .collect();
        let want: Vec<f64> = (1..=k_max)
            .map(|k| first.iter().filter(|&&f| f < k).count() as f64 / queries as f64)
            .collect();
        assert_eq!(got, want);
    }
}

#[test]
fn cmc_all_first_rank_is_all_ones() {
    let r = vec![vec![0, 1], vec![1, 0]];
    assert_eq!(cmc(&r, &[5, 6], &[5, 6], 2).unwrap(), vec![1.0, 1.0]);
    let m = mean_average_precision(&[vec![0, 1]], &[5], &[5, 6]).unwrap();
    assert_eq!(m, 1.0);
}

#[test]
fn ranking_matches_independent_sort() {
    let mut rng = Rng::seeded(2, 0);
    let q = random(&mut rng, 5, 4);
    let g = random(&mut rng, 20, 4);
    let got = rank_queries(&q, &g).unwrap();
    for (i, ranking) in got.iter().enumerate() {
        let mut keyed: Vec<(f64, usize)> = (0..20)
            .map(|j| {
                let d: f64 = (0..4).map(|c| (q.at(i, c) - g.at(j, c)).powi(2)).sum();
                (d, j)
            })
            .collect();
        keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = keyed.into_iter().map(|(_, j)| j).collect();
        assert_eq!(ranking, &want);
    }
}

#[test]
fn exact_match_ranks_first_and_ties_keep_order() {
    let g = Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 2.0], &[5.0, 5.0], &[0.0, 2.0]]).unwrap();
    let q = Tensor::from_rows(&[&[0.0, 2.0]]).unwrap();
    assert_eq!(rank_queries(&q, &g).unwrap(), vec![vec![1, 3, 0, 2]]);
}

fn encoder() -> EncoderParams {
    let cfg = EncoderConfig {
        trunk: TrunkConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            output_dim: 4,
            spatial_grid: None,
        },
        nonlocal_blocks: 1,
        nonlocal_after: 1,
    };
    let mut rng = Rng::seeded(3, 0);
    let mut p = EncoderParams::init(&cfg, &mut rng).unwrap();
    p.nonlocal[0].z = random(&mut rng, 4, 8);
    p
}

fn video(identity: usize, camera: usize, frames: Vec<Vec<f64>>) -> VideoRecord {
    VideoRecord {
        identity,
        camera,
        frames,
    }
}

#[test]
fn single_clip_and_constant_videos() {
    let p = encoder();
    let mut rng = Rng::seeded(4, 0);
    let clip = random(&mut rng, 32, 4);
    let frames: Vec<Vec<f64>> = (0..32).map(|r| clip.row(r).to_vec()).collect();
    let (_, pooled) = infer_video(&p, &clip).unwrap();
    let got = video_feature(&p, &video(0, 0, frames), 32).unwrap();
    for (a, b) in got.iter().zip(pooled.data()) {
        assert!((a - b).abs() <= 1e-12);
    }

    let frame = vec![0.3, -0.2, 1.0, 0.5];
    let long = video_feature(&p, &video(0, 0, vec![frame.clone(); 64]), 32).unwrap();
    let short = video_feature(&p, &video(0, 0, vec![frame; 7]), 32).unwrap();
    for (a, b) in long.iter().zip(&short) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn clip_count_follows_ceiling() {
    for l in 1..=100 {
        let clips = split_into_clips(l, 32).unwrap();
        assert_eq!(clips.len(), l.div_ceil(32), "L = {l}");
        assert!(clips.iter().flatten().all(|&i| i < l));
        assert!(clips.iter().all(|c| c.len() == 32));
    }
    assert!(split_into_clips(0, 32).is_err());
}

#[test]
fn perfectly_separable_dataset_scores_one() {
    // freshly initialized: both networks compute the same frame features
    let mut p = encoder();
    p.nonlocal[0].z = Tensor::zeros(&[4, 8]);
    let mut rng = Rng::seeded(5, 0);
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for id in 0..6 {
        let f: Vec<f64> = (0..4).map(|_| 3.0 * rng.normal()).collect();
        query.push(video(id, 0, vec![f.clone()]));
        gallery.push(video(id, 1, vec![f; 40]));
    }
    let ds = Dataset {
        input_dim: 4,
        num_identities: 6,
        train: Vec::new(),
        query,
        gallery,
    };
    for protocol in Protocol::ALL {
        let r = run_protocol(protocol, &ds, &p, 32, 5).unwrap();
        assert_eq!(r.top(1), 1.0, "{protocol}");
        assert_eq!(r.map, 1.0);
        assert_eq!(r.num_queries, 6);
        assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn untrained_encoder_on_signal_free_data_is_at_chance() {
    let p = encoder();
    let mut rng = Rng::seeded(6, 0);
    let noise = |rng: &mut Rng, n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..4).map(|_| rng.normal()).collect()).collect()
    };
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for id in 0..10 {
        query.push(video(id, 0, noise(&mut rng, 8)));
        for cam in 1..4 {
            gallery.push(video(id, cam, noise(&mut rng, 8)));
        }
    }
    let ds = Dataset {
        input_dim: 4,
        num_identities: 10,
        train: Vec::new(),
        query,
        gallery,
    };
    let observed = run_protocol(Protocol::I2V, &ds, &p, 32, 20).unwrap().map;

    let q = tkp_core::eval::first_frame_features(&ds.query, &p).unwrap();
    let g = extract_gallery_features(&ds.gallery, &p, 32).unwrap();
    let rankings = rank_queries(&q.features, &g.features).unwrap();
    let mut null: Vec<f64> = (0..400)
        .map(|_| {
            let mut ids = g.identities.clone();
            rng.shuffle(&mut ids);
            mean_average_precision(&rankings, &q.identities, &ids).unwrap()
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let (lo, hi) = (null[10], null[389]);
    assert!(lo <= observed && observed <= hi, "{observed} outside [{lo}, {hi}]");
}

#[test]
fn missing_relevant_gallery_item_names_query() {
    let q = GalleryIndex {
        features: Tensor::zeros(&[2, 2]),
        identities: vec![0, 9],
        cameras: vec![0, 0],
    };
    let g = GalleryIndex {
        features: Tensor::zeros(&[2, 2]),
        identities: vec![0, 1],
        cameras: vec![1, 1],
    };
    let err = score(Protocol::I2V, &q, &g, 2).unwrap_err();
    assert_eq!(err.to_string(), tkp_core::Error::NoRelevant { query: 1, identity: 9 }.to_string());
}

proptest! {
    #[test]
    fn rankings_are_permutations(seed in 0u64..500) {
        let mut rng = Rng::seeded(seed, 1);
        let q = random(&mut rng, 3, 2);
        let g = random(&mut rng, 9, 2);
        for mut r in rank_queries(&q, &g).unwrap() {
            r.sort_unstable();
            prop_assert_eq!(r, (0..9).collect::<Vec<_>>());
        }
    }

    #[test]
    fn metrics_invariant_under_joint_isometry(seed in 0u64..500, angle in 0.0f64..std::f64::consts::TAU, dx in -5.0f64..5.0) {
        let mut rng = Rng::seeded(seed, 2);
        let q = random(&mut rng, 4, 2);
        let g = random(&mut rng, 8, 2);
        let qi = vec![0, 1, 2, 3];
        let gi = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let (c, s) = (angle.cos(), angle.sin());
        let mv = |t: &Tensor| {
            let d = (0..t.rows())
                .flat_map(|r| {
                    let (x, y) = (t.at(r, 0), t.at(r, 1));
                    [c * x - s * y + dx, s * x + c * y - dx]
                })
                .collect();
            Tensor::new(t.shape(), d).unwrap()
        };
        let r0 = rank_queries(&q, &g).unwrap();
        let r1 = rank_queries(&mv(&q), &mv(&g)).unwrap();
        prop_assert_eq!(&r0, &r1);
        prop_assert_eq!(
            mean_average_precision(&r0, &qi, &gi).unwrap(),
            mean_average_precision(&r1, &qi, &gi).unwrap()
        );
        prop_assert_eq!(cmc(&r0, &qi, &gi, 8).unwrap(), cmc(&r1, &qi, &gi, 8).unwrap());
    }
}
