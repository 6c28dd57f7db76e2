use tkp_core::encoders::{
    encode_image, encode_video, infer_image, infer_video, nonlocal_attention, nonlocal_forward,
    EncoderConfig, EncoderParams, EncoderVars, NonLocalParams, NonLocalVars, TrunkConfig,
};
use tkp_core::gradcheck::{grad_check_many, GradCheckOptions};
use tkp_core::rng::Rng;
use tkp_core::{Tape, Tensor};

fn config(blocks: usize) -> EncoderConfig {
    EncoderConfig {
        trunk: TrunkConfig {
            input_dim: 6,
            hidden_dims: vec![8, 8],
            output_dim: 4,
            spatial_grid: None,
        },
        nonlocal_blocks: blocks,
        nonlocal_after: 1,
    }
}

fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Parameters with nonzero `W_z`, so the blocks actually mix frames.
fn active_params(seed: u64) -> EncoderParams {
    let mut rng = Rng::seeded(seed, 0);
    let mut p = EncoderParams::init(&config(2), &mut rng).unwrap();
    for b in &mut p.nonlocal {
        let (r, c) = (b.z.rows(), b.z.cols());
        b.z = random(&mut rng, r, c);
    }
    p
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
    Tensor::new(t.shape(), data).unwrap()
}

#[test]
fn identical_frames_give_identical_image_features() {
    let p = active_params(1);
    let frame: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.5).collect();
    let frames = Tensor::new(&[4, 6], frame.repeat(4)).unwrap();
    let out = rows_of(&infer_image(&p, &frames).unwrap());
    assert!(out.iter().all(|r| r == &out[0]));
}

#[test]
fn image_encoder_is_row_independent() {
    let p = active_params(2);
    let mut rng = Rng::seeded(2, 1);
    let frames = random(&mut rng, 5, 6);
    let base = infer_image(&p, &frames).unwrap();

    let perm = [3, 0, 4, 1, 2];
    let permuted = infer_image(&p, &permute_rows(&frames, &perm)).unwrap();
    assert_eq!(permuted, permute_rows(&base, &perm));

    let mut zeroed = frames.clone();
    zeroed.data_mut()[2 * 6..3 * 6].iter_mut().for_each(|x| *x = 0.0);
    let out = infer_image(&p, &zeroed).unwrap();
    for r in 0..5 {
        assert_eq!(out.row(r) == base.row(r), r != 2, "row {r}");
    }
}

fn bind_block(tape: &mut Tape, b: &NonLocalParams) -> NonLocalVars {
    NonLocalVars {
        theta: tape.constant(b.theta.clone()),
        phi: tape.constant(b.phi.clone()),
        g: tape.constant(b.g.clone()),
        z: tape.constant(b.z.clone()),
    }
}

#[test]
fn zero_wz_block_is_identity() {
    let mut rng = Rng::seeded(3, 0);
    let block = NonLocalParams::init(8, &mut rng);
    let x0 = random(&mut rng, 4, 8);
    let mut tape = Tape::new();
    let vars = bind_block(&mut tape, &block);
    let x = tape.constant(x0.clone());
    let y = nonlocal_forward(&mut tape, &vars, x).unwrap();
    assert_eq!(tape.value(y), &x0);

    let a = nonlocal_attention(&mut tape, &vars, x).unwrap();
    for r in 0..4 {
        let s: f64 = tape.value(a).row(r).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn nonlocal_block_is_permutation_equivariant() {
    let p = active_params(4);
    let mut rng = Rng::seeded(4, 1);
    let x0 = random(&mut rng, 4, 8);
    let perm = [2, 0, 3, 1];
    let run = |x0: &Tensor| {
        let mut tape = Tape::new();
        let vars = bind_block(&mut tape, &p.nonlocal[0]);
        let x = tape.constant(x0.clone());
        let y = nonlocal_forward(&mut tape, &vars, x).unwrap();
        tape.value(y).clone()
    };
    let a = permute_rows(&run(&x0), &perm);
    let b = run(&permute_rows(&x0, &perm));
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-12);
    }
}

#[test]
fn initial_video_network_matches_image_network() {
    let p = EncoderParams::init(&config(2), &mut Rng::seeded(5, 0)).unwrap();
    let clip = random(&mut Rng::seeded(5, 1), 4, 6);
    let (frames, _) = infer_video(&p, &clip).unwrap();
    assert_eq!(frames, infer_image(&p, &clip).unwrap());
}

#[test]
fn video_feature_is_mean_of_frame_features() {
    let p = active_params(6);
    let clip = random(&mut Rng::seeded(6, 1), 4, 6);
    let (frames, video) = infer_video(&p, &clip).unwrap();
    for c in 0..4 {
        let mean = (0..4).map(|r| frames.at(r, c)).sum::<f64>() / 4.0;
        assert!((video.at(0, c) - mean).abs() <= 1e-12);
    }
}

#[test]
fn video_feature_is_permutation_invariant() {
    let p = active_params(7);
    let clip = random(&mut Rng::seeded(7, 1), 5, 6);
    let (_, a) = infer_video(&p, &clip).unwrap();
    let (_, b) = infer_video(&p, &permute_rows(&clip, &[4, 2, 0, 1, 3])).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-12);
    }
}

#[test]
fn nonlocal_blocks_mix_frames() {
    let p = active_params(8);
    let clip = random(&mut Rng::seeded(8, 1), 4, 6);
    let (before, _) = infer_video(&p, &clip).unwrap();
    let mut moved = clip.clone();
    moved.data_mut()[6..12].iter_mut().for_each(|x| *x += 0.5);
    let (after, _) = infer_video(&p, &moved).unwrap();
    let delta: f64 = before
        .row(3)
        .iter()
        .zip(after.row(3))
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(delta > 0.0);

    // without blocks frame 3 cannot see frame 1
    let mut plain = p.clone();
    plain.config.nonlocal_blocks = 0;
    plain.nonlocal.clear();
    let (b0, _) = infer_video(&plain, &clip).unwrap();
    let (a0, _) = infer_video(&plain, &moved).unwrap();
    assert_eq!(b0.row(3), a0.row(3));
}

#[test]
fn spatial_grid_pools_positions() {
    let mut cfg = config(1);
    cfg.trunk.spatial_grid = Some((2, 2));
    let p = EncoderParams::init(&cfg, &mut Rng::seeded(9, 0)).unwrap();
    let cell: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
    // four identical cells per frame pool to the single-position feature
    let frames = Tensor::new(&[2, 24], cell.repeat(8)).unwrap();
    let pooled = infer_image(&p, &frames).unwrap();
    let mut single = p.clone();
    single.config.trunk.spatial_grid = None;
    let one = infer_image(&single, &Tensor::new(&[1, 6], cell).unwrap()).unwrap();
    for r in 0..2 {
        for (a, b) in pooled.row(r).iter().zip(one.row(0)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    let (_, v) = infer_video(&p, &frames).unwrap();
    assert_eq!(v.shape(), &[1, 4]);
}

#[test]
fn shape_errors() {
    let p = active_params(10);
    assert!(infer_image(&p, &Tensor::zeros(&[2, 5])).is_err());
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, |_| false);
    let x = tape.constant(Tensor::zeros(&[6, 6]));
    assert!(encode_video(&mut tape, &vars, x, 4).is_err());
    assert!(encode_video(&mut tape, &vars, x, 0).is_err());
}

fn flat_params(p: &EncoderParams) -> Vec<Tensor> {
    p.named().into_iter().map(|(_, _, t)| t.clone()).collect()
}

#[test]
fn image_encoder_gradient() {
    for seed in 0..5 {
        let p = active_params(20 + seed);
        let frame = random(&mut Rng::seeded(seed, 1), 1, 6);
        let cfg = p.config.clone();
        let r = grad_check_many(
            |t, vars| {
                let ev = EncoderVars::from_flat(&cfg, vars);
                let x = t.constant(frame.clone());
                let y = encode_image(t, &ev, x)?;
                Ok(t.sum(y))
            },
            &flat_params(&p),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn video_encoder_gradient() {
    for seed in 0..5 {
        let p = active_params(30 + seed);
        let clips = random(&mut Rng::seeded(seed, 2), 4, 6);
        let w = random(&mut Rng::seeded(seed, 3), 4, 4);
        let cfg = p.config.clone();
        let r = grad_check_many(
            |t, vars| {
                let ev = EncoderVars::from_flat(&cfg, vars);
                let x = t.constant(clips.clone());
                let out = encode_video(t, &ev, x, 2)?;
                let w = t.constant(w.clone());
                let prod = t.mul(out.frame_feats, w)?;
                let a = t.sum(prod);
                let b = t.frobenius_sq(out.video_feats);
                t.add(a, b)
            },
            &flat_params(&p),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn nonlocal_block_gradient() {
    for seed in 0..5 {
        let mut rng = Rng::seeded(40 + seed, 0);
        let mut block = NonLocalParams::init(8, &mut rng);
        block.z = random(&mut rng, 4, 8);
        let x0 = random(&mut rng, 4, 8);
        let w = random(&mut rng, 4, 8);
        let inputs = [x0, block.theta, block.phi, block.g, block.z];
        let r = grad_check_many(
            |t, v| {
                let b = NonLocalVars {
                    theta: v[1],
                    phi: v[2],
                    g: v[3],
                    z: v[4],
                };
                let y = nonlocal_forward(t, &b, v[0])?;
                let w = t.constant(w.clone());
                let p = t.mul(y, w)?;
                Ok(t.sum(p))
            },
            &inputs,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn trunks_have_equal_shapes_and_separate_storage() {
    let mut p = EncoderParams::init(&config(2), &mut Rng::seeded(11, 0)).unwrap();
    assert_eq!(p.image, p.video);
    p.video.layers[0].weight.data_mut()[0] += 1.0;
    assert_ne!(p.image, p.video);
    let names: Vec<String> = p.named().into_iter().map(|(n, _, _)| n).collect();
    assert_eq!(names.len(), 2 * 2 * 3 + 4 * 2);
    assert_eq!(names[0], "image.layer0.weight");
    assert_eq!(names.last().unwrap(), "nonlocal1.z");
}

#[test]
fn config_validation() {
    let mut c = config(5);
    assert!(c.validate().is_err());
    c.nonlocal_blocks = 1;
    c.nonlocal_after = 4;
    assert!(c.validate().is_err());
    c.nonlocal_after = 2;
    assert!(c.validate().is_ok());
    assert_eq!(c.nonlocal_channels(), 8);
}
