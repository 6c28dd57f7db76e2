use tkp_core::data::generate_dataset;
use tkp_core::encoders::Branch;
use tkp_core::eval::Protocol;
use tkp_core::losses::{LossSet, LossTerm};
use tkp_core::optim::{step_lr, AdamConfig, AdamState};
use tkp_core::train::{evaluate, train, Model, Phase, RunConfig, TeacherMode};
use tkp_core::Tensor;

fn short(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.epochs = 2;
    cfg.batches_per_epoch = 10;
    cfg
}

fn branch_tensors(model: &Model, branch: Branch) -> Vec<Tensor> {
    model
        .encoders
        .named()
        .into_iter()
        .filter(|(_, b, _)| *b == branch)
        .map(|(_, _, t)| t.clone())
        .collect()
}

#[test]
fn tkp_feature_only_is_a_fixed_point_at_init() {
    let mut cfg = short(0);
    cfg.epochs = 1;
    cfg.loss.enabled = LossSet::NONE;
    cfg.loss.enabled.tkp_feature = true;
    // decay alone would shrink the weights
    cfg.weight_decay = 0.0;
    let ds = generate_dataset(&cfg.data).unwrap();
    let init = Model::init(&cfg).unwrap();
    let out = train(&cfg, &ds).unwrap();
    assert!(out.log.iter().all(|r| r.total == 0.0));
    assert_eq!(branch_tensors(&out.model, Branch::Image), branch_tensors(&init, Branch::Image));
}

#[test]
fn tkp_only_training_leaves_video_branch_untouched() {
    let mut cfg = short(1);
    cfg.loss.enabled = LossSet::NONE;
    cfg.loss.enabled.tkp_feature = true;
    cfg.loss.enabled.tkp_distance = true;
    let ds = generate_dataset(&cfg.data).unwrap();
    let init = Model::init(&cfg).unwrap();
    // start away from the fixed point so the image branch really moves
    let mut start = init.clone();
    for t in start.encoders.image.layers.iter_mut() {
        t.weight.data_mut().iter_mut().for_each(|w| *w *= 1.5);
    }
    let out = tkp_core::train::train_from(&cfg, &ds, start.clone()).unwrap();
    assert_eq!(branch_tensors(&out.model, Branch::Video), branch_tensors(&start, Branch::Video));
    assert_eq!(
        out.model.encoders.nonlocal,
        start.encoders.nonlocal,
    );
    assert_ne!(branch_tensors(&out.model, Branch::Image), branch_tensors(&start, Branch::Image));
}

fn is_tkp(t: LossTerm) -> bool {
    matches!(t, LossTerm::TkpFeature | LossTerm::TkpDistance)
}

/// The two propagation terms vanish while the branches agree, so only the
/// identity part of the objective has anywhere to fall at the start.
#[test]
fn identity_losses_trend_down_over_first_batches() {
    for seed in 0..3 {
        let mut cfg = RunConfig::default().with_seed(seed);
        cfg.epochs = 1;
        cfg.batches_per_epoch = 20;
        let ds = generate_dataset(&cfg.data).unwrap();
        let out = train(&cfg, &ds).unwrap();
        let first = &out.log[0].losses;
        assert!(first.iter().filter(|(t, _)| is_tkp(*t)).all(|(_, v)| *v == 0.0));
        let totals: Vec<f64> = out
            .log
            .iter()
            .map(|r| r.losses.iter().filter(|(t, _)| !is_tkp(*t)).map(|(_, v)| v).sum())
            .collect();
        assert_eq!(totals.len(), 20);
        let ma: Vec<f64> = totals.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        let n = ma.len() as f64;
        let xm = (n - 1.0) / 2.0;
        let slope: f64 = ma.iter().enumerate().map(|(i, y)| (i as f64 - xm) * y).sum();
        assert!(slope < 0.0, "seed {seed}: {ma:?}");
        assert!(ma.last().unwrap() < &ma[0], "seed {seed}: {ma:?}");
    }
}

#[test]
fn baseline_total_trends_down_over_first_batches() {
    for seed in 0..3 {
        let mut cfg = RunConfig::default().with_seed(seed);
        cfg.epochs = 1;
        cfg.batches_per_epoch = 20;
        cfg.loss.enabled = LossSet::BASELINE;
        let ds = generate_dataset(&cfg.data).unwrap();
        let totals: Vec<f64> = train(&cfg, &ds).unwrap().log.iter().map(|r| r.total).collect();
        let ma: Vec<f64> = totals.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        assert!(ma.last().unwrap() < &ma[0], "seed {seed}: {ma:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = short(2);
    let ds = generate_dataset(&cfg.data).unwrap();
    let a = train(&cfg, &ds).unwrap();
    let b = train(&cfg, &ds).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    let ra = evaluate(&a.model, &ds, &cfg, Protocol::I2V).unwrap();
    let rb = evaluate(&b.model, &ds, &cfg, Protocol::I2V).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn log_records_every_enabled_term() {
    let cfg = short(3);
    let ds = generate_dataset(&cfg.data).unwrap();
    let out = train(&cfg, &ds).unwrap();
    assert_eq!(out.log.len(), 20);
    for (i, r) in out.log.iter().enumerate() {
        assert_eq!((r.epoch, r.batch), (i / 10, i % 10));
        assert_eq!(r.phase, Phase::Joint);
        let terms: Vec<LossTerm> = r.losses.iter().map(|(t, _)| *t).collect();
        assert_eq!(terms, LossTerm::ALL.to_vec());
        let sum: f64 = r.losses.iter().map(|(_, v)| v).sum();
        assert!((sum - r.total).abs() <= 1e-9 * r.total.abs().max(1.0));
    }
}

#[test]
fn pretrained_teacher_runs_two_phases() {
    let mut cfg = short(4);
    cfg.teacher_mode = TeacherMode::Pretrained;
    let ds = generate_dataset(&cfg.data).unwrap();
    let init = Model::init(&cfg).unwrap();
    let out = train(&cfg, &ds).unwrap();
    assert_eq!(out.log.len(), 40);
    let (teacher, student) = out.log.split_at(20);
    assert!(teacher.iter().all(|r| r.phase == Phase::Teacher));
    assert!(student.iter().all(|r| r.phase == Phase::Student));
    let teacher_terms: Vec<LossTerm> = teacher[0].losses.iter().map(|(t, _)| *t).collect();
    assert_eq!(teacher_terms, vec![LossTerm::Classification, LossTerm::V2V]);
    assert_ne!(branch_tensors(&out.model, Branch::Video), branch_tensors(&init, Branch::Video));
    assert_ne!(branch_tensors(&out.model, Branch::Image), branch_tensors(&init, Branch::Image));
}

#[test]
fn run_config_validation() {
    let ok = RunConfig::default();
    assert!(ok.validate().is_ok());
    let mut c = ok.clone();
    c.p = 11;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.encoder.trunk.input_dim = 5;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.loss.num_identities = 3;
    assert!(c.validate().is_err());
    let mut c = ok;
    c.learning_rate = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn adam_first_step_moves_by_lr_against_gradient_sign() {
    let mut p = Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut adam = AdamState::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() }, &[&p]);
    let g = Tensor::new(&[1, 3], vec![0.3, -4.0, 1e-3]).unwrap();
    adam.step(&mut [&mut p], &[Some(g)], 0.01).unwrap();
    // bias-corrected first step is lr · g / (|g| + eps)
    let want = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)];
    for (a, b) in p.data().iter().zip(want) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
    assert_eq!(adam.steps(), 1);
}

#[test]
fn coupled_weight_decay_enters_the_gradient() {
    let wd = 0.1;
    let mut p = Tensor::new(&[1, 1], vec![2.0]).unwrap();
    let mut adam = AdamState::new(AdamConfig { weight_decay: wd, ..AdamConfig::default() }, &[&p]);
    // g + wd·p = 0: no movement
    let g = Tensor::new(&[1, 1], vec![-wd * 2.0]).unwrap();
    adam.step(&mut [&mut p], &[Some(g)], 0.5).unwrap();
    assert_eq!(p.data(), &[2.0]);
}

#[test]
fn schedule_steps_down() {
    assert_eq!(step_lr(3e-4, 0, 12, 0.1), 3e-4);
    assert_eq!(step_lr(3e-4, 11, 12, 0.1), 3e-4);
    assert!((step_lr(3e-4, 12, 12, 0.1) - 3e-5).abs() < 1e-18);
    assert!((step_lr(3e-4, 29, 12, 0.1) - 3e-6).abs() < 1e-18);
}
