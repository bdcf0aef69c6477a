use super::*;
use crate::data::{generate_sample, GeneratorConfig};

fn toy_dataset(train: usize, test: usize) -> Dataset {
    let cfg = GeneratorConfig {
        dhw: (4, 16, 16),
        radius_axial: (1.0, 1.5),
        radius_inplane: (3.0, 5.0),
        ..GeneratorConfig::default()
    };
    let make = |i: u64| generate_sample(&cfg, 100 + i).unwrap();
    Dataset::from_samples(
        (0..train as u64).map(make).collect(),
        (train as u64..(train + test) as u64).map(make).collect(),
    )
}

fn toy_config() -> TrainingConfig {
    TrainingConfig {
        dhw: (4, 16, 16),
        epochs: 2,
        batch_size: 3,
        seed: 9,
        ..TrainingConfig::default()
    }
}

fn params_of<N: Network>(n: &N) -> Vec<Tensor> {
    n.params().tensors().to_vec()
}

#[test]
fn derived_seeds_are_stable_and_label_specific() {
    assert_eq!(derive_seed(3, "segmentor"), derive_seed(3, "segmentor"));
    let labels = ["segmentor", "ds", "dp", "order"];
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            assert_ne!(derive_seed(3, a), derive_seed(3, b));
        }
    }
    assert_ne!(derive_seed(3, "ds"), derive_seed(4, "ds"));
    let mut h = Sha256::new();
    h.update(b"order");
    h.update(7u64.to_le_bytes());
    let d = h.finalize();
    let mut le = [0u8; 8];
    le.copy_from_slice(&d[..8]);
    assert_eq!(derive_seed(7, "order"), u64::from_le_bytes(le));
}

#[test]
fn segmentor_init_is_shared_across_variants() {
    let full = toy_config();
    let (s_full, ds, dp) = init_networks(&full).unwrap();
    assert!(ds.unwrap().has_attention() && dp.is_some());
    let bare = TrainingConfig {
        use_ds: false,
        use_attention: false,
        use_dp: false,
        ..full
    };
    let (s_bare, ds, dp) = init_networks(&bare).unwrap();
    assert!(ds.is_none() && dp.is_none());
    assert_eq!(params_of(&s_full), params_of(&s_bare));
    let no_attn = TrainingConfig {
        use_attention: false,
        ..full
    };
    assert!(!init_networks(&no_attn).unwrap().1.unwrap().has_attention());
}

#[test]
fn discriminator_update_leaves_segmentor_untouched() {
    let data = toy_dataset(1, 1);
    let mut t = Trainer::new(&toy_config(), &data).unwrap();
    let sample = &data.train[0];
    let batch = &slice_batches(sample, 3, SliceOrder::Sequential).unwrap()[0];
    let (prob, feats) = t.segmentor.net.predict(&batch.images).unwrap();
    let s_before = params_of(&t.segmentor.net);
    let ds_before = params_of(&t.ds.as_ref().unwrap().net);
    let dp_before = params_of(&t.dp.as_ref().unwrap().net);
    let mut acc = EpochAccum::default();
    t.ds_update(batch, &prob, &feats, &mut acc).unwrap();
    let proj = crate::projection::project_prediction_stack(&t.segmentor.net, &sample.volume).unwrap();
    t.dp_update(sample, &proj.image, &mut acc).unwrap();
    assert_eq!(params_of(&t.segmentor.net), s_before);
    assert_eq!(t.segmentor.opt.t, 0);
    assert_ne!(params_of(&t.ds.as_ref().unwrap().net), ds_before);
    assert_ne!(params_of(&t.dp.as_ref().unwrap().net), dp_before);
    assert!(acc.l_ds.value().is_finite() && acc.l_dp.value().is_finite());
}

#[test]
fn segmentor_update_leaves_discriminators_untouched() {
    let data = toy_dataset(1, 1);
    for tap in [TapGradient::Blocked, TapGradient::Open] {
        let cfg = TrainingConfig {
            attention_tap_gradient: tap,
            ..toy_config()
        };
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let sample = &data.train[0];
        let batches = slice_batches(sample, 3, SliceOrder::Sequential).unwrap();
        let s_before = params_of(&t.segmentor.net);
        let ds_before = t.ds.clone().unwrap();
        let dp_before = t.dp.clone().unwrap();
        let mut acc = EpochAccum::default();
        let mut g = Graph::new();
        let sp = t.segmentor.net.params().bind(&mut g, true);
        let x = g.constant(sample.volume.slices());
        let out = t.segmentor.net.forward(&mut g, &sp, x).unwrap();
        let last = batches.last().unwrap();
        let prob = g.select_leading(out.prob_map, &last.slice_indices).unwrap();
        let feats = g.select_leading(out.bottleneck, &last.slice_indices).unwrap();
        t.segmentor_update(g, sp.vars(), last, prob, feats, Some((out.prob_map, sample)), &mut acc)
            .unwrap();
        assert_ne!(params_of(&t.segmentor.net), s_before);
        assert_eq!(t.ds.as_ref().unwrap(), &ds_before);
        assert_eq!(t.dp.as_ref().unwrap(), &dp_before);
        assert!(acc.hybrid.value().is_finite());
    }
}

#[test]
fn open_tap_changes_the_segmentor_gradient() {
    let data = toy_dataset(1, 1);
    let grads_for = |tap| {
        let cfg = TrainingConfig {
            attention_tap_gradient: tap,
            use_dp: false,
            weights: LossWeights {
                lambda: 1.0,
                ..LossWeights::default()
            },
            ..toy_config()
        };
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let batch = &slice_batches(&data.train[0], 4, SliceOrder::Sequential).unwrap()[0];
        let before = params_of(&t.segmentor.net);
        let mut g = Graph::new();
        let sp = t.segmentor.net.params().bind(&mut g, true);
        let x = g.constant(batch.images.clone());
        let out = t.segmentor.net.forward(&mut g, &sp, x).unwrap();
        t.segmentor_update(g, sp.vars(), batch, out.prob_map, out.bottleneck, None, &mut EpochAccum::default())
            .unwrap();
        let after = params_of(&t.segmentor.net);
        before.iter().zip(&after).map(|(a, b)| a.max_abs_diff(b)).collect::<Vec<_>>()
    };
    let blocked = grads_for(TapGradient::Blocked);
    let open = grads_for(TapGradient::Open);
    // The decoder and head see the same loss either way; the encoder also
    // receives the attention path's gradient when the tap is open.
    assert_ne!(blocked, open);
}

#[test]
fn segmentor_only_loss_is_plain_bce() {
    let data = toy_dataset(2, 1);
    let cfg = TrainingConfig {
        use_ds: false,
        use_attention: false,
        use_dp: false,
        epochs: 1,
        ..toy_config()
    };
    let mut t = Trainer::new(&cfg, &data).unwrap();
    let m = t.train_epoch(&data).unwrap();
    assert_eq!(m.hybrid, m.bce);
    assert!(m.l_ds.is_nan() && m.l_dp.is_nan() && m.ds_real_score.is_nan() && m.dp_fake_score.is_nan());
    assert!((0.0..=1.0).contains(&m.test_dsc_mean));
}

#[test]
fn full_epoch_records_every_term() {
    let data = toy_dataset(2, 1);
    let mut t = Trainer::new(&toy_config(), &data).unwrap();
    let m = t.train_epoch(&data).unwrap();
    for v in m.values() {
        assert!(v.is_finite(), "{m:?}");
    }
    assert_eq!(t.epoch(), 1);
    assert_eq!(t.history(), &[m]);
    // 4 slices in batches of 3: two segmentor steps per volume.
    assert_eq!(t.segmentor.opt.t, 4);
    assert_eq!(t.ds.as_ref().unwrap().opt.t, 4);
    assert_eq!(t.dp.as_ref().unwrap().opt.t, 2);
}

#[test]
fn step_counts_follow_config() {
    let data = toy_dataset(1, 1);
    let cfg = TrainingConfig {
        ds_steps: 3,
        s_steps: 2,
        batch_size: 4,
        ..toy_config()
    };
    let mut t = Trainer::new(&cfg, &data).unwrap();
    t.train_epoch(&data).unwrap();
    assert_eq!(t.segmentor.opt.t, 2);
    assert_eq!(t.ds.as_ref().unwrap().opt.t, 3);
    assert_eq!(t.dp.as_ref().unwrap().opt.t, 1);
}

#[test]
fn w_pos_auto_uses_clamped_class_ratio() {
    let data = toy_dataset(2, 1);
    let t = Trainer::new(&toy_config(), &data).unwrap();
    assert_eq!(t.weights().w_pos, data.class_ratio().clamp(1.0, 20.0));
    let fixed = TrainingConfig {
        w_pos_auto: false,
        weights: LossWeights {
            w_pos: 2.5,
            ..LossWeights::default()
        },
        ..toy_config()
    };
    assert_eq!(Trainer::new(&fixed, &data).unwrap().weights().w_pos, 2.5);
}

#[test]
fn dataset_dims_must_match_config() {
    let data = toy_dataset(1, 1);
    let cfg = TrainingConfig {
        dhw: (4, 32, 32),
        ..toy_config()
    };
    assert!(matches!(Trainer::new(&cfg, &data), Err(PanError::Config(_))));
    assert!(matches!(
        Trainer::new(&toy_config(), &Dataset::from_samples(vec![], vec![])),
        Err(PanError::Config(_))
    ));
}

#[test]
fn runs_are_deterministic_and_resume_exactly() {
    let data = toy_dataset(2, 1);
    let cfg = toy_config();
    let dir = tempfile::tempdir().unwrap();
    let a = train_on(&cfg, &data, &dir.path().join("a"), false).unwrap();
    let b = train_on(&cfg, &data, &dir.path().join("b"), false).unwrap();
    let csv_a = fs::read(&a.metrics).unwrap();
    assert_eq!(csv_a, fs::read(&b.metrics).unwrap());
    assert_eq!(fs::read(&a.checkpoint).unwrap(), fs::read(&b.checkpoint).unwrap());

    let short = TrainingConfig { epochs: 1, ..cfg.clone() };
    let c_dir = dir.path().join("c");
    train_on(&short, &data, &c_dir, false).unwrap();
    let c = train_on(&cfg, &data, &c_dir, true).unwrap();
    assert_eq!(fs::read(&c.metrics).unwrap(), csv_a);
    assert_eq!(fs::read(&c.checkpoint).unwrap(), fs::read(&a.checkpoint).unwrap());
    for f in [
        crate::report::LOSS_CHART,
        crate::report::SCORE_CHART,
        crate::report::DSC_CHART,
        CONFIG_FILE,
    ] {
        assert!(c_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn checkpoint_round_trips_the_trainer() {
    let data = toy_dataset(1, 1);
    let mut t = Trainer::new(&toy_config(), &data).unwrap();
    t.train_epoch(&data).unwrap();
    let ckpt = Checkpoint::from_bytes(&t.to_checkpoint().to_bytes()).unwrap();
    let back = Trainer::from_checkpoint(&toy_config(), &ckpt, &data).unwrap();
    assert_eq!(back.segmentor, t.segmentor);
    assert_eq!(back.ds, t.ds);
    assert_eq!(back.dp, t.dp);
    assert_eq!(back.history(), t.history());
    assert_eq!(back.to_checkpoint().to_bytes(), t.to_checkpoint().to_bytes());
    let (cfg, seg) = load_segmentor(&ckpt).unwrap();
    assert_eq!(cfg, toy_config());
    assert_eq!(params_of(&seg), params_of(&t.segmentor.net));
    let fitted = InputNorm::fit(data.train.iter().map(|s| s.volume.intensities())).unwrap();
    assert_eq!(seg.input_norm(), fitted);
    assert_eq!(back.segmentor.net.input_norm(), fitted);

    let other = TrainingConfig { lr_s: 0.5, ..toy_config() };
    assert!(matches!(Trainer::from_checkpoint(&other, &ckpt, &data), Err(PanError::Config(_))));
    let longer = TrainingConfig { epochs: 9, ..toy_config() };
    assert!(Trainer::from_checkpoint(&longer, &ckpt, &data).is_ok());
}

#[test]
fn early_stop_halts_without_improvement() {
    let data = toy_dataset(1, 1);
    let cfg = TrainingConfig {
        epochs: 6,
        early_stop_patience: 1,
        lr_s: 1e-12,
        lr_ds: 1e-12,
        lr_dp: 1e-12,
        ..toy_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_on(&cfg, &data, dir.path(), false).unwrap();
    assert!(out.trainer.epoch() < 6, "ran {} epochs", out.trainer.epoch());
}

#[test]
fn non_finite_loss_aborts_with_checkpoint_reference() {
    let mut data = toy_dataset(1, 1);
    let cfg = TrainingConfig { epochs: 2, ..toy_config() };
    let dir = tempfile::tempdir().unwrap();
    train_on(&TrainingConfig { epochs: 1, ..cfg.clone() }, &data, dir.path(), false).unwrap();
    // Blow up the segmentor so its next forward pass is NaN.
    let mut ckpt = Checkpoint::read(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    for (name, t) in ckpt.blobs.iter_mut() {
        if name == "s/head.bias" {
            *t = t.map(|_| f64::NAN);
        }
    }
    ckpt.write(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    data.test.clear();
    let err = train_on(&cfg, &data, dir.path(), true).unwrap_err();
    match err {
        PanError::Numerical(msg) => assert!(msg.contains(CHECKPOINT_FILE), "{msg}"),
        other => panic!("expected numerical abort, got {other}"),
    }
}

#[test]
fn projective_term_reaches_the_segmentor() {
    let data = toy_dataset(1, 1);
    let sample = &data.train[0];
    let update_with = |beta: f64| {
        let cfg = TrainingConfig {
            weights: LossWeights {
                beta,
                ..LossWeights::default()
            },
            ..toy_config()
        };
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let batch = &slice_batches(sample, 3, SliceOrder::Sequential).unwrap()[1];
        let mut g = Graph::new();
        let sp = t.segmentor.net.params().bind(&mut g, true);
        let x = g.constant(sample.volume.slices());
        let out = t.segmentor.net.forward(&mut g, &sp, x).unwrap();
        let prob = g.select_leading(out.prob_map, &batch.slice_indices).unwrap();
        let feats = g.select_leading(out.bottleneck, &batch.slice_indices).unwrap();
        t.segmentor_update(g, sp.vars(), batch, prob, feats, Some((out.prob_map, sample)), &mut EpochAccum::default())
            .unwrap();
        params_of(&t.segmentor.net)
    };
    let without = update_with(0.0);
    let with = update_with(0.1);
    assert_eq!(with.len(), without.len());
    assert!(with.iter().zip(&without).all(|(a, b)| a != b));
}
