use qgan_harness::image::{decapsulate_image, encapsulate_image, read_ppm};
use qgan_harness::{emit_samples, Checkpoint, DataSource, SynthSpec, TrainConfig, Trainer};
use qgan_models::{LossKind, SnKind};
use qgan_quat::QTensor;

fn toy(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        ..TrainConfig::toy()
    }
}

#[test]
fn zero_iterations_report_initial_state_only() {
    let mut t = Trainer::new(TrainConfig {
        eval_every: 5,
        ..toy(0)
    })
    .unwrap();
    let r = t.run().unwrap();
    assert!(r.steps.is_empty());
    assert_eq!((r.d_updates, r.g_updates), (0, 0));
    assert!(r.initial_sigma.is_some());
    assert_eq!(r.evals.len(), 1);
    assert_eq!(r.initial_fid(), Some(r.evals[0].1));
}

#[test]
fn five_critic_updates_per_generator_update() {
    let mut t = Trainer::new(TrainConfig {
        critic_iters: 5,
        ..toy(3)
    })
    .unwrap();
    let r = t.run().unwrap();
    assert_eq!((r.d_updates, r.g_updates), (15, 3));
    assert_eq!(t.opt_d.step, 15);
    assert_eq!(t.opt_g.step, 3);
}

#[test]
fn toy_run_keeps_full_normalized_critic_at_one() {
    let r = Trainer::new(toy(200)).unwrap().run().unwrap();
    assert!(!r.has_nan());
    let init = r.initial_sigma.as_ref().unwrap();
    for s in init.full.iter().copied().chain(r.steps.iter().map(|s| s.sigma_full)) {
        assert!((0.9..=1.1).contains(&s), "sigma {s}");
    }
}

#[test]
fn split_normalization_bounds_each_submatrix() {
    let r = Trainer::new(TrainConfig {
        sn_mode: SnKind::Split,
        ..toy(20)
    })
    .unwrap()
    .run()
    .unwrap();
    assert!(!r.has_nan());
    assert!(r.max_sigma_split() <= 1.05, "{}", r.max_sigma_split());
}

#[test]
fn every_loss_trains_without_nan() {
    for loss in [LossKind::WganGp { lambda: 10.0 }, LossKind::Qce] {
        let r = Trainer::new(TrainConfig { loss, ..toy(3) }).unwrap().run().unwrap();
        assert!(!r.has_nan(), "{loss:?}");
    }
    let dcgan = TrainConfig {
        spec: "qdcgan-toy".into(),
        data: DataSource::Synthetic(SynthSpec {
            n: 64,
            size: 8,
            seed: 3,
        }),
        loss: LossKind::Qce,
        sn_mode: SnKind::None,
        ..toy(3)
    };
    let r = Trainer::new(dcgan).unwrap().run().unwrap();
    assert!(!r.has_nan());
}

#[test]
fn nan_aborts_with_weight_norms() {
    let mut t = Trainer::new(toy(5)).unwrap();
    let id = t.d.store.ids().next().unwrap();
    t.d.store.get_mut(id).data_mut()[0] = f32::NAN;
    let e = t.run().unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let msg = e.to_string();
    assert!(msg.contains("d.block1.conv1.w="), "{msg}");
}

#[test]
fn schedule_writes_checkpoints_grids_and_best() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        checkpoint_every: 2,
        eval_every: 1,
        eval_generated: 32,
        eval_reference: 32,
        out_dir: Some(dir.path().display().to_string()),
        ..toy(2)
    };
    let r = Trainer::new(config).unwrap().run().unwrap();
    assert_eq!(r.evals.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(dir.path().join("ckpt_000002.qgn").exists());
    assert!(!dir.path().join("ckpt_000001.qgn").exists());
    let grid = read_ppm(&dir.path().join("grid_000002.ppm")).unwrap();
    assert_eq!(grid.shape(), &[3, 64, 64]);
    let best = dir.path().join("best.qgn");
    if r.evals[1..].iter().any(|e| e.1 < r.evals[0].1) {
        let t = Trainer::from_checkpoint(&Checkpoint::load(&best).unwrap()).unwrap();
        assert!(t.iteration >= 1);
    }
}

#[test]
fn samples_round_trip_through_ppm() {
    let t = Trainer::new(toy(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let one = emit_samples(&t.g, 1, 0, &dir.path().join("one")).unwrap();
    assert_eq!(one.files.len(), 1);
    assert_eq!(std::fs::read_dir(dir.path().join("one")).unwrap().count(), 2);

    let r = emit_samples(&t.g, 4, 9, dir.path()).unwrap();
    let bytes = std::fs::read(&r.files[0]).unwrap();
    assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(bytes.len(), 13 + 3 * 16 * 16);
    let qs = qgan_harness::image::batch_to_quaternions(&r.raw).unwrap();
    for (q, path) in qs.iter().zip(&r.files) {
        let expected = decapsulate_image(q).unwrap().rgb;
        let reread: QTensor<f32> = encapsulate_image(&read_ppm(path).unwrap()).unwrap();
        let back = decapsulate_image(&reread).unwrap().rgb;
        let err = expected
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err <= 1.0 / 255.0 + 1e-6, "{err}");
    }
    let again = emit_samples(&t.g, 4, 9, &dir.path().join("again")).unwrap();
    assert_eq!(
        std::fs::read(&again.files[3]).unwrap(),
        std::fs::read(&r.files[3]).unwrap()
    );
}
