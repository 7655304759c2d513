use super::*;
use crate::ndtensor::Activation;

fn small(m: usize) -> ArchitectureConfig {
    ArchitectureConfig {
        input_size: m,
        num_classes: 2,
        base_width: 4,
        ..ArchitectureConfig::default()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn default_shapes_at_256() {
    let report = shape_report(&ArchitectureConfig::default()).unwrap();
    let expansion = report.iter().find(|r| r.name == "expansion").unwrap();
    assert_eq!(expansion.shape, [32, 256, 256]);
    let pools: Vec<[usize; 3]> = report
        .iter()
        .filter(|r| r.name.ends_with(".pool"))
        .map(|r| r.shape)
        .collect();
    assert_eq!(
        pools,
        vec![
            [64, 128, 128],
            [128, 64, 64],
            [256, 32, 32],
            [512, 16, 16],
            [1024, 8, 8],
            [2048, 1, 1]
        ]
    );
    assert_eq!(report.last().unwrap().shape, [12, 1, 1]);
}

#[test]
fn shape_report_edge_cases() {
    let c32 = ArchitectureConfig {
        input_size: 32,
        ..ArchitectureConfig::default()
    };
    let r = shape_report(&c32).unwrap();
    assert_eq!(r[r.len() - 2].shape, [2048, 1, 1]);
    assert!(shape_report(&ArchitectureConfig {
        input_size: 33,
        ..ArchitectureConfig::default()
    })
    .is_err());
    let narrow = ArchitectureConfig {
        base_width: 8,
        ..ArchitectureConfig::default()
    };
    assert_eq!(narrow.final_channels(), 512);
    let r = shape_report(&narrow).unwrap();
    assert_eq!(r[r.len() - 2].shape[0], 512);
}

#[test]
fn doubling_and_halving_law() {
    for m in [32, 64, 128, 256] {
        for width in [4, 8, 32] {
            let cfg = ArchitectureConfig {
                input_size: m,
                base_width: width,
                ..ArchitectureConfig::default()
            };
            let r = shape_report(&cfg).unwrap();
            let mut expect_c = width;
            let mut expect_s = m;
            for g in 1..=GROUPS {
                expect_c *= 2;
                let conv = r.iter().find(|l| l.name == format!("group{g}.conv")).unwrap();
                assert_eq!(conv.shape, [expect_c, expect_s, expect_s]);
                expect_s = if g < GROUPS { expect_s / 2 } else { 1 };
                let pool = r.iter().find(|l| l.name == format!("group{g}.pool")).unwrap();
                assert_eq!(pool.shape, [expect_c, expect_s, expect_s]);
            }
        }
    }
}

#[test]
fn expansion_variants() {
    let off = ArchitectureConfig {
        expansion: Expansion::Off,
        ..small(64)
    };
    let r = shape_report(&off).unwrap();
    assert!(r.iter().all(|l| l.name != "expansion"));
    assert_eq!(r.iter().find(|l| l.name == "group1.conv").unwrap().shape[0], 8);
    assert_eq!(off.final_channels(), 4 << 6);

    let plus = ArchitectureConfig {
        expansion: Expansion::OnPlusPool,
        ..ArchitectureConfig::default()
    };
    let r = shape_report(&plus).unwrap();
    assert_eq!(r.iter().find(|l| l.name == "group6.conv").unwrap().shape, [2048, 4, 4]);
}

#[test]
fn last_pool_variants_flatten_into_classifier() {
    for last_pool in [LastPool::MaxS2, LastPool::AvgS2] {
        let cfg = ArchitectureConfig {
            last_pool,
            ..small(64)
        };
        let r = shape_report(&cfg).unwrap();
        assert_eq!(r[r.len() - 2].shape, [256, 1, 1]);
        let model = Model::build(&cfg, &mut rng(1)).unwrap();
        let built: usize = model.num_parameters();
        let reported: usize = r.iter().map(|l| l.params).sum();
        assert_eq!(built, reported);
        let logits = model.forward(&Tensor::zeros([2, 1, 64, 64])).unwrap();
        assert_eq!(logits.shape(), [2, 2, 1, 1]);
    }
    let cfg = ArchitectureConfig {
        last_pool: LastPool::MaxS2,
        ..small(128)
    };
    let r = shape_report(&cfg).unwrap();
    assert_eq!(r[r.len() - 2].shape, [256, 2, 2]);
}

#[test]
fn parameter_count_matches_report() {
    let cfg = small(64);
    let model = Model::build(&cfg, &mut rng(0)).unwrap();
    let reported: usize = shape_report(&cfg).unwrap().iter().map(|l| l.params).sum();
    assert_eq!(model.num_parameters(), reported);
}

#[test]
fn rejects_bad_configs_and_inputs() {
    assert!(Model::build(&small(33), &mut rng(0)).is_err());
    let model = Model::build(&small(32), &mut rng(0)).unwrap();
    assert!(model.forward(&Tensor::zeros([1, 1, 64, 64])).is_err());
    assert!(model.forward(&Tensor::zeros([1, 2, 32, 32])).is_err());
    assert!(model.predict(&GrayImage::filled(64, 64, 0)).is_err());
}

#[test]
fn forward_is_deterministic_per_row() {
    let model = Model::build(&small(32), &mut rng(2)).unwrap();
    let mut r = rng(3);
    let img = Tensor::uniform([1, 1, 32, 32], 0.0, 1.0, &mut r);
    let mut batch = Tensor::zeros([2, 1, 32, 32]);
    batch.item_mut(0).copy_from_slice(img.data());
    batch.item_mut(1).copy_from_slice(img.data());
    let logits = model.forward(&batch).unwrap();
    assert_eq!(logits.shape(), [2, 2, 1, 1]);
    assert_eq!(logits.item(0), logits.item(1));
}

#[test]
fn constant_images_share_logits() {
    let model = Model::build(&small(32), &mut rng(4)).unwrap();
    let reference = model.forward(&Tensor::filled([1, 1, 32, 32], 0.0)).unwrap();
    for level in [0.1, 0.5, 1.0] {
        let logits = model.forward(&Tensor::filled([1, 1, 32, 32], level)).unwrap();
        assert_eq!(logits.data(), reference.data());
    }
}

#[test]
fn tanh_features_stay_bounded() {
    let cfg = ArchitectureConfig {
        init_std: 0.5,
        input_scale: InputScale::Raw,
        ..small(32)
    };
    let model = Model::build(&cfg, &mut rng(5)).unwrap();
    let batch = Tensor::uniform([2, 1, 32, 32], 0.0, 255.0, &mut rng(6));
    let mut tape = Vec::new();
    model.run(batch, Some(&mut tape)).unwrap();
    let mut seen = 0;
    for step in &tape {
        if let Step::Act(bw) = step {
            assert!(bw.output().data().iter().all(|v| v.abs() < 1.0 || v.abs() == 1.0));
            assert!(bw.output().data().iter().all(|v| v.abs() <= 1.0));
            seen += 1;
        }
    }
    assert_eq!(seen, 7);
}

fn spot_check(cfg: &ArchitectureConfig, seed: u64) -> f64 {
    let model = Model::build(cfg, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 100);
    let batch = Tensor::uniform([3, 1, cfg.input_size, cfg.input_size], 0.0, 1.0, &mut r);
    let labels: Vec<usize> = (0..3).map(|i| i % cfg.num_classes).collect();
    let check = model.gradient_spot_check(&batch, &labels, 20, 1e-6, &mut r).unwrap();
    assert_eq!(check.entries.len(), 20);
    check.max_relative_error()
}

#[test]
fn full_model_gradient_spot_check() {
    // larger init keeps every layer's gradient well above difference noise
    for (hpf_mode, activation, seed) in [
        (HpfMode::Untrainable, Activation::Tanh, 1),
        (HpfMode::Trainable, Activation::Sigmoid, 2),
        (HpfMode::Random, Activation::Tanh, 3),
    ] {
        let cfg = ArchitectureConfig {
            hpf_mode,
            activation,
            init_std: 0.1,
            num_classes: 3,
            ..small(32)
        };
        let err = spot_check(&cfg, seed);
        assert!(err < 1e-4, "{hpf_mode:?}/{activation:?}: {err}");
    }
}

#[test]
fn spot_check_flags_corrupted_gradient() {
    let cfg = ArchitectureConfig {
        init_std: 0.1,
        ..small(32)
    };
    let mut model = Model::build(&cfg, &mut rng(20)).unwrap();
    let batch = Tensor::uniform([2, 1, 32, 32], 0.0, 1.0, &mut rng(21));
    model.loss_and_gradients(&batch, &[0, 1]).unwrap();
    let good = model.gradient_spot_check(&batch, &[0, 1], 5, 1e-6, &mut rng(22)).unwrap();
    assert!(good.max_relative_error() < 1e-4);
    let bad = model
        .gradient_spot_check_corrupted(&batch, &[0, 1], 5, 1e-6, 2.0, &mut rng(22))
        .unwrap();
    assert!((bad.max_relative_error() - 0.5).abs() < 1e-3, "{:?}", bad);
}

#[test]
fn frozen_bank_gets_no_gradient() {
    let mut model = Model::build(&small(32), &mut rng(7)).unwrap();
    let batch = Tensor::uniform([2, 1, 32, 32], 0.0, 1.0, &mut rng(8));
    model.loss_and_gradients(&batch, &[0, 1]).unwrap();
    let bank = model.param(HPF_PARAM).unwrap();
    assert!(!bank.trainable);
    assert!(bank.grad.data().iter().all(|&g| g == 0.0));
    assert!(model.params().iter().filter(|p| p.trainable).any(|p| p.grad.max_abs() > 0.0));
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let cfg = ArchitectureConfig {
        hpf_mode: HpfMode::Random,
        ..small(32)
    };
    let model = Model::build(&cfg, &mut rng(9)).unwrap();
    let bytes = write_checkpoint(&model).unwrap();
    assert_eq!(&bytes[..6], b"OFCNN1");
    let loaded = read_checkpoint(&bytes).unwrap();
    assert_eq!(loaded, model);
    let batch = Tensor::uniform([3, 1, 32, 32], 0.0, 1.0, &mut rng(10));
    let a = model.forward(&batch).unwrap();
    let b = loaded.forward(&batch).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&bad).is_err());
}

#[test]
fn predict_returns_distribution() {
    let model = Model::build(&small(32), &mut rng(11)).unwrap();
    let img = GrayImage::from_fn(32, 32, |x, y| ((x * 7 + y * 13) % 256) as u8);
    let (class, probs) = model.predict(&img).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(class, argmax(&probs));
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

#[test]
fn loss_decreases_under_plain_sgd() {
    let cfg = ArchitectureConfig {
        init_std: 0.1,
        ..small(32)
    };
    let mut model = Model::build(&cfg, &mut rng(12)).unwrap();
    let mut r = rng(13);
    let batch = Tensor::uniform([4, 1, 32, 32], 0.0, 1.0, &mut r);
    let labels = [0, 1, 0, 1];
    let first = model.loss_and_gradients(&batch, &labels).unwrap();
    let mut last = first;
    for _ in 0..50 {
        for p in model.params_mut().iter_mut().filter(|p| p.trainable) {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= 0.01 * g;
            }
        }
        last = model.loss_and_gradients(&batch, &labels).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}
