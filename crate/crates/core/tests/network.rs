use std::sync::Arc;

use microcolor::checkpoint::{load_checkpoint_for, save_checkpoint};
use microcolor::colorspace::merge_l_ab;
use microcolor::dataset::{make_split, sample_from_rgb, save_rgb, Role};
use microcolor::eecnn::{constant_embedder, REDUCTION};
use microcolor::trainer::{gradient, normalized_loss, train_eecnn, train_samples, TrainConfig};
use microcolor::{EeCnn, EeCnnConfig, Plane, RgbImage};

fn ramp(w: usize, h: usize) -> Plane {
    Plane::from_fn(w, h, |x, y| (x * 3 + y * 5) as f64 % 100.0)
}

fn colorful(w: usize, h: usize, phase: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        [
            (60 + (x * 9 + phase) % 180) as u8,
            (40 + (y * 7) % 150) as u8,
            (200 - (x * y + phase) % 120) as u8,
        ]
    })
}

#[test]
fn tiny_forward_preserves_size_for_assorted_shapes() {
    let cfg = EeCnnConfig::tiny();
    let net = EeCnn::new(cfg.clone()).unwrap();
    let w = net.init_weights(2);
    let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
    for (width, height) in [(8, 8), (17, 9), (32, 24), (45, 61), (64, 64)] {
        let l = ramp(width, height);
        let ab = net.forward(&l, &p, &w).unwrap();
        assert_eq!(ab.dims(), (width, height));
        let padded = EeCnn::pad_input(&l);
        let enc = net.encode(&padded, &w).unwrap();
        assert_eq!(
            enc.shape(),
            (
                cfg.encoder_out_channels(),
                padded.height() / REDUCTION,
                padded.width() / REDUCTION
            )
        );
        let lab = merge_l_ab(&l, &ab).unwrap();
        assert_eq!(lab.l(), &l);
    }
}

#[test]
fn concurrent_inference_matches_sequential() {
    let cfg = EeCnnConfig::tiny();
    let net = Arc::new(EeCnn::new(cfg.clone()).unwrap());
    let w = Arc::new(net.init_weights(5));
    let l = ramp(24, 16);
    let emb: Vec<f64> = (0..cfg.embedding_dim).map(|i| i as f64 / 10.0).collect();
    let expected = net.forward_with_embedding(&l, &emb, &w).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (net, w, l, emb) = (net.clone(), w.clone(), l.clone(), emb.clone());
            std::thread::spawn(move || net.forward_with_embedding(&l, &emb, &w).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), expected);
    }
}

#[test]
fn embedding_switch_controls_side_branch() {
    let cfg = EeCnnConfig::miniature();
    let net = EeCnn::new(cfg.clone()).unwrap();
    let w = net.init_weights(3);
    let l = ramp(16, 16);
    let a = net
        .forward_with_embedding(&l, &[0.0, 0.0, 0.0, 0.0], &w)
        .unwrap();
    let b = net
        .forward_with_embedding(&l, &[1.0, -1.0, 0.5, 2.0], &w)
        .unwrap();
    assert_ne!(a, b);

    let off = EeCnnConfig {
        use_embedding: false,
        ..cfg
    };
    let net = EeCnn::new(off).unwrap();
    let w = net.init_weights(3);
    let p = constant_embedder(4, 9).unwrap();
    assert!(net.embedding_for(&l, &p).unwrap().is_empty());
    net.forward(&l, &p, &w).unwrap();
}

#[test]
fn finite_difference_spot_check() {
    let cfg = EeCnnConfig::miniature();
    let net = EeCnn::new(cfg.clone()).unwrap();
    let mut w = net.init_weights(4);
    // Non-zero biases keep every ReLU away from its kink.
    for block in w.blocks.iter_mut().filter(|b| b.name.ends_with(".bias")) {
        for (j, v) in block.data.iter_mut().enumerate() {
            *v = 0.05 + 0.01 * j as f64;
        }
    }
    let l = ramp(8, 8);
    let target = sample_from_rgb(&colorful(8, 8, 1), String::new()).ab;
    let emb = vec![0.3, -0.2, 0.1, 0.4];
    let g = gradient(&net, &w, &l, &target, &emb).unwrap();
    let h = 1e-6;
    let mut checked = 0;
    #[allow(clippy::needless_range_loop)] // indexes both `w` and `g`, and mutates `w`
    for b in 0..w.blocks.len() {
        let i = w.blocks[b].data.len() / 2;
        let orig = w.blocks[b].data[i];
        w.blocks[b].data[i] = orig + h;
        let up = normalized_loss(&net, &w, &l, &target, &emb).unwrap();
        w.blocks[b].data[i] = orig - h;
        let down = normalized_loss(&net, &w, &l, &target, &emb).unwrap();
        w.blocks[b].data[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = g[b][i];
        if fd.abs().max(an.abs()) < 1e-7 {
            continue;
        }
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        assert!(
            rel < 1e-4,
            "block {} index {i}: fd {fd} analytic {an}",
            w.blocks[b].name
        );
        checked += 1;
    }
    assert!(checked >= 4);
}

#[test]
fn checkpoint_reload_reproduces_predictions() {
    let cfg = EeCnnConfig::miniature();
    let net = EeCnn::new(cfg.clone()).unwrap();
    let w = net.init_weights(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ckpt");
    save_checkpoint(&w, &path).unwrap();
    let back = load_checkpoint_for(&path, &cfg).unwrap();
    let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
    let l = ramp(19, 11);
    assert_eq!(
        net.forward(&l, &p, &w).unwrap(),
        net.forward(&l, &p, &back).unwrap()
    );
}

#[test]
fn training_is_deterministic_and_writes_checkpoints() {
    let cfg = EeCnnConfig::miniature();
    let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
    let train: Vec<_> = (0..5)
        .map(|i| sample_from_rgb(&colorful(16, 16, i * 13), format!("s{i}")))
        .collect();
    let val = vec![sample_from_rgb(&colorful(16, 16, 99), "v".into())];
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        max_epochs: 4,
        patience: 2,
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let (w1, r1) = train_samples(&train, &val, &cfg, &tc, &p).unwrap();
    let (w2, r2) = train_samples(&train, &val, &cfg, &tc, &p).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(r1.epochs, r2.epochs);
    assert!(dir.path().join("best.ckpt").exists());
    assert!(dir.path().join("epoch-0002.ckpt").exists());
    let best = load_checkpoint_for(&dir.path().join("best.ckpt"), &cfg).unwrap();
    assert_eq!(best, w1);
    assert!(r1.to_csv().starts_with("epoch,train_loss,val_loss\n"));
}

#[test]
fn manifest_training_streams_images_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for i in 0..4 {
        let p = dir.path().join(format!("img{i}.png"));
        save_rgb(&colorful(20, 12, i * 7), &p).unwrap();
        paths.push(p);
    }
    let manifest = make_split(&paths, 0.75, 1).unwrap().with_resize((16, 16));
    assert_eq!(manifest.count(Role::Train), 3);
    let cfg = EeCnnConfig::miniature();
    let p = constant_embedder(cfg.embedding_dim, 0).unwrap();
    let tc = TrainConfig {
        max_epochs: 2,
        patience: 1,
        ..Default::default()
    };
    let (_, report) = train_eecnn(&manifest, &cfg, &tc, &p).unwrap();
    assert_eq!(report.epochs.len(), 2);

    let missing = make_split(&[dir.path().join("absent.png")], 0.5, 0).unwrap();
    let err = train_eecnn(&missing.with_resize((8, 8)), &cfg, &tc, &p).unwrap_err();
    assert_eq!(err.kind(), "io");
    assert!(err.to_string().contains("absent.png"));
}
