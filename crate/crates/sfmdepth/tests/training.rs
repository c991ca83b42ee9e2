mod common;

use std::path::{Path, PathBuf};

use sfmdepth::checkpoint::Checkpoint;
use sfmdepth::core::pair::{pair_loss, FrameSupervision, PairInputs, PairSettings};
use sfmdepth::core::sparse::rasterize_flow;
use sfmdepth::gendata::Dataset;
use sfmdepth::nn::model::output_grid;
use sfmdepth::nn::{DepthNet, Sgd};
use sfmdepth::train::{epoch_checkpoint_path, train, TrainConfig, LAST_CHECKPOINT, METRICS_LOG};

fn dataset(root: &Path) -> PathBuf {
    common::make_dataset(root, 5, &common::small_synth(16))
}

fn quick(data: &Path) -> TrainConfig {
    TrainConfig {
        dataset: data.to_path_buf(),
        epochs: 2,
        batch_size: 4,
        gap_min: 1,
        gap_max: 2,
        phase1_epochs: 1,
        serial: true,
        ..TrainConfig::default()
    }
}

/// Loss of pair (j, k) and the network gradient of that loss.
fn pair_objective(net: &DepthNet, data: &Dataset, j: usize, k: usize) -> (f64, Vec<Vec<f32>>) {
    let recon = &data.recon;
    let (fj, fk) = (recon.frames[j].id, recon.frames[k].id);
    let xj = net.input_tensor(&data.images[j]).unwrap();
    let xk = net.input_tensor(&data.images[k]).unwrap();
    let (oj, tj) = net.forward(&xj);
    let (ok, tk) = net.forward(&xk);
    let (pj, pk) = (output_grid(&oj), output_grid(&ok));
    let (flow_jk, flow_kj) = (rasterize_flow(recon, fj, fk).unwrap(), rasterize_flow(recon, fk, fj).unwrap());
    let (rel_jk, rel_kj) = (recon.relative_transform(fj, fk).unwrap(), recon.relative_transform(fk, fj).unwrap());
    let inputs = PairInputs {
        intrinsics: &recon.intrinsics,
        rel_jk: &rel_jk,
        rel_kj: &rel_kj,
        prediction_j: &pj,
        prediction_k: &pk,
        region: None,
        frame_j: FrameSupervision {
            depth: &data.depth[j],
            mask: &data.mask[j],
            flow: &flow_jk,
        },
        frame_k: FrameSupervision {
            depth: &data.depth[k],
            mask: &data.mask[k],
            flow: &flow_kj,
        },
    };
    let settings = PairSettings {
        lambda1: 20.0,
        lambda2: 5.0,
        epsilon: 1e-8,
    };
    let loss = pair_loss(&inputs, &settings).unwrap();
    let mut grads = net.zero_grads();
    let to32 = |g: &sfmdepth::core::Grid<f64>| g.as_slice().iter().map(|&v| v as f32).collect::<Vec<_>>();
    net.backward(&tj, &to32(&loss.grad_j), &mut grads);
    net.backward(&tk, &to32(&loss.grad_k), &mut grads);
    (loss.total, grads)
}

#[test]
fn one_step_reduces_the_pair_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::load(&dataset(dir.path())).unwrap();
    let m = &data.manifest;
    let mut change = 0.0;
    for seed in 0..5 {
        let cfg = TrainConfig {
            model_seed: Some(seed),
            ..TrainConfig::default()
        }
        .model(m.height, m.width);
        let mut net = DepthNet::new(cfg).unwrap().with_normalization(m.image_mean, m.image_std);
        let (before, grads) = pair_objective(&net, &data, 2, 3);
        let mut opt = Sgd::new(&net.params, 0.0);
        opt.step(&mut net.params, &grads, 1e-3);
        let (after, _) = pair_objective(&net, &data, 2, 3);
        change += (after - before) / 5.0;
    }
    assert!(change < 0.0, "mean change {change}");
}

fn final_state(out: &Path) -> Checkpoint {
    Checkpoint::load(&out.join(LAST_CHECKPOINT)).unwrap()
}

#[test]
fn resume_continues_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let full = dir.path().join("full");
    let cfg = TrainConfig {
        epochs: 4,
        ..quick(&data)
    };
    train(&cfg, &full).unwrap();

    let part = dir.path().join("part");
    train(&TrainConfig { epochs: 3, ..cfg.clone() }, &part).unwrap();
    let resumed = dir.path().join("resumed");
    let cfg_resume = TrainConfig {
        resume: Some(epoch_checkpoint_path(&part, 3)),
        ..cfg
    };
    train(&cfg_resume, &resumed).unwrap();

    let (a, b) = (final_state(&full), final_state(&resumed));
    assert_eq!(a.header.epoch, 4);
    assert_eq!(b.header.epoch, 4);
    assert_eq!(a.header.step, b.header.step);
    assert_eq!(a.header.rng, b.header.rng);
    assert_eq!(a.net.params, b.net.params);
    assert_eq!(a.optimizer, b.optimizer);

    let last_lines = |p: &Path, n: usize| {
        let s = std::fs::read_to_string(p.join(METRICS_LOG)).unwrap();
        let lines: Vec<String> = s.lines().map(str::to_string).collect();
        lines[lines.len() - n..].to_vec()
    };
    let resumed_lines = last_lines(&resumed, 4);
    assert_eq!(last_lines(&full, 4), resumed_lines);
}

#[test]
fn loader_thread_matches_serial_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let serial = dir.path().join("serial");
    let threaded = dir.path().join("threaded");
    let cfg = TrainConfig {
        augment_probability: 1.0,
        ..quick(&data)
    };
    train(&cfg, &serial).unwrap();
    train(&TrainConfig { serial: false, ..cfg }, &threaded).unwrap();
    assert_eq!(final_state(&serial).net.params, final_state(&threaded).net.params);
    assert_eq!(
        std::fs::read(serial.join(METRICS_LOG)).unwrap(),
        std::fs::read(threaded.join(METRICS_LOG)).unwrap()
    );
}

#[test]
fn validation_set_selects_the_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("run");
    let cfg = TrainConfig {
        val_dataset: Some(data.clone()),
        val_pairs: 6,
        ..quick(&data)
    };
    let history = train(&cfg, &out).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|r| r.validation.is_some()));
    let best = history
        .iter()
        .min_by(|a, b| a.validation.unwrap().total.total_cmp(&b.validation.unwrap().total))
        .unwrap();
    let ck = Checkpoint::load(&out.join("best.ckpt")).unwrap();
    assert_eq!(ck.header.epoch, best.epoch);
    assert!(out.join("config.toml").is_file());
    assert!(epoch_checkpoint_path(&out, 2).is_file());
}

#[test]
fn invalid_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(&data) },
        TrainConfig { gap_min: 3, gap_max: 2, ..quick(&data) },
        TrainConfig { lr_min: -1.0, ..quick(&data) },
    ] {
        assert!(train(&cfg, &dir.path().join("x")).is_err());
    }
}
