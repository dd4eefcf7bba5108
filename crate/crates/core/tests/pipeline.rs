use bgrecon_core::arch::{plan_architecture_with, Complexity, PlanOptions, Preset};
use bgrecon_core::data_io::{load_groundtruth, load_sequence, write_generic_sequence};
use bgrecon_core::segmenter::{segment_sequence, SegmentOptions};
use bgrecon_core::synthetic::{generate, SyntheticSequence, SyntheticSpec};
use bgrecon_core::trainer::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, train_with, TrainConfig,
};
use bgrecon_core::{DatasetLayout, Frame, FrameSequence, LayoutKind};

fn short_scene(frames: usize, seed: u64) -> SyntheticSequence {
    generate(&SyntheticSpec {
        frames,
        ..SyntheticSpec::static_scene(seed)
    })
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 4,
        n_simple: 3,
        ..TrainConfig::default()
    };
    c.plan.allow_small_frames = true;
    c.complexity.n_eval = 2;
    c.complexity.b_eval = 4;
    c
}

fn parameters(model: &bgrecon_core::Autoencoder) -> Vec<Vec<f32>> {
    model.parameters().iter().map(|p| p.to_vec()).collect()
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = short_scene(8, 0);
    let config = tiny_config();
    let a = train_with(&data.frames, &config, &mut |_| {}).unwrap();
    let b = train_with(&data.frames, &config, &mut |_| {}).unwrap();
    assert_eq!(parameters(&a.model), parameters(&b.model));
    assert_eq!(a.final_stats, b.final_stats);

    let other = TrainConfig { seed: 1, ..config };
    let c = train_with(&data.frames, &other, &mut |_| {}).unwrap();
    assert_ne!(parameters(&a.model), parameters(&c.model));
}

#[test]
fn observer_sees_every_iteration_once() {
    let data = short_scene(8, 0);
    let mut seen = Vec::new();
    let trained = train_with(&data.frames, &tiny_config(), &mut |p| {
        seen.push(p.iteration)
    })
    .unwrap();
    assert_eq!(seen, (0..trained.iterations).collect::<Vec<_>>());
    assert_eq!(trained.iterations, 3);
}

#[test]
fn dynamic_verdict_switches_to_the_complex_network() {
    let data = short_scene(8, 0);
    let mut config = tiny_config();
    // Three iterations leave the reconstructions far apart, so almost any
    // disagreement counts as dynamic.
    config.complexity.tau0 = 1e-9;
    config.n_complex = 2;
    config.e_complex = 1;
    let trained = train_with(&data.frames, &config, &mut |_| {}).unwrap();
    let verdict = trained.verdict.unwrap();
    assert_eq!(verdict.complexity, Complexity::Complex);
    assert_eq!(trained.model.spec().complexity, Complexity::Complex);
    assert_eq!(trained.iterations, 2);
    assert_eq!(trained.lr_drop_at, 1);
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let data = short_scene(8, 3);
    let trained = train_with(&data.frames, &tiny_config(), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&trained.model, &path).unwrap();

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.spec(), trained.model.spec());
    assert_eq!(parameters(&loaded), parameters(&trained.model));
    let frames: Vec<&Frame> = data.frames.frames().iter().take(2).collect();
    let (x, y) = (
        trained.model.forward(&frames).unwrap(),
        loaded.forward(&frames).unwrap(),
    );
    assert_eq!(x.noise, y.noise);

    let other = plan_architecture_with(
        64,
        64,
        Complexity::Complex,
        Preset::VideoStride3,
        PlanOptions {
            allow_small_frames: true,
        },
    )
    .unwrap();
    assert!(load_checkpoint_for(&path, &other).is_err());
    assert!(load_checkpoint_for(&path, trained.model.spec()).is_ok());

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x40;
    let tampered = dir.path().join("tampered.ckpt");
    std::fs::write(&tampered, &bytes).unwrap();
    assert!(load_checkpoint(&tampered).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn segmentation_does_not_depend_on_batch_size() {
    let data = short_scene(7, 4);
    let trained = train_with(&data.frames, &tiny_config(), &mut |_| {}).unwrap();
    let options = SegmentOptions::default();
    let one = segment_sequence(&trained.model, &data.frames, &options, 1).unwrap();
    let many = segment_sequence(&trained.model, &data.frames, &options, 5).unwrap();
    assert_eq!(one.len(), 7);
    for (a, b) in one.iter().zip(&many) {
        let diff = a
            .background
            .pixels()
            .iter()
            .zip(b.background.pixels())
            .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-5, "backgrounds differ by {diff}");
        assert_eq!(a.mask, b.mask);
    }
}

#[test]
fn generic_layout_round_trip() {
    let data = short_scene(5, 6);
    let dir = tempfile::tempdir().unwrap();
    write_generic_sequence(dir.path(), "scene", &data.frames, Some(&data.labels)).unwrap();
    let layout = DatasetLayout::new(LayoutKind::Generic, dir.path());
    let seq: FrameSequence = load_sequence(&layout, "scene").unwrap();
    assert_eq!(seq.len(), 5);
    assert_eq!(seq.indices(), data.frames.indices());
    for (a, b) in seq.frames().iter().zip(data.frames.frames()) {
        // Frames are stored as 8-bit images.
        let worst = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
        assert!(worst <= 0.5 / 255.0 + 1e-6, "{worst}");
    }
    assert_eq!(load_groundtruth(&layout, "scene").unwrap(), data.labels);
}
