use uplot::dataset::{gen_synthetic, load_pairs, save_pairs, split};
use uplot::unet::{build, train, ActivationTrace, NetworkSpec, TrainOptions};

#[test]
fn pgm_pairs_round_trip() {
    let data = gen_synthetic(5, 16, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (imgs, masks) = (dir.path().join("images"), dir.path().join("masks"));
    save_pairs(&data, &imgs, &masks).unwrap();
    let back = load_pairs(&imgs, &masks, 16).unwrap();
    assert_eq!(back.len(), 5);
    assert_eq!(back.masks().unwrap(), data.masks().unwrap());
    // Images pass through 8-bit gray levels.
    for (a, b) in back.images().unwrap().data().iter().zip(data.images().unwrap().data()) {
        assert!((a - b.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn trace_round_trip() {
    let data = gen_synthetic(10, 16, 8).unwrap();
    let (tr, va) = split(&data, 6, 4, 0).unwrap();
    let mut g = build(&NetworkSpec::new(16, 4, 2, 3)).unwrap();
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 3,
        capture_epochs: vec![1, 2],
        ..TrainOptions::default()
    };
    let trace = train(&mut g, &tr, &va, &va, &opts).unwrap();
    assert_eq!(trace.epochs(), vec![1, 2]);
    assert_eq!(trace.layer_count(), 23);
    let dir = tempfile::tempdir().unwrap();
    trace.write_dir(dir.path()).unwrap();
    assert_eq!(ActivationTrace::read_dir(dir.path()).unwrap(), trace);
    assert_eq!(ActivationTrace::read_manifest(dir.path()).unwrap(), trace.manifest());
}

#[test]
fn training_is_deterministic() {
    let data = gen_synthetic(10, 16, 9).unwrap();
    let (tr, va) = split(&data, 6, 4, 0).unwrap();
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 3,
        capture_epochs: vec![2],
        ..TrainOptions::default()
    };
    let run = || {
        let mut g = build(&NetworkSpec::new(16, 4, 2, 3)).unwrap();
        train(&mut g, &tr, &va, &va, &opts).unwrap()
    };
    assert_eq!(run(), run());
}
