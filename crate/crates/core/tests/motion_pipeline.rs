use gagcn::checkpoint;
use gagcn::decoder::{GagcnModel, ModelConfig};
use gagcn::motiondata::{
    load_coords_csv, make_windows, synth_dataset, synth_generate, synth_skeleton, MotionSequence, Representation,
    Skeleton, SkeletonDescriptor, SynthClass, Window,
};
use gagcn::trainer::{prepare_windows, train, TrainConfig};
use gagcn::{Rng, Tensor};

/// Mean joint speed over a window's observed and target frames, mm/frame.
fn mean_speed(w: &Window) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for frames in [&w.input, &w.target] {
        let (f, n) = (frames.shape()[0], frames.shape()[1]);
        let d = frames.data();
        for i in 1..f {
            for j in 0..n {
                let a = &d[((i - 1) * n + j) * 3..((i - 1) * n + j) * 3 + 3];
                let b = &d[(i * n + j) * 3..(i * n + j) * 3 + 3];
                total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn walk_and_sit_are_separable_by_mean_speed() {
    let classes = [SynthClass::WalkCycle, SynthClass::SitDown];
    for noise in [0.0, 0.02, 0.05] {
        let centroid = |seed: u64| -> Vec<f64> {
            let seqs = synth_dataset(&classes, 3, 100, noise, seed).unwrap();
            classes
                .iter()
                .map(|c| {
                    let speeds: Vec<f64> = seqs
                        .iter()
                        .filter(|s| s.label.as_deref() == Some(c.name()))
                        .flat_map(|s| make_windows(s, 10, 25, 5).unwrap().windows)
                        .map(|w| mean_speed(&w))
                        .collect();
                    speeds.iter().sum::<f64>() / speeds.len() as f64
                })
                .collect()
        };
        let centers = centroid(1);
        let test = synth_dataset(&classes, 3, 100, noise, 2).unwrap();
        let mut total = 0;
        for seq in &test {
            let truth = classes.iter().position(|c| seq.label.as_deref() == Some(c.name())).unwrap();
            for w in make_windows(seq, 10, 25, 5).unwrap().windows {
                let v = mean_speed(&w);
                let guess = if (v - centers[0]).abs() <= (v - centers[1]).abs() { 0 } else { 1 };
                assert_eq!(guess, truth, "noise {noise}: speed {v:.3} vs centroids {centers:?}");
                total += 1;
            }
        }
        assert!(total > 0);
    }
}

#[test]
fn downsampling_composes() {
    let seq = synth_generate(SynthClass::WaveArm, 100, 0.02, &mut Rng::new(3)).unwrap();
    let at50 = MotionSequence::new(seq.skeleton.clone(), seq.frames.clone(), 50.0, Representation::Coords3d, None)
        .unwrap();
    let once = at50.downsample(25.0).unwrap();
    assert_eq!(once.len(), 50);
    let twice = once.downsample(25.0).unwrap();
    assert_eq!(twice.frames, once.frames);
    assert_eq!(twice.rate_hz, 25.0);
    assert!(at50.downsample(30.0).is_err());
}

#[test]
fn hand_written_csv_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let sk = Skeleton::new(vec!["hip".into(), "knee".into()], vec![-1, 0], 3).unwrap();
    let desc = SkeletonDescriptor::new(&sk, Representation::Coords3d, 25.0);
    let path = dir.path().join("three.csv");
    std::fs::write(
        &path,
        "frame,hip_0,hip_1,hip_2,knee_0,knee_1,knee_2\n\
         0,0,900,0,0,450,10\n\
         1,1.5,900,0,0,450,-10\n\
         2,3,899.25,0.5,-2,451,1e1\n",
    )
    .unwrap();
    let seq = load_coords_csv(&path, &desc).unwrap();
    let want = Tensor::new(
        vec![3, 2, 3],
        vec![
            0.0, 900.0, 0.0, 0.0, 450.0, 10.0, //
            1.5, 900.0, 0.0, 0.0, 450.0, -10.0, //
            3.0, 899.25, 0.5, -2.0, 451.0, 10.0,
        ],
    )
    .unwrap();
    assert_eq!(seq.frames, want);
    assert_eq!(seq.label.as_deref(), Some("three"));
}

#[test]
fn training_reduces_loss_and_checkpoint_survives_disk() {
    let seq = synth_generate(SynthClass::WalkCycle, 60, 0.01, &mut Rng::new(1)).unwrap();
    let windows = make_windows(&seq, 10, 25, 100).unwrap();
    let prepared = prepare_windows(&windows).unwrap();
    let mut model = GagcnModel::new(ModelConfig::new(12, 3).with_width(16, 2), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        learning_rate: 1e-2,
        lr_decay: 0.993,
        log_every: 100,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &prepared, &[], &cfg, &[true; 12]).unwrap();
    assert_eq!(out.step_losses.len(), 500);
    assert!(out.step_losses.iter().all(|l| l.is_finite()));
    assert!(out.step_losses[499] < out.step_losses[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let desc = SkeletonDescriptor::new(&synth_skeleton(), Representation::Coords3d, 25.0);
    checkpoint::save(&path, &model, Some(&desc)).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.skeleton, Some(desc));
    let x = &windows.windows[0].input;
    assert_eq!(model.predict_frames(x).unwrap(), back.model.predict_frames(x).unwrap());
}
