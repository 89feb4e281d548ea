use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gagcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gagcn"))
        .args(args)
        .args(["--log-level", "error"])
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Synthetic CSV data plus a small run config inside `root`.
fn fixture(root: &Path) -> PathBuf {
    let data = root.join("data");
    let out = gagcn(&["synth", "--classes", "walk_cycle,wave_arm", "--frames", "60", "--out", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = root.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[data]
source = "csv"
window_stride = 5

[data.csv]
descriptor = "data/skeleton.toml"
files = ["data/walk_cycle.csv", "data/wave_arm.csv"]

[model]
width = 8
layers = 2
input_frames = 10
output_frames = 25

[train]
epochs = 1
batch_size = 4

[output]
dir = "run"
"#,
    )
    .unwrap();
    cfg
}

fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let cfg = fixture(root);
    let out = gagcn(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    (cfg, root.join("run"))
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let cases: &[(&str, &[&str])] = &[
        (
            "train",
            &[
                "--config",
                "--out",
                "--epochs",
                "default 10",
                "--batch-size",
                "default 32",
                "--learning-rate",
                "default 0.001",
                "--lr-decay",
                "default 0.96",
                "--seed",
                "--spatial-candidates",
                "default 4",
                "--temporal-candidates",
                "default 3",
            ],
        ),
        (
            "eval",
            &[
                "--config",
                "--checkpoint",
                "--out",
                "--horizons",
                "[default: 80,160,320,400,560,1000]",
                "--mode",
                "[default: cumulative]",
                "--split",
                "[default: validation]",
            ],
        ),
        ("predict", &["--checkpoint", "--input", "--descriptor", "--output"]),
        (
            "gradcheck",
            &[
                "--scale",
                "[default: model]",
                "--seed",
                "--eps",
                "[default: 0.0001]",
                "--tol",
                "--corrupt",
                "--out",
            ],
        ),
        (
            "ablate",
            &["--config", "--suite", "default gated-vs-stable-unseen", "--out", "--seeds", "default 0..5", "--epochs"],
        ),
        ("plot-data", &["--run", "--out", "<run>/plots"]),
        (
            "synth",
            &[
                "--classes",
                "[default: walk_cycle,wave_arm,sit_down,figure8_drift]",
                "--frames",
                "[default: 200]",
                "--noise",
                "[default: 0.02]",
                "--seed",
                "--out",
            ],
        ),
    ];
    for (cmd, needles) in cases {
        let out = gagcn(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for needle in needles.iter().chain(&["--threads", "[default: 0]", "--log-level", "[default: info]"]) {
            assert!(text.contains(needle), "`{cmd} --help` lacks {needle}:\n{text}");
        }
    }
}

#[test]
fn train_writes_all_outputs_and_plot_data_follows() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, run) = trained(tmp.path());
    for f in ["model.ckpt", "loss.csv", "gates.csv", "train_log.jsonl"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,step,learning_rate,train_loss,val_loss\n"));
    assert!(!loss.contains('\r'));

    let out = gagcn(&["eval", "--config", s(&cfg), "--checkpoint", s(&run.join("model.ckpt"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "horizon_ms,metric,value");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("1000,mpjpe,"));

    let out = gagcn(&["plot-data", "--run", s(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["loss_curve.csv", "horizon_curve.csv", "gate_distribution.csv"] {
        assert!(run.join("plots").join(f).is_file(), "missing {f}");
    }
    let gates = std::fs::read_to_string(run.join("plots/gate_distribution.csv")).unwrap();
    assert!(gates.starts_with("layer,axis,candidate,mean_weight,final_weight\n"));
}

#[test]
fn missing_data_path_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    std::fs::remove_file(tmp.path().join("data/wave_arm.csv")).unwrap();
    let out = gagcn(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("wave_arm.csv"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("epochs = 1", "epochz = 1");
    std::fs::write(&cfg, text).unwrap();
    let out = gagcn(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));
}

#[test]
fn predict_writes_output_frames_and_checks_length() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = trained(tmp.path());
    let ckpt = run.join("model.ckpt");
    let pred = tmp.path().join("pred.csv");
    let input = tmp.path().join("data/walk_cycle.csv");
    let out = gagcn(&["predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&pred)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&pred).unwrap();
    let header = std::fs::read_to_string(&input).unwrap().lines().next().unwrap().to_string();
    assert_eq!(text.lines().next().unwrap(), header);
    assert_eq!(text.lines().count(), 1 + 25);

    let short = tmp.path().join("short.csv");
    let text = std::fs::read_to_string(&input).unwrap();
    let head: Vec<&str> = text.lines().take(1 + 6).collect();
    std::fs::write(&short, head.join("\n") + "\n").unwrap();
    let out = gagcn(&["predict", "--checkpoint", s(&ckpt), "--input", s(&short), "--output", s(&pred)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 10"), "{}", stderr(&out));
}

#[test]
fn truncated_checkpoint_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, run) = trained(tmp.path());
    let ckpt = run.join("model.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = gagcn(&["eval", "--config", s(&cfg), "--checkpoint", s(&cut)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("integrity"), "{}", stderr(&out));

    let out = gagcn(&["eval", "--config", s(&cfg), "--checkpoint", s(&tmp.path().join("absent.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_shape_mismatch_names_both_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = trained(tmp.path());
    let other = tmp.path().join("other");
    std::fs::create_dir_all(&other).unwrap();
    std::fs::write(
        other.join("skeleton.toml"),
        r#"schema_version = 1
channels = 3
representation = "coords3d"
rate_hz = 25.0

[[joints]]
name = "root"
parent = -1

[[joints]]
name = "tip"
parent = 0
"#,
    )
    .unwrap();
    let mut csv = String::from("frame,root_0,root_1,root_2,tip_0,tip_1,tip_2\n");
    for f in 0..40 {
        csv.push_str(&format!("{f},0,0,{f},0,100,{f}\n"));
    }
    std::fs::write(other.join("m.csv"), csv).unwrap();
    let cfg = other.join("run.toml");
    std::fs::write(
        &cfg,
        "[data]\nsource = \"csv\"\n[data.csv]\ndescriptor = \"skeleton.toml\"\nfiles = [\"m.csv\"]\n[output]\ndir = \"out\"\n",
    )
    .unwrap();
    let out = gagcn(&["eval", "--config", s(&cfg), "--checkpoint", s(&run.join("model.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("N=12") && err.contains("N=2"), "{err}");
}

#[test]
fn corrupted_gradient_fails_gradcheck_with_exit_1() {
    let out = gagcn(&["gradcheck", "--scale", "layer", "--corrupt", "layer.transform"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("layer.transform"), "{}", stderr(&out));

    let out = gagcn(&["gradcheck", "--scale", "ops"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("st_apply") && !table.contains("FAIL"), "{table}");
}

#[test]
fn ablate_needs_an_output_directory() {
    let out = gagcn(&["ablate", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--out"), "{}", stderr(&out));
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = gagcn(&["train", "--config", s(&cfg), "--out", s(dir), "--threads", threads, "--seed", "9"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["model.ckpt", "loss.csv", "gates.csv", "train_log.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
