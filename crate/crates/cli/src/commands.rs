use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gagcn::checkpoint::{self, Checkpoint};
use gagcn::checks::run_gradcheck;
use gagcn::decoder::GagcnModel;
use gagcn::motiondata::{
    load_motion_csv, synth_dataset, synth_skeleton, write_motion_csv, MotionSequence, Representation,
    SkeletonDescriptor, SYNTH_RATE_HZ,
};
use gagcn::numkernel::CheckOptions;
use gagcn::trainer::{
    evaluate_horizons, prepare_windows, run_ablation, train as run_training, write_gates_csv, write_horizon_csv,
    write_loss_csv, write_train_log, AblationConfig, LossKind,
};
use gagcn::{Error, Result};

use crate::config::{AblateFile, Dataset, RunConfig};
use crate::{AblateArgs, CliError, EvalArgs, EvalSplit, GradcheckArgs, PlotDataArgs, PredictArgs, SynthArgs, TrainArgs};

type CliResult = std::result::Result<(), CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Refuses a loss that cannot be computed on the data's representation.
fn check_loss(kind: LossKind, repr: Representation) -> Result<()> {
    if kind == LossKind::Mpjpe && repr == Representation::Expmap {
        return Err(Error::Config(
            "MPJPE needs 3D coordinates; set train.loss_kind = \"mae\" for expmap data".into(),
        ));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> CliResult {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = args.out {
        cfg.output.dir = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.lr_decay {
        cfg.train.lr_decay = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.spatial_candidates {
        cfg.model.spatial_candidates = v;
    }
    if let Some(v) = args.temporal_candidates {
        cfg.model.temporal_candidates = v;
    }
    cfg.validate()?;

    let data = Dataset::load(&cfg.data)?;
    check_loss(cfg.train.loss_kind, data.descriptor.representation)?;
    let model_cfg = cfg.model.to_model_config(data.joints(), data.descriptor.channels);
    let (train_set, val_set) = data.windows(
        model_cfg.input_frames,
        model_cfg.output_frames,
        cfg.data.window_stride,
        cfg.data.validation_fraction,
        cfg.train.seed,
    )?;
    log::info!("{} training windows, {} validation windows", train_set.len(), val_set.len());
    let mut model = GagcnModel::new(model_cfg, cfg.train.seed)?;
    let mask = data.descriptor.loss_joint_mask();
    let started = Instant::now();
    let outcome = run_training(
        &mut model,
        &prepare_windows(&train_set)?,
        &prepare_windows(&val_set)?,
        &cfg.train,
        &mask,
    )?;
    log::info!("trained in {:.1?}", started.elapsed());

    let dir = &cfg.output.dir;
    create_dir(dir)?;
    checkpoint::save(&dir.join("model.ckpt"), &model, Some(&data.descriptor))?;
    write_loss_csv(&dir.join("loss.csv"), &outcome.epochs)?;
    write_gates_csv(&dir.join("gates.csv"), &outcome.gates)?;
    write_train_log(&dir.join("train_log.jsonl"), &outcome.epochs)?;
    if let Some(last) = outcome.epochs.last() {
        let val = last.val_loss.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "epochs={} steps={} train_loss={:.4} val_loss={val}",
            outcome.epochs.len(),
            last.step,
            last.train_loss
        );
    }
    println!("wrote {}", dir.display());
    if let Some(msg) = outcome.diverged {
        return Err(CliError::CheckFailed(format!(
            "training diverged ({msg}); the checkpoint holds the last finite parameters"
        )));
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = args.out {
        cfg.output.dir = v;
    }
    cfg.validate()?;
    let Checkpoint { model, .. } = checkpoint::load(&args.checkpoint)?;
    let data = Dataset::load(&cfg.data)?;
    let (joints, channels) = (data.joints(), data.descriptor.channels);
    if (model.config.joints, model.config.channels) != (joints, channels) {
        return Err(Error::Dimension {
            op: "eval".into(),
            left: format!("checkpoint expects [N={} × C={}]", model.config.joints, model.config.channels),
            right: format!("data provides [N={joints} × C={channels}]"),
        }
        .into());
    }
    let (train_set, val_set) = data.windows(
        model.config.input_frames,
        model.config.output_frames,
        cfg.data.window_stride,
        cfg.data.validation_fraction,
        cfg.train.seed,
    )?;
    let windows = match args.split {
        EvalSplit::Validation => val_set,
        EvalSplit::All => {
            let mut all = train_set;
            all.extend(val_set)?;
            all
        }
    };
    let metric = cfg.loss_kind_for(data.descriptor.representation);
    let report = evaluate_horizons(
        &model,
        &windows,
        data.descriptor.rate_hz,
        &args.horizons,
        metric,
        args.mode.into(),
        &data.descriptor.loss_joint_mask(),
    )?;
    create_dir(&cfg.output.dir)?;
    let path = cfg.output.dir.join("report.csv");
    write_horizon_csv(&path, &report)?;
    println!("{:>10}  {:>6}  {:>12}", "horizon_ms", "metric", "value");
    for r in &report.rows {
        println!("{:>10}  {:>6}  {:>12.4}", r.horizon_ms, r.metric, r.value);
    }
    println!("{} windows; wrote {}", report.windows, path.display());
    Ok(())
}

pub fn predict(args: PredictArgs) -> CliResult {
    let Checkpoint { model, skeleton } = checkpoint::load(&args.checkpoint)?;
    let desc = match &args.descriptor {
        Some(p) => SkeletonDescriptor::load(p)?,
        None => skeleton.ok_or_else(|| {
            Error::Config("the checkpoint stores no skeleton descriptor; pass --descriptor".into())
        })?,
    };
    let (n, c) = (desc.joints.len(), desc.channels);
    if (n, c) != (model.config.joints, model.config.channels) {
        return Err(Error::Dimension {
            op: "predict".into(),
            left: format!("checkpoint expects [N={} × C={}]", model.config.joints, model.config.channels),
            right: format!("descriptor gives [N={n} × C={c}]"),
        }
        .into());
    }
    let seq = load_motion_csv(&args.input, &desc)?;
    let need = model.config.input_frames;
    if seq.len() < need {
        return Err(Error::Config(format!(
            "{} has {} frames; the model needs at least {need} observed frames",
            args.input.display(),
            seq.len()
        ))
        .into());
    }
    let observed = seq.slice(seq.len() - need, need)?;
    let pred = model.predict_frames(&observed)?;
    let out = MotionSequence::new(desc.skeleton()?, pred, desc.rate_hz, desc.representation, None)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_motion_csv(&args.output, &out)?;
    println!("wrote {} predicted frames to {}", out.len(), args.output.display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let opts = CheckOptions {
        eps: args.eps,
        corrupt: args.corrupt,
    };
    let started = Instant::now();
    let entries = run_gradcheck(args.scale.into(), args.seed, &opts)?;
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(9).max(9);
    println!("{:<width$}  {:>12}  status", "parameter", "max_rel_err");
    for e in &entries {
        let status = if e.passes(args.tol) { "ok" } else { "FAIL" };
        println!("{:<width$}  {:>12.3e}  {status}", e.name, e.max_rel_err);
    }
    let worst = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    println!(
        "{} parameters, worst {worst:.3e}, tolerance {:.0e}, {:.1?}",
        entries.len(),
        args.tol,
        started.elapsed()
    );
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let path = dir.join("gradcheck.csv");
        let mut w = csv_writer(&path)?;
        write_record(&mut w, &path, ["parameter", "max_rel_err", "analytic", "numeric", "pass"].map(String::from))?;
        for e in &entries {
            write_record(
                &mut w,
                &path,
                [
                    e.name.clone(),
                    e.max_rel_err.to_string(),
                    e.analytic.to_string(),
                    e.numeric.to_string(),
                    e.passes(args.tol).to_string(),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passes(args.tol))
        .map(|e| e.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

pub fn ablate(args: AblateArgs) -> CliResult {
    let (mut cfg, dir) = match &args.config {
        Some(p) => {
            let f = AblateFile::load(p)?;
            (f.ablation, Some(f.output.dir))
        }
        None => (AblationConfig::default(), None),
    };
    if let Some(s) = args.suite {
        cfg.suite = s.into();
    }
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let dir = args
        .out
        .or(dir)
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output.dir".into()))?;
    cfg.validate()?;
    let started = Instant::now();
    let report = run_ablation(&cfg)?;
    log::info!("ablation finished in {:.1?}", started.elapsed());
    create_dir(&dir)?;
    report.write_csv(&dir.join("ablation.csv"))?;
    let summary = report.summary();
    let path = dir.join("summary.txt");
    std::fs::write(&path, format!("{summary}\n")).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("gate_separation.csv");
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["seed", "layer", "l1"].map(String::from))?;
    for (seed, layers) in cfg.seeds.iter().zip(&report.gate_separation_by_layer) {
        for (l, v) in layers.iter().enumerate() {
            write_record(&mut w, &path, [seed.to_string(), l.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("{summary}");
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn write_record<I, S>(w: &mut csv::Writer<std::fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Header plus records of a CSV written by this tool.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("missing column `{name}`"),
    })
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, path: &Path) -> Result<Option<f64>> {
    let cell = rec.get(idx).unwrap_or("");
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: rec.position().map_or(0, |p| p.line() as usize),
        message: format!("`{cell}` is not a number"),
    })
}

#[derive(serde::Deserialize)]
struct LogLine {
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
}

pub fn plot_data(args: PlotDataArgs) -> CliResult {
    let out = args.out.unwrap_or_else(|| args.run.join("plots"));
    create_dir(&out)?;

    // Loss curve in long form, from the structured training log.
    let src = args.run.join("train_log.jsonl");
    let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
    let path = out.join("loss_curve.csv");
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["epoch", "split", "loss"])?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: LogLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: src.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        for (split, v) in [("train", Some(rec.train_loss)), ("validation", rec.val_loss)] {
            if let Some(v) = v {
                write_record(&mut w, &path, [rec.epoch.to_string(), split.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    // Gate coefficients: mean over logged steps and the final logged value.
    let src = args.run.join("gates.csv");
    let (header, rows) = read_table(&src)?;
    let (step_i, layer_i, axis_i) = (
        column(&header, "step", &src)?,
        column(&header, "layer", &src)?,
        column(&header, "axis", &src)?,
    );
    let weight_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('w')).collect();
    let mut acc: BTreeMap<(usize, String, usize), (f64, usize, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let layer: usize = r.get(layer_i).unwrap_or("").parse().map_err(|_| Error::Parse {
            path: src.clone(),
            line: r.position().map_or(0, |p| p.line() as usize),
            message: "bad layer index".into(),
        })?;
        let step: usize = r.get(step_i).unwrap_or("0").parse().unwrap_or(0);
        let axis = r.get(axis_i).unwrap_or("").to_string();
        for (k, &c) in weight_cols.iter().enumerate() {
            if let Some(v) = parse_cell(r, c, &src)? {
                let e = acc.entry((layer, axis.clone(), k + 1)).or_insert((0.0, 0, 0.0, 0));
                e.0 += v;
                e.1 += 1;
                if step >= e.3 {
                    e.2 = v;
                    e.3 = step;
                }
            }
        }
    }
    let path = out.join("gate_distribution.csv");
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["layer", "axis", "candidate", "mean_weight", "final_weight"])?;
    for ((layer, axis, k), (sum, count, last, _)) in &acc {
        write_record(
            &mut w,
            &path,
            [
                layer.to_string(),
                axis.clone(),
                k.to_string(),
                (sum / *count as f64).to_string(),
                last.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    // Horizon curve, when the run directory also holds an eval report.
    let src = args.run.join("report.csv");
    let mut written = vec!["loss_curve.csv", "gate_distribution.csv"];
    if src.exists() {
        let (header, rows) = read_table(&src)?;
        let (h, m, v) = (
            column(&header, "horizon_ms", &src)?,
            column(&header, "metric", &src)?,
            column(&header, "value", &src)?,
        );
        let mut points: Vec<(u32, String, String)> = rows
            .iter()
            .map(|r| {
                let ms = r.get(h).unwrap_or("").parse().unwrap_or(0);
                (ms, r.get(m).unwrap_or("").to_string(), r.get(v).unwrap_or("").to_string())
            })
            .collect();
        points.sort();
        let path = out.join("horizon_curve.csv");
        let mut w = csv_writer(&path)?;
        write_record(&mut w, &path, ["horizon_ms", "metric", "value"])?;
        for (ms, metric, value) in points {
            write_record(&mut w, &path, [ms.to_string(), metric, value])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push("horizon_curve.csv");
    } else {
        log::warn!("{} not found; run eval into this directory for horizon_curve.csv", src.display());
    }
    println!("wrote {} to {}", written.join(", "), out.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> CliResult {
    create_dir(&args.out)?;
    let seqs = synth_dataset(&args.classes, 1, args.frames, args.noise, args.seed)?;
    let desc = SkeletonDescriptor::new(&synth_skeleton(), Representation::Coords3d, SYNTH_RATE_HZ);
    desc.save(&args.out.join("skeleton.toml"))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for (class, seq) in args.classes.iter().zip(&seqs) {
        let path = args.out.join(format!("{class}.csv"));
        write_motion_csv(&path, seq)?;
        files.push(path);
    }
    println!("wrote skeleton.toml and {} sequences to {}", files.len(), args.out.display());
    Ok(())
}
