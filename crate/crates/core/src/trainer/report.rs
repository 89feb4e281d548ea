use std::io::Write;
use std::path::Path;

use super::eval::HorizonReport;
use super::train::{EpochRecord, GateRecord};
use crate::error::{Error, Result};

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub(crate) fn csv_fail(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Contract(format!("{}: {other:?}", path.display())),
    }
}

pub(crate) fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_fail(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `epoch,step,learning_rate,train_loss,val_loss`
pub fn write_loss_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.step.to_string(),
                e.learning_rate.to_string(),
                e.train_loss.to_string(),
                e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_rows(
        path,
        &strings(&["epoch", "step", "learning_rate", "train_loss", "val_loss"]),
        &rows,
    )
}

/// `step,layer,axis,w1..wQ`; rows with fewer coefficients leave trailing cells empty.
pub fn write_gates_csv(path: &Path, gates: &[GateRecord]) -> Result<()> {
    let q = gates.iter().map(|g| g.weights.len()).max().unwrap_or(0);
    let mut header = strings(&["step", "layer", "axis"]);
    header.extend((1..=q).map(|i| format!("w{i}")));
    let rows: Vec<Vec<String>> = gates
        .iter()
        .map(|g| {
            let mut r = vec![g.step.to_string(), g.layer.to_string(), g.axis.to_string()];
            r.extend(g.weights.iter().map(|w| w.to_string()));
            r.resize(3 + q, String::new());
            r
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// One JSON object per epoch.
pub fn write_train_log(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for e in epochs {
        serde_json::to_writer(&mut out, e).expect("epoch record serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// `horizon_ms,metric,value`
pub fn write_horizon_csv(path: &Path, report: &HorizonReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.horizon_ms.to_string(), r.metric.to_string(), r.value.to_string()])
        .collect();
    write_rows(path, &strings(&["horizon_ms", "metric", "value"]), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::Axis;

    #[test]
    fn gates_csv_pads_short_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gates.csv");
        let gates = vec![
            GateRecord { step: 0, layer: 0, axis: Axis::Spatial, weights: vec![0.25; 4] },
            GateRecord { step: 0, layer: 0, axis: Axis::Temporal, weights: vec![0.5, 0.5] },
        ];
        write_gates_csv(&p, &gates).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "step,layer,axis,w1,w2,w3,w4\n0,0,spatial,0.25,0.25,0.25,0.25\n0,0,temporal,0.5,0.5,,\n"
        );
    }

    #[test]
    fn loss_csv_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let e = vec![EpochRecord { epoch: 0, step: 3, learning_rate: 0.001, train_loss: 2.5, val_loss: None }];
        write_loss_csv(&dir.path().join("loss.csv"), &e).unwrap();
        write_train_log(&dir.path().join("log.jsonl"), &e).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv, "epoch,step,learning_rate,train_loss,val_loss\n0,3,0.001,2.5,\n");
        let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(log.trim()).unwrap();
        assert_eq!(v["train_loss"], 2.5);
    }
}
