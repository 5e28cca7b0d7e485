//! Result files: `checkpoints.csv`, `run.json`, `curves.svg` and
//! `epoch_<t>.ckpt` parameter dumps.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::plot::render_curves_svg;
use super::run::{CheckpointMetrics, RunResult};
use crate::error::{Error, Result};

pub const CHECKPOINT_COLUMNS: [&str; 7] = [
    "epoch",
    "train_acc",
    "test_acc",
    "mean_margin",
    "mean_vcp",
    "vcp_stderr",
    "excluded_margins",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("checkpoint table: {e}"))
}

/// Floats are written in shortest round-trip form; a missing mean margin
/// is written as `NaN`.
pub fn write_checkpoints_csv<W: Write>(checkpoints: &[CheckpointMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHECKPOINT_COLUMNS).map_err(csv_err)?;
    for c in checkpoints {
        w.write_record([
            c.epoch.to_string(),
            c.train_acc.to_string(),
            c.test_acc.to_string(),
            c.mean_margin.unwrap_or(f64::NAN).to_string(),
            c.mean_vcp.to_string(),
            c.vcp_stderr.to_string(),
            c.excluded_margins.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("checkpoint table: {e}")))
}

/// Inverse of [`write_checkpoints_csv`]; `jensen_bound` is not stored.
pub fn read_checkpoints_csv<R: Read>(input: R) -> Result<Vec<CheckpointMetrics>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(CHECKPOINT_COLUMNS) {
        return Err(Error::Data(format!(
            "unexpected checkpoint header {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let field = |j: usize| -> Result<f64> {
            record[j].parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: CHECKPOINT_COLUMNS[j].into(),
                msg: format!("`{}` is not a number", &record[j]),
            })
        };
        let count = |j: usize| -> Result<usize> {
            record[j].parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: CHECKPOINT_COLUMNS[j].into(),
                msg: format!("`{}` is not a count", &record[j]),
            })
        };
        let margin = field(3)?;
        out.push(CheckpointMetrics {
            epoch: count(0)?,
            train_acc: field(1)?,
            test_acc: field(2)?,
            mean_margin: (!margin.is_nan()).then_some(margin),
            mean_vcp: field(4)?,
            vcp_stderr: field(5)?,
            excluded_margins: count(6)?,
            jensen_bound: None,
        });
    }
    Ok(out)
}

/// Paths written by [`emit_results`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub checkpoints_csv: PathBuf,
    pub run_json: PathBuf,
    pub curves_svg: Option<PathBuf>,
    pub checkpoint_dumps: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn emit_results(result: &RunResult, dir: impl AsRef<Path>, plot: bool) -> Result<EmittedFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let checkpoints_csv = dir.join("checkpoints.csv");
    let mut table = Vec::new();
    write_checkpoints_csv(&result.checkpoints, &mut table)?;
    write_file(&checkpoints_csv, &table)?;

    let run_json = dir.join("run.json");
    let mut doc = serde_json::to_string_pretty(result).expect("run result serializes");
    doc.push('\n');
    write_file(&run_json, doc.as_bytes())?;

    let curves_svg = if plot {
        let path = dir.join("curves.svg");
        write_file(&path, render_curves_svg(&result.checkpoints).as_bytes())?;
        Some(path)
    } else {
        None
    };

    let mut checkpoint_dumps = Vec::new();
    for snapshot in &result.snapshots {
        let path = dir.join(format!("epoch_{}.ckpt", snapshot.epoch));
        snapshot.save(&path)?;
        checkpoint_dumps.push(path);
    }
    Ok(EmittedFiles {
        checkpoints_csv,
        run_json,
        curves_svg,
        checkpoint_dumps,
    })
}
